#pragma once

// Rank-r density-matrix completion by Schur-complement rank additivity.
//
// For a principal submatrix M = [[A, B^dagger], [B, C]] of a rank-r state
// with a nonsingular r x r block A, rank(M) = rank(A) forces M/A = 0, so
// every entry of C equals the matching entry of B A^{-1} B^dagger. Two
// pattern families are supported: the first r rows and columns (one window,
// the whole matrix) and the band of diagonals 0..r, filled diagonal by
// diagonal with windows whose A block is the r indices just inside the
// target's row.

#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eptomo/hermitian.hpp"
#include "eptomo/pattern.hpp"

namespace eptomo {

inline constexpr double kDefaultCompletionTol = 1e-8;

struct CompletionWindow {
  /// Principal indices of the window, ascending.
  std::vector<Index> window;
  /// Indices of the nonsingular block A.
  std::vector<Index> a;
  /// Unknown entry (row < col) solved by this window; its conjugate follows.
  std::pair<Index, Index> target;
  /// Sweep stage: windows of equal stage only read entries of earlier stages.
  Index stage = 0;
};

/// Ordered windows. `alternative` is the sweep over the cyclically rotated
/// index frame, available when the wraparound diagonals are measured.
struct CompletionPlan {
  Index dim = 0;
  Index rank = 0;
  bool wraparound = false;
  Index shift = 0;
  std::vector<CompletionWindow> primary;
  std::vector<CompletionWindow> alternative;
};

enum class PlanId { Measured = -1, Primary = 0, Alternative = 1 };

struct TargetSource {
  Index row = 0;
  Index col = 0;
  PlanId plan = PlanId::Primary;
};

struct CompletionReport {
  HermitianMatrix completed;
  /// Smallest singular value of each primary window's A block, plan order;
  /// NaN when a window could not be evaluated.
  std::vector<double> window_conditions;
  /// Primary windows whose A block was singular within tolerance.
  std::vector<std::size_t> failure_flags;
  std::vector<double> alternative_conditions;
  std::vector<TargetSource> sources;
  double residual_psd_violation = 0.0;

  bool used_alternative() const {
    for (const auto& s : sources)
      if (s.plan == PlanId::Alternative) return true;
    return false;
  }
};

/// A target no plan could reach. Carries the sigma_min of the primary and
/// (if any) alternative windows.
class CompletionFailure : public FailureSetError {
 public:
  CompletionFailure(std::string what, std::vector<Index> indices, double primary_sigma,
                    std::pair<Index, Index> target, double alternative_sigma)
      : FailureSetError(std::move(what), std::move(indices), primary_sigma),
        target_(target),
        alternative_sigma_(alternative_sigma) {}

  std::pair<Index, Index> target() const { return target_; }
  double alternative_sigma_min() const { return alternative_sigma_; }

 private:
  std::pair<Index, Index> target_;
  double alternative_sigma_;
};

inline bool covers_rows_cols(const ElementPattern& p, Index r) {
  return p.is_superset_of(ElementPattern::rows_cols(p.dim(), r));
}

inline bool covers_band(const ElementPattern& p, Index r) {
  return p.is_superset_of(ElementPattern::band(p.dim(), r, false));
}

namespace detail {

inline std::vector<Index> iota_indices(Index first, Index count) {
  std::vector<Index> v(std::size_t(std::max<Index>(count, 0)));
  for (Index k = 0; k < count; ++k) v[std::size_t(k)] = first + k;
  return v;
}

inline void finalize(CompletionReport& report, CMatrix values) {
  for (Index i = 0; i < values.rows(); ++i) values(i, i) = values(i, i).real();
  report.completed = HermitianMatrix::hermitian_part(values);
  report.residual_psd_violation = min_eigenvalue(report.completed);
}

}  // namespace detail

/// Completes a matrix known on its first r rows and columns:
/// C = B A^{-1} B^dagger with A the leading r x r block. `tol` is an
/// absolute bound on sigma_min(A).
inline CompletionReport complete_rows_cols(const PartialMatrix& partial, Index r,
                                           double tol = kDefaultCompletionTol) {
  const Index d = partial.dim();
  if (r < 1 || r > d) throw std::invalid_argument("complete_rows_cols: need 1 <= r <= d");
  if (!covers_rows_cols(partial.pattern(), r)) {
    throw std::invalid_argument("complete_rows_cols: pattern lacks the first r rows/columns");
  }
  CompletionReport report;
  CMatrix values = partial.values();
  if (r == d) {
    report.window_conditions.push_back(
        smallest_singular_value(HermitianMatrix::hermitian_part(values)));
    detail::finalize(report, values);
    return report;
  }
  const auto a_idx = detail::iota_indices(0, r);
  const auto c_idx = detail::iota_indices(r, d - r);
  const HermitianMatrix a = HermitianMatrix::hermitian_part(submatrix(values, a_idx, a_idx));
  double smin = 0.0;
  CMatrix a_inv;
  try {
    a_inv = checked_hermitian_inverse(a, a_idx, tol, &smin);
  } catch (const FailureSetError& e) {
    throw FailureSetError(std::string("complete_rows_cols: ") + e.what(), a_idx, e.sigma_min());
  }
  report.window_conditions.push_back(smin);
  const CMatrix b = submatrix(values, c_idx, a_idx);
  const CMatrix c = b * a_inv * b.adjoint();
  // Entries of C that were measured are kept.
  const ElementPattern& p = partial.pattern();
  for (Index i = 0; i < d - r; ++i) {
    for (Index j = 0; j < d - r; ++j) {
      if (!p.contains(r + i, r + j)) values(r + i, r + j) = c(i, j);
    }
  }
  for (Index i = r; i < d; ++i) {
    for (Index j = i + 1; j < d; ++j) {
      if (!p.contains(i, j)) report.sources.push_back({i, j, PlanId::Primary});
    }
  }
  detail::finalize(report, std::move(values));
  return report;
}

/// Windows for band completion. For each target diagonal t (ascending) and
/// start i: window {i..i+t}, A = {i+1..i+r}, target (i, i+t). Without
/// wraparound the diagonals t = r+1..d-1 are targets; with it, diagonals
/// d-r..d-1 are measured and the targets stop at d-r-1, and the same sweep
/// is also emitted in the frame rotated by r (index x -> x - r mod d).
inline CompletionPlan build_band_plan(Index d, Index r, bool wraparound) {
  if (r < 1 || r >= d - 1) throw std::invalid_argument("build_band_plan: need 1 <= r < d-1");
  CompletionPlan plan;
  plan.dim = d;
  plan.rank = r;
  plan.wraparound = wraparound;
  const Index t_max = wraparound ? d - r - 1 : d - 1;
  auto sweep = [&](Index shift) {
    std::vector<CompletionWindow> out;
    auto map = [&](Index y) { return (y + shift) % d; };
    for (Index t = r + 1; t <= t_max; ++t) {
      for (Index i = 0; i + t < d; ++i) {
        CompletionWindow w;
        for (Index y = i; y <= i + t; ++y) w.window.push_back(map(y));
        for (Index y = i + 1; y <= i + r; ++y) w.a.push_back(map(y));
        std::sort(w.window.begin(), w.window.end());
        const Index p = map(i);
        const Index q = map(i + t);
        w.target = {std::min(p, q), std::max(p, q)};
        w.stage = t;
        out.push_back(std::move(w));
      }
    }
    return out;
  };
  plan.primary = sweep(0);
  if (wraparound) {
    plan.shift = r;
    plan.alternative = sweep(r);
  }
  return plan;
}

namespace detail {

struct WindowResult {
  bool ok = false;
  double sigma_min = std::numeric_limits<double>::quiet_NaN();
  Complex value;
};

/// (B A^{-1} B^dagger) at the target; all window entries but the target must
/// be known. `tol` scales with the trace of the window.
inline WindowResult evaluate_window(const CMatrix& values, const std::vector<char>& known,
                                    const CompletionWindow& w, double tol) {
  const Index d = values.rows();
  WindowResult res;
  const auto [ti, tj] = w.target;
  for (Index x : w.window) {
    for (Index y : w.window) {
      if ((x == ti && y == tj) || (x == tj && y == ti)) continue;
      if (!known[std::size_t(x * d + y)]) return res;
    }
  }
  double scale = 0.0;
  for (Index x : w.window) scale += values(x, x).real();
  const HermitianMatrix a = HermitianMatrix::hermitian_part(submatrix(values, w.a, w.a));
  const EigenPairs e = eigh(a);
  res.sigma_min = e.values.cwiseAbs().minCoeff();
  if (res.sigma_min <= tol * std::max(scale, 0.0)) return res;
  const CMatrix a_inv = e.vectors * e.values.cwiseInverse().asDiagonal() * e.vectors.adjoint();
  const CMatrix bi = submatrix(values, {ti}, w.a);
  const CMatrix bj = submatrix(values, {tj}, w.a);
  res.value = (bi * a_inv * bj.adjoint())(0, 0);
  res.ok = true;
  return res;
}

inline std::vector<char> known_mask(const ElementPattern& p) {
  const Index d = p.dim();
  std::vector<char> known(std::size_t(d * d), 0);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) known[std::size_t(i * d + j)] = p.contains(i, j) ? 1 : 0;
  return known;
}

inline void store(CMatrix& values, std::vector<char>& known, std::pair<Index, Index> t,
                  Complex v) {
  const Index d = values.rows();
  values(t.first, t.second) = v;
  values(t.second, t.first) = std::conj(v);
  known[std::size_t(t.first * d + t.second)] = 1;
  known[std::size_t(t.second * d + t.first)] = 1;
}

struct SweepState {
  CMatrix values;
  std::vector<char> known;
  std::vector<WindowResult> results;
};

inline SweepState run_sweep(const PartialMatrix& partial,
                            const std::vector<CompletionWindow>& windows, double tol) {
  SweepState s{partial.values(), known_mask(partial.pattern()), {}};
  for (const auto& w : windows) {
    s.results.push_back(evaluate_window(s.values, s.known, w, tol));
    if (s.results.back().ok) store(s.values, s.known, w.target, s.results.back().value);
  }
  return s;
}

}  // namespace detail

/// Value of one window's target given everything solved so far. Throws
/// FailureSetError when A is singular within `tol` times the window trace.
inline Complex solve_window(const PartialMatrix& known_so_far, const CompletionWindow& window,
                            double tol = kDefaultCompletionTol) {
  if (Index(window.a.size()) < 1) throw std::invalid_argument("solve_window: empty A block");
  const auto known = detail::known_mask(known_so_far.pattern());
  const auto res = detail::evaluate_window(known_so_far.values(), known, window, tol);
  if (!res.ok) {
    std::ostringstream os;
    if (std::isnan(res.sigma_min)) {
      os << "solve_window: window entries other than the target are unknown";
      throw std::invalid_argument(os.str());
    }
    os << "solve_window: A block singular (sigma_min " << res.sigma_min << ") for target ("
       << window.target.first << "," << window.target.second << ")";
    throw FailureSetError(os.str(), window.a, res.sigma_min);
  }
  return res.value;
}

/// Runs a band plan: primary windows in order; a failed primary window takes
/// the alternative sweep's value for the same target when one exists.
inline CompletionReport execute_plan(const PartialMatrix& partial, const CompletionPlan& plan,
                                     double tol = kDefaultCompletionTol) {
  if (partial.dim() != plan.dim) throw std::invalid_argument("execute_plan: dimension mismatch");
  const Index d = plan.dim;
  CompletionReport report;
  CMatrix values = partial.values();
  auto known = detail::known_mask(partial.pattern());
  std::optional<detail::SweepState> alt;
  for (std::size_t w = 0; w < plan.primary.size(); ++w) {
    const auto& win = plan.primary[w];
    const auto res = detail::evaluate_window(values, known, win, tol);
    report.window_conditions.push_back(res.sigma_min);
    if (res.ok) {
      detail::store(values, known, win.target, res.value);
      report.sources.push_back({win.target.first, win.target.second, PlanId::Primary});
      continue;
    }
    report.failure_flags.push_back(w);
    double alt_sigma = std::numeric_limits<double>::quiet_NaN();
    if (plan.wraparound) {
      if (!alt) {
        alt = detail::run_sweep(partial, plan.alternative, tol);
        for (const auto& r : alt->results) report.alternative_conditions.push_back(r.sigma_min);
      }
      for (std::size_t k = 0; k < plan.alternative.size(); ++k) {
        if (plan.alternative[k].target != win.target) continue;
        alt_sigma = alt->results[k].sigma_min;
        if (alt->results[k].ok) {
          detail::store(values, known, win.target, alt->results[k].value);
          report.sources.push_back({win.target.first, win.target.second, PlanId::Alternative});
        }
        break;
      }
    }
    if (!known[std::size_t(win.target.first * d + win.target.second)]) {
      std::ostringstream os;
      os << "band completion failed at target (" << win.target.first << ","
         << win.target.second << "): primary sigma_min " << res.sigma_min
         << ", alternative sigma_min " << alt_sigma;
      throw CompletionFailure(os.str(), win.a, res.sigma_min, win.target, alt_sigma);
    }
  }
  detail::finalize(report, std::move(values));
  return report;
}

/// Completes a matrix known on diagonals 0..r (optionally with the
/// wraparound diagonals d-r..d-1, which enable the fallback sweep).
inline CompletionReport complete_band(const PartialMatrix& partial, Index r,
                                      double tol = kDefaultCompletionTol) {
  const Index d = partial.dim();
  if (r < 1) throw std::invalid_argument("complete_band: need r >= 1");
  if (!covers_band(partial.pattern(), std::min(r, d - 1))) {
    throw std::invalid_argument("complete_band: pattern lacks diagonals 0..r");
  }
  if (r >= d - 1) {
    CompletionReport report;
    detail::finalize(report, partial.values());
    return report;
  }
  const bool wrap = partial.pattern().is_superset_of(ElementPattern::band(d, r, true));
  // With every diagonal already measured there is nothing to fill.
  if (wrap && d - r - 1 < r + 1) {
    CompletionReport report;
    detail::finalize(report, partial.values());
    return report;
  }
  return execute_plan(partial, build_band_plan(d, r, wrap), tol);
}

/// True when `pattern` admits one of the supported completion routes.
inline bool has_completion_route(const ElementPattern& pattern, Index r) {
  return covers_rows_cols(pattern, r) || covers_band(pattern, std::min(r, pattern.dim() - 1));
}

/// Dispatches on the pattern: row/column family first, then band.
inline CompletionReport complete(const PartialMatrix& partial, Index r,
                                 double tol = kDefaultCompletionTol) {
  if (covers_rows_cols(partial.pattern(), r)) return complete_rows_cols(partial, r, tol);
  if (covers_band(partial.pattern(), std::min(r, partial.dim() - 1))) {
    return complete_band(partial, r, tol);
  }
  throw std::invalid_argument("complete: pattern has no supported completion route");
}

}  // namespace eptomo
