#pragma once

// Element-probing POVM families: the single-row probe POVM and its
// multi-row generalization (with per-row slices), the four cyclic
// nearest-neighbour bases, and the 4r+1 basis construction for dimensions
// that are powers of two.

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eptomo/povm.hpp"

namespace eptomo {

/// Orthonormal bases; row k of each matrix is measurement vector k.
struct BasisSet {
  Index dim = 0;
  std::vector<CMatrix> bases;

  std::size_t size() const { return bases.size(); }
  double max_unitarity_error() const {
    double worst = 0.0;
    for (const auto& b : bases) {
      const CMatrix e = b * b.adjoint() - CMatrix::Identity(b.rows(), b.rows());
      worst = std::max(worst, e.cwiseAbs().maxCoeff());
    }
    return worst;
  }
};

struct BasisConstruction {
  BasisSet bases;
  EpPovm ep;
};

/// Per-row coefficients for the row-probing family: effects a_k|k><k| and
/// b_k(1 +- ...) for each probed row k.
struct RowCoefficients {
  std::vector<double> a;
  std::vector<double> b;
};

namespace detail {

inline const Complex kI{0.0, 1.0};

inline CMatrix unit(Index d, Index i, Index j) {
  CMatrix m = CMatrix::Zero(d, d);
  m(i, j) = 1.0;
  return m;
}

/// Effects probing row k: a|k><k|, then b(1 + |k><n| + |n><k|) for n > k,
/// then b(1 - i|k><n| + i|n><k|) for n > k. Formulas for the probed entries
/// are appended to `builder` with outcome indices starting at `offset`;
/// `segment` lists every outcome of the enclosing POVM so that
/// sum_mu p_mu = Tr(rho) can stand in for the trace.
inline void append_row_probe(Index d, Index k, double a, double b, std::size_t offset,
                             std::vector<HermitianMatrix>& effects, ExtractorBuilder& builder,
                             std::vector<std::pair<Index, Index>>& real_slots,
                             std::vector<std::pair<Index, Index>>& imag_slots) {
  const CMatrix id = CMatrix::Identity(d, d);
  effects.push_back(HermitianMatrix(a * unit(d, k, k)));
  builder.add(k, k, {{offset, Complex(1.0 / a)}});
  std::size_t mu = offset + 1;
  for (Index n = k + 1; n < d; ++n) {
    effects.push_back(HermitianMatrix(b * (id + unit(d, k, n) + unit(d, n, k))));
    real_slots.emplace_back(n, Index(mu++));
  }
  for (Index n = k + 1; n < d; ++n) {
    effects.push_back(HermitianMatrix(b * (id - kI * unit(d, k, n) + kI * unit(d, n, k))));
    imag_slots.emplace_back(n, Index(mu++));
  }
}

/// Builds one POVM from the probes of rows `rows` plus the residual effect
/// 1 - sum(...). Throws if the residual is not PSD.
inline EpPovm row_probe_povm(Index d, const std::vector<Index>& rows, const RowCoefficients& c,
                             const std::string& what) {
  if (c.a.size() != rows.size() || c.b.size() != rows.size()) {
    throw std::invalid_argument(what + ": coefficient count does not match probed rows");
  }
  std::size_t n_outcomes = 1;
  for (Index k : rows) n_outcomes += 1 + 2 * std::size_t(d - 1 - k);
  std::vector<HermitianMatrix> effects;
  ExtractorBuilder builder(d, n_outcomes);
  struct Pending {
    Index k;
    double b;
    std::vector<std::pair<Index, Index>> re, im;
  };
  std::vector<Pending> pending;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (!(c.a[r] > 0.0) || !(c.b[r] > 0.0)) {
      throw std::invalid_argument(what + ": coefficients must be positive");
    }
    Pending p{rows[r], c.b[r], {}, {}};
    append_row_probe(d, rows[r], c.a[r], c.b[r], effects.size(), effects, builder, p.re, p.im);
    pending.push_back(std::move(p));
  }
  CMatrix residual = CMatrix::Identity(d, d);
  for (const auto& e : effects) residual -= e.matrix();
  effects.push_back(HermitianMatrix::hermitian_part(residual));
  const double lmin = min_eigenvalue(effects.back());
  if (lmin < -1e-10) {
    std::ostringstream os;
    os << what << ": residual effect is not PSD (min eigenvalue " << lmin << ")";
    throw std::invalid_argument(os.str());
  }
  // Re rho_{n,k} = (p_{k,n}/b - Tr rho)/2, Im rho_{n,k} = (p~_{k,n}/b - Tr rho)/2,
  // with Tr rho = sum of all outcome probabilities of this POVM.
  for (const auto& p : pending) {
    for (std::size_t s = 0; s < p.re.size(); ++s) {
      const Index n = p.re[s].first;
      std::vector<Extractor::Term> terms;
      terms.push_back({std::size_t(p.re[s].second), Complex(0.5 / p.b, 0.0)});
      terms.push_back({std::size_t(p.im[s].second), Complex(0.0, 0.5 / p.b)});
      for (std::size_t mu = 0; mu < n_outcomes; ++mu) terms.push_back({mu, Complex(-0.5, -0.5)});
      builder.add(n, p.k, std::move(terms));
    }
  }
  EpPovm ep;
  ep.dim = d;
  ep.povms = {Povm(d, std::move(effects))};
  ep.extractor = builder.build();
  ep.pattern = ep.extractor.pattern();
  return ep;
}

/// Largest eigenvalue of the coefficient-free sum of the probe effects for
/// rows 0..r-1.
inline double row_probe_load(Index d, Index r) {
  const CMatrix id = CMatrix::Identity(d, d);
  CMatrix s = CMatrix::Zero(d, d);
  for (Index k = 0; k < r; ++k) {
    s += unit(d, k, k);
    for (Index n = k + 1; n < d; ++n) {
      s += 2.0 * id + (1.0 - kI) * unit(d, k, n) + (1.0 + kI) * unit(d, n, k);
    }
  }
  return eigenvalues(HermitianMatrix::hermitian_part(s)).maxCoeff();
}

/// Adds rho_{m,n} = ((p_x+ - p_x-) - i(p_y+ - p_y-)) / 2 for the 2-dim bases
/// (|m> +- |n>)/sqrt2 at outcomes (xp, xm) and (|m> +- i|n>)/sqrt2 at (yp, ym).
inline void add_pair_formula(ExtractorBuilder& builder, Index m, Index n, std::size_t xp,
                             std::size_t xm, std::size_t yp, std::size_t ym) {
  builder.add(m, n,
              {{xp, Complex(0.5, 0.0)},
               {xm, Complex(-0.5, 0.0)},
               {yp, Complex(0.0, -0.5)},
               {ym, Complex(0.0, 0.5)}});
}

/// Basis made of (|m> +- phase|n>)/sqrt2 for each pair, + vector first.
inline CMatrix pair_basis(Index d, const std::vector<std::pair<Index, Index>>& pairs,
                          Complex phase) {
  CMatrix b = CMatrix::Zero(d, d);
  const double s = 1.0 / std::sqrt(2.0);
  Index row = 0;
  for (const auto& [m, n] : pairs) {
    b(row, m) = s;
    b(row, n) = phase * s;
    ++row;
    b(row, m) = s;
    b(row, n) = -phase * s;
    ++row;
  }
  if (row != d) throw std::logic_error("pair_basis: pairs do not form a perfect matching");
  return b;
}

inline bool is_power_of_two(Index d) { return d >= 1 && (d & (d - 1)) == 0; }

}  // namespace detail

/// Default row-probe coefficient for rows 0..r-1: 1/(2(2d-r)) when the
/// residual effect stays PSD with that value, otherwise three quarters of
/// the largest admissible uniform coefficient.
inline double default_row_coefficient(Index d, Index r) {
  const double nominal = 1.0 / (2.0 * double(2 * d - r));
  return std::min(nominal, 0.75 / detail::row_probe_load(d, r));
}

/// Single-row probe POVM with 2d effects; measures row and column 0.
inline EpPovm flammia_povm(Index d, double a, double b) {
  if (d < 2) throw std::invalid_argument("flammia_povm: dimension must be >= 2");
  EpPovm ep = detail::row_probe_povm(d, {0}, {{a}, {b}}, "flammia_povm");
  ep.kind = PovmKind::Flammia;
  ep.params = {{"a", a}, {"b", b}};
  return ep;
}

inline EpPovm flammia_povm(Index d) {
  const double c = default_row_coefficient(d, 1);
  return flammia_povm(d, c, c);
}

/// Rank-r row/column probe POVM with (2d-r)r+1 effects; measures every
/// (i, j) with min(i, j) < r.
inline EpPovm example1_povm(Index d, Index r, const RowCoefficients& coeffs) {
  if (d < 2 || r < 1 || r > d) throw std::invalid_argument("example1_povm: need 1 <= r <= d");
  std::vector<Index> rows;
  for (Index k = 0; k < r; ++k) rows.push_back(k);
  EpPovm ep = detail::row_probe_povm(d, rows, coeffs, "example1_povm");
  ep.kind = PovmKind::Example1;
  ep.params = {{"rank", double(r)}};
  for (Index k = 0; k < r; ++k) {
    ep.params["a" + std::to_string(k)] = coeffs.a[std::size_t(k)];
    ep.params["b" + std::to_string(k)] = coeffs.b[std::size_t(k)];
  }
  return ep;
}

inline EpPovm example1_povm(Index d, Index r) {
  const double c = (r >= 1 && r <= d) ? default_row_coefficient(d, r) : 0.0;
  return example1_povm(d, r, {std::vector<double>(std::size_t(std::max<Index>(r, 0)), c),
                              std::vector<double>(std::size_t(std::max<Index>(r, 0)), c)});
}

/// The k-th slice of the row/column family: 2(d-k) effects measuring
/// row and column k from index k onward.
inline EpPovm example1_slice(Index d, Index k, double a, double b) {
  if (d < 2 || k < 0 || k >= d) throw std::invalid_argument("example1_slice: need 0 <= k < d");
  EpPovm ep = detail::row_probe_povm(d, {k}, {{a}, {b}}, "example1_slice");
  ep.kind = PovmKind::Example1Slice;
  ep.params = {{"k", double(k)}, {"a", a}, {"b", b}};
  return ep;
}

inline EpPovm example1_slice(Index d, Index k) {
  const double c = default_row_coefficient(d, 1);
  return example1_slice(d, k, c, c);
}

/// Computational-basis measurement: the principal diagonal.
inline EpPovm computational_basis(Index d) {
  EpPovm ep;
  ep.dim = d;
  ep.povms = {Povm::computational(d)};
  ExtractorBuilder builder(d, std::size_t(d));
  for (Index k = 0; k < d; ++k) builder.add(k, k, {{std::size_t(k), Complex(1.0)}});
  ep.extractor = builder.build();
  ep.pattern = ep.extractor.pattern();
  ep.kind = PovmKind::Computational;
  return ep;
}

/// Four bases of cyclic nearest-neighbour superpositions, even d:
///   B1 = {(|j> +- |j+1>)/sqrt2 : j even},  B2 = same for j odd (mod d),
///   B3, B4 = the same pairs with relative phase +-i.
/// Measures rho_{j,j+1 mod d} for every j.
inline BasisConstruction goyeneche_bases(Index d) {
  if (d < 2 || d % 2 != 0) throw std::invalid_argument("goyeneche_bases: dimension must be even");
  std::vector<std::pair<Index, Index>> even_pairs, odd_pairs;
  for (Index j = 0; j < d; j += 2) even_pairs.emplace_back(j, j + 1);
  for (Index j = 1; j < d; j += 2) odd_pairs.emplace_back(j, (j + 1) % d);

  BasisConstruction out;
  out.bases.dim = d;
  out.bases.bases = {detail::pair_basis(d, even_pairs, 1.0), detail::pair_basis(d, odd_pairs, 1.0),
                     detail::pair_basis(d, even_pairs, detail::kI),
                     detail::pair_basis(d, odd_pairs, detail::kI)};
  EpPovm& ep = out.ep;
  ep.dim = d;
  for (const auto& b : out.bases.bases) ep.povms.push_back(Povm::from_basis(b));
  ExtractorBuilder builder(d, std::size_t(4 * d));
  const std::size_t ud = std::size_t(d);
  for (std::size_t q = 0; q < even_pairs.size(); ++q) {
    const auto [m, n] = even_pairs[q];
    detail::add_pair_formula(builder, m, n, 2 * q, 2 * q + 1, 2 * ud + 2 * q, 2 * ud + 2 * q + 1);
  }
  for (std::size_t q = 0; q < odd_pairs.size(); ++q) {
    const auto [m, n] = odd_pairs[q];
    detail::add_pair_formula(builder, m, n, ud + 2 * q, ud + 2 * q + 1, 3 * ud + 2 * q,
                             3 * ud + 2 * q + 1);
  }
  ep.extractor = builder.build();
  ep.pattern = ep.extractor.pattern();
  ep.kind = PovmKind::Goyeneche4;
  return out;
}

/// The two index groups used for the k-th and (d-k)-th diagonals: the
/// entries (m, m+k), m = 0..d-1-k, followed by (m, m+d-k), m = 0..k-1,
/// split into alternating runs of l = 2^Z entries, where 2^Z is the largest
/// power of two dividing k. Each group is returned sorted by left index.
inline std::pair<std::vector<std::pair<Index, Index>>, std::vector<std::pair<Index, Index>>>
diagonal_pair_groups(Index d, Index k) {
  if (!detail::is_power_of_two(d) || d < 2) {
    throw std::invalid_argument("diagonal_pair_groups: dimension must be a power of two");
  }
  if (k < 1 || k > d / 2) throw std::invalid_argument("diagonal_pair_groups: need 1 <= k <= d/2");
  std::vector<std::pair<Index, Index>> v;
  for (Index m = 0; m + k < d; ++m) v.emplace_back(m, m + k);
  for (Index m = 0; m < k; ++m) v.emplace_back(m, m + d - k);
  Index ell = 1;
  while (k % (ell * 2) == 0) ell *= 2;
  std::vector<std::pair<Index, Index>> g1, g2;
  for (std::size_t p = 0; p < v.size(); ++p) {
    ((Index(p) / ell) % 2 == 0 ? g1 : g2).push_back(v[p]);
  }
  auto by_left = [](const auto& x, const auto& y) { return x.first < y.first; };
  std::stable_sort(g1.begin(), g1.end(), by_left);
  std::stable_sort(g2.begin(), g2.end(), by_left);
  return {g1, g2};
}

/// 4r+1 bases for d = 2^m: the computational basis, then for k = 1..r the
/// four bases B_x(k;1), B_y(k;1), B_x(k;2), B_y(k;2) built from
/// diagonal_pair_groups(d, k). Measures diagonals 0..r and d-r..d-1.
inline BasisConstruction example2_bases(Index d, Index r) {
  if (!detail::is_power_of_two(d) || d < 2) {
    throw std::invalid_argument("example2_bases: dimension must be a power of two");
  }
  if (r < 1 || r > d / 2) throw std::invalid_argument("example2_bases: need 1 <= r <= d/2");
  BasisConstruction out;
  out.bases.dim = d;
  out.bases.bases.push_back(CMatrix::Identity(d, d));
  const std::size_t ud = std::size_t(d);
  ExtractorBuilder builder(d, ud * std::size_t(4 * r + 1));
  for (Index k = 0; k < d; ++k) builder.add(k, k, {{std::size_t(k), Complex(1.0)}});
  for (Index k = 1; k <= r; ++k) {
    const auto [g1, g2] = diagonal_pair_groups(d, k);
    for (const auto* group : {&g1, &g2}) {
      const std::size_t x0 = out.bases.size() * ud;
      const std::size_t y0 = x0 + ud;
      out.bases.bases.push_back(detail::pair_basis(d, *group, 1.0));
      out.bases.bases.push_back(detail::pair_basis(d, *group, detail::kI));
      for (std::size_t q = 0; q < group->size(); ++q) {
        const auto [m, n] = (*group)[q];
        detail::add_pair_formula(builder, m, n, x0 + 2 * q, x0 + 2 * q + 1, y0 + 2 * q,
                                 y0 + 2 * q + 1);
      }
    }
  }
  EpPovm& ep = out.ep;
  ep.dim = d;
  for (const auto& b : out.bases.bases) ep.povms.push_back(Povm::from_basis(b));
  ep.extractor = builder.build();
  ep.pattern = ep.extractor.pattern();
  ep.kind = PovmKind::Example2;
  ep.params = {{"rank", double(r)}};
  if (4 * r >= d) {
    ep.warnings.push_back(
        "example2_bases: r >= d/4; the d+1 mutually unbiased bases use fewer settings");
  }
  return out;
}

inline const ElementPattern& pattern_of(const EpPovm& ep) { return ep.pattern; }

}  // namespace eptomo
