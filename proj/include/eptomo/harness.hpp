#pragma once

// Seeded experiment runner: simulate, measure, reconstruct, score.
//
// Each (config point, trial) is an independent task with seed
// base_seed + trial; tasks run on a worker pool and their rows are
// collected in task order, so reports do not depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "eptomo/completeness.hpp"
#include "eptomo/completion.hpp"
#include "eptomo/constructions.hpp"
#include "eptomo/estimator.hpp"
#include "eptomo/hermitian.hpp"
#include "eptomo/io.hpp"
#include "eptomo/povm.hpp"

namespace eptomo {

inline constexpr const char* kToolVersion = "0.1.0";

enum class ExperimentKind {
  NoiselessSweep,
  ShotSweep,
  FailureBall,
  IterativeRefinement,
  StrictnessSeparation
};

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::NoiselessSweep: return "noiseless_sweep";
    case ExperimentKind::ShotSweep: return "shot_sweep";
    case ExperimentKind::FailureBall: return "failure_ball";
    case ExperimentKind::IterativeRefinement: return "iterative_refinement";
    case ExperimentKind::StrictnessSeparation: return "strictness_separation";
  }
  return "noiseless_sweep";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (auto k : {ExperimentKind::NoiselessSweep, ExperimentKind::ShotSweep,
                 ExperimentKind::FailureBall, ExperimentKind::IterativeRefinement,
                 ExperimentKind::StrictnessSeparation}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown experiment kind: " + s);
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::NoiselessSweep;
  /// flammia | example1 | example2 | goyeneche4 | five_bases
  std::string construction = "example2";
  std::vector<Index> dims;
  std::vector<Index> ranks;
  /// 0 stands for an exact record.
  std::vector<std::int64_t> shots;
  /// Values of rho_00 for the failure-ball family.
  std::vector<double> epsilons;
  int trials = 1;
  std::uint64_t seed = 0;
  double completion_tol = kDefaultCompletionTol;
  EstimatorOptions estimator;
  ProbeOptions probe;
  /// Acceptance thresholds by name; each experiment kind checks its own set.
  std::map<std::string, double> thresholds;

  void validate() const {
    if (dims.empty()) throw std::invalid_argument("config: dims must be non-empty");
    if (trials < 1) throw std::invalid_argument("config: trials must be >= 1");
    const bool needs_ranks = kind != ExperimentKind::FailureBall &&
                             kind != ExperimentKind::StrictnessSeparation;
    if (needs_ranks && ranks.empty()) throw std::invalid_argument("config: ranks must be non-empty");
    if ((kind == ExperimentKind::ShotSweep || kind == ExperimentKind::FailureBall) &&
        shots.empty()) {
      throw std::invalid_argument("config: shots must be non-empty");
    }
    if (kind == ExperimentKind::FailureBall && epsilons.empty()) {
      throw std::invalid_argument("config: epsilons must be non-empty");
    }
    for (auto s : shots)
      if (s < 0) throw std::invalid_argument("config: shots must be >= 0");
    for (double e : epsilons)
      if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("config: epsilons must lie in [0,1]");
    estimator.validate();
  }
};

using json = nlohmann::json;

inline ExperimentConfig config_from_json(const json& j) {
  try {
    ExperimentConfig c;
    c.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
    if (c.kind == ExperimentKind::FailureBall) c.construction = "flammia";
    if (c.kind == ExperimentKind::StrictnessSeparation) c.construction = "goyeneche4";
    c.construction = j.value("construction", c.construction);
    c.dims = j.value("dims", std::vector<Index>{});
    c.ranks = j.value("ranks", std::vector<Index>{});
    c.shots = j.value("shots", std::vector<std::int64_t>{});
    c.epsilons = j.value("epsilons", std::vector<double>{});
    c.trials = j.value("trials", 1);
    c.seed = j.value("seed", std::uint64_t(0));
    c.completion_tol = j.value("completion_tol", c.completion_tol);
    if (j.contains("estimator")) c.estimator = io::estimator_options_from_json(j.at("estimator"));
    if (j.contains("probe")) {
      const auto& p = j.at("probe");
      c.probe.probes = p.value("probes", c.probe.probes);
      c.probe.tol = p.value("tol", c.probe.tol);
      c.probe.max_iters = p.value("max_iters", c.probe.max_iters);
      c.probe.residual_tol = p.value("residual_tol", c.probe.residual_tol);
    }
    if (j.contains("thresholds")) {
      for (const auto& [k, v] : j.at("thresholds").items()) c.thresholds[k] = v.get<double>();
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw io::FormatError(std::string("config: ") + e.what());
  }
}

inline json to_json(const ExperimentConfig& c) {
  json thresholds = json::object();
  for (const auto& [k, v] : c.thresholds) thresholds[k] = v;
  return json{{"kind", to_string(c.kind)},
              {"construction", c.construction},
              {"dims", c.dims},
              {"ranks", c.ranks},
              {"shots", c.shots},
              {"epsilons", c.epsilons},
              {"trials", c.trials},
              {"seed", c.seed},
              {"completion_tol", c.completion_tol},
              {"estimator", io::to_json(c.estimator)},
              {"probe",
               {{"probes", c.probe.probes},
                {"tol", c.probe.tol},
                {"max_iters", c.probe.max_iters},
                {"residual_tol", c.probe.residual_tol}}},
              {"thresholds", thresholds}};
}

/// One metric of one trial at one configuration point.
struct ReportRow {
  std::vector<std::pair<std::string, double>> point;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  int trial = 0;
};

/// Aggregate of one metric at one point.
struct SummaryRow {
  std::vector<std::pair<std::string, double>> point;
  std::string metric;
  std::string stat;
  double value = 0.0;
};

struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  /// "<=", ">=", "<" or ">"
  std::string relation;
  bool passed = false;
  std::string detail;
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ReportRow> rows;
  std::vector<SummaryRow> summary;
  std::vector<CheckResult> checks;
  /// Points left out of the sweep because the construction does not exist
  /// there (e.g. example2 with r > d/2).
  std::vector<std::string> skipped_points;
  json tolerances;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
};

/// Worker count: TOMO_THREADS when set to a positive integer, else the
/// hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("TOMO_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return unsigned(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs tasks on `workers` threads; results are returned in task order.
/// The first exception thrown by any task is rethrown after all workers stop.
template <typename T>
std::vector<T> run_parallel(const std::vector<std::function<T()>>& tasks, unsigned workers) {
  std::vector<T> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        results[i] = tasks[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = tasks.size();
      }
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, unsigned(tasks.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return results;
}

/// The protocol named `name` at (d, r), or nullopt with a reason when it is
/// not defined there.
inline std::optional<EpPovm> make_construction(const std::string& name, Index d, Index r,
                                               std::string* reason = nullptr) {
  auto fail = [&](const std::string& why) -> std::optional<EpPovm> {
    if (reason) *reason = why;
    return std::nullopt;
  };
  try {
    if (name == "flammia") return flammia_povm(d);
    if (name == "example1") {
      if (r < 1 || r > d) return fail("example1 needs 1 <= r <= d");
      return example1_povm(d, r);
    }
    if (name == "example2") {
      if (!detail::is_power_of_two(d) || d < 2) return fail("example2 needs d a power of two");
      if (r < 1 || 2 * r > d) return fail("example2 needs 1 <= r <= d/2");
      return example2_bases(d, r).ep;
    }
    if (name == "goyeneche4" || name == "five_bases") {
      if (d % 2 != 0) return fail("four-basis protocol needs even d");
      const auto g = goyeneche_bases(d);
      if (name == "goyeneche4") return g.ep;
      return combine({computational_basis(d), g.ep});
    }
  } catch (const std::exception& e) {
    return fail(e.what());
  }
  throw std::invalid_argument("unknown construction: " + name);
}

namespace detail {

inline std::string point_label(const std::vector<std::pair<std::string, double>>& point) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < point.size(); ++i) {
    os << (i ? " " : "") << point[i].first << "=" << point[i].second;
  }
  return os.str();
}

inline double median(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double max_finite(const std::vector<double>& v) {
  double m = std::numeric_limits<double>::quiet_NaN();
  for (double x : v)
    if (!std::isnan(x)) m = std::isnan(m) ? x : std::max(m, x);
  return m;
}

inline double min_finite(const std::vector<double>& v) {
  double m = std::numeric_limits<double>::quiet_NaN();
  for (double x : v)
    if (!std::isnan(x)) m = std::isnan(m) ? x : std::min(m, x);
  return m;
}

/// Least-squares slope of log10(y) against log10(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log10(x[i]);
    my += std::log10(y[i]);
  }
  mx /= double(n);
  my /= double(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log10(x[i]) - mx;
    sxy += dx * (std::log10(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

/// A trial's state as a density matrix: exact completions are normalized if
/// already valid, otherwise projected onto the states.
inline DensityMatrix to_state(const HermitianMatrix& h) {
  const double tr = h.trace();
  if (tr > 0.0) {
    const HermitianMatrix n = HermitianMatrix::hermitian_part(h.matrix() / tr);
    if (min_eigenvalue(n) >= -1e-10) {
      return project_psd_trace1(n);
    }
  }
  return project_psd_trace1(h);
}

inline MeasurementRecord measure(const EpPovm& ep, const DensityMatrix& rho, std::int64_t shots,
                                 std::uint64_t seed) {
  MeasurementRecord exact = born_probabilities(ep, rho);
  if (shots == 0) return exact;
  return sample_record(exact, shots, seed);
}

/// Pure state with rho_00 = eps and the remaining amplitude spread over a
/// seeded random direction in span{|1>, ..., |d-1>}.
inline DensityMatrix ball_state(Index d, double eps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CVector tail = ginibre(d - 1, 1, rng).col(0);
  tail.normalize();
  CVector psi(d);
  psi(0) = std::sqrt(eps);
  psi.tail(d - 1) = std::sqrt(1.0 - eps) * tail;
  return DensityMatrix::pure(psi);
}

using Point = std::vector<std::pair<std::string, double>>;

struct Task {
  Point point;
  int trial = 0;
  std::function<std::vector<std::pair<std::string, double>>()> run;
};

}  // namespace detail

/// Every metric recorded for a point, per trial, as a vector indexed by
/// trial (task order).
inline std::map<std::string, std::vector<double>> metric_columns(const ExperimentReport& r,
                                                                 const detail::Point& point) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& row : r.rows)
    if (row.point == point) out[row.metric].push_back(row.value);
  return out;
}

namespace detail {

inline void add_check(ExperimentReport& rep, const std::string& name, double value,
                      const std::string& relation, std::string detail = {}) {
  const auto it = rep.config.thresholds.find(name);
  if (it == rep.config.thresholds.end()) return;
  const double t = it->second;
  bool ok = false;
  if (relation == "<=") ok = value <= t;
  if (relation == ">=") ok = value >= t;
  if (relation == "<") ok = value < t;
  if (relation == ">") ok = value > t;
  rep.checks.push_back({name, value, t, relation, ok && !std::isnan(value), std::move(detail)});
}

inline std::vector<Point> distinct_points(const ExperimentReport& r) {
  std::vector<Point> pts;
  for (const auto& row : r.rows)
    if (std::find(pts.begin(), pts.end(), row.point) == pts.end()) pts.push_back(row.point);
  return pts;
}

inline double point_value(const Point& p, const std::string& key) {
  for (const auto& [k, v] : p)
    if (k == key) return v;
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

namespace detail {

inline std::vector<Task> noiseless_tasks(const ExperimentConfig& cfg, ExperimentReport& rep) {
  std::vector<Task> tasks;
  for (Index d : cfg.dims) {
    for (Index r : cfg.ranks) {
      std::string why;
      auto ep = make_construction(cfg.construction, d, r, &why);
      if (!ep) {
        rep.skipped_points.push_back("d=" + std::to_string(d) + " r=" + std::to_string(r) + ": " + why);
        continue;
      }
      auto shared = std::make_shared<const EpPovm>(std::move(*ep));
      for (int t = 0; t < cfg.trials; ++t) {
        const std::uint64_t seed = cfg.seed + std::uint64_t(t);
        tasks.push_back({{{"d", double(d)}, {"r", double(r)}}, t, [=, &cfg] {
          const DensityMatrix rho = random_rank_r_state(d, r, mix_seed(seed, std::uint64_t(d * 1000 + r)));
          const PartialMatrix partial = extract_elements(*shared, born_probabilities(*shared, rho));
          const double nan = std::numeric_limits<double>::quiet_NaN();
          try {
            const CompletionReport c = complete(partial, r, cfg.completion_tol);
            const DensityMatrix est = to_state(c.completed);
            double cond = nan;
            for (double w : c.window_conditions)
              if (!std::isnan(w)) cond = std::isnan(cond) ? w : std::min(cond, w);
            return std::vector<std::pair<std::string, double>>{
                {"infidelity", 1.0 - fidelity(rho, est)},
                {"max_entry_error", (c.completed.matrix() - rho.matrix()).cwiseAbs().maxCoeff()},
                {"failure_set", 0.0},
                {"min_window_sigma", cond},
                {"used_alternative", c.used_alternative() ? 1.0 : 0.0}};
          } catch (const FailureSetError& e) {
            return std::vector<std::pair<std::string, double>>{{"infidelity", nan},
                                                               {"max_entry_error", nan},
                                                               {"failure_set", 1.0},
                                                               {"min_window_sigma", e.sigma_min()},
                                                               {"used_alternative", 0.0}};
          }
        }});
      }
    }
  }
  return tasks;
}

inline void noiseless_checks(ExperimentReport& rep) {
  double worst = 0.0;
  double failures = 0.0;
  for (const auto& p : distinct_points(rep)) {
    auto cols = metric_columns(rep, p);
    const double mx = max_finite(cols["infidelity"]);
    const double nf = std::accumulate(cols["failure_set"].begin(), cols["failure_set"].end(), 0.0);
    rep.summary.push_back({p, "infidelity", "max", mx});
    rep.summary.push_back({p, "infidelity", "median", median(cols["infidelity"])});
    rep.summary.push_back({p, "failure_set", "count", nf});
    if (!std::isnan(mx)) worst = std::max(worst, mx);
    failures += nf;
  }
  add_check(rep, "max_infidelity", worst, "<=");
  add_check(rep, "max_failure_draws", failures, "<=");
}

inline std::vector<Task> shot_tasks(const ExperimentConfig& cfg, ExperimentReport& rep) {
  std::vector<Task> tasks;
  for (Index d : cfg.dims) {
    for (Index r : cfg.ranks) {
      std::string why;
      auto ep = make_construction(cfg.construction, d, r, &why);
      if (!ep) {
        rep.skipped_points.push_back("d=" + std::to_string(d) + " r=" + std::to_string(r) + ": " + why);
        continue;
      }
      auto shared = std::make_shared<const EpPovm>(std::move(*ep));
      for (std::int64_t n : cfg.shots) {
        for (int t = 0; t < cfg.trials; ++t) {
          const std::uint64_t seed = cfg.seed + std::uint64_t(t);
          tasks.push_back({{{"d", double(d)}, {"r", double(r)}, {"shots", double(n)}}, t, [=, &cfg] {
            const DensityMatrix rho = random_rank_r_state(d, r, mix_seed(seed, std::uint64_t(d * 1000 + r)));
            const auto rec = measure(*shared, rho, n, mix_seed(seed, std::uint64_t(n)));
            const EstimateReport e = psd_least_squares(shared->povms, rec, cfg.estimator);
            return std::vector<std::pair<std::string, double>>{
                {"infidelity", 1.0 - fidelity(rho, e.estimate)},
                {"frobenius_sq_error", (e.estimate.matrix() - rho.matrix()).squaredNorm()},
                {"objective", e.objective},
                {"iterations", double(e.iterations)},
                {"converged", e.converged ? 1.0 : 0.0}};
          }});
        }
      }
    }
  }
  return tasks;
}

inline void shot_checks(ExperimentReport& rep) {
  // Group finite-shot medians by (d, r), ascending in shots.
  std::map<std::pair<double, double>, std::vector<std::pair<double, double>>> curves;
  for (const auto& p : distinct_points(rep)) {
    auto cols = metric_columns(rep, p);
    const double med = median(cols["infidelity"]);
    rep.summary.push_back({p, "infidelity", "median", med});
    rep.summary.push_back({p, "converged", "fraction",
                           std::accumulate(cols["converged"].begin(), cols["converged"].end(), 0.0) /
                               double(cols["converged"].size())});
    const double n = point_value(p, "shots");
    if (n > 0) curves[{point_value(p, "d"), point_value(p, "r")}].push_back({n, med});
  }
  double worst_slope_lo = std::numeric_limits<double>::infinity();
  double worst_slope_hi = -std::numeric_limits<double>::infinity();
  double decreasing = 1.0;
  std::map<std::pair<double, double>, std::vector<std::pair<double, double>>> frob;
  for (const auto& p : distinct_points(rep)) {
    const double n = point_value(p, "shots");
    auto cols = metric_columns(rep, p);
    if (n > 0) frob[{point_value(p, "d"), point_value(p, "r")}].push_back({n, median(cols["frobenius_sq_error"])});
  }
  for (auto& [key, c] : frob) {
    std::sort(c.begin(), c.end());
    std::vector<double> x, y;
    for (const auto& [n, v] : c) {
      x.push_back(n);
      y.push_back(v);
    }
    rep.summary.push_back({{{"d", key.first}, {"r", key.second}}, "frobenius_sq_error", "loglog_slope",
                           loglog_slope(x, y)});
  }
  for (auto& [key, c] : curves) {
    std::sort(c.begin(), c.end());
    std::vector<double> x, y;
    for (std::size_t i = 0; i < c.size(); ++i) {
      x.push_back(c[i].first);
      y.push_back(c[i].second);
      if (i > 0 && !(c[i].second < c[i - 1].second)) decreasing = 0.0;
    }
    const double slope = loglog_slope(x, y);
    rep.summary.push_back({{{"d", key.first}, {"r", key.second}}, "infidelity", "loglog_slope", slope});
    worst_slope_lo = std::min(worst_slope_lo, slope);
    worst_slope_hi = std::max(worst_slope_hi, slope);
  }
  add_check(rep, "strictly_decreasing", decreasing, ">=");
  add_check(rep, "slope_min", worst_slope_lo, ">=");
  add_check(rep, "slope_max", worst_slope_hi, "<=");
}

inline std::vector<Task> failure_ball_tasks(const ExperimentConfig& cfg, ExperimentReport& rep) {
  std::vector<Task> tasks;
  for (Index d : cfg.dims) {
    const Index r = cfg.ranks.empty() ? 1 : cfg.ranks.front();
    std::string why;
    auto ep = make_construction(cfg.construction, d, r, &why);
    if (!ep) {
      rep.skipped_points.push_back("d=" + std::to_string(d) + ": " + why);
      continue;
    }
    auto shared = std::make_shared<const EpPovm>(std::move(*ep));
    for (double eps : cfg.epsilons) {
      for (std::int64_t n : cfg.shots) {
        for (int t = 0; t < cfg.trials; ++t) {
          const std::uint64_t seed = cfg.seed + std::uint64_t(t);
          tasks.push_back({{{"d", double(d)}, {"epsilon", eps}, {"shots", double(n)}}, t, [=, &cfg] {
            const DensityMatrix rho = ball_state(d, eps, mix_seed(seed, std::uint64_t(d)));
            const MeasurementRecord exact = born_probabilities(*shared, rho);
            const PartialMatrix partial = extract_elements(*shared, exact);
            double sigma = 0.0;
            double failed = 0.0;
            try {
              const CompletionReport c = complete(partial, r, cfg.completion_tol);
              sigma = c.window_conditions.front();
            } catch (const FailureSetError& e) {
              sigma = e.sigma_min();
              failed = 1.0;
            }
            const auto rec = n == 0 ? exact : sample_record(exact, n, mix_seed(seed, std::uint64_t(n)));
            const EstimateReport e = psd_least_squares(shared->povms, rec, cfg.estimator);
            return std::vector<std::pair<std::string, double>>{
                {"sigma_min", sigma},
                {"exact_failure", failed},
                {"infidelity", 1.0 - fidelity(rho, e.estimate)}};
          }});
        }
      }
    }
  }
  return tasks;
}

inline void failure_ball_checks(ExperimentReport& rep) {
  double worst_rel = 0.0;
  double zero_eps_failures_ok = 1.0;
  // (d, shots) -> (epsilon, median infidelity)
  std::map<std::pair<double, double>, std::vector<std::pair<double, double>>> curves;
  for (const auto& p : distinct_points(rep)) {
    auto cols = metric_columns(rep, p);
    const double eps = point_value(p, "epsilon");
    const double med = median(cols["infidelity"]);
    rep.summary.push_back({p, "infidelity", "median", med});
    rep.summary.push_back({p, "sigma_min", "max", max_finite(cols["sigma_min"])});
    rep.summary.push_back({p, "exact_failure", "count",
                           std::accumulate(cols["exact_failure"].begin(), cols["exact_failure"].end(), 0.0)});
    for (double s : cols["sigma_min"]) {
      if (eps > 0) worst_rel = std::max(worst_rel, std::abs(s - eps) / eps);
    }
    if (eps == 0.0) {
      for (double f : cols["exact_failure"])
        if (f != 1.0) zero_eps_failures_ok = 0.0;
    }
    if (eps > 0) curves[{point_value(p, "d"), point_value(p, "shots")}].push_back({eps, med});
  }
  double ratio = std::numeric_limits<double>::infinity();
  for (auto& [key, c] : curves) {
    std::sort(c.begin(), c.end());
    if (c.size() < 2) continue;
    // Smallest epsilon against largest.
    ratio = std::min(ratio, c.front().second / c.back().second);
    rep.summary.push_back({{{"d", key.first}, {"shots", key.second}},
                           "infidelity", "ratio_smallest_to_largest_epsilon",
                           c.front().second / c.back().second});
  }
  add_check(rep, "sigma_min_rel_err", worst_rel, "<=");
  add_check(rep, "zero_epsilon_fails", zero_eps_failures_ok, ">=");
  add_check(rep, "degradation_ratio", ratio, ">");
}

inline std::vector<Task> refinement_tasks(const ExperimentConfig& cfg, ExperimentReport& rep) {
  std::vector<Task> tasks;
  const bool slices = cfg.construction == "example1";
  if (!slices && cfg.construction != "example2") {
    throw std::invalid_argument("iterative_refinement needs construction example1 or example2");
  }
  std::vector<std::int64_t> shots = cfg.shots.empty() ? std::vector<std::int64_t>{0} : cfg.shots;
  for (Index d : cfg.dims) {
    for (Index big_r : cfg.ranks) {
      std::vector<std::shared_ptr<const EpPovm>> prefixes;
      std::string why;
      for (Index k = 1; k <= big_r; ++k) {
        std::optional<EpPovm> ep;
        if (slices) {
          if (big_r > d) {
            why = "needs R <= d";
            break;
          }
          std::vector<EpPovm> parts;
          for (Index s = 0; s < k; ++s) parts.push_back(example1_slice(d, s));
          ep = combine(parts);
        } else {
          ep = make_construction("example2", d, k, &why);
          if (!ep) break;
        }
        prefixes.push_back(std::make_shared<const EpPovm>(std::move(*ep)));
      }
      if (Index(prefixes.size()) != big_r) {
        rep.skipped_points.push_back("d=" + std::to_string(d) + " R=" + std::to_string(big_r) + ": " + why);
        continue;
      }
      for (std::int64_t n : shots) {
        for (Index k = 1; k <= big_r; ++k) {
          for (int t = 0; t < cfg.trials; ++t) {
            const std::uint64_t seed = cfg.seed + std::uint64_t(t);
            auto ep = prefixes[std::size_t(k - 1)];
            tasks.push_back({{{"d", double(d)}, {"R", double(big_r)}, {"shots", double(n)}, {"k", double(k)}},
                             t, [=, &cfg] {
              const DensityMatrix rho =
                  random_rank_r_state(d, big_r, mix_seed(seed, std::uint64_t(d * 1000 + big_r)));
              const auto rec = measure(*ep, rho, n, mix_seed(seed, std::uint64_t(n * 64 + k)));
              const double nan = std::numeric_limits<double>::quiet_NaN();
              if (n == 0) {
                try {
                  const CompletionReport c = complete(extract_elements(*ep, rec), k, cfg.completion_tol);
                  return std::vector<std::pair<std::string, double>>{
                      {"fidelity", fidelity(rho, to_state(c.completed))}, {"failure_set", 0.0}};
                } catch (const FailureSetError&) {
                  return std::vector<std::pair<std::string, double>>{{"fidelity", nan},
                                                                     {"failure_set", 1.0}};
                }
              }
              const EstimateReport e = psd_least_squares(ep->povms, rec, cfg.estimator);
              return std::vector<std::pair<std::string, double>>{
                  {"fidelity", fidelity(rho, e.estimate)}, {"failure_set", 0.0}};
            }});
          }
        }
      }
    }
  }
  return tasks;
}

inline void refinement_checks(ExperimentReport& rep) {
  // (d, R, shots) -> k -> fidelity per trial
  std::map<std::tuple<double, double, double>, std::map<double, std::vector<double>>> seqs;
  for (const auto& p : distinct_points(rep)) {
    auto cols = metric_columns(rep, p);
    rep.summary.push_back({p, "fidelity", "median", median(cols["fidelity"])});
    rep.summary.push_back({p, "fidelity", "min", min_finite(cols["fidelity"])});
    seqs[{point_value(p, "d"), point_value(p, "R"), point_value(p, "shots")}][point_value(p, "k")] =
        cols["fidelity"];
  }
  double monotone = 1.0;
  double final_min = std::numeric_limits<double>::infinity();
  for (const auto& [key, by_k] : seqs) {
    const auto [d, big_r, shots] = key;
    double prev = -1.0;
    std::size_t trials = by_k.begin()->second.size();
    std::size_t monotone_trials = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      double last = -1.0;
      bool ok = true;
      for (const auto& [k, f] : by_k) {
        if (f[t] < last - 1e-12) ok = false;
        last = f[t];
      }
      monotone_trials += ok ? 1 : 0;
    }
    for (const auto& [k, f] : by_k) {
      const double med = median(f);
      if (med < prev - 1e-12) monotone = 0.0;
      prev = med;
    }
    final_min = std::min(final_min, min_finite(by_k.rbegin()->second));
    rep.summary.push_back({{{"d", d}, {"R", big_r}, {"shots", shots}},
                           "fidelity",
                           "monotone_trial_fraction",
                           double(monotone_trials) / double(trials)});
  }
  add_check(rep, "monotone", monotone, ">=");
  add_check(rep, "final_fidelity_min", final_min, ">=");
}

inline std::vector<Task> strictness_tasks(const ExperimentConfig& cfg, ExperimentReport& rep) {
  std::vector<Task> tasks;
  for (Index d : cfg.dims) {
    std::string why;
    auto four = make_construction("goyeneche4", d, 1, &why);
    auto five = make_construction("five_bases", d, 1, &why);
    if (!four || !five) {
      rep.skipped_points.push_back("d=" + std::to_string(d) + ": " + why);
      continue;
    }
    auto f4 = std::make_shared<const EpPovm>(std::move(*four));
    auto f5 = std::make_shared<const EpPovm>(std::move(*five));
    for (int t = 0; t < cfg.trials; ++t) {
      const std::uint64_t seed = cfg.seed + std::uint64_t(t);
      tasks.push_back({{{"d", double(d)}}, t, [=, &cfg] {
        const DensityMatrix rho = random_pure_state(d, mix_seed(seed, std::uint64_t(d)));
        ProbeOptions o = cfg.probe;
        o.seed = mix_seed(seed, 0x34ULL);
        const ProbeResult p4 = uniqueness_probe(*f4, born_probabilities(*f4, rho), o);
        o.seed = mix_seed(seed, 0x35ULL);
        const ProbeResult p5 = uniqueness_probe(*f5, born_probabilities(*f5, rho), o);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        double rank = nan, resid = nan, dist = nan, verified = 0.0;
        if (p4.witness) {
          rank = double(rank_with_tol(p4.witness->hermitian(), 1e-8));
          resid = p4.witness_record_residual;
          dist = (p4.witness->matrix() - rho.matrix()).norm();
          verified = (resid <= 1e-8 && rank >= 2 && dist > 1e-4) ? 1.0 : 0.0;
        }
        return std::vector<std::pair<std::string, double>>{
            {"spread_four", p4.spread},     {"witness_four", verified},
            {"witness_rank", rank},         {"witness_residual", resid},
            {"witness_distance", dist},     {"spread_five", p5.spread},
            {"converged_four", p4.all_converged ? 1.0 : 0.0},
            {"converged_five", p5.all_converged ? 1.0 : 0.0}};
      }});
    }
  }
  return tasks;
}

inline void strictness_checks(ExperimentReport& rep) {
  double fraction = std::numeric_limits<double>::infinity();
  double worst_five = 0.0;
  for (const auto& p : distinct_points(rep)) {
    auto cols = metric_columns(rep, p);
    const auto& w = cols["witness_four"];
    const double frac = std::accumulate(w.begin(), w.end(), 0.0) / double(w.size());
    const double five = max_finite(cols["spread_five"]);
    rep.summary.push_back({p, "witness_four", "fraction", frac});
    rep.summary.push_back({p, "spread_four", "median", median(cols["spread_four"])});
    rep.summary.push_back({p, "spread_five", "max", five});
    fraction = std::min(fraction, frac);
    worst_five = std::max(worst_five, five);
  }
  add_check(rep, "min_witness_fraction", fraction, ">=");
  add_check(rep, "max_spread_five", worst_five, "<=");
}

}  // namespace detail

inline json tolerances_json(const ExperimentConfig& cfg) {
  return json{{"zero_tol", kDefaultZeroTol},
              {"psd_tol", DensityMatrix::kDefaultPsdTol},
              {"trace_tol", DensityMatrix::kDefaultTraceTol},
              {"completion_tol", cfg.completion_tol},
              {"completion_tol_scope", "rows/cols: absolute sigma_min(A); band: times window trace"},
              {"estimator", io::to_json(cfg.estimator)},
              {"probe_spread_tol", cfg.probe.tol},
              {"probe_residual_tol", cfg.probe.residual_tol},
              {"probe_max_iters", cfg.probe.max_iters},
              {"probe_infeasible_tol", cfg.probe.infeasible_tol},
              {"witness_record_tol", 1e-8},
              {"witness_rank_tol", 1e-8},
              {"witness_distinctness_tol", 1e-4},
              {"sampling_normalization_tol", 1e-9}};
}

/// Runs an experiment on `workers` threads (0 = worker_count()).
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, unsigned workers = 0) {
  cfg.validate();
  ExperimentReport rep;
  rep.config = cfg;
  rep.tolerances = tolerances_json(cfg);
  std::vector<detail::Task> tasks;
  switch (cfg.kind) {
    case ExperimentKind::NoiselessSweep: tasks = detail::noiseless_tasks(cfg, rep); break;
    case ExperimentKind::ShotSweep: tasks = detail::shot_tasks(cfg, rep); break;
    case ExperimentKind::FailureBall: tasks = detail::failure_ball_tasks(cfg, rep); break;
    case ExperimentKind::IterativeRefinement: tasks = detail::refinement_tasks(cfg, rep); break;
    case ExperimentKind::StrictnessSeparation: tasks = detail::strictness_tasks(cfg, rep); break;
  }
  std::vector<std::function<std::vector<std::pair<std::string, double>>()>> fns;
  fns.reserve(tasks.size());
  for (const auto& t : tasks) fns.push_back(t.run);
  const auto results = run_parallel(fns, workers == 0 ? worker_count() : workers);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (const auto& [metric, value] : results[i]) {
      rep.rows.push_back({tasks[i].point, metric, value, cfg.seed + std::uint64_t(tasks[i].trial),
                          tasks[i].trial});
    }
  }
  switch (cfg.kind) {
    case ExperimentKind::NoiselessSweep: detail::noiseless_checks(rep); break;
    case ExperimentKind::ShotSweep: detail::shot_checks(rep); break;
    case ExperimentKind::FailureBall: detail::failure_ball_checks(rep); break;
    case ExperimentKind::IterativeRefinement: detail::refinement_checks(rep); break;
    case ExperimentKind::StrictnessSeparation: detail::strictness_checks(rep); break;
  }
  return rep;
}

namespace detail {

inline json point_json(const Point& p) {
  json o = json::object();
  for (const auto& [k, v] : p) o[k] = io::number(v);
  return o;
}

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline json to_json(const ExperimentReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"point", detail::point_json(row.point)},
                    {"metric", row.metric},
                    {"value", io::number(row.value)},
                    {"seed", row.seed},
                    {"trial", row.trial}});
  }
  json summary = json::array();
  for (const auto& s : r.summary) {
    summary.push_back({{"point", detail::point_json(s.point)},
                       {"metric", s.metric},
                       {"stat", s.stat},
                       {"value", io::number(s.value)}});
  }
  json checks = json::array();
  for (const auto& c : r.checks) {
    checks.push_back({{"name", c.name},
                      {"value", io::number(c.value)},
                      {"relation", c.relation},
                      {"threshold", c.threshold},
                      {"passed", c.passed}});
  }
  return json{{"metadata",
               {{"tool", "eptomo"},
                {"version", kToolVersion},
                {"kind", to_string(r.config.kind)},
                {"config", to_json(r.config)},
                {"tolerances", r.tolerances},
                {"skipped_points", r.skipped_points}}},
              {"rows", rows},
              {"summary", summary},
              {"checks", checks},
              {"passed", r.passed()}};
}

/// Long-format CSV of the rows: one column per point key, then metric,
/// value, seed, trial.
inline std::string rows_csv(const ExperimentReport& r) {
  std::vector<std::string> keys;
  for (const auto& row : r.rows)
    for (const auto& [k, v] : row.point)
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  std::ostringstream os;
  for (const auto& k : keys) os << k << ',';
  os << "metric,value,seed,trial\n";
  for (const auto& row : r.rows) {
    for (const auto& k : keys) os << detail::csv_number(detail::point_value(row.point, k)) << ',';
    os << row.metric << ',' << detail::csv_number(row.value) << ',' << row.seed << ',' << row.trial
       << '\n';
  }
  return os.str();
}

inline std::string summary_csv(const ExperimentReport& r) {
  std::vector<std::string> keys;
  for (const auto& s : r.summary)
    for (const auto& [k, v] : s.point)
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  std::ostringstream os;
  for (const auto& k : keys) os << k << ',';
  os << "metric,stat,value\n";
  for (const auto& s : r.summary) {
    for (const auto& k : keys) os << detail::csv_number(detail::point_value(s.point, k)) << ',';
    os << s.metric << ',' << s.stat << ',' << detail::csv_number(s.value) << '\n';
  }
  return os.str();
}

/// Writes report.json, rows.csv and summary.csv into `dir`.
inline void write_report(const ExperimentReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_json_file((dir / "report.json").string(), to_json(r));
  std::ofstream((dir / "rows.csv").string()) << rows_csv(r);
  std::ofstream((dir / "summary.csv").string()) << summary_csv(r);
}

}  // namespace eptomo
