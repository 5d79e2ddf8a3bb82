// Acceptance checks. `acceptance --criterion N` runs one check; with no
// argument all of them run. Each prints one PASS/FAIL line; the exit code is
// nonzero when any selected check fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "eptomo/completeness.hpp"
#include "eptomo/completion.hpp"
#include "eptomo/constructions.hpp"
#include "eptomo/estimator.hpp"
#include "eptomo/harness.hpp"

using namespace eptomo;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::vector<double> values_of(const ExperimentReport& r, const std::string& metric,
                              const std::function<bool(const ReportRow&)>& keep = {}) {
  std::vector<double> out;
  for (const auto& row : r.rows)
    if (row.metric == metric && (!keep || keep(row))) out.push_back(row.value);
  return out;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1. Inertia additivity (exact triples) and rank additivity at 1e-8.
Outcome schur_identities() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  int checked = 0, inertia_bad = 0, rank_bad = 0;
  while (checked < 200) {
    const Index d = 2 + Index(checked % 7);
    const Index rank = checked % 2 ? d : 1 + Index(rng() % std::uint64_t(d));
    const CMatrix g = ginibre(d, rank, rng);
    RVector signs(rank);
    for (Index i = 0; i < rank; ++i) signs(i) = (rng() % 3 == 0) ? -1.0 : 1.0;
    const HermitianMatrix m = HermitianMatrix::hermitian_part(g * signs.asDiagonal() * g.adjoint());
    const Index k = 1 + Index(rng() % std::uint64_t(std::max<Index>(1, std::min(rank, d - 1))));
    const BlockSpec spec = BlockSpec::leading(k);
    if (smallest_singular_value(principal_submatrix(m, spec.a_indices())) < 1e-6) continue;
    const HermitianMatrix a = principal_submatrix(m, spec.a_indices());
    const HermitianMatrix s = schur_complement(m, spec, 1e-12);
    if (!(inertia(m, 1e-8) == inertia(a, 1e-8) + inertia(s, 1e-8))) ++inertia_bad;
    if (rank_with_tol(m, 1e-8) != rank_with_tol(a, 1e-8) + rank_with_tol(s, 1e-8)) ++rank_bad;
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {inertia_bad == 0 && rank_bad == 0 && secs < 5.0,
          "200 matrices, inertia mismatches " + std::to_string(inertia_bad) + ", rank mismatches " +
              std::to_string(rank_bad) + ", " + fmt(secs) + " s (limit 5)"};
}

// 2. Exact recovery through both families over d in {4, 8, 16}, r <= 3.
Outcome noiseless_recovery() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int unexplained = 0, flagged = 0, points = 0;
  for (const std::string name : {"example1", "example2"}) {
    ExperimentConfig c;
    c.kind = ExperimentKind::NoiselessSweep;
    c.construction = name;
    c.dims = {4, 8, 16};
    c.ranks = {1, 2, 3};
    c.trials = 100;
    c.seed = 1000;
    const auto rep = run_experiment(c);
    for (const auto& row : rep.rows) {
      if (row.metric == "infidelity" && !std::isnan(row.value)) worst = std::max(worst, row.value);
    }
    std::map<std::pair<int, std::string>, double> sigma;
    for (const auto& row : rep.rows) {
      if (row.metric == "min_window_sigma") sigma[{row.trial, detail::point_label(row.point)}] = row.value;
    }
    for (const auto& row : rep.rows) {
      if (row.metric != "failure_set" || row.value == 0.0) continue;
      const double s = sigma[{row.trial, detail::point_label(row.point)}];
      (s <= 1e-8 ? flagged : unexplained)++;
    }
    points += int(detail::distinct_points(rep).size());
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-9 && unexplained == 0 && secs < 120.0,
          std::to_string(points) + " (construction, d, r) points x 100 states, max infidelity " + fmt(worst) +
              ", flagged failures " + std::to_string(flagged) + ", unexplained failures " +
              std::to_string(unexplained) + ", " + fmt(secs) + " s (limit 120)"};
}

std::vector<std::vector<std::pair<long, long>>> canonical_vectors(const CMatrix& basis) {
  std::vector<std::vector<std::pair<long, long>>> out;
  for (Index k = 0; k < basis.rows(); ++k) {
    CVector v = basis.row(k).transpose();
    Index first = 0;
    while (std::abs(v(first)) < 1e-12) ++first;
    v *= std::abs(v(first)) / v(first);
    std::vector<std::pair<long, long>> key;
    for (Index i = 0; i < v.size(); ++i)
      key.emplace_back(std::lround(v(i).real() * 1e9), std::lround(v(i).imag() * 1e9));
    out.push_back(key);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// 3. Generated d=4 bases match the four-basis set; all bases orthonormal.
Outcome basis_cross_check() {
  const auto alg = example2_bases(4, 1);
  const auto ref = goyeneche_bases(4);
  std::vector<decltype(canonical_vectors(ref.bases.bases[0]))> lhs, rhs;
  for (std::size_t b = 1; b < alg.bases.size(); ++b) lhs.push_back(canonical_vectors(alg.bases.bases[b]));
  for (const auto& b : ref.bases.bases) rhs.push_back(canonical_vectors(b));
  std::sort(lhs.begin(), lhs.end());
  std::sort(rhs.begin(), rhs.end());
  const bool first_is_computational = alg.bases.bases[0].isApprox(CMatrix::Identity(4, 4), 0.0);
  double worst = 0.0;
  int sets = 0;
  for (Index d : {4, 8, 16}) {
    for (Index r = 1; r <= d / 2; ++r) {
      worst = std::max(worst, example2_bases(d, r).bases.max_unitarity_error());
      ++sets;
    }
  }
  const bool match = lhs == rhs && first_is_computational;
  return {match && worst <= 1e-10, std::string("d=4 bases ") + (match ? "match" : "differ") +
                                       " after canonical sort; " + std::to_string(sets) +
                                       " basis sets, max orthonormality error " + fmt(worst)};
}

// 4. Four bases admit a higher-rank witness; five bases are unique.
Outcome strictness_separation() {
  const auto t0 = Clock::now();
  ExperimentConfig c;
  c.kind = ExperimentKind::StrictnessSeparation;
  c.dims = {4};
  c.trials = 20;
  c.seed = 4000;
  const auto rep = run_experiment(c);
  const auto w = values_of(rep, "witness_four");
  const auto five = values_of(rep, "spread_five");
  const auto four = values_of(rep, "spread_four");
  const int verified = int(std::count(w.begin(), w.end(), 1.0));
  const int unique_five = int(std::count_if(five.begin(), five.end(), [](double s) { return s <= 1e-6; }));
  const int flat_four = int(std::count_if(four.begin(), four.end(), [](double s) { return s <= 1e-6; }));
  const auto conv = values_of(rep, "converged_four");
  const int solved = int(std::count(conv.begin(), conv.end(), 1.0));
  const double secs = seconds_since(t0);
  return {verified >= 19 && unique_five == 20 && secs < 60.0,
          "verified four-basis witnesses " + std::to_string(verified) + "/20 (need 19), four-basis spread <= 1e-6 in " +
              std::to_string(flat_four) + "/20 (solver converged in " + std::to_string(solved) +
              "/20), five-basis unique " + std::to_string(unique_five) +
              "/20, " + fmt(secs) + " s (limit 60)"};
}

struct SuiteEntry {
  std::string name;
  EpPovm ep;
  Index rank;
};

std::vector<SuiteEntry> construction_suite() {
  std::vector<SuiteEntry> s;
  for (Index d : {2, 3, 4}) s.push_back({"row probe d=" + std::to_string(d), flammia_povm(d), 1});
  for (Index r : {1, 2}) s.push_back({"example1 d=4 r=" + std::to_string(r), example1_povm(4, r), r});
  for (Index d : {4, 8})
    for (Index r : {1, 2})
      if (2 * r <= d) s.push_back({"example2 d=" + std::to_string(d) + " r=" + std::to_string(r), example2_bases(d, r).ep, r});
  s.push_back({"four bases d=4", goyeneche_bases(4).ep, 1});
  s.push_back({"five bases d=4", combine({computational_basis(4), goyeneche_bases(4).ep}), 1});
  return s;
}

// 5. Whenever the diagonal condition certifies a protocol, probes find no spread.
Outcome proposition_consistency() {
  int certified = 0, probed = 0, counterexamples = 0;
  double widest = 0.0;
  std::string not_certified;
  for (const auto& e : construction_suite()) {
    const auto verdict = check_rank_r_complete(e.ep, e.rank, 50, 5);
    const bool complete = verdict.kind == VerdictKind::RankRComplete;
    if (!check_proposition1(record_determined_pattern(e.ep), complete)) {
      not_certified += (not_certified.empty() ? "" : ", ") + e.name;
      continue;
    }
    ++certified;
    for (std::uint64_t t = 0; t < 20; ++t) {
      const auto rho = random_rank_r_state(e.ep.dim, e.rank, mix_seed(5000, t));
      ProbeOptions o;
      o.seed = t;
      const auto pr = uniqueness_probe(e.ep, born_probabilities(e.ep, rho), o);
      widest = std::max(widest, pr.spread);
      ++probed;
      if (pr.spread > 1e-6) ++counterexamples;
    }
  }
  return {counterexamples == 0 && certified > 0,
          std::to_string(certified) + " certified protocols, " + std::to_string(probed) +
              " probes, max spread " + fmt(widest) + ", counterexamples " + std::to_string(counterexamples) +
              " (not certified: " + not_certified + ")"};
}

// 6. Perturbations vanishing on diagonal-covering patterns are traceless and indefinite.
Outcome traceless_sanity() {
  int samples = 0, bad = 0, patterns = 0;
  std::vector<ElementPattern> pats{ElementPattern::band(4, 1, false), ElementPattern::band(8, 2, false),
                                   ElementPattern::band(8, 1, true), ElementPattern::diagonal(5)};
  for (const auto& ep : {example2_bases(8, 1).ep, example2_bases(16, 3).ep, combine({computational_basis(4), goyeneche_bases(4).ep})})
    pats.push_back(ep.pattern);
  for (const auto& p : pats) {
    const auto rep = traceless_negativity_check(p, 200, 6 + std::uint64_t(patterns));
    ++patterns;
    if (!rep.applicable) {
      ++bad;
      continue;
    }
    samples += rep.samples;
    bad += (rep.samples - rep.traceless) + (rep.samples - rep.with_negative_eigenvalue);
    if (rep.samples != 200) ++bad;
  }
  return {bad == 0, std::to_string(patterns) + " patterns, " + std::to_string(samples) +
                        " samples, violations " + std::to_string(bad)};
}

// 7. Estimates are states; the objective never increases.
Outcome estimator_feasibility() {
  int infeasible = 0, ascents = 0;
  double worst_eig = 0.0, worst_trace = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Index d = 2 + Index(s % 7);
    EpPovm ep;
    switch (s % 3) {
      case 0: ep = flammia_povm(d); break;
      case 1: ep = example1_povm(d, 1 + Index(s % 2)); break;
      default: ep = detail::is_power_of_two(d) ? example2_bases(d, 1).ep : flammia_povm(d); break;
    }
    const auto rho = random_rank_r_state(d, 1 + Index(s % std::uint64_t(d)), 7000 + s);
    const auto rec = sample_record(born_probabilities(ep, rho), 200 + std::int64_t(s) * 50, s);
    EstimatorOptions o;
    o.max_iters = 2000;
    const auto rep = psd_least_squares(ep.povms, rec, o);
    const double eig = min_eigenvalue(rep.estimate.hermitian());
    const double tr = std::abs(rep.estimate.hermitian().trace() - 1.0);
    worst_eig = std::min(worst_eig, eig);
    worst_trace = std::max(worst_trace, tr);
    if (eig < -1e-9 || tr > 1e-9) ++infeasible;
    for (std::size_t k = 1; k < rep.objective_trace.size(); ++k)
      if (rep.objective_trace[k] > rep.objective_trace[k - 1]) ++ascents;
  }
  return {infeasible == 0 && ascents == 0,
          "50 problems, infeasible " + std::to_string(infeasible) + " (min eigenvalue " + fmt(worst_eig) +
              ", max trace error " + fmt(worst_trace) + "), objective increases " + std::to_string(ascents)};
}

// 8. Infidelity falls with shots at roughly the statistical rate.
Outcome noise_robustness() {
  const auto t0 = Clock::now();
  ExperimentConfig c;
  c.kind = ExperimentKind::ShotSweep;
  c.construction = "example2";
  c.dims = {8};
  c.ranks = {1};
  c.shots = {1000, 10000, 100000, 1000000};
  c.trials = 30;
  c.seed = 8000;
  c.thresholds = {{"strictly_decreasing", 1.0}, {"slope_min", -1.3}, {"slope_max", -0.7}};
  const auto rep = run_experiment(c);
  std::string meds;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double frob_slope = slope;
  for (const auto& s : rep.summary) {
    if (s.stat == "median" && s.metric == "infidelity") meds += fmt(s.value) + " ";
    if (s.stat == "loglog_slope" && s.metric == "infidelity") slope = s.value;
    if (s.stat == "loglog_slope" && s.metric == "frobenius_sq_error") frob_slope = s.value;
  }
  const double secs = seconds_since(t0);
  return {rep.passed() && secs < 300.0,
          "median infidelity per decade [ " + meds + "], slope " + fmt(slope) +
              " (band [-1.3, -0.7]); squared Frobenius error slope " + fmt(frob_slope) + ", " + fmt(secs) +
              " s (limit 300)"};
}

// 9. The window condition equals rho_00; small rho_00 degrades estimates.
Outcome failure_ball() {
  ExperimentConfig c;
  c.kind = ExperimentKind::FailureBall;
  c.construction = "flammia";
  c.dims = {4};
  c.shots = {10000};
  c.epsilons = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  c.trials = 30;
  c.seed = 9000;
  const auto rep = run_experiment(c);
  double worst_abs = 0.0;
  for (const auto& row : rep.rows) {
    if (row.metric == "sigma_min") worst_abs = std::max(worst_abs, std::abs(row.value - detail::point_value(row.point, "epsilon")));
  }
  auto at = [&](double eps) {
    return median_of(values_of(rep, "infidelity", [&](const ReportRow& r) {
      return detail::point_value(r.point, "epsilon") == eps;
    }));
  };
  const double small = at(1e-6), large = at(1e-1);
  return {worst_abs <= 1e-12 && small > large,
          "max |sigma_min - epsilon| " + fmt(worst_abs) + " (limit 1e-12); median infidelity at 1e-6: " +
              fmt(small) + ", at 1e-1: " + fmt(large)};
}

// 10. Nested prefixes: fidelity non-decreasing in k, exact at k = 3.
Outcome iterative_refinement() {
  ExperimentConfig c;
  c.kind = ExperimentKind::IterativeRefinement;
  c.construction = "example2";
  c.dims = {16};
  c.ranks = {3};
  c.trials = 50;
  c.seed = 10000;
  const auto rep = run_experiment(c);
  std::map<int, std::map<int, double>> by_trial;
  for (const auto& row : rep.rows)
    if (row.metric == "fidelity") by_trial[row.trial][int(detail::point_value(row.point, "k"))] = row.value;
  int non_monotone = 0;
  double final_min = 1.0;
  std::vector<double> med;
  for (int k = 1; k <= 3; ++k) {
    med.push_back(median_of(values_of(rep, "fidelity", [&](const ReportRow& r) {
      return detail::point_value(r.point, "k") == k;
    })));
  }
  for (const auto& [t, seq] : by_trial) {
    double prev = -1.0;
    for (const auto& [k, f] : seq) {
      if (std::isnan(f) || f < prev - 1e-12) {
        ++non_monotone;
        break;
      }
      prev = f;
    }
    final_min = std::min(final_min, seq.at(3));
  }
  return {non_monotone == 0 && final_min >= 1 - 1e-9,
          "50 rank-3 states at d=16, median fidelity by k: " + fmt(med[0]) + ", " + fmt(med[1]) + ", " +
              fmt(med[2]) + "; non-monotone sequences " + std::to_string(non_monotone) +
              "; min fidelity at k=3 " + fmt(final_min)};
}

// 11. Identical config and seed give identical report bytes.
Outcome determinism() {
  std::vector<ExperimentConfig> cfgs(5);
  cfgs[0].kind = ExperimentKind::NoiselessSweep;
  cfgs[0].dims = {4, 8};
  cfgs[0].ranks = {1, 2};
  cfgs[1].kind = ExperimentKind::ShotSweep;
  cfgs[1].dims = {4};
  cfgs[1].ranks = {1};
  cfgs[1].shots = {100, 1000};
  cfgs[2].kind = ExperimentKind::FailureBall;
  cfgs[2].construction = "flammia";
  cfgs[2].dims = {4};
  cfgs[2].shots = {1000};
  cfgs[2].epsilons = {0.0, 1e-2};
  cfgs[3].kind = ExperimentKind::IterativeRefinement;
  cfgs[3].construction = "example1";
  cfgs[3].dims = {6};
  cfgs[3].ranks = {2};
  cfgs[3].shots = {0, 500};
  cfgs[4].kind = ExperimentKind::StrictnessSeparation;
  cfgs[4].construction = "goyeneche4";
  cfgs[4].dims = {4};
  int same = 0;
  for (auto& c : cfgs) {
    c.trials = 4;
    c.seed = 11;
    const auto a = run_experiment(c, 1);
    const auto b = run_experiment(c, 3);
    const auto a2 = run_experiment(c, 2);
    const std::string ja = to_json(a).dump(2);
    if (ja == to_json(b).dump(2) && ja == to_json(a2).dump(2) && rows_csv(a) == rows_csv(b) &&
        summary_csv(a) == summary_csv(b)) {
      ++same;
    }
  }
  return {same == int(cfgs.size()), std::to_string(same) + "/" + std::to_string(cfgs.size()) +
                                        " experiment kinds byte-identical across reruns and worker counts"};
}

const std::map<int, std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::map<int, std::pair<std::string, std::function<Outcome()>>> table{
      {1, {"Schur identities", schur_identities}},
      {2, {"noiseless exact recovery", noiseless_recovery}},
      {3, {"generated bases cross-check", basis_cross_check}},
      {4, {"strictness separation", strictness_separation}},
      {5, {"diagonal condition vs probe", proposition_consistency}},
      {6, {"traceless perturbation sanity", traceless_sanity}},
      {7, {"estimator feasibility and descent", estimator_feasibility}},
      {8, {"noise robustness", noise_robustness}},
      {9, {"failure ball", failure_ball}},
      {10, {"iterative refinement", iterative_refinement}},
      {11, {"determinism", determinism}},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      selected.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--criterion N]...\n";
      return 64;
    }
  }
  if (selected.empty())
    for (const auto& [n, c] : criteria()) selected.push_back(n);
  bool all = true;
  for (int n : selected) {
    const auto it = criteria().find(n);
    if (it == criteria().end()) {
      std::cerr << "unknown criterion " << n << '\n';
      return 64;
    }
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << n << " (" << it->second.first << "): " << (o.pass ? "PASS" : "FAIL")
              << " | " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
