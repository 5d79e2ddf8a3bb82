// Command-line front end: construct, measure, complete, check, estimate, run.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "eptomo/completeness.hpp"
#include "eptomo/completion.hpp"
#include "eptomo/constructions.hpp"
#include "eptomo/estimator.hpp"
#include "eptomo/harness.hpp"
#include "eptomo/io.hpp"

using namespace eptomo;
using nlohmann::json;

namespace {

EpPovm build(const std::string& kind, Index d, Index r, Index k, std::optional<double> a,
             std::optional<double> b) {
  if (a.has_value() != b.has_value()) throw std::invalid_argument("--a and --b go together");
  if (kind == "flammia") return a ? flammia_povm(d, *a, *b) : flammia_povm(d);
  if (kind == "goyeneche4") return goyeneche_bases(d).ep;
  if (kind == "five_bases") return combine({computational_basis(d), goyeneche_bases(d).ep});
  if (kind == "example1") {
    if (!a) return example1_povm(d, r);
    return example1_povm(d, r, RowCoefficients{std::vector<double>(std::size_t(r), *a),
                                               std::vector<double>(std::size_t(r), *b)});
  }
  if (kind == "example1-slice") return a ? example1_slice(d, k, *a, *b) : example1_slice(d, k);
  if (kind == "example2") return example2_bases(d, r).ep;
  throw std::invalid_argument("unknown kind: " + kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bounded-rank state tomography by PSD matrix completion"};
  app.require_subcommand(1);

  // construct
  auto* construct = app.add_subcommand("construct", "Build an element-probing POVM");
  std::string c_kind, c_out;
  Index c_dim = 0, c_rank = 1, c_k = 0;
  std::optional<double> c_a, c_b;
  construct->add_option("--kind", c_kind, "Construction family")
      ->required()
      ->check(CLI::IsMember({"flammia", "goyeneche4", "five_bases", "example1", "example1-slice", "example2"}));
  construct->add_option("--dim", c_dim, "Hilbert-space dimension")->required();
  construct->add_option("--rank", c_rank, "Rank bound r");
  construct->add_option("--k", c_k, "Slice index");
  construct->add_option("--a", c_a, "Diagonal-effect coefficient");
  construct->add_option("--b", c_b, "Off-diagonal-effect coefficient");
  construct->add_option("--out", c_out, "Output POVM file")->required();

  // measure
  auto* measure = app.add_subcommand("measure", "Born-rule record of a state, optionally sampled");
  std::string m_povm, m_state, m_out;
  std::int64_t m_shots = 0;
  std::uint64_t m_seed = 0;
  measure->add_option("--povm", m_povm)->required();
  measure->add_option("--state", m_state, "State matrix file")->required();
  measure->add_option("--shots", m_shots, "Shots per POVM (0 = exact)");
  measure->add_option("--seed", m_seed);
  measure->add_option("--out", m_out)->required();

  // complete
  auto* completecmd = app.add_subcommand("complete", "Rank-r completion from an exact record");
  std::string k_povm, k_record, k_out, k_report;
  Index k_rank = 1;
  double k_tol = kDefaultCompletionTol;
  completecmd->add_option("--povm", k_povm)->required();
  completecmd->add_option("--record", k_record)->required();
  completecmd->add_option("--rank", k_rank)->required();
  completecmd->add_option("--tol", k_tol);
  completecmd->add_option("--out", k_out)->required();
  completecmd->add_option("--report", k_report);

  // check
  auto* check = app.add_subcommand("check", "Completeness verdicts and uniqueness probes");
  std::string h_kind, h_povm, h_report, h_record;
  Index h_dim = 0, h_rank = 1;
  int h_trials = 20;
  std::uint64_t h_seed = 0;
  check->add_option("--kind", h_kind)->required()->check(CLI::IsMember({"complete", "strict", "probe"}));
  check->add_option("--povm", h_povm)->required();
  check->add_option("--dim", h_dim, "Expected dimension (checked against the POVM file)");
  check->add_option("--rank", h_rank);
  check->add_option("--trials", h_trials);
  check->add_option("--seed", h_seed);
  check->add_option("--record", h_record, "Probe this record instead of random states");
  check->add_option("--report", h_report)->required();

  // estimate
  auto* estimate = app.add_subcommand("estimate", "PSD least-squares estimate from a record");
  std::string e_povm, e_record, e_opts, e_out, e_report;
  estimate->add_option("--povm", e_povm)->required();
  estimate->add_option("--record", e_record)->required();
  estimate->add_option("--opts", e_opts, "Estimator options file");
  estimate->add_option("--out", e_out)->required();
  estimate->add_option("--report", e_report);

  // run
  auto* run = app.add_subcommand("run", "Run an experiment configuration");
  std::string r_config, r_dir;
  run->add_option("--config", r_config)->required();
  run->add_option("--out-dir", r_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*construct) {
      const EpPovm ep = build(c_kind, c_dim, c_rank, c_k, c_a, c_b);
      for (const auto& w : ep.warnings) std::cerr << "warning: " << w << '\n';
      io::write_json_file(c_out, io::to_json(ep));
      return 0;
    }
    if (*measure) {
      const EpPovm ep = io::ep_povm_from_json(io::read_json_file(m_povm));
      const DensityMatrix rho = io::density_from_json(io::read_json_file(m_state));
      MeasurementRecord rec = born_probabilities(ep, rho);
      if (m_shots > 0) rec = sample_record(rec, m_shots, m_seed);
      io::write_json_file(m_out, io::to_json(rec));
      return 0;
    }
    if (*completecmd) {
      const EpPovm ep = io::ep_povm_from_json(io::read_json_file(k_povm));
      const MeasurementRecord rec = io::record_from_json(io::read_json_file(k_record));
      if (!rec.exact()) std::cerr << "warning: completing a finite-shot record (diagnostic only)\n";
      try {
        const CompletionReport rep = complete(extract_elements(ep, rec), k_rank, k_tol);
        io::write_json_file(k_out, io::to_json(rep.completed));
        if (!k_report.empty()) io::write_json_file(k_report, io::to_json(rep));
      } catch (const FailureSetError& e) {
        if (!k_report.empty()) {
          io::write_json_file(k_report, json{{"error", e.what()},
                                             {"failure_indices", e.indices()},
                                             {"sigma_min", e.sigma_min()}});
        }
        std::cerr << "failure set: " << e.what() << '\n';
        return 3;
      }
      return 0;
    }
    if (*check) {
      const EpPovm ep = io::ep_povm_from_json(io::read_json_file(h_povm));
      if (h_dim != 0 && h_dim != ep.dim) throw std::invalid_argument("--dim does not match POVM file");
      json out;
      if (h_kind == "complete") {
        out = io::to_json(check_rank_r_complete(ep, h_rank, h_trials, h_seed));
      } else if (h_kind == "strict") {
        out = io::to_json(check_strictly_complete(ep, h_rank, h_trials, h_seed));
        out["record_determined_pattern"] = io::to_json(record_determined_pattern(ep));
      } else {
        ProbeOptions o;
        o.seed = h_seed;
        if (!h_record.empty()) {
          const auto rec = io::record_from_json(io::read_json_file(h_record));
          out = io::to_json(uniqueness_probe(ep, rec, o), o);
        } else {
          out["probes"] = json::array();
          for (int t = 0; t < h_trials; ++t) {
            const auto rho = random_rank_r_state(ep.dim, h_rank, mix_seed(h_seed, std::uint64_t(t)));
            o.seed = mix_seed(h_seed, std::uint64_t(t) + 0x100);
            json p = io::to_json(uniqueness_probe(ep, born_probabilities(ep, rho), o), o);
            p["state"] = io::to_json(rho);
            out["probes"].push_back(p);
          }
        }
      }
      io::write_json_file(h_report, out);
      std::cout << out.value("kind", std::string("probe")) << '\n';
      return 0;
    }
    if (*estimate) {
      const EpPovm ep = io::ep_povm_from_json(io::read_json_file(e_povm));
      MeasurementRecord rec = io::record_from_json(io::read_json_file(e_record));
      EstimatorOptions opts;
      if (!e_opts.empty()) opts = io::estimator_options_from_json(io::read_json_file(e_opts));
      const EstimateReport rep = psd_least_squares(ep.povms, rec, opts);
      io::write_json_file(e_out, io::to_json(rep.estimate));
      if (!e_report.empty()) io::write_json_file(e_report, io::to_json(rep));
      return 0;
    }
    if (*run) {
      const ExperimentConfig cfg = config_from_json(io::read_json_file(r_config));
      const ExperimentReport rep = run_experiment(cfg);
      write_report(rep, r_dir);
      for (const auto& c : rep.checks) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " = " << c.value << ' '
                  << c.relation << ' ' << c.threshold << '\n';
      }
      return rep.passed() ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
