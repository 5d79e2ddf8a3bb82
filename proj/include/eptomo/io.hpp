#pragma once

// JSON encoding of matrices, POVM files, records and reports.
//
// Matrix:  {"dim": d, "re": [d*d row-major], "im": [d*d row-major]}
// POVM:    {"kind", "params", "dim", "effects": [matrix...], "segments": [...],
//           "pattern": [[i, j]...], "extractor": [{"row", "col", "terms"}...]}
// Record:  {"probs": [...], "shots": n | null, "segments": [...]}

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eptomo/completeness.hpp"
#include "eptomo/completion.hpp"
#include "eptomo/estimator.hpp"
#include "eptomo/hermitian.hpp"
#include "eptomo/povm.hpp"

namespace eptomo::io {

using nlohmann::json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline json matrix_to_json(const CMatrix& m) {
  std::vector<double> re, im;
  re.reserve(std::size_t(m.size()));
  im.reserve(std::size_t(m.size()));
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      re.push_back(m(i, j).real());
      im.push_back(m(i, j).imag());
    }
  }
  return json{{"dim", m.rows()}, {"re", re}, {"im", im}};
}

inline json to_json(const HermitianMatrix& h) { return matrix_to_json(h.matrix()); }
inline json to_json(const DensityMatrix& rho) { return matrix_to_json(rho.matrix()); }

/// Reads a matrix object and checks Hermiticity (asymmetry <= 1e-12 scale).
inline HermitianMatrix hermitian_from_json(const json& j) {
  try {
    const Index d = j.at("dim").get<Index>();
    const auto re = j.at("re").get<std::vector<double>>();
    const auto im = j.at("im").get<std::vector<double>>();
    if (d < 1 || re.size() != std::size_t(d * d) || im.size() != std::size_t(d * d)) {
      throw FormatError("matrix: re/im must hold dim*dim entries");
    }
    CMatrix m(d, d);
    for (Index i = 0; i < d; ++i)
      for (Index k = 0; k < d; ++k) {
        const std::size_t at = std::size_t(i * d + k);
        m(i, k) = Complex(re[at], im[at]);
      }
    return HermitianMatrix(m);
  } catch (const json::exception& e) {
    throw FormatError(std::string("matrix: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("matrix: ") + e.what());
  }
}

inline DensityMatrix density_from_json(const json& j) {
  try {
    return DensityMatrix(hermitian_from_json(j));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("state: ") + e.what());
  }
}

inline json to_json(const ElementPattern& p) {
  json out = json::array();
  for (const auto& [i, k] : p.lower_entries()) out.push_back({i, k});
  return out;
}

inline ElementPattern pattern_from_json(Index d, const json& j) {
  ElementPattern p(d);
  for (const auto& e : j) p.insert(e.at(0).get<Index>(), e.at(1).get<Index>());
  return p;
}

inline json to_json(const Extractor& x) {
  json rows = json::array();
  for (const auto& r : x.rows()) {
    json terms = json::array();
    for (const auto& t : r.terms) {
      terms.push_back({{"outcome", t.outcome}, {"re", t.coeff.real()}, {"im", t.coeff.imag()}});
    }
    rows.push_back({{"row", r.row}, {"col", r.col}, {"terms", terms}});
  }
  return rows;
}

inline Extractor extractor_from_json(Index d, std::size_t n_outcomes, const json& j) {
  std::vector<Extractor::Row> rows;
  for (const auto& r : j) {
    Extractor::Row row{r.at("row").get<Index>(), r.at("col").get<Index>(), {}};
    if (row.row < row.col) throw FormatError("extractor: rows must have row >= col");
    for (const auto& t : r.at("terms")) {
      const auto mu = t.at("outcome").get<std::size_t>();
      if (mu >= n_outcomes) throw FormatError("extractor: outcome index out of range");
      row.terms.push_back({mu, Complex(t.at("re").get<double>(), t.value("im", 0.0))});
    }
    rows.push_back(std::move(row));
  }
  return Extractor(d, n_outcomes, std::move(rows));
}

inline json to_json(const EpPovm& ep) {
  json effects = json::array();
  for (const auto& p : ep.povms)
    for (const auto& e : p.effects()) effects.push_back(to_json(e));
  json params = json::object();
  for (const auto& [k, v] : ep.params) params[k] = v;
  return json{{"kind", to_string(ep.kind)}, {"params", params},   {"dim", ep.dim},
              {"effects", effects},         {"segments", ep.segments()},
              {"pattern", to_json(ep.pattern)}, {"extractor", to_json(ep.extractor)},
              {"warnings", ep.warnings}};
}

/// Loads a POVM file. Without "segments" all effects form one POVM; without
/// "extractor" the protocol has an empty pattern (estimation still works).
inline EpPovm ep_povm_from_json(const json& j) {
  try {
    EpPovm ep;
    std::vector<HermitianMatrix> effects;
    const json& list = j.is_array() ? j : j.at("effects");
    for (const auto& e : list) effects.push_back(hermitian_from_json(e));
    if (effects.empty()) throw FormatError("povm: no effects");
    ep.dim = j.is_object() && j.contains("dim") ? j.at("dim").get<Index>() : effects.front().dim();
    std::vector<std::size_t> segments{effects.size()};
    if (j.is_object() && j.contains("segments")) {
      segments = j.at("segments").get<std::vector<std::size_t>>();
    }
    std::size_t offset = 0;
    for (std::size_t s : segments) {
      if (offset + s > effects.size()) throw FormatError("povm: segments exceed effect count");
      ep.povms.emplace_back(ep.dim, std::vector<HermitianMatrix>(effects.begin() + long(offset),
                                                                 effects.begin() + long(offset + s)));
      offset += s;
    }
    if (offset != effects.size()) throw FormatError("povm: segments do not cover the effects");
    if (j.is_object()) {
      ep.kind = povm_kind_from_string(j.value("kind", std::string("custom")));
      if (j.contains("params")) {
        for (const auto& [k, v] : j.at("params").items()) ep.params[k] = v.get<double>();
      }
      if (j.contains("warnings")) ep.warnings = j.at("warnings").get<std::vector<std::string>>();
    }
    if (j.is_object() && j.contains("extractor")) {
      ep.extractor = extractor_from_json(ep.dim, effects.size(), j.at("extractor"));
      ep.pattern = ep.extractor.pattern();
    } else {
      ep.extractor = Extractor(ep.dim, effects.size(), {});
      ep.pattern = ElementPattern(ep.dim);
    }
    return ep;
  } catch (const json::exception& e) {
    throw FormatError(std::string("povm: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("povm: ") + e.what());
  }
}

inline json to_json(const MeasurementRecord& r) {
  json out{{"probs", r.probs}, {"segments", r.segments}};
  out["shots"] = r.shots ? json(*r.shots) : json(nullptr);
  if (!r.counts.empty()) out["counts"] = r.counts;
  return out;
}

inline MeasurementRecord record_from_json(const json& j) {
  try {
    MeasurementRecord r;
    r.probs = j.at("probs").get<std::vector<double>>();
    for (double p : r.probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw FormatError("record: probability outside [0, 1]");
    }
    if (j.contains("shots") && !j.at("shots").is_null()) {
      r.shots = j.at("shots").get<std::int64_t>();
      if (*r.shots < 1) throw FormatError("record: shots must be positive");
    }
    if (j.contains("segments")) r.segments = j.at("segments").get<std::vector<std::size_t>>();
    if (j.contains("counts")) r.counts = j.at("counts").get<std::vector<std::int64_t>>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("record: ") + e.what());
  }
}

inline EstimatorOptions estimator_options_from_json(const json& j) {
  EstimatorOptions o;
  o.max_iters = j.value("max_iters", o.max_iters);
  o.grad_tol = j.value("grad_tol", o.grad_tol);
  const std::string rule = j.value("step_rule", std::string("backtracking"));
  if (rule == "fixed") {
    o.step_rule = StepRule::Fixed;
  } else if (rule == "backtracking") {
    o.step_rule = StepRule::Backtracking;
  } else {
    throw FormatError("estimator options: unknown step_rule " + rule);
  }
  o.trace_constrained = j.value("trace_constrained", o.trace_constrained);
  o.validate();
  return o;
}

inline json to_json(const EstimatorOptions& o) {
  return json{{"max_iters", o.max_iters},
              {"grad_tol", o.grad_tol},
              {"step_rule", o.step_rule == StepRule::Fixed ? "fixed" : "backtracking"},
              {"trace_constrained", o.trace_constrained}};
}

/// NaN is not representable in JSON; it is written as null.
inline json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const CompletionReport& r) {
  json conds = json::array();
  for (double c : r.window_conditions) conds.push_back(number(c));
  json alt = json::array();
  for (double c : r.alternative_conditions) alt.push_back(number(c));
  json sources = json::array();
  for (const auto& s : r.sources) {
    sources.push_back({{"row", s.row},
                       {"col", s.col},
                       {"plan", s.plan == PlanId::Alternative ? "alternative" : "primary"}});
  }
  return json{{"window_conditions", conds},
              {"failure_flags", r.failure_flags},
              {"alternative_conditions", alt},
              {"sources", sources},
              {"used_alternative", r.used_alternative()},
              {"residual_psd_violation", r.residual_psd_violation}};
}

inline json to_json(const EstimateReport& r) {
  return json{{"objective", r.objective},
              {"iterations", r.iterations},
              {"converged", r.converged},
              {"record_residual", r.record_residual},
              {"min_eigenvalue", min_eigenvalue(r.estimate.hermitian())},
              {"trace", r.estimate.hermitian().trace()}};
}

inline json to_json(const CompletenessVerdict& v) {
  json out{{"kind", to_string(v.kind)},
           {"dim", v.dim},
           {"rank", v.rank},
           {"trials", v.trials},
           {"seed", v.seed},
           {"failure_set_draws", v.failure_set_draws},
           {"max_error", v.max_error},
           {"tolerance", v.tolerance},
           {"probe_tol", v.probe_tol},
           {"distinctness_tol", v.distinctness_tol},
           {"method", v.method},
           {"detail", v.detail}};
  if (v.witness) {
    out["witness"] = {{"rho", to_json(v.witness->rho)},
                      {"sigma", to_json(v.witness->sigma)},
                      {"record_gap", v.witness->record_gap},
                      {"distance", v.witness->distance}};
  }
  return out;
}

inline json to_json(const ProbeResult& p, const ProbeOptions& o) {
  json out{{"spread", p.spread},
           {"unique", p.spread <= o.tol},
           {"tol", o.tol},
           {"probes", o.probes},
           {"seed", o.seed},
           {"iterations", p.total_iterations},
           {"max_primal_residual", p.max_primal_residual},
           {"all_converged", p.all_converged}};
  if (p.witness) {
    out["witness"] = to_json(*p.witness);
    out["witness_rank"] = rank_with_tol(p.witness->hermitian(), 1e-6);
    out["witness_record_residual"] = p.witness_record_residual;
  }
  return out;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace eptomo::io
