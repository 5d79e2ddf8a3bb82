#pragma once

// POVMs, Born-rule probabilities, finite-shot sampling and element-probing
// POVMs: measurements paired with a linear map from outcome probabilities
// to a subset of density-matrix entries.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eptomo/hermitian.hpp"
#include "eptomo/pattern.hpp"

namespace eptomo {

/// Ordered list of effects. Validity (PSD effects summing to identity) is
/// checked by validate_povm, not by the constructor, so that invalid
/// candidates can be represented and diagnosed.
class Povm {
 public:
  Povm() = default;
  Povm(Index dim, std::vector<HermitianMatrix> effects) : dim_(dim), effects_(std::move(effects)) {
    for (const auto& e : effects_) {
      if (e.dim() != dim_) throw std::invalid_argument("Povm: effect dimension mismatch");
    }
  }

  /// Rank-1 projectors onto the rows of an orthonormal basis.
  static Povm from_basis(const CMatrix& basis_rows) {
    std::vector<HermitianMatrix> effects;
    for (Index k = 0; k < basis_rows.rows(); ++k) {
      effects.push_back(HermitianMatrix::projector(basis_rows.row(k).transpose()));
    }
    return Povm(basis_rows.cols(), std::move(effects));
  }

  static Povm computational(Index d) { return from_basis(CMatrix::Identity(d, d)); }

  Index dim() const { return dim_; }
  std::size_t size() const { return effects_.size(); }
  const std::vector<HermitianMatrix>& effects() const { return effects_; }
  const HermitianMatrix& operator[](std::size_t i) const { return effects_[i]; }

 private:
  Index dim_ = 0;
  std::vector<HermitianMatrix> effects_;
};

struct EffectViolation {
  std::size_t effect = 0;
  double min_eigenvalue = 0.0;
};

struct PovmValidation {
  std::vector<EffectViolation> non_psd;
  /// max |(sum_mu E_mu - 1)_ij|
  double identity_residual = 0.0;
  bool identity_ok = true;

  bool valid() const { return non_psd.empty() && identity_ok; }
};

inline PovmValidation validate_povm(const Povm& p, double tol = 1e-10) {
  PovmValidation report;
  CMatrix sum = CMatrix::Zero(p.dim(), p.dim());
  for (std::size_t mu = 0; mu < p.size(); ++mu) {
    const double lmin = min_eigenvalue(p[mu]);
    if (lmin < -tol) report.non_psd.push_back({mu, lmin});
    sum += p[mu].matrix();
  }
  sum -= CMatrix::Identity(p.dim(), p.dim());
  report.identity_residual = p.dim() == 0 ? 0.0 : sum.cwiseAbs().maxCoeff();
  report.identity_ok = report.identity_residual <= tol;
  return report;
}

/// Outcome probabilities or finite-shot frequencies for a sequence of POVMs,
/// concatenated in POVM order. `segments` holds the outcome count of each
/// POVM; `shots` is empty for exact records.
struct MeasurementRecord {
  std::vector<double> probs;
  std::optional<std::int64_t> shots;
  std::vector<std::size_t> segments;
  /// Raw counts per outcome for sampled records.
  std::vector<std::int64_t> counts;

  std::size_t size() const { return probs.size(); }
  bool exact() const { return !shots.has_value(); }
};

/// p_mu = Tr(E_mu rho), clamped to [0, 1] when within 1e-12 outside.
inline std::vector<double> born_vector(const Povm& p, const HermitianMatrix& rho) {
  if (p.dim() != rho.dim()) throw std::invalid_argument("born_probabilities: dimension mismatch");
  std::vector<double> probs;
  probs.reserve(p.size());
  for (const auto& e : p.effects()) {
    // Tr(E rho) = sum_ij E_ij rho_ji = sum_ij E_ij conj(rho_ij) for Hermitian rho.
    double v = (e.matrix().array() * rho.matrix().conjugate().array()).sum().real();
    if (v < 0.0 && v > -1e-12) v = 0.0;
    if (v > 1.0 && v < 1.0 + 1e-12) v = 1.0;
    probs.push_back(v);
  }
  return probs;
}

inline MeasurementRecord born_probabilities(const Povm& p, const DensityMatrix& rho) {
  MeasurementRecord rec;
  rec.probs = born_vector(p, rho.hermitian());
  rec.segments = {p.size()};
  return rec;
}

inline MeasurementRecord born_probabilities(const std::vector<Povm>& povms,
                                            const DensityMatrix& rho) {
  MeasurementRecord rec;
  for (const auto& p : povms) {
    const auto part = born_vector(p, rho.hermitian());
    rec.probs.insert(rec.probs.end(), part.begin(), part.end());
    rec.segments.push_back(p.size());
  }
  return rec;
}

/// One multinomial draw of `shots` per POVM segment; frequencies are
/// counts / shots. Deterministic in `seed`.
inline MeasurementRecord sample_record(const MeasurementRecord& exact, std::int64_t shots,
                                       std::uint64_t seed) {
  if (shots < 1) throw std::invalid_argument("sample_record: shots must be >= 1");
  std::vector<std::size_t> segments = exact.segments;
  if (segments.empty()) segments = {exact.probs.size()};
  std::mt19937_64 rng(mix_seed(seed, 0x5a4d504cULL));
  MeasurementRecord out;
  out.shots = shots;
  out.segments = segments;
  out.probs.reserve(exact.probs.size());
  out.counts.reserve(exact.probs.size());
  std::size_t offset = 0;
  for (std::size_t seg : segments) {
    if (offset + seg > exact.probs.size()) {
      throw std::invalid_argument("sample_record: segments exceed record length");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < seg; ++k) {
      const double p = exact.probs[offset + k];
      if (p < 0.0 || p > 1.0) throw std::invalid_argument("sample_record: probability outside [0,1]");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      std::ostringstream os;
      os << "sample_record: segment probabilities sum to " << total;
      throw std::invalid_argument(os.str());
    }
    // Sequential conditional binomials.
    std::int64_t remaining = shots;
    double mass_left = 1.0;
    for (std::size_t k = 0; k < seg; ++k) {
      const double p = exact.probs[offset + k];
      std::int64_t c = 0;
      if (k + 1 == seg) {
        c = remaining;
      } else if (remaining > 0 && p > 0.0) {
        const double q = std::clamp(p / std::max(mass_left, 1e-300), 0.0, 1.0);
        std::binomial_distribution<std::int64_t> bin(remaining, q);
        c = bin(rng);
      }
      remaining -= c;
      mass_left -= p;
      out.counts.push_back(c);
      out.probs.push_back(double(c) / double(shots));
    }
    offset += seg;
  }
  if (offset != exact.probs.size()) {
    throw std::invalid_argument("sample_record: segments do not cover the record");
  }
  return out;
}

/// Sparse linear map from the concatenated outcome vector to the
/// density-matrix entries of a pattern. Rows are stored for row >= col; the
/// transposed entry is the complex conjugate.
class Extractor {
 public:
  struct Term {
    std::size_t outcome = 0;
    Complex coeff;
  };
  struct Row {
    Index row = 0;
    Index col = 0;
    std::vector<Term> terms;
  };

  Extractor() = default;
  Extractor(Index dim, std::size_t n_outcomes, std::vector<Row> rows)
      : dim_(dim), n_outcomes_(n_outcomes), rows_(std::move(rows)) {}

  Index dim() const { return dim_; }
  std::size_t n_outcomes() const { return n_outcomes_; }
  const std::vector<Row>& rows() const { return rows_; }

  ElementPattern pattern() const {
    ElementPattern p(dim_);
    for (const auto& r : rows_) p.insert(r.row, r.col);
    return p;
  }

  PartialMatrix apply(std::span<const double> probs) const {
    if (probs.size() != n_outcomes_) {
      std::ostringstream os;
      os << "extract_elements: record has " << probs.size() << " outcomes, extractor expects "
         << n_outcomes_;
      throw std::invalid_argument(os.str());
    }
    CMatrix values = CMatrix::Zero(dim_, dim_);
    for (const auto& r : rows_) {
      Complex v = 0.0;
      for (const auto& t : r.terms) v += t.coeff * probs[t.outcome];
      if (r.row == r.col) v = v.real();
      values(r.row, r.col) = v;
      values(r.col, r.row) = std::conj(v);
    }
    return PartialMatrix(pattern(), std::move(values));
  }

  /// Same map on outcomes shifted by `offset` inside a longer record.
  Extractor shifted(std::size_t offset, std::size_t total_outcomes) const {
    Extractor out = *this;
    out.n_outcomes_ = total_outcomes;
    for (auto& r : out.rows_)
      for (auto& t : r.terms) t.outcome += offset;
    return out;
  }

 private:
  Index dim_ = 0;
  std::size_t n_outcomes_ = 0;
  std::vector<Row> rows_;
};

/// Accumulates linear formulas for entries; an entry with several formulas
/// is extracted as their average.
class ExtractorBuilder {
 public:
  ExtractorBuilder(Index dim, std::size_t n_outcomes) : dim_(dim), n_outcomes_(n_outcomes) {}

  /// rho_{i,j} = sum_k terms[k].coeff * p[terms[k].outcome].
  void add(Index i, Index j, std::vector<Extractor::Term> terms) {
    if (i < j) {
      std::swap(i, j);
      for (auto& t : terms) t.coeff = std::conj(t.coeff);
    }
    auto& slot = acc_[{i, j}];
    slot.count += 1;
    for (const auto& t : terms) slot.coeffs[t.outcome] += t.coeff;
  }

  /// Folds every formula of another extractor, with outcome indices offset.
  void merge(const Extractor& other, std::size_t offset) {
    for (const auto& r : other.rows()) {
      std::vector<Extractor::Term> terms = r.terms;
      for (auto& t : terms) t.outcome += offset;
      add(r.row, r.col, std::move(terms));
    }
  }

  Extractor build() const {
    std::vector<Extractor::Row> rows;
    for (const auto& [key, slot] : acc_) {
      Extractor::Row row{key.first, key.second, {}};
      for (const auto& [mu, c] : slot.coeffs) {
        const Complex v = c / double(slot.count);
        if (v != Complex(0.0)) row.terms.push_back({mu, v});
      }
      rows.push_back(std::move(row));
    }
    return Extractor(dim_, n_outcomes_, std::move(rows));
  }

 private:
  struct Slot {
    int count = 0;
    std::map<std::size_t, Complex> coeffs;
  };
  Index dim_;
  std::size_t n_outcomes_;
  std::map<std::pair<Index, Index>, Slot> acc_;
};

/// Construction family of an element-probing POVM.
enum class PovmKind { Flammia, Goyeneche4, Example1, Example1Slice, Example2, Computational, Custom };

inline std::string to_string(PovmKind k) {
  switch (k) {
    case PovmKind::Flammia: return "flammia";
    case PovmKind::Goyeneche4: return "goyeneche4";
    case PovmKind::Example1: return "example1";
    case PovmKind::Example1Slice: return "example1-slice";
    case PovmKind::Example2: return "example2";
    case PovmKind::Computational: return "computational";
    case PovmKind::Custom: return "custom";
  }
  return "custom";
}

inline PovmKind povm_kind_from_string(const std::string& s) {
  for (auto k : {PovmKind::Flammia, PovmKind::Goyeneche4, PovmKind::Example1,
                 PovmKind::Example1Slice, PovmKind::Example2, PovmKind::Computational,
                 PovmKind::Custom}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown POVM kind: " + s);
}

/// A measurement protocol (one or more POVMs, e.g. one per basis) whose
/// outcome probabilities linearly determine the entries on `pattern`.
struct EpPovm {
  Index dim = 0;
  std::vector<Povm> povms;
  ElementPattern pattern;
  Extractor extractor;
  PovmKind kind = PovmKind::Custom;
  /// Construction parameters, e.g. {"rank", 2}, {"a", 0.1}.
  std::map<std::string, double> params;
  /// Non-fatal construction diagnostics.
  std::vector<std::string> warnings;

  std::size_t n_outcomes() const {
    std::size_t n = 0;
    for (const auto& p : povms) n += p.size();
    return n;
  }

  std::vector<std::size_t> segments() const {
    std::vector<std::size_t> s;
    for (const auto& p : povms) s.push_back(p.size());
    return s;
  }
};

inline MeasurementRecord born_probabilities(const EpPovm& ep, const DensityMatrix& rho) {
  return born_probabilities(ep.povms, rho);
}

/// Linear inversion of a record onto the measured entries. Noisy records go
/// through the same map; no positivity is imposed.
inline PartialMatrix extract_elements(const EpPovm& ep, const MeasurementRecord& rec) {
  return ep.extractor.apply(rec.probs);
}

/// Concatenation of protocols: POVMs in order, patterns united, extractors
/// merged (shared entries averaged).
inline EpPovm combine(const std::vector<EpPovm>& parts) {
  if (parts.empty()) throw std::invalid_argument("combine: no protocols");
  EpPovm out;
  out.dim = parts.front().dim;
  out.pattern = ElementPattern(out.dim);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim != out.dim) throw std::invalid_argument("combine: dimension mismatch");
    total += p.n_outcomes();
  }
  ExtractorBuilder builder(out.dim, total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    out.povms.insert(out.povms.end(), p.povms.begin(), p.povms.end());
    out.pattern |= p.pattern;
    builder.merge(p.extractor, offset);
    offset += p.n_outcomes();
  }
  out.extractor = builder.build();
  out.kind = parts.size() == 1 ? parts.front().kind : PovmKind::Custom;
  out.params = parts.size() == 1 ? parts.front().params : std::map<std::string, double>{};
  return out;
}

}  // namespace eptomo
