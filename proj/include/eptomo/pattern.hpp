#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "eptomo/hermitian.hpp"

namespace eptomo {

/// Set of density-matrix entries fixed by a measurement, closed under
/// transposition: inserting (i, j) also inserts (j, i).
class ElementPattern {
 public:
  ElementPattern() = default;
  explicit ElementPattern(Index d) : dim_(d), mask_(std::size_t(d * d), 0) {
    if (d < 1) throw std::invalid_argument("ElementPattern: dimension must be positive");
  }

  static ElementPattern full(Index d) {
    ElementPattern p(d);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j <= i; ++j) p.insert(i, j);
    return p;
  }

  static ElementPattern diagonal(Index d) {
    ElementPattern p(d);
    for (Index i = 0; i < d; ++i) p.insert(i, i);
    return p;
  }

  /// All (i, j) with min(i, j) < r.
  static ElementPattern rows_cols(Index d, Index r) {
    ElementPattern p(d);
    for (Index k = 0; k < r; ++k)
      for (Index n = 0; n < d; ++n) p.insert(k, n);
    return p;
  }

  /// |i - j| <= r, plus the wraparound diagonals d-r..d-1 when requested.
  static ElementPattern band(Index d, Index r, bool wraparound) {
    ElementPattern p(d);
    for (Index i = 0; i < d; ++i) {
      for (Index j = i; j < d; ++j) {
        const Index t = j - i;
        if (t <= r || (wraparound && t >= d - r)) p.insert(i, j);
      }
    }
    return p;
  }

  Index dim() const { return dim_; }

  void insert(Index i, Index j) {
    check(i, j);
    mask_[at(i, j)] = 1;
    mask_[at(j, i)] = 1;
  }

  bool contains(Index i, Index j) const {
    check(i, j);
    return mask_[at(i, j)] != 0;
  }

  /// Number of ordered (row, col) pairs.
  std::size_t size() const {
    std::size_t n = 0;
    for (char c : mask_) n += c ? 1 : 0;
    return n;
  }

  /// Canonical entries with row >= col, row-major.
  std::vector<std::pair<Index, Index>> lower_entries() const {
    std::vector<std::pair<Index, Index>> out;
    for (Index i = 0; i < dim_; ++i)
      for (Index j = 0; j <= i; ++j)
        if (contains(i, j)) out.emplace_back(i, j);
    return out;
  }

  bool contains_diagonal() const {
    for (Index i = 0; i < dim_; ++i)
      if (!contains(i, i)) return false;
    return true;
  }

  bool is_superset_of(const ElementPattern& other) const {
    if (other.dim_ != dim_) return false;
    for (std::size_t k = 0; k < mask_.size(); ++k)
      if (other.mask_[k] && !mask_[k]) return false;
    return true;
  }

  ElementPattern& operator|=(const ElementPattern& other) {
    if (other.dim_ != dim_) throw std::invalid_argument("ElementPattern: dimension mismatch");
    for (std::size_t k = 0; k < mask_.size(); ++k) mask_[k] = char(mask_[k] | other.mask_[k]);
    return *this;
  }

  friend ElementPattern operator|(ElementPattern a, const ElementPattern& b) { return a |= b; }
  friend bool operator==(const ElementPattern&, const ElementPattern&) = default;

 private:
  std::size_t at(Index i, Index j) const { return std::size_t(i * dim_ + j); }
  void check(Index i, Index j) const {
    if (i < 0 || j < 0 || i >= dim_ || j >= dim_) {
      throw std::out_of_range("ElementPattern: index out of range");
    }
  }

  Index dim_ = 0;
  std::vector<char> mask_;
};

/// Density-matrix values known on a pattern. Entries outside the pattern
/// are zero and carry no information.
class PartialMatrix {
 public:
  PartialMatrix() = default;

  PartialMatrix(ElementPattern pattern, CMatrix values)
      : pattern_(std::move(pattern)), values_(std::move(values)) {
    const Index d = pattern_.dim();
    if (values_.rows() != d || values_.cols() != d) {
      throw std::invalid_argument("PartialMatrix: values do not match pattern dimension");
    }
    for (Index i = 0; i < d; ++i) {
      for (Index j = 0; j < d; ++j) {
        if (!pattern_.contains(i, j)) values_(i, j) = 0.0;
      }
    }
    for (Index i = 0; i < d; ++i) {
      for (Index j = 0; j <= i; ++j) {
        if (!pattern_.contains(i, j)) continue;
        const double scale = std::max(1.0, std::abs(values_(i, j)));
        if (std::abs(values_(i, j) - std::conj(values_(j, i))) > 1e-12 * scale) {
          throw std::invalid_argument("PartialMatrix: values are not conjugate-symmetric");
        }
        values_(j, i) = std::conj(values_(i, j));
      }
      if (pattern_.contains(i, i)) values_(i, i) = values_(i, i).real();
    }
  }

  /// Restriction of a full matrix to a pattern.
  static PartialMatrix mask(const HermitianMatrix& h, const ElementPattern& pattern) {
    return PartialMatrix(pattern, h.matrix());
  }

  Index dim() const { return pattern_.dim(); }
  const ElementPattern& pattern() const { return pattern_; }
  const CMatrix& values() const { return values_; }
  bool known(Index i, Index j) const { return pattern_.contains(i, j); }
  Complex operator()(Index i, Index j) const { return values_(i, j); }

 private:
  ElementPattern pattern_;
  CMatrix values_;
};

}  // namespace eptomo
