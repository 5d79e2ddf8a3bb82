#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "eptomo/hermitian.hpp"
#include "eptomo/povm.hpp"

namespace eptomo {

/// Real orthonormal coordinates of d x d Hermitian matrices: H_ii, then
/// sqrt2 Re H_ij and sqrt2 Im H_ij for i < j. The Euclidean inner product of
/// coordinates equals Tr(X Y) for Hermitian X, Y.
class HermitianCoordinates {
 public:
  explicit HermitianCoordinates(Index d) : d_(d) {}

  Index dim() const { return d_; }
  Index size() const { return d_ * d_; }

  RVector to_vec(const CMatrix& h) const {
    RVector x(size());
    Index k = 0;
    for (Index i = 0; i < d_; ++i) x(k++) = h(i, i).real();
    const double s = std::sqrt(2.0);
    for (Index i = 0; i < d_; ++i) {
      for (Index j = i + 1; j < d_; ++j) {
        x(k++) = s * h(i, j).real();
        x(k++) = s * h(i, j).imag();
      }
    }
    return x;
  }

  RVector to_vec(const HermitianMatrix& h) const { return to_vec(h.matrix()); }

  HermitianMatrix from_vec(const RVector& x) const {
    if (x.size() != size()) throw std::invalid_argument("HermitianCoordinates: size mismatch");
    CMatrix h(d_, d_);
    Index k = 0;
    for (Index i = 0; i < d_; ++i) h(i, i) = x(k++);
    const double s = 1.0 / std::sqrt(2.0);
    for (Index i = 0; i < d_; ++i) {
      for (Index j = i + 1; j < d_; ++j) {
        const Complex v(s * x(k), s * x(k + 1));
        k += 2;
        h(i, j) = v;
        h(j, i) = std::conj(v);
      }
    }
    return HermitianMatrix::hermitian_part(h);
  }

  /// Coordinate index of Re/Im of entry (i, j), i < j, or of the diagonal i.
  Index diagonal_slot(Index i) const { return i; }
  Index real_slot(Index i, Index j) const { return d_ + 2 * pair_index(i, j); }
  Index imag_slot(Index i, Index j) const { return d_ + 2 * pair_index(i, j) + 1; }

 private:
  Index pair_index(Index i, Index j) const {
    // Position of (i, j), i < j, in row-major upper-triangle order.
    return i * d_ - i * (i + 1) / 2 + (j - i - 1);
  }

  Index d_;
};

/// Stacked Born-rule map sigma -> (Tr(E_mu sigma))_mu as a real matrix in
/// HermitianCoordinates.
class MeasurementMap {
 public:
  MeasurementMap(Index d, const std::vector<Povm>& povms) : coords_(d) {
    std::size_t m = 0;
    for (const auto& p : povms) {
      if (p.dim() != d) throw std::invalid_argument("MeasurementMap: dimension mismatch");
      m += p.size();
    }
    a_.resize(Index(m), coords_.size());
    Index row = 0;
    for (const auto& p : povms) {
      for (const auto& e : p.effects()) a_.row(row++) = coords_.to_vec(e).transpose();
    }
  }

  const HermitianCoordinates& coords() const { return coords_; }
  const RMatrix& matrix() const { return a_; }
  Index outcomes() const { return a_.rows(); }

  RVector apply(const HermitianMatrix& h) const { return a_ * coords_.to_vec(h); }

  /// sum_mu ||E_mu||_F^2.
  double frobenius_load() const { return a_.squaredNorm(); }

 private:
  HermitianCoordinates coords_;
  RMatrix a_;
};

}  // namespace eptomo
