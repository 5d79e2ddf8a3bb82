#pragma once

// Complex Hermitian linear algebra used throughout the library: a Hermitian
// matrix carrier, density matrices, inertia, Schur complements, toleranced
// rank, fidelity and seeded random bounded-rank states.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace eptomo {

using Complex = std::complex<double>;
using Index = Eigen::Index;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr double kDefaultZeroTol = 1e-10;

/// Raised when an eigensolver or factorization does not converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A block that must be inverted is singular within tolerance. Carries the
/// offending principal indices and the smallest singular value observed.
class FailureSetError : public std::runtime_error {
 public:
  FailureSetError(std::string what, std::vector<Index> indices, double sigma_min)
      : std::runtime_error(std::move(what)),
        indices_(std::move(indices)),
        sigma_min_(sigma_min) {}

  const std::vector<Index>& indices() const { return indices_; }
  double sigma_min() const { return sigma_min_; }

 private:
  std::vector<Index> indices_;
  double sigma_min_;
};

/// Square complex matrix with conjugate symmetry enforced at construction.
///
/// Input whose largest asymmetry |H_ij - conj(H_ji)| exceeds
/// `kAsymmetryTol * max(1, max|H_ij|)` is rejected; anything within that
/// bound is replaced by (H + H^dagger)/2 so eigensolvers see exact symmetry.
class HermitianMatrix {
 public:
  static constexpr double kAsymmetryTol = 1e-12;

  HermitianMatrix() = default;

  explicit HermitianMatrix(const CMatrix& m) : data_(m) {
    if (m.rows() != m.cols()) {
      throw std::invalid_argument("HermitianMatrix: matrix is not square");
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    const double asym = m.rows() == 0 ? 0.0 : (m - m.adjoint()).cwiseAbs().maxCoeff();
    if (asym > kAsymmetryTol * scale) {
      std::ostringstream os;
      os << "HermitianMatrix: asymmetry " << asym << " exceeds tolerance";
      throw std::invalid_argument(os.str());
    }
    data_ = (m + m.adjoint()) * 0.5;
  }

  /// Hermitian part (M + M^dagger)/2 of an arbitrary square matrix, no check.
  static HermitianMatrix hermitian_part(const CMatrix& m) {
    HermitianMatrix h;
    h.data_ = (m + m.adjoint()) * 0.5;
    return h;
  }

  static HermitianMatrix identity(Index d) { return HermitianMatrix(CMatrix::Identity(d, d)); }
  static HermitianMatrix zero(Index d) { return HermitianMatrix(CMatrix::Zero(d, d)); }

  static HermitianMatrix diagonal(const std::vector<double>& diag) {
    CMatrix m = CMatrix::Zero(static_cast<Index>(diag.size()), static_cast<Index>(diag.size()));
    for (std::size_t i = 0; i < diag.size(); ++i) m(Index(i), Index(i)) = diag[i];
    return HermitianMatrix(m);
  }

  static HermitianMatrix projector(const CVector& v) {
    return HermitianMatrix::hermitian_part(v * v.adjoint());
  }

  Index dim() const { return data_.rows(); }
  const CMatrix& matrix() const { return data_; }
  Complex operator()(Index i, Index j) const { return data_(i, j); }
  double trace() const { return data_.trace().real(); }

  friend bool operator==(const HermitianMatrix& a, const HermitianMatrix& b) {
    return a.data_.rows() == b.data_.rows() && a.data_ == b.data_;
  }

 private:
  CMatrix data_;
};

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
struct EigenPairs {
  RVector values;
  CMatrix vectors;
};

inline EigenPairs eigh(const HermitianMatrix& h) {
  if (h.dim() == 0) return {RVector(0), CMatrix(0, 0)};
  Eigen::SelfAdjointEigenSolver<CMatrix> es(h.matrix());
  if (es.info() != Eigen::Success) {
    Eigen::JacobiSVD<CMatrix> svd(h.matrix());
    const auto& s = svd.singularValues();
    std::ostringstream os;
    os << "eigensolver did not converge (dim " << h.dim() << ", sigma_max "
       << s(0) << ", sigma_min " << s(s.size() - 1) << ")";
    throw NumericalError(os.str());
  }
  return {es.eigenvalues(), es.eigenvectors()};
}

inline RVector eigenvalues(const HermitianMatrix& h) { return eigh(h).values; }

inline double min_eigenvalue(const HermitianMatrix& h) {
  const RVector ev = eigenvalues(h);
  return ev.size() == 0 ? 0.0 : ev(0);
}

/// Smallest singular value of a Hermitian matrix (min |lambda|).
inline double smallest_singular_value(const HermitianMatrix& h) {
  const RVector ev = eigenvalues(h);
  return ev.size() == 0 ? 0.0 : ev.cwiseAbs().minCoeff();
}

/// Rebuild V diag(f(lambda)) V^dagger.
template <typename F>
HermitianMatrix spectral_map(const EigenPairs& e, F&& f) {
  RVector mapped(e.values.size());
  for (Index i = 0; i < e.values.size(); ++i) mapped(i) = f(e.values(i));
  return HermitianMatrix::hermitian_part(e.vectors * mapped.asDiagonal() * e.vectors.adjoint());
}

/// Quantum state: PSD within `psd_tol` and unit trace within `trace_tol`.
class DensityMatrix {
 public:
  static constexpr double kDefaultPsdTol = 1e-10;
  static constexpr double kDefaultTraceTol = 1e-10;

  explicit DensityMatrix(HermitianMatrix h, double psd_tol = kDefaultPsdTol,
                         double trace_tol = kDefaultTraceTol)
      : matrix_(std::move(h)), psd_tol_(psd_tol) {
    if (matrix_.dim() == 0) throw std::invalid_argument("DensityMatrix: empty matrix");
    const double tr = matrix_.trace();
    if (std::abs(tr - 1.0) > trace_tol) {
      std::ostringstream os;
      os << "DensityMatrix: trace " << tr << " differs from 1";
      throw std::invalid_argument(os.str());
    }
    const double lmin = min_eigenvalue(matrix_);
    if (lmin < -psd_tol) {
      std::ostringstream os;
      os << "DensityMatrix: min eigenvalue " << lmin << " below -" << psd_tol;
      throw std::invalid_argument(os.str());
    }
  }

  /// |psi><psi| / <psi|psi>.
  static DensityMatrix pure(const CVector& psi) {
    const double n2 = psi.squaredNorm();
    if (n2 <= 0.0) throw std::invalid_argument("DensityMatrix::pure: zero vector");
    return DensityMatrix(HermitianMatrix::projector(psi / std::sqrt(n2)));
  }

  static DensityMatrix maximally_mixed(Index d) {
    return DensityMatrix(HermitianMatrix(CMatrix::Identity(d, d) / double(d)));
  }

  Index dim() const { return matrix_.dim(); }
  const HermitianMatrix& hermitian() const { return matrix_; }
  const CMatrix& matrix() const { return matrix_.matrix(); }
  double psd_tol() const { return psd_tol_; }

 private:
  HermitianMatrix matrix_;
  double psd_tol_;
};

struct Inertia {
  Index n_minus = 0;
  Index n_zero = 0;
  Index n_plus = 0;

  Index dim() const { return n_minus + n_zero + n_plus; }
  friend bool operator==(const Inertia&, const Inertia&) = default;
  friend Inertia operator+(const Inertia& a, const Inertia& b) {
    return {a.n_minus + b.n_minus, a.n_zero + b.n_zero, a.n_plus + b.n_plus};
  }
};

inline std::ostream& operator<<(std::ostream& os, const Inertia& in) {
  return os << "(" << in.n_minus << ", " << in.n_zero << ", " << in.n_plus << ")";
}

/// Negative / zero / positive eigenvalue counts with an absolute zero band.
inline Inertia inertia(const HermitianMatrix& h, double zero_tol = kDefaultZeroTol) {
  if (!(zero_tol > 0)) throw std::invalid_argument("inertia: zero_tol must be positive");
  Inertia in;
  const RVector ev = eigenvalues(h);
  for (Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -zero_tol) {
      ++in.n_minus;
    } else if (ev(i) > zero_tol) {
      ++in.n_plus;
    } else {
      ++in.n_zero;
    }
  }
  return in;
}

inline Index rank_with_tol(const HermitianMatrix& h, double zero_tol = kDefaultZeroTol) {
  const Inertia in = inertia(h, zero_tol);
  return in.n_minus + in.n_plus;
}

/// Indices of the block A inside a block-partitioned Hermitian matrix. The
/// complementary indices, in ascending order, span the C block.
class BlockSpec {
 public:
  BlockSpec() = default;
  explicit BlockSpec(std::vector<Index> a_indices) : a_(std::move(a_indices)) {}

  static BlockSpec leading(Index n) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) idx[std::size_t(i)] = i;
    return BlockSpec(std::move(idx));
  }

  const std::vector<Index>& a_indices() const { return a_; }

  /// Throws unless indices are distinct and inside [0, d).
  void validate(Index d) const {
    std::vector<Index> sorted = a_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw std::invalid_argument("BlockSpec: duplicate index");
    }
    for (Index i : a_) {
      if (i < 0 || i >= d) throw std::invalid_argument("BlockSpec: index out of range");
    }
  }

  std::vector<Index> complement(Index d) const {
    std::vector<char> in_a(static_cast<std::size_t>(d), 0);
    for (Index i : a_) in_a[std::size_t(i)] = 1;
    std::vector<Index> rest;
    for (Index i = 0; i < d; ++i) {
      if (!in_a[std::size_t(i)]) rest.push_back(i);
    }
    return rest;
  }

 private:
  std::vector<Index> a_;
};

inline CMatrix submatrix(const CMatrix& m, const std::vector<Index>& rows,
                         const std::vector<Index>& cols) {
  CMatrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(Index(i), Index(j)) = m(rows[i], cols[j]);
  }
  return out;
}

inline HermitianMatrix principal_submatrix(const HermitianMatrix& h,
                                           const std::vector<Index>& idx) {
  return HermitianMatrix::hermitian_part(submatrix(h.matrix(), idx, idx));
}

/// Inverse of a Hermitian block through its eigendecomposition. Throws
/// FailureSetError when min |lambda| <= singular_tol.
inline CMatrix checked_hermitian_inverse(const HermitianMatrix& a,
                                         const std::vector<Index>& indices,
                                         double singular_tol, double* sigma_min_out = nullptr) {
  const EigenPairs e = eigh(a);
  const double smin = e.values.size() == 0 ? 0.0 : e.values.cwiseAbs().minCoeff();
  if (sigma_min_out) *sigma_min_out = smin;
  if (smin <= singular_tol) {
    std::ostringstream os;
    os << "block on indices {";
    for (std::size_t i = 0; i < indices.size(); ++i) os << (i ? "," : "") << indices[i];
    os << "} is singular: sigma_min " << smin << " <= " << singular_tol;
    throw FailureSetError(os.str(), indices, smin);
  }
  return e.vectors * e.values.cwiseInverse().asDiagonal() * e.vectors.adjoint();
}

/// M/A = C - B A^{-1} B^dagger, where A = M[a, a], B = M[c, a], C = M[c, c]
/// and c is the ascending complement of spec.a_indices().
inline HermitianMatrix schur_complement(const HermitianMatrix& m, const BlockSpec& spec,
                                        double singular_tol = kDefaultZeroTol) {
  spec.validate(m.dim());
  const auto& a_idx = spec.a_indices();
  const auto c_idx = spec.complement(m.dim());
  const HermitianMatrix a = principal_submatrix(m, a_idx);
  const CMatrix a_inv = checked_hermitian_inverse(a, a_idx, singular_tol);
  const CMatrix b = submatrix(m.matrix(), c_idx, a_idx);
  const CMatrix c = submatrix(m.matrix(), c_idx, c_idx);
  return HermitianMatrix::hermitian_part(c - b * a_inv * b.adjoint());
}

/// Factor L with h = L L^dagger after clipping negative eigenvalues.
inline CMatrix psd_factor(const HermitianMatrix& h) {
  const EigenPairs e = eigh(h);
  RVector s = e.values.cwiseMax(0.0).cwiseSqrt();
  return e.vectors * s.asDiagonal();
}

/// Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.
///
/// Evaluated as the squared nuclear norm of L_rho^dagger L_sigma with
/// rho = L_rho L_rho^dagger; the singular values of that product are the
/// square roots of the eigenvalues of sqrt(rho) sigma sqrt(rho), without the
/// square-root amplification of round-off in their null space. A rank-1
/// argument short-circuits to <psi|other|psi>.
inline double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
  if (rho.dim() != sigma.dim()) throw std::invalid_argument("fidelity: dimension mismatch");
  const EigenPairs er = eigh(rho.hermitian());
  const EigenPairs es = eigh(sigma.hermitian());
  auto clamp01 = [](double f) { return std::clamp(f, 0.0, 1.0); };
  auto pure_overlap = [](const EigenPairs& pure, const CMatrix& other) {
    const Index top = pure.values.size() - 1;
    const CVector psi = pure.vectors.col(top) * std::sqrt(std::max(0.0, pure.values(top)));
    return (psi.adjoint() * other * psi)(0, 0).real();
  };
  const double tail_r = er.values.head(er.values.size() - 1).cwiseMax(0.0).sum();
  const double tail_s = es.values.head(es.values.size() - 1).cwiseMax(0.0).sum();
  if (tail_r <= 1e-14) return clamp01(pure_overlap(er, sigma.matrix()));
  if (tail_s <= 1e-14) return clamp01(pure_overlap(es, rho.matrix()));
  const CMatrix lr = er.vectors * er.values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  const CMatrix ls = es.vectors * es.values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Eigen::JacobiSVD<CMatrix> svd(lr.adjoint() * ls);
  const double nuclear = svd.singularValues().sum();
  return clamp01(nuclear * nuclear);
}

/// SplitMix64 step; derives independent seeds from a base seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix_seed(mix_seed(a) ^ b); }

/// d x c matrix of i.i.d. standard complex Gaussians (E|z|^2 = 1).
inline CMatrix ginibre(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  CMatrix g(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) {
      const double re = n(rng);
      const double im = n(rng);
      g(i, j) = Complex(re, im);
    }
  }
  return g;
}

/// GUE-style random Hermitian matrix (G + G^dagger)/2.
inline HermitianMatrix random_hermitian(Index d, std::mt19937_64& rng) {
  const CMatrix g = ginibre(d, d, rng);
  return HermitianMatrix::hermitian_part(g);
}

/// rho = G G^dagger / Tr(G G^dagger) with G a seeded d x r Ginibre draw.
inline DensityMatrix random_rank_r_state(Index d, Index r, std::uint64_t seed) {
  if (d < 1 || r < 1 || r > d) {
    throw std::invalid_argument("random_rank_r_state: need 1 <= r <= d");
  }
  std::mt19937_64 rng(seed);
  const CMatrix g = ginibre(d, r, rng);
  CMatrix rho = g * g.adjoint();
  rho /= rho.trace().real();
  return DensityMatrix(HermitianMatrix::hermitian_part(rho), 1e-12, 1e-12);
}

/// Seeded Haar-random pure state.
inline DensityMatrix random_pure_state(Index d, std::uint64_t seed) {
  return random_rank_r_state(d, 1, seed);
}

}  // namespace eptomo
