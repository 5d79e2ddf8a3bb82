#pragma once

// Least-squares state estimation over the set of density matrices by
// projected gradient descent.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "eptomo/hermitian.hpp"
#include "eptomo/linear_map.hpp"
#include "eptomo/povm.hpp"

namespace eptomo {

/// Euclidean projection of a vector onto the probability simplex
/// {x >= 0, sum x = 1}, by the sorted-threshold rule.
inline RVector project_simplex(const RVector& v) {
  const Index n = v.size();
  if (n == 0) return v;
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (Index k = 0; k < n; ++k) {
    cumulative += u[std::size_t(k)];
    const double t = (cumulative - 1.0) / double(k + 1);
    if (u[std::size_t(k)] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

/// Nearest density matrix in Frobenius norm: eigenvalues projected onto the
/// simplex, eigenvectors kept.
inline HermitianMatrix project_psd_trace1_matrix(const HermitianMatrix& h) {
  const EigenPairs e = eigh(h);
  const RVector p = project_simplex(e.values);
  return HermitianMatrix::hermitian_part(e.vectors * p.asDiagonal() * e.vectors.adjoint());
}

inline DensityMatrix project_psd_trace1(const HermitianMatrix& h) {
  return DensityMatrix(project_psd_trace1_matrix(h), 1e-12, 1e-12);
}

/// Eigenvalues clipped at zero.
inline HermitianMatrix project_psd(const HermitianMatrix& h) {
  return spectral_map(eigh(h), [](double x) { return std::max(x, 0.0); });
}

enum class StepRule { Fixed, Backtracking };

struct EstimatorOptions {
  int max_iters = 5000;
  double grad_tol = 1e-9;
  StepRule step_rule = StepRule::Backtracking;
  bool trace_constrained = true;

  void validate() const {
    if (max_iters < 1) throw std::invalid_argument("EstimatorOptions: max_iters must be >= 1");
    if (!(grad_tol > 0)) throw std::invalid_argument("EstimatorOptions: grad_tol must be > 0");
  }
};

struct EstimateReport {
  DensityMatrix estimate = DensityMatrix::maximally_mixed(1);
  /// 1/2 ||A(sigma) - f||^2 at the returned estimate.
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  /// ||A(sigma) - f||_2.
  double record_residual = 0.0;
  /// Objective after each accepted iterate, starting with the initial point.
  std::vector<double> objective_trace;
};

/// Minimizes 1/2 sum_mu (Tr(E_mu sigma) - f_mu)^2 over density matrices
/// (or over the PSD cone when `trace_constrained` is false, normalizing the
/// result). Starts at I/d; backtracking starts from the previous step doubled,
/// initially 1/L with L = sum_mu ||E_mu||_F^2, halving until the Armijo
/// condition with constant 1e-4 holds. Converged means the step's gradient
/// mapping norm fell to grad_tol.
inline EstimateReport psd_least_squares(const std::vector<Povm>& povms,
                                        const MeasurementRecord& record,
                                        const EstimatorOptions& opts = {}) {
  opts.validate();
  if (povms.empty()) throw std::invalid_argument("psd_least_squares: no POVMs");
  const Index d = povms.front().dim();
  const MeasurementMap map(d, povms);
  if (Index(record.probs.size()) != map.outcomes()) {
    throw std::invalid_argument("psd_least_squares: record length does not match effect count");
  }
  const auto& coords = map.coords();
  const RMatrix& a = map.matrix();
  const RVector f = Eigen::Map<const RVector>(record.probs.data(), Index(record.probs.size()));

  auto project = [&](const RVector& x) {
    const HermitianMatrix h = coords.from_vec(x);
    return coords.to_vec(opts.trace_constrained ? project_psd_trace1_matrix(h) : project_psd(h));
  };
  auto objective = [&](const RVector& x) { return 0.5 * (a * x - f).squaredNorm(); };

  const double step0 = 1.0 / std::max(map.frobenius_load(), 1e-300);
  RVector x = coords.to_vec(CMatrix::Identity(d, d) / double(d));
  double fx = objective(x);
  EstimateReport report;
  report.objective_trace.push_back(fx);
  double step = step0;
  RVector prev_x, prev_grad;
  for (int it = 0; it < opts.max_iters; ++it) {
    const RVector grad = a.transpose() * (a * x - f);
    double t = step0;
    if (opts.step_rule == StepRule::Backtracking) {
      t = 2.0 * step;
      if (it > 0) {
        // Barzilai-Borwein trial step; backtracking keeps the descent monotone.
        const RVector s = x - prev_x;
        const double sy = s.dot(grad - prev_grad);
        if (sy > 0.0) t = std::clamp(s.squaredNorm() / sy, step0, 1e6 * step0);
      }
    }
    prev_x = x;
    prev_grad = grad;
    RVector x_new;
    double f_new = 0.0;
    double mapping = 0.0;
    for (int halvings = 0;; ++halvings) {
      x_new = project(x - t * grad);
      f_new = objective(x_new);
      const double decrease = grad.dot(x_new - x);
      if (opts.step_rule == StepRule::Fixed || f_new <= fx + 1e-4 * decrease || halvings >= 60) {
        break;
      }
      t *= 0.5;
    }
    const double moved = (x_new - x).norm();
    mapping = moved / t;
    if (f_new > fx) {
      // No descent available at this resolution; x is stationary to round-off.
      report.converged = true;
      break;
    }
    if (f_new == fx && mapping <= opts.grad_tol) {
      report.converged = true;
      break;
    }
    x = std::move(x_new);
    fx = f_new;
    step = t;
    report.iterations = it + 1;
    report.objective_trace.push_back(fx);
    if (mapping <= opts.grad_tol) {
      report.converged = true;
      break;
    }
  }
  HermitianMatrix sigma = coords.from_vec(x);
  if (!opts.trace_constrained) {
    const double tr = sigma.trace();
    sigma = HermitianMatrix::hermitian_part(tr > 0 ? CMatrix(sigma.matrix() / tr)
                                                   : CMatrix(CMatrix::Identity(d, d) / double(d)));
  }
  report.estimate = project_psd_trace1(sigma);
  const RVector resid = map.apply(report.estimate.hermitian()) - f;
  report.record_residual = resid.norm();
  report.objective = 0.5 * resid.squaredNorm();
  return report;
}

}  // namespace eptomo
