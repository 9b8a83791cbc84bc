#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bmn/autodiff.hpp"
#include "bmn/matrix.hpp"
#include "bmn/target.hpp"

namespace bmn {

/// Batch variances are clamped here before taking logs.
inline constexpr double kVarianceFloor = 1e-8;

class InsufficientBatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Per-coordinate population mean and (floored) variance of a b×p batch.
struct BatchMoments {
  std::vector<double> mean;
  std::vector<double> var_diag;
  std::size_t batch_size = 0;
};

struct LossBreakdown {
  double loss_m = 0.0;
  double loss_n = 0.0;
  double total = 0.0;
};

inline BatchMoments batch_moments(const Matrix& z, double floor = kVarianceFloor) {
  if (z.rows() < 2) {
    throw InsufficientBatchError("batch moments need at least 2 rows, got " + std::to_string(z.rows()));
  }
  const std::size_t b = z.rows(), p = z.cols();
  BatchMoments m{std::vector<double>(p, 0.0), std::vector<double>(p, 0.0), b};
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < p; ++j) m.mean[j] += z(i, j);
  for (double& v : m.mean) v /= static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const double dev = z(i, j) - m.mean[j];
      m.var_diag[j] += dev * dev;
    }
  }
  for (double& v : m.var_diag) {
    v /= static_cast<double>(b);
    if (!(v > floor)) v = floor;
  }
  return m;
}

/**
 * KL(N(mean, diag(var)) || N(mu·1, sigma²·I)) for a diagonal sample covariance:
 *
 *   ½ [ log(σ^{2p} / ∏ var_i) − p + Σ var_i / σ² + ‖mu·1 − mean‖² / σ² ]
 *
 * The mean term is the squared Euclidean norm (the reduction of the
 * Mahalanobis quadratic form under Σ = σ²I).
 */
inline double kl_diag(const BatchMoments& m, const GaussianTarget& target) {
  const std::size_t p = m.mean.size();
  if (m.var_diag.size() != p) throw ShapeError("kl_diag: mean/var length mismatch");
  if (p != target.p) {
    throw ShapeError("kl_diag: moments have p=" + std::to_string(p) + ", target p=" + std::to_string(target.p));
  }
  const double s2 = target.sigma * target.sigma;
  double log_det_ratio = static_cast<double>(p) * std::log(s2);
  double trace = 0.0, mean_sq = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const double v = m.var_diag[i];
    if (!(v > 0.0) || !std::isfinite(v) || !std::isfinite(m.mean[i])) {
      throw DomainError("kl_diag: non-finite or non-positive moment at coordinate " + std::to_string(i));
    }
    log_det_ratio -= std::log(v);
    trace += v;
    const double dm = target.mu - m.mean[i];
    mean_sq += dm * dm;
  }
  const double kl = 0.5 * (log_det_ratio - static_cast<double>(p) + trace / s2 + mean_sq / s2);
  if (!std::isfinite(kl)) throw DomainError("kl_diag: non-finite result");
  return kl;
}

namespace ad {

/// Tape-registered kl_diag over the rows of `z` (batch × p).
inline Var kl_diag(Var z, const GaussianTarget& target, double floor = kVarianceFloor) {
  const Matrix& zv = z.value();
  if (zv.rows() < 2) {
    throw InsufficientBatchError("KL loss needs at least 2 rows per half-batch, got " + std::to_string(zv.rows()));
  }
  if (zv.cols() != target.p) {
    throw ShapeError("KL loss: batch has p=" + std::to_string(zv.cols()) + ", target p=" + std::to_string(target.p));
  }
  Tape& tape = *z.tape();
  const double s2 = target.sigma * target.sigma;
  const double p = static_cast<double>(target.p);

  Var mean = reduce_mean(z, Axis::Rows);
  Var var = reduce_var(z, Axis::Rows, floor);
  Var mean_dev = mean - tape.constant(Matrix(1, target.p, target.mu));

  Var log_det = scale(sum(log(var)), -1.0);
  Var trace = scale(sum(var), 1.0 / s2);
  Var mean_term = scale(sum(square(mean_dev)), 1.0 / s2);
  Var inner = add_scalar(log_det + trace + mean_term, p * std::log(s2) - p);
  return scale(inner, 0.5);
}

struct LossVars {
  Var loss_m;
  Var loss_n;
  Var total;

  LossBreakdown values() const { return {loss_m.value().item(), loss_n.value().item(), total.value().item()}; }
};

/// L = L_m + L_n for a matching half-batch and a non-matching half-batch.
inline LossVars total_loss(Var z_matching, Var z_non_matching, const TargetSpec& target) {
  Var lm = kl_diag(z_matching, target.matching());
  Var ln = kl_diag(z_non_matching, target.non_matching());
  return {lm, ln, lm + ln};
}

}  // namespace ad

/// Value-only total loss (no tape).
inline LossBreakdown total_loss(const Matrix& z_matching, const Matrix& z_non_matching, const TargetSpec& target) {
  LossBreakdown out;
  out.loss_m = kl_diag(batch_moments(z_matching), target.matching());
  out.loss_n = kl_diag(batch_moments(z_non_matching), target.non_matching());
  out.total = out.loss_m + out.loss_n;
  return out;
}

}  // namespace bmn
