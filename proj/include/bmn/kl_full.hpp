#pragma once

// Full-covariance Gaussian KL. Reference path only: the trainer uses the
// diagonal form in kl_loss.hpp; this exists to check it.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bmn/matrix.hpp"
#include "bmn/target.hpp"

namespace bmn {

class DecompositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lower-triangular L with L·Lᵀ = a. Throws DecompositionError when `a` is not PD.
inline Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("cholesky of non-square " + a.shape_string());
  const std::size_t n = a.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-12 * (1.0 + std::abs(a(i, j)))) {
        throw DecompositionError("matrix is not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
      }
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw DecompositionError("matrix is not positive definite (pivot " + std::to_string(j) + ")");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

namespace detail {
// Solves L·Lᵀ x = b given the Cholesky factor.
inline std::vector<double> cholesky_solve(const Matrix& l, std::span<const double> b) {
  const std::size_t n = l.rows();
  std::vector<double> y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
    y[i] /= l(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) y[i] -= l(k, i) * y[k];
    y[i] /= l(i, i);
  }
  return y;
}

inline double log_det_from_cholesky(const Matrix& l) {
  double s = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}
}  // namespace detail

/**
 * KL(N(sample_mean, sample_cov) || N(target_mean, target_cov))
 *   = ½ [ log(|Σ|/|Σ_S|) − p + tr(Σ⁻¹Σ_S) + (μ − μ_S)ᵀ Σ⁻¹ (μ − μ_S) ]
 */
inline double kl_full(std::span<const double> sample_mean, const Matrix& sample_cov,
                      std::span<const double> target_mean, const Matrix& target_cov) {
  const std::size_t p = sample_mean.size();
  if (sample_cov.rows() != p || sample_cov.cols() != p || target_cov.rows() != p || target_cov.cols() != p ||
      target_mean.size() != p) {
    throw ShapeError("kl_full: inconsistent dimensions");
  }
  const Matrix ls = cholesky(sample_cov);
  const Matrix lt = cholesky(target_cov);

  double trace = 0.0;
  std::vector<double> col(p);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < p; ++i) col[i] = sample_cov(i, j);
    trace += detail::cholesky_solve(lt, col)[j];
  }
  std::vector<double> diff(p);
  for (std::size_t i = 0; i < p; ++i) diff[i] = target_mean[i] - sample_mean[i];
  const std::vector<double> solved = detail::cholesky_solve(lt, diff);
  double quad = 0.0;
  for (std::size_t i = 0; i < p; ++i) quad += diff[i] * solved[i];

  const double log_ratio = detail::log_det_from_cholesky(lt) - detail::log_det_from_cholesky(ls);
  return 0.5 * (log_ratio - static_cast<double>(p) + trace + quad);
}

/// Against an isotropic target N(mu·1, sigma²·I).
inline double kl_full(std::span<const double> sample_mean, const Matrix& sample_cov, const GaussianTarget& target) {
  const std::size_t p = sample_mean.size();
  if (target.p != p) throw ShapeError("kl_full: target p mismatch");
  std::vector<double> mu(p, target.mu);
  Matrix cov = (target.sigma * target.sigma) * Matrix::identity(p);
  return kl_full(sample_mean, sample_cov, mu, cov);
}

}  // namespace bmn
