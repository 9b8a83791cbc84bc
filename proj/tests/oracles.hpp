#pragma once

// Independent reference implementations used as test oracles. None of these
// call into the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "bmn/matrix.hpp"
#include "bmn/model.hpp"
#include "bmn/target.hpp"

namespace oracle {

inline bmn::Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -2.0,
                                 double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  bmn::Matrix m(r, c);
  for (double& v : m.data()) v = u(rng);
  return m;
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

/// Central difference of a scalar function w.r.t. entry `i` of `x`.
inline double central_difference(const std::function<double(const bmn::Matrix&)>& f, bmn::Matrix x, std::size_t i,
                                 double h = 1e-5) {
  const double orig = x[i];
  x[i] = orig + h;
  const double up = f(x);
  x[i] = orig - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

// ------------------------------------------------------------ decision

/// Nearest target mean in Euclidean distance; nullopt-like -1 on an exact tie.
inline int nearest_mean(const std::vector<double>& z, const bmn::TargetSpec& t) {
  double dm = 0.0, dn = 0.0;
  for (double v : z) {
    dm += (v - t.mu_m) * (v - t.mu_m);
    dn += (v - t.mu_n) * (v - t.mu_n);
  }
  if (dm == dn) return -1;
  return dm < dn ? 1 : 0;
}

// ------------------------------------------------------------ KL

/// Numerically integrated KL(N(m1,v1) || N(m2,v2)) for univariate Gaussians (Simpson).
inline double kl_numeric_1d(double m1, double v1, double m2, double v2) {
  const double s1 = std::sqrt(v1);
  const double lo = m1 - 14.0 * s1, hi = m1 + 14.0 * s1;
  const int n = 20000;
  const double h = (hi - lo) / n;
  auto logpdf = [](double x, double m, double v) {
    return -0.5 * std::log(2.0 * M_PI * v) - (x - m) * (x - m) / (2.0 * v);
  };
  auto f = [&](double x) {
    const double lp = logpdf(x, m1, v1);
    return std::exp(lp) * (lp - logpdf(x, m2, v2));
  };
  double s = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) s += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// Two-pass population mean and variance per column.
inline std::pair<std::vector<double>, std::vector<double>> column_moments(const bmn::Matrix& z) {
  std::vector<double> mean(z.cols(), 0.0), var(z.cols(), 0.0);
  for (std::size_t j = 0; j < z.cols(); ++j) {
    for (std::size_t i = 0; i < z.rows(); ++i) mean[j] += z(i, j);
    mean[j] /= static_cast<double>(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) var[j] += (z(i, j) - mean[j]) * (z(i, j) - mean[j]);
    var[j] /= static_cast<double>(z.rows());
  }
  return {mean, var};
}

// ------------------------------------------------------------ ROC

struct BruteRoc {
  double far = 0.0;
  double gar = 0.0;
};

/// For every threshold t (each score, plus -inf): accepted = score > t.
inline std::vector<std::pair<double, BruteRoc>> brute_roc(const std::vector<double>& m, const std::vector<double>& n) {
  std::vector<double> ts(m);
  ts.insert(ts.end(), n.begin(), n.end());
  std::sort(ts.begin(), ts.end(), std::greater<>());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  ts.push_back(-std::numeric_limits<double>::infinity());
  std::vector<std::pair<double, BruteRoc>> out;
  for (double t : ts) {
    std::size_t am = 0, an = 0;
    for (double v : m) am += v > t;
    for (double v : n) an += v > t;
    out.push_back({t, {static_cast<double>(an) / n.size(), static_cast<double>(am) / m.size()}});
  }
  return out;
}

/// GAR at the largest threshold whose FAR does not exceed alpha.
inline double brute_gar_at(const std::vector<double>& m, const std::vector<double>& n, double alpha) {
  std::vector<double> ts(m);
  ts.insert(ts.end(), n.begin(), n.end());
  ts.push_back(-std::numeric_limits<double>::infinity());
  double best_t = std::numeric_limits<double>::quiet_NaN();
  for (double t : ts) {
    std::size_t an = 0;
    for (double v : n) an += v > t;
    if (static_cast<double>(an) / n.size() <= alpha && (std::isnan(best_t) || t < best_t)) best_t = t;
  }
  std::size_t am = 0;
  for (double v : m) am += v > best_t;
  return static_cast<double>(am) / m.size();
}

// ------------------------------------------------------------ moments

struct RawMoments {
  double mean, var, skew, kurt;
};

inline RawMoments moments(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    m2 += std::pow(v - mean, 2);
    m3 += std::pow(v - mean, 3);
    m4 += std::pow(v - mean, 4);
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  return {mean, m2, m3 / std::pow(m2, 1.5), m4 / (m2 * m2)};
}

// ------------------------------------------------------------ network

/// Plain-loop dense layer y = x·W + b, optionally followed by ReLU.
inline std::vector<double> dense(const std::vector<double>& x, const bmn::DenseLayer& l, bool relu) {
  std::vector<double> y(l.weight.cols(), 0.0);
  for (std::size_t j = 0; j < y.size(); ++j) {
    double s = l.bias(0, j);
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * l.weight(i, j);
    y[j] = relu ? std::max(0.0, s) : s;
  }
  return y;
}

/// Eval-mode pair forward: ReLU after every layer except each stack's last.
inline std::vector<double> pair_forward(const bmn::ModelParams& p, const std::vector<double>& x1,
                                        const std::vector<double>& x2) {
  auto enc = [&](std::vector<double> h) {
    for (std::size_t k = 0; k < p.encoder.size(); ++k) h = dense(h, p.encoder[k], k + 1 < p.encoder.size());
    return h;
  };
  std::vector<double> f = enc(x1);
  const auto f2 = enc(x2);
  f.insert(f.end(), f2.begin(), f2.end());
  for (std::size_t k = 0; k < p.metric.size(); ++k) f = dense(f, p.metric[k], k + 1 < p.metric.size());
  return f;
}

/// Image flip by explicit coordinate mapping (x, y) -> (width - x - 1, y).
inline std::vector<double> image_flip(const std::vector<double>& v, std::size_t w, std::size_t h, std::size_t c) {
  std::vector<double> out(v.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t src = (y * w + x) * c + k;
        const std::size_t dst = (y * w + (w - x - 1)) * c + k;
        out[dst] = v[src];
      }
  return out;
}

}  // namespace oracle
