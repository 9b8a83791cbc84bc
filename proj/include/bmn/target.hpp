#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmn/matrix.hpp"

namespace bmn {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PairLabel { NonMatching = 0, Matching = 1 };

inline const char* to_string(PairLabel l) { return l == PairLabel::Matching ? "matching" : "non-matching"; }

/// One side of the target pair: an isotropic Gaussian N(mu·1_p, sigma²·I_p).
struct GaussianTarget {
  double mu = 0.0;
  double sigma = 1.0;
  std::size_t p = 1;
};

/**
 * The two latent-space targets: matching pairs ~ N(mu_m·1, sigma_m²·I),
 * non-matching pairs ~ N(mu_n·1, sigma_n²·I).
 */
struct TargetSpec {
  double mu_m = 0.0;
  double mu_n = 40.0;
  double sigma_m = 1.0;
  double sigma_n = 1.0;
  std::size_t p = 1;

  void validate() const {
    if (!std::isfinite(mu_m) || !std::isfinite(mu_n)) throw ConfigError("target means must be finite");
    if (mu_m == mu_n) throw ConfigError("target means must differ (mu_m == mu_n == " + std::to_string(mu_m) + ")");
    if (!(sigma_m > 0.0) || !(sigma_n > 0.0) || !std::isfinite(sigma_m) || !std::isfinite(sigma_n)) {
      throw ConfigError("target sigmas must be finite and > 0");
    }
    if (p < 1) throw ConfigError("latent dimensionality p must be >= 1");
  }

  GaussianTarget matching() const { return {mu_m, sigma_m, p}; }
  GaussianTarget non_matching() const { return {mu_n, sigma_n, p}; }
  GaussianTarget side(PairLabel l) const { return l == PairLabel::Matching ? matching() : non_matching(); }

  /// Decision threshold on z for p = 1.
  double tau() const { return 0.5 * (mu_m + mu_n); }

  friend bool operator==(const TargetSpec&, const TargetSpec&) = default;
};

/**
 * Hyperplane test between the two target means.
 *
 * A point is matching iff normal·z > offset, where normal = mu_m - mu_n and
 * offset = normal·(mu_m + mu_n)/2. The side containing mu_m is matching; a
 * point exactly on the hyperplane is rejected (non-matching).
 */
class DecisionRule {
 public:
  explicit DecisionRule(const TargetSpec& spec) : spec_(spec) {
    spec.validate();
    normal_.assign(spec.p, spec.mu_m - spec.mu_n);
    offset_ = static_cast<double>(spec.p) * (spec.mu_m - spec.mu_n) * (spec.mu_m + spec.mu_n) / 2.0;
  }

  /// Same geometry with the normal and offset multiplied by `factor` > 0.
  DecisionRule scaled(double factor) const {
    if (!(factor > 0.0)) throw ConfigError("rule scale factor must be > 0");
    DecisionRule r = *this;
    for (double& v : r.normal_) v *= factor;
    r.offset_ *= factor;
    return r;
  }

  std::span<const double> normal() const { return normal_; }
  double offset() const { return offset_; }
  double tau() const { return spec_.tau(); }
  std::size_t dim() const { return normal_.size(); }
  const TargetSpec& spec() const { return spec_; }

  double margin(std::span<const double> z) const {
    if (z.size() != normal_.size()) {
      throw ShapeError("decision rule expects p=" + std::to_string(normal_.size()) + ", got " +
                       std::to_string(z.size()));
    }
    double proj = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) proj += normal_[i] * z[i];
    return proj - offset_;
  }

  PairLabel decide(std::span<const double> z) const {
    return margin(z) > 0.0 ? PairLabel::Matching : PairLabel::NonMatching;
  }

  /// Scalar form for p = 1: compare z against tau on the mu_m side.
  PairLabel decide_threshold(double z) const {
    if (normal_.size() != 1) throw ShapeError("scalar threshold test requires p=1");
    const bool matching = spec_.mu_m < spec_.mu_n ? z < tau() : z > tau();
    return matching ? PairLabel::Matching : PairLabel::NonMatching;
  }

 private:
  TargetSpec spec_;
  std::vector<double> normal_;
  double offset_ = 0.0;
};

}  // namespace bmn
