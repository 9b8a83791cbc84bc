#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <span>
#include <string>
#include <vector>

#include "bmn/config.hpp"
#include "bmn/dataset.hpp"
#include "bmn/eval.hpp"
#include "bmn/log.hpp"
#include "bmn/trainer.hpp"

namespace bmn {

/// Identity ids used for training and the ids held out for evaluation.
struct IdentitySplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> held_out;
};

/// The last `n_held_out` identity ids are held out; 0 trains and evaluates on everything.
inline IdentitySplit holdout_split(const Dataset& ds, std::size_t n_held_out) {
  const std::size_t n = ds.identity_count();
  if (n_held_out >= n && n_held_out > 0) {
    throw ConfigError("cannot hold out " + std::to_string(n_held_out) + " of " + std::to_string(n) + " identities");
  }
  IdentitySplit s;
  for (std::uint32_t id = 0; id < n; ++id) (id + n_held_out < n ? s.train : s.held_out).push_back(id);
  if (n_held_out == 0) s.held_out = s.train;
  return s;
}

/// Balanced evaluation pairs drawn from the held-out identities.
struct PairProtocol {
  std::size_t n_matching = 500;
  std::size_t n_non_matching = 500;
  std::uint64_t seed = 11;
};

inline std::vector<PairRef> held_out_pairs(const Dataset& ds, const RunConfig& cfg, const PairProtocol& protocol = {}) {
  const auto split = holdout_split(ds, cfg.holdout_identities);
  return sample_pairs(ds, split.held_out, protocol.n_matching, protocol.n_non_matching, protocol.seed);
}

/// Trains on the non-held-out identities of `ds`.
inline TrainResult train_run(const Dataset& ds, const RunConfig& cfg, TrainOptions opts = {}) {
  cfg.validate();
  opts.identities = holdout_split(ds, cfg.holdout_identities).train;
  return train(ds, cfg.model, cfg.target, cfg.train, opts);
}

// ------------------------------------------------------------ mu_n sweep

struct SweepPoint {
  double w = 0.0;
  bool ok = false;
  std::string error;
  std::size_t steps = 0;
  double accuracy = 0.0;
  double gar_at_far_1e2 = 0.0;
  ClassMoments moments;
};

/// Rejects grid values that do not form a valid target with the base config.
inline void validate_grid(const RunConfig& base, std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("w grid is empty");
  for (double w : grid) {
    TargetSpec t = base.target;
    t.mu_n = w;
    try {
      t.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("w=" + detail::fmt_double(w) + " is not a valid target mean: " + e.what());
    }
  }
}

/**
 * Trains a fresh model per w (mu_n = w, `iterations` steps) and evaluates
 * it on held-out pairs. A failed point is recorded and the sweep goes on.
 */
inline std::vector<SweepPoint> diagnose_sweep(const Dataset& ds, const RunConfig& base, std::span<const double> grid,
                                              std::size_t iterations, const PairProtocol& protocol = {}) {
  validate_grid(base, grid);
  const auto pairs = held_out_pairs(ds, base, protocol);
  std::vector<SweepPoint> out;
  for (double w : grid) {
    SweepPoint pt;
    pt.w = w;
    RunConfig cfg = base;
    cfg.target.mu_n = w;
    cfg.train.max_iterations = iterations;
    try {
      const TrainResult res = train_run(ds, cfg);
      const EvalReport rep = evaluate(res.checkpoint.params, ds, pairs, cfg.target);
      pt.ok = true;
      pt.steps = res.log.size();
      pt.accuracy = rep.accuracy;
      pt.gar_at_far_1e2 = rep.gar_at_far_1e2;
      pt.moments = rep.moments_z;
    } catch (const std::exception& e) {
      pt.error = e.what();
      log::warn("w={}: {}", w, pt.error);
    }
    log::info("w={} accuracy={:.4f}", w, pt.accuracy);
    out.push_back(std::move(pt));
  }
  return out;
}

inline std::string sweep_csv(std::span<const SweepPoint> points) {
  std::string s =
      "w,status,steps,accuracy,gar_at_far_1e-2,"
      "matching_mean,matching_variance,matching_skewness,matching_kurtosis,"
      "non_matching_mean,non_matching_variance,non_matching_skewness,non_matching_kurtosis\n";
  auto moments = [](const Moments& m) {
    return detail::fmt_double(m.mean) + "," + detail::fmt_double(m.variance) + "," + detail::fmt_double(m.skewness) +
           "," + detail::fmt_double(m.kurtosis);
  };
  for (const auto& p : points) {
    std::string status = p.ok ? "ok" : "failed: " + p.error;
    for (char& c : status)
      if (c == ',' || c == '\n') c = ';';
    s += detail::fmt_double(p.w) + "," + status + "," + std::to_string(p.steps) + "," +
         detail::fmt_double(p.accuracy) + "," + detail::fmt_double(p.gar_at_far_1e2) + "," +
         moments(p.moments.matching) + "," + moments(p.moments.non_matching) + "\n";
  }
  return s;
}

}  // namespace bmn
