#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "bmn/binary_io.hpp"
#include "bmn/mining.hpp"
#include "bmn/model.hpp"
#include "bmn/target.hpp"

namespace bmn {

/// Optimizer and schedule settings. An iteration is one optimizer step on a
/// non-discarded batch; an epoch is one pass over a sampled candidate stream.
struct TrainConfig {
  double lr0 = 0.01;
  double decay_factor = 0.98;
  std::size_t decay_every = 5;
  double weight_decay = 2e-4;
  std::size_t max_iterations = 2000;
  std::size_t b = 20;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  /// Write a numbered checkpoint every N steps (0 = final only).
  std::size_t checkpoint_every = 0;
  /// Candidates examined per batch fill before discarding (0 = until the stream ends).
  std::size_t mining_window = 2048;
  /// Consecutive discards that abort the current epoch.
  std::size_t max_consecutive_discards = 50;
  /// Consecutive epochs without a single step before training gives up.
  std::size_t max_empty_epochs = 3;
  /// Leading steps trained on unfiltered balanced batches.
  std::size_t mining_warmup_steps = 200;
  /// After a strict discard, fill from the hardest pairs of this many candidates (0 = off).
  std::size_t hardest_window = 2048;
  EpochConfig epoch;

  void validate() const {
    if (!(lr0 > 0.0) || !(decay_factor > 0.0) || decay_every == 0) throw ConfigError("learning-rate schedule must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (b < 4 || b % 2) throw ConfigError("batch size b must be even and >= 4");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) || !(eps > 0.0)) {
      throw ConfigError("Adam moments must lie in (0,1) and eps > 0");
    }
    if (max_consecutive_discards == 0 || max_empty_epochs == 0) throw ConfigError("discard limits must be >= 1");
    if (epoch.identities < 2) throw ConfigError("an epoch needs at least 2 identities");
    if (epoch.negatives_per_positive < 0.0) throw ConfigError("negatives_per_positive must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Everything a training run needs, stored as one JSON document.
struct RunConfig {
  ModelConfig model;
  TargetSpec target;
  TrainConfig train;
  std::string dataset;
  std::string output_dir = "run";
  /// The last N identity ids are held out of training.
  std::size_t holdout_identities = 0;

  void validate() const {
    model.validate();
    target.validate();
    train.validate();
    if (model.p != target.p) {
      throw ConfigError("model p=" + std::to_string(model.p) + " disagrees with target p=" + std::to_string(target.p));
    }
    if (target.sigma_m != target.sigma_n) {
      throw ConfigError("training requires sigma_m == sigma_n (equal-variance targets)");
    }
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {
using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + section);
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}
}  // namespace detail

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_dim", c.input_dim}, {"d", c.d},       {"p", c.p},
          {"encoder_hidden", c.encoder_hidden},         {"dropout_keep", c.dropout_keep},
          {"seed", c.seed},           {"strict_inputs", c.strict_inputs},
          {"zero_init_output", c.zero_init_output}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"input_dim", "d", "p", "encoder_hidden", "dropout_keep", "seed", "strict_inputs", "zero_init_output"},
                         "model");
  ModelConfig c;
  detail::read_opt(j, "input_dim", c.input_dim);
  detail::read_opt(j, "d", c.d);
  detail::read_opt(j, "p", c.p);
  detail::read_opt(j, "encoder_hidden", c.encoder_hidden);
  detail::read_opt(j, "dropout_keep", c.dropout_keep);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "strict_inputs", c.strict_inputs);
  detail::read_opt(j, "zero_init_output", c.zero_init_output);
  return c;
}

inline nlohmann::json to_json(const TargetSpec& t) {
  return {{"mu_m", t.mu_m}, {"mu_n", t.mu_n}, {"sigma_m", t.sigma_m}, {"sigma_n", t.sigma_n}, {"p", t.p}};
}

inline TargetSpec target_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"mu_m", "mu_n", "sigma_m", "sigma_n", "p"}, "target");
  TargetSpec t;
  detail::read_opt(j, "mu_m", t.mu_m);
  detail::read_opt(j, "mu_n", t.mu_n);
  detail::read_opt(j, "sigma_m", t.sigma_m);
  detail::read_opt(j, "sigma_n", t.sigma_n);
  detail::read_opt(j, "p", t.p);
  return t;
}

inline nlohmann::json to_json(const EpochConfig& e) {
  return {{"identities", e.identities},
          {"min_images", e.min_images},
          {"flip_augment", e.flip_augment},
          {"negatives_per_positive", e.negatives_per_positive}};
}

inline EpochConfig epoch_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"identities", "min_images", "flip_augment", "negatives_per_positive"}, "train.epoch");
  EpochConfig e;
  detail::read_opt(j, "identities", e.identities);
  detail::read_opt(j, "min_images", e.min_images);
  detail::read_opt(j, "flip_augment", e.flip_augment);
  detail::read_opt(j, "negatives_per_positive", e.negatives_per_positive);
  return e;
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"lr0", t.lr0},
          {"decay_factor", t.decay_factor},
          {"decay_every", t.decay_every},
          {"weight_decay", t.weight_decay},
          {"max_iterations", t.max_iterations},
          {"b", t.b},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every},
          {"mining_window", t.mining_window},
          {"max_consecutive_discards", t.max_consecutive_discards},
          {"max_empty_epochs", t.max_empty_epochs},
          {"mining_warmup_steps", t.mining_warmup_steps},
          {"hardest_window", t.hardest_window},
          {"epoch", to_json(t.epoch)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"lr0", "decay_factor", "decay_every", "weight_decay", "max_iterations", "b", "beta1", "beta2",
                          "eps", "seed", "checkpoint_every", "mining_window", "max_consecutive_discards",
                          "max_empty_epochs", "mining_warmup_steps", "hardest_window", "epoch"},
                         "train");
  TrainConfig t;
  detail::read_opt(j, "lr0", t.lr0);
  detail::read_opt(j, "decay_factor", t.decay_factor);
  detail::read_opt(j, "decay_every", t.decay_every);
  detail::read_opt(j, "weight_decay", t.weight_decay);
  detail::read_opt(j, "max_iterations", t.max_iterations);
  detail::read_opt(j, "b", t.b);
  detail::read_opt(j, "beta1", t.beta1);
  detail::read_opt(j, "beta2", t.beta2);
  detail::read_opt(j, "eps", t.eps);
  detail::read_opt(j, "seed", t.seed);
  detail::read_opt(j, "checkpoint_every", t.checkpoint_every);
  detail::read_opt(j, "mining_window", t.mining_window);
  detail::read_opt(j, "max_consecutive_discards", t.max_consecutive_discards);
  detail::read_opt(j, "max_empty_epochs", t.max_empty_epochs);
  detail::read_opt(j, "mining_warmup_steps", t.mining_warmup_steps);
  detail::read_opt(j, "hardest_window", t.hardest_window);
  if (j.contains("epoch")) t.epoch = epoch_from_json(j.at("epoch"));
  return t;
}

inline nlohmann::json to_json(const RunConfig& r) {
  return {{"model", to_json(r.model)},
          {"target", to_json(r.target)},
          {"train", to_json(r.train)},
          {"dataset", r.dataset},
          {"output_dir", r.output_dir},
          {"holdout_identities", r.holdout_identities}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"model", "target", "train", "dataset", "output_dir", "holdout_identities"}, "run config");
  RunConfig r;
  if (j.contains("model")) r.model = model_config_from_json(j.at("model"));
  if (j.contains("target")) r.target = target_from_json(j.at("target"));
  if (j.contains("train")) r.train = train_config_from_json(j.at("train"));
  detail::read_opt(j, "dataset", r.dataset);
  detail::read_opt(j, "output_dir", r.output_dir);
  detail::read_opt(j, "holdout_identities", r.holdout_identities);
  return r;
}

inline RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

inline RunConfig read_run_config(const std::string& path) { return parse_run_config(read_file(path)); }

inline void write_run_config(const std::string& path, const RunConfig& r) {
  write_file(path, to_json(r).dump(2) + "\n");
}

}  // namespace bmn
