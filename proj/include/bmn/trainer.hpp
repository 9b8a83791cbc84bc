#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmn/autodiff.hpp"
#include "bmn/checkpoint.hpp"
#include "bmn/config.hpp"
#include "bmn/dataset.hpp"
#include "bmn/kl_loss.hpp"
#include "bmn/log.hpp"
#include "bmn/mining.hpp"
#include "bmn/model.hpp"

namespace bmn {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The dataset cannot supply both pair classes.
class DatasetInsufficientError : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

/// Mining kept discarding until the run gave up.
class MiningStalledError : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

/// Candidate pairs used to detect units that start out inactive.
inline constexpr std::size_t kReviveProbePairs = 256;

/// lr0 · decay^⌊epoch / decay_every⌋
inline double lr_at(const TrainConfig& c, std::size_t epoch) {
  return c.lr0 * std::pow(c.decay_factor, static_cast<double>(epoch / c.decay_every));
}

struct OptimizerState {
  ModelParams first;
  ModelParams second;
  std::uint64_t t = 0;

  static OptimizerState zeros_like(const ModelParams& p) {
    OptimizerState s;
    for (std::size_t i = 0; i < p.layer_count(); ++i) {
      const auto& l = p.layer(i);
      DenseLayer z{Matrix(l.weight.rows(), l.weight.cols()), Matrix(l.bias.rows(), l.bias.cols())};
      (i < p.encoder.size() ? s.first.encoder : s.first.metric).push_back(z);
      (i < p.encoder.size() ? s.second.encoder : s.second.metric).push_back(z);
    }
    return s;
  }
};

/**
 * One bias-corrected Adam update with decoupled weight decay on weight
 * matrices (biases are never decayed). Returns false and leaves everything
 * untouched if any gradient entry is non-finite.
 */
inline bool adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, double lr,
                      double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (grads.layer_count() != params.layer_count()) throw ShapeError("adam_step: gradient layout mismatch");
  for (std::size_t i = 0; i < grads.layer_count(); ++i) {
    if (!grads.layer(i).weight.same_shape(params.layer(i).weight) || !grads.layer(i).bias.same_shape(params.layer(i).bias)) {
      throw ShapeError("adam_step: gradient shape mismatch at layer " + std::to_string(i));
    }
  }
  if (!grads.all_finite()) return false;

  const std::uint64_t t = ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  auto update = [&](Matrix& theta, const Matrix& g, Matrix& m, Matrix& v, bool decay) {
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      const double step = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
      const double old = theta[k];
      theta[k] = old - lr * step - (decay ? lr * weight_decay * old : 0.0);
    }
  };
  for (std::size_t i = 0; i < params.layer_count(); ++i) {
    auto& l = params.layer(i);
    update(l.weight, grads.layer(i).weight, state.first.layer(i).weight, state.second.layer(i).weight, true);
    update(l.bias, grads.layer(i).bias, state.first.layer(i).bias, state.second.layer(i).bias, false);
  }
  return true;
}

struct TrainLogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_m = 0.0;
  double loss_n = 0.0;
  double total = 0.0;
  double difficult_fraction_m = 0.0;
  double difficult_fraction_n = 0.0;
  /// Discarded collections since the previous step.
  std::size_t discards = 0;
};

inline constexpr const char* kTrainLogHeader =
    "step,epoch,lr,loss_m,loss_n,total,difficult_fraction_m,difficult_fraction_n,discards";

inline std::string format_log_row(const TrainLogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g,%.10g,%.10g,%.10g,%.6f,%.6f,%zu", r.step, r.epoch, r.lr, r.loss_m,
                r.loss_n, r.total, r.difficult_fraction_m, r.difficult_fraction_n, r.discards);
  return buf;
}

struct TrainOptions {
  /// Run directory for numbered checkpoints and train_log.csv; empty = in-memory only.
  std::string run_dir;
  /// Identities usable for training; empty = all.
  std::vector<std::uint32_t> identities;
  /// Starting parameters (resume); default-initialized from the model seed otherwise.
  const ModelParams* initial = nullptr;
  std::function<void(const TrainLogRow&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
  std::size_t epochs = 0;
  std::size_t skipped_steps = 0;
  std::size_t total_discards = 0;
  std::vector<std::string> checkpoint_paths;
  /// Set when mining ran dry before max_iterations; the reason is logged.
  bool stopped_early = false;
  /// Steps trained on a hardest-pairs batch after a strict discard.
  std::size_t hardest_steps = 0;
};

/// Candidate pairs -> b×input_dim matrices, matching rows first.
inline std::pair<Matrix, Matrix> batch_inputs(const PairBatch& batch, const Dataset& ds) {
  std::vector<SamplePair> rows = batch.matching;
  rows.insert(rows.end(), batch.non_matching.begin(), batch.non_matching.end());
  return pair_inputs(ds, rows);
}

struct StepOutcome {
  LossBreakdown loss;
  ModelParams grads;
};

/// Train-mode forward, KL loss and backward for one mined batch.
inline StepOutcome loss_and_grads(const ModelParams& params, const ModelConfig& model, const TargetSpec& target,
                                  const Matrix& x1, const Matrix& x2, std::size_t half, std::mt19937_64& dropout_rng) {
  ad::Tape tape;
  const ParamVars vars = bind_params(tape, params);
  ad::Var z = forward_pairs(vars, tape.constant(x1), tape.constant(x2), Mode::Train, model.dropout_keep, dropout_rng);
  const auto loss = ad::total_loss(ad::slice_rows(z, 0, half), ad::slice_rows(z, half, 2 * half), target);
  StepOutcome out{loss.values(), {}};
  if (!std::isfinite(out.loss.total)) return out;
  tape.backward(loss.total);
  out.grads = collect_grads(vars);
  return out;
}

namespace detail {
inline std::string checkpoint_name(std::size_t step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "ckpt_%08zu.bmnck", step);
  return buf;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  return x;
}
}  // namespace detail

/**
 * Runs sample_epoch -> fill_batch -> total_loss -> backward -> adam_step
 * until max_iterations optimizer steps have been taken.
 */
inline TrainResult train(const Dataset& ds, const ModelConfig& model, const TargetSpec& target,
                         const TrainConfig& cfg, const TrainOptions& opts = {}) {
  model.validate();
  target.validate();
  cfg.validate();
  if (model.p != target.p) throw ConfigError("model p and target p differ");
  if (target.sigma_m != target.sigma_n) throw ConfigError("training requires sigma_m == sigma_n");
  if (ds.input_dim() != model.input_dim) {
    throw ConfigError("dataset input_dim " + std::to_string(ds.input_dim()) + " != model input_dim " +
                      std::to_string(model.input_dim));
  }

  {
    const auto groups = ds.by_identity();
    const std::set<std::uint32_t> allowed(opts.identities.begin(), opts.identities.end());
    std::size_t usable = 0;
    for (std::uint32_t id = 0; id < groups.size(); ++id) {
      if (!allowed.empty() && !allowed.count(id)) continue;
      if (groups[id].size() >= std::max<std::size_t>(cfg.epoch.min_images, 2)) ++usable;
    }
    if (usable < 2) {
      throw DatasetInsufficientError("need at least 2 identities with >= " + std::to_string(cfg.epoch.min_images) +
                                     " images to form both pair classes, found " + std::to_string(usable));
    }
  }

  {
    Matrix all(ds.size(), ds.input_dim());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& v = ds.items[i].values;
      std::copy(v.begin(), v.end(), all.row_span(i).begin());
    }
    check_input_range(model, all);
  }

  TrainResult result;
  ModelParams params = opts.initial ? *opts.initial : init_params(model);
  params.check_shapes(model);
  if (!opts.initial) {
    const CandidateStream probe = sample_epoch(ds, cfg.epoch, detail::mix_seed(cfg.seed, 1), opts.identities);
    const auto [px1, px2] = pair_inputs(ds, probe.peek(kReviveProbePairs));
    if (const std::size_t n = revive_dead_units(params, px1, px2, detail::mix_seed(model.seed, 0xA11E))) {
      log::debug("redrew {} inactive units at initialization", n);
    }
  }
  OptimizerState state = OptimizerState::zeros_like(params);
  std::mt19937_64 dropout_rng(detail::mix_seed(cfg.seed, 0xD50F));

  std::ofstream log_csv;
  if (!opts.run_dir.empty()) {
    std::filesystem::create_directories(opts.run_dir);
    log_csv.open(std::filesystem::path(opts.run_dir) / "train_log.csv", std::ios::trunc);
    if (!log_csv) throw std::runtime_error("cannot write training log in " + opts.run_dir);
    log_csv << kTrainLogHeader << "\n";
  }

  std::size_t last_written = static_cast<std::size_t>(-1);
  auto snapshot = [&](std::size_t step) {
    return Checkpoint{model, target, cfg, params, static_cast<std::uint64_t>(step)};
  };
  auto write_checkpoint = [&](std::size_t step) {
    if (opts.run_dir.empty()) return;
    const auto path = (std::filesystem::path(opts.run_dir) / detail::checkpoint_name(step)).string();
    save_checkpoint(path, snapshot(step));
    result.checkpoint_paths.push_back(path);
    last_written = step;
  };

  const std::size_t half = cfg.b / 2;
  std::size_t step = 0, epoch = 0, empty_epochs = 0, pending_discards = 0;
  while (step < cfg.max_iterations) {
    CandidateStream stream = sample_epoch(ds, cfg.epoch, detail::mix_seed(cfg.seed, epoch + 1), opts.identities);
    const double lr = lr_at(cfg, epoch);
    std::size_t steps_this_epoch = 0, consecutive = 0;

    while (step < cfg.max_iterations && !stream.exhausted()) {
      const std::size_t start = stream.consumed();
      FillResult fill = fill_batch(stream, params, ds, target, cfg.b, cfg.mining_window,
                                    step >= cfg.mining_warmup_steps);
      if (fill.discarded()) {
        ++pending_discards;
        ++result.total_discards;
        if (cfg.hardest_window) {
          // rescan the rejected candidates
          stream.rewind_to(start);
          fill = fill_batch_hardest(stream, params, ds, target, cfg.b, cfg.hardest_window);
          if (fill.batch) ++result.hardest_steps;
        }
      }
      if (fill.discarded()) {
        if (++consecutive >= cfg.max_consecutive_discards) {
          log::warn("epoch {}: {} consecutive discarded collections (difficult fractions m={:.4f} n={:.4f}); "
                    "aborting epoch",
                    epoch, consecutive, fill.stats.difficult_fraction_m(), fill.stats.difficult_fraction_n());
          break;
        }
        continue;
      }
      consecutive = 0;

      const auto [x1, x2] = batch_inputs(*fill.batch, ds);
      StepOutcome out = loss_and_grads(params, model, target, x1, x2, half, dropout_rng);
      if (!std::isfinite(out.loss.total)) {
        write_checkpoint(step);
        throw TrainingError("non-finite loss at step " + std::to_string(step) + "; last good parameters kept");
      }
      if (!adam_step(params, out.grads, state, lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)) {
        ++result.skipped_steps;
        log::warn("step {}: non-finite gradient, batch skipped", step);
        continue;
      }

      TrainLogRow row{step,
                      epoch,
                      lr,
                      out.loss.loss_m,
                      out.loss.loss_n,
                      out.loss.total,
                      fill.stats.difficult_fraction_m(),
                      fill.stats.difficult_fraction_n(),
                      pending_discards};
      pending_discards = 0;
      result.log.push_back(row);
      if (log_csv.is_open()) log_csv << format_log_row(row) << "\n";
      if (opts.on_step) opts.on_step(row);
      ++step;
      ++steps_this_epoch;
      if (step % 100 == 0) log::debug("step {} epoch {} loss {:.5g}", step, epoch, row.total);
      if (cfg.checkpoint_every && step % cfg.checkpoint_every == 0) write_checkpoint(step);
    }

    ++epoch;
    if (steps_this_epoch == 0 && step < cfg.max_iterations) {
      if (++empty_epochs >= cfg.max_empty_epochs) {
        const std::string why = "no trainable batch in " + std::to_string(empty_epochs) +
                                " consecutive epochs; too few difficult pairs of one class";
        if (step == 0) throw MiningStalledError(why);
        log::warn("stopping at step {}: {}", step, why);
        result.stopped_early = true;
        break;
      }
    } else {
      empty_epochs = 0;
    }
  }

  result.epochs = epoch;
  result.checkpoint = snapshot(step);
  if (!opts.run_dir.empty()) {
    if (last_written != step) write_checkpoint(step);
    save_checkpoint((std::filesystem::path(opts.run_dir) / "final.bmnck").string(), result.checkpoint);
  }
  return result;
}

}  // namespace bmn
