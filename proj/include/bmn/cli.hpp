#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bmn/checkpoint.hpp"
#include "bmn/config.hpp"
#include "bmn/dataset.hpp"
#include "bmn/diagnose.hpp"
#include "bmn/eval.hpp"
#include "bmn/log.hpp"
#include "bmn/svg.hpp"
#include "bmn/trainer.hpp"

namespace bmn::cli {

/// Exit statuses. verify also uses kMatching / kNonMatching.
inline constexpr int kOk = 0;
inline constexpr int kMatching = 0;
inline constexpr int kNonMatching = 1;
inline constexpr int kError = 2;

namespace detail {

inline RunConfig load_config(const std::string& path, const std::string& data_override) {
  RunConfig cfg = read_run_config(path);
  if (!data_override.empty()) cfg.dataset = data_override;
  if (cfg.dataset.empty()) throw ConfigError("no dataset: set \"dataset\" in the config or pass --data");
  cfg.validate();
  return cfg;
}

inline void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline std::string format_vector(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + bmn::detail::fmt_double(v[i]);
  return s;
}

}  // namespace detail

/**
 * Runs the command line; args[0] is the program name.
 * Command output goes to `out`, diagnostics to `err` and the log.
 */
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Distribution-shaped metric learning for pair verification"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic identity-cluster dataset");
  SyntheticSpec spec;
  std::string gen_out;
  gen->add_option("--out", gen_out, "Dataset file to write")->required();
  gen->add_option("--identities", spec.n_identities, "Number of identities")->capture_default_str();
  gen->add_option("--images", spec.images_per_identity, "Images per identity")->capture_default_str();
  gen->add_option("--dim", spec.input_dim, "Input dimensionality")->capture_default_str();
  gen->add_option("--sigma-within", spec.sigma_within, "Within-identity noise")->capture_default_str();
  gen->add_option("--sigma-between", spec.sigma_between, "Spread of identity centers")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Generator seed")->capture_default_str();

  // pairs
  auto* pairs_cmd = app.add_subcommand("pairs", "Sample a balanced labeled pairs file");
  std::string pairs_data, pairs_out;
  PairProtocol protocol;
  std::size_t pairs_held_out = 0;
  pairs_cmd->add_option("--data", pairs_data, "Dataset file")->required()->check(CLI::ExistingFile);
  pairs_cmd->add_option("--out", pairs_out, "Pairs file to write")->required();
  pairs_cmd->add_option("--matching", protocol.n_matching, "Matching pairs")->capture_default_str();
  pairs_cmd->add_option("--non-matching", protocol.n_non_matching, "Non-matching pairs")->capture_default_str();
  pairs_cmd->add_option("--seed", protocol.seed, "Sampling seed")->capture_default_str();
  pairs_cmd->add_option("--held-out", pairs_held_out, "Draw from the last N identities only (0 = all)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
  std::string train_config, train_resume, train_data, train_out;
  train_cmd->add_option("--config", train_config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--resume", train_resume, "Start from this checkpoint's parameters")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", train_data, "Dataset file (overrides the config)")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Run directory (overrides the config)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a pairs file");
  std::string eval_ckpt, eval_pairs, eval_data, eval_out = "eval";
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--pairs", eval_pairs, "Pairs file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data, "Dataset file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval_out, "Report directory")->capture_default_str();

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "Decide whether two dataset items match");
  std::string verify_ckpt, verify_data;
  std::size_t verify_a = 0, verify_b = 0;
  verify_cmd->add_option("--ckpt", verify_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--data", verify_data, "Dataset file")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--a", verify_a, "First item index")->required();
  verify_cmd->add_option("--b", verify_b, "Second item index")->required();

  // diagnose
  auto* diag_cmd = app.add_subcommand("diagnose", "Sweep the non-matching target mean");
  std::string diag_config, diag_data, diag_out;
  std::vector<double> grid{0.5, 5, 20, 40, 90, 120};
  std::size_t diag_iterations = 500;
  diag_cmd->add_option("--config", diag_config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  diag_cmd->add_option("--w-grid", grid, "Comma-separated mu_n values")->delimiter(',')->capture_default_str();
  diag_cmd->add_option("--iterations", diag_iterations, "Training steps per grid point")->capture_default_str();
  diag_cmd->add_option("--data", diag_data, "Dataset file (overrides the config)")->check(CLI::ExistingFile);
  diag_cmd->add_option("--out", diag_out, "Output directory (default <output_dir>/diagnose)");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "Render SVG charts from report CSVs");
  std::string plot_dir;
  plot_cmd->add_option("--report", plot_dir, "Report directory")->required()->check(CLI::ExistingDirectory);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kError;
  }

  try {
    if (*gen) {
      const Dataset ds = generate_synthetic(spec);
      detail::ensure_parent(gen_out);
      write_dataset(gen_out, ds);
      out << "wrote " << ds.size() << " items (" << ds.identity_count() << " identities) to " << gen_out << "\n";
      return kOk;
    }

    if (*pairs_cmd) {
      const Dataset ds = read_dataset(pairs_data);
      const auto split = holdout_split(ds, pairs_held_out);
      const auto pairs =
          sample_pairs(ds, split.held_out, protocol.n_matching, protocol.n_non_matching, protocol.seed);
      detail::ensure_parent(pairs_out);
      bmn::detail::write_text(pairs_out, format_pairs(pairs));
      out << "wrote " << pairs.size() << " pairs to " << pairs_out << "\n";
      return kOk;
    }

    if (*train_cmd) {
      RunConfig cfg = detail::load_config(train_config, train_data);
      if (!train_out.empty()) cfg.output_dir = train_out;
      const Dataset ds = read_dataset(cfg.dataset);
      TrainOptions opts;
      opts.run_dir = cfg.output_dir;
      Checkpoint resume;
      if (!train_resume.empty()) {
        resume = load_checkpoint(train_resume, cfg.model);
        opts.initial = &resume.params;
        log::info("resuming from {} (step {}); optimizer state starts fresh", train_resume, resume.step);
      }
      std::filesystem::create_directories(cfg.output_dir);
      write_run_config((std::filesystem::path(cfg.output_dir) / "config.json").string(), cfg);
      const TrainResult res = train_run(ds, cfg, opts);
      const double last = res.log.empty() ? 0.0 : res.log.back().total;
      out << "steps " << res.log.size() << " epochs " << res.epochs << " discards " << res.total_discards
          << " final_loss " << bmn::detail::fmt_double(last) << (res.stopped_early ? " (stopped early)" : "") << "\n";
      out << "checkpoint " << (std::filesystem::path(cfg.output_dir) / "final.bmnck").string() << "\n";
      return kOk;
    }

    if (*eval_cmd) {
      const Checkpoint ck = load_checkpoint(eval_ckpt);
      const Dataset ds = read_dataset(eval_data);
      if (ds.input_dim() != ck.model.input_dim) {
        throw ConfigError("dataset input_dim " + std::to_string(ds.input_dim()) + " != checkpoint input_dim " +
                          std::to_string(ck.model.input_dim));
      }
      const auto pairs = read_pairs(eval_pairs, ds);
      const EvalReport rep = evaluate(ck.params, ds, pairs, ck.target);
      write_report(eval_out, rep);
      out << summary_csv(rep);
      return kOk;
    }

    if (*verify_cmd) {
      const Checkpoint ck = load_checkpoint(verify_ckpt);
      const Dataset ds = read_dataset(verify_data);
      if (ds.input_dim() != ck.model.input_dim) {
        throw ConfigError("dataset input_dim " + std::to_string(ds.input_dim()) + " != checkpoint input_dim " +
                          std::to_string(ck.model.input_dim));
      }
      const auto a = ds.input(verify_a), b = ds.input(verify_b);
      const Verification v = verify(ck.params, ds.geometry, a, b, ck.target);
      out << "label " << to_string(v.label) << "\n";
      out << "margin " << bmn::detail::fmt_double(v.margin) << "\n";
      out << "z_bar " << detail::format_vector(v.z_bar) << "\n";
      return v.label == PairLabel::Matching ? kMatching : kNonMatching;
    }

    if (*diag_cmd) {
      const RunConfig cfg = detail::load_config(diag_config, diag_data);
      const Dataset ds = read_dataset(cfg.dataset);
      const auto points = diagnose_sweep(ds, cfg, grid, diag_iterations);
      const std::string dir =
          diag_out.empty() ? (std::filesystem::path(cfg.output_dir) / "diagnose").string() : diag_out;
      std::filesystem::create_directories(dir);
      const std::string csv = sweep_csv(points);
      bmn::detail::write_text((std::filesystem::path(dir) / "sweep.csv").string(), csv);
      out << csv;
      std::size_t ok = 0;
      for (const auto& p : points) ok += p.ok;
      return ok > 0 ? kOk : kError;
    }

    if (*plot_cmd) {
      for (const auto& path : plot_report(plot_dir)) out << "wrote " << path << "\n";
      return kOk;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }
  return kError;
}

}  // namespace bmn::cli
