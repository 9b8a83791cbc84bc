#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bmn/autodiff.hpp"
#include "bmn/log.hpp"
#include "bmn/matrix.hpp"
#include "bmn/target.hpp"

namespace bmn {

enum class Mode { Train, Eval };

/// Number of fully connected layers in the metric head.
inline constexpr std::size_t kMetricLayers = 7;

struct ModelConfig {
  std::size_t input_dim = 16;
  std::size_t d = 32;
  std::size_t p = 1;
  std::vector<std::size_t> encoder_hidden{256, 128};
  double dropout_keep = 0.8;
  std::uint64_t seed = 1;
  /// Out-of-range inputs throw instead of warning.
  bool strict_inputs = false;
  /// Start the metric head's final projection at zero.
  bool zero_init_output = true;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

/**
 * Metric-head layer shapes for feature size d and latent size p.
 *
 * Input 2d, first layer 2d -> 2d, then five halvings, then the projection
 * onto p. Intermediate widths never drop below p.
 */
inline std::vector<LayerShape> metricnet_widths(std::size_t d, std::size_t p) {
  if (p < 1) throw ConfigError("latent dimensionality p must be >= 1");
  // Below d = 16 the sixth layer's width 2d/32 would already be zero.
  if (d < 16) {
    throw ConfigError("feature dimensionality d=" + std::to_string(d) +
                      " is too small for the 7-layer metric head; use d >= 16");
  }
  std::vector<LayerShape> shapes;
  std::size_t width = 2 * d;
  std::size_t in = 2 * d;
  for (std::size_t layer = 0; layer + 1 < kMetricLayers; ++layer) {
    if (layer > 0) width /= 2;
    const std::size_t out = std::max(width, p);
    shapes.push_back({in, out});
    in = out;
  }
  shapes.push_back({in, p});
  return shapes;
}

inline std::vector<LayerShape> encoder_widths(const ModelConfig& c) {
  std::vector<LayerShape> shapes;
  std::size_t in = c.input_dim;
  for (std::size_t h : c.encoder_hidden) {
    shapes.push_back({in, h});
    in = h;
  }
  shapes.push_back({in, c.d});
  return shapes;
}

inline void ModelConfig::validate() const {
  if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
  if (d < 1) throw ConfigError("d must be >= 1");
  if (p < 1) throw ConfigError("p must be >= 1");
  if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ConfigError("dropout_keep must lie in (0, 1]");
  for (std::size_t h : encoder_hidden)
    if (h < 1) throw ConfigError("encoder hidden widths must be >= 1");
  (void)metricnet_widths(d, p);
}

/// weight is in×out, bias is 1×out.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// One parameter set shared by both siamese branches, plus the metric head.
struct ModelParams {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> metric;

  std::size_t layer_count() const { return encoder.size() + metric.size(); }
  DenseLayer& layer(std::size_t i) { return i < encoder.size() ? encoder[i] : metric[i - encoder.size()]; }
  const DenseLayer& layer(std::size_t i) const {
    return i < encoder.size() ? encoder[i] : metric[i - encoder.size()];
  }

  /// Throws ShapeError unless every layer matches the shapes implied by `config`.
  void check_shapes(const ModelConfig& config) const {
    auto check = [](const std::vector<DenseLayer>& layers, const std::vector<LayerShape>& shapes, const char* what) {
      if (layers.size() != shapes.size()) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(shapes.size()) + " layers, found " +
                         std::to_string(layers.size()));
      }
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& l = layers[i];
        if (l.weight.rows() != shapes[i].in || l.weight.cols() != shapes[i].out || l.bias.rows() != 1 ||
            l.bias.cols() != shapes[i].out) {
          throw ShapeError(std::string(what) + " layer " + std::to_string(i) + ": expected " +
                           std::to_string(shapes[i].in) + "->" + std::to_string(shapes[i].out) + ", found weight " +
                           l.weight.shape_string() + " bias " + l.bias.shape_string());
        }
      }
    };
    check(encoder, encoder_widths(config), "encoder");
    check(metric, metricnet_widths(config.d, config.p), "metric head");
  }

  bool all_finite() const {
    for (std::size_t i = 0; i < layer_count(); ++i)
      if (!layer(i).weight.all_finite() || !layer(i).bias.all_finite()) return false;
    return true;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// He-normal weights (variance 2/fan_in), zero biases; reproducible from config.seed.
/// The final metric projection is all zeros when zero_init_output is set.
inline ModelParams init_params(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  auto make = [&rng](const std::vector<LayerShape>& shapes) {
    std::vector<DenseLayer> layers;
    for (const auto& s : shapes) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(s.in)));
      DenseLayer l{Matrix(s.in, s.out), Matrix(1, s.out)};
      for (double& w : l.weight.data()) w = dist(rng);
      layers.push_back(std::move(l));
    }
    return layers;
  };
  ModelParams params;
  params.encoder = make(encoder_widths(config));
  params.metric = make(metricnet_widths(config.d, config.p));
  if (config.zero_init_output) {
    for (double& w : params.metric.back().weight.data()) w = 0.0;
  }
  return params;
}

/// Counts entries outside [-1, 1]; warns, or throws in strict mode.
inline std::size_t check_input_range(const ModelConfig& config, const Matrix& x) {
  std::size_t bad = 0;
  for (double v : x.data())
    if (!(v >= -1.0 && v <= 1.0)) ++bad;
  if (bad > 0) {
    if (config.strict_inputs) {
      throw DomainError(std::to_string(bad) + " input values outside [-1, 1]");
    }
    log::warn("{} input values outside [-1, 1]", bad);
  }
  return bad;
}

/// Inverted-dropout mask: kept units scaled by 1/keep.
inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double keep, std::mt19937_64& rng) {
  Matrix mask(rows, cols);
  std::bernoulli_distribution bern(keep);
  for (double& m : mask.data()) m = bern(rng) ? 1.0 / keep : 0.0;
  return mask;
}

// ---------------------------------------------------------------- eval path

/// Rows of `x` (n×input_dim) -> features (n×d). Deterministic (no dropout).
inline Matrix encode(const ModelParams& params, const Matrix& x) {
  Matrix h = x;
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    h = add_row(bmn::matmul(h, params.encoder[i].weight), params.encoder[i].bias);
    if (i + 1 < params.encoder.size()) h = relu(h);
  }
  return h;
}

/// Concatenated features (n×2d) -> latent points (n×p).
inline Matrix metric_forward(const ModelParams& params, const Matrix& f) {
  Matrix h = f;
  for (std::size_t i = 0; i < params.metric.size(); ++i) {
    h = add_row(bmn::matmul(h, params.metric[i].weight), params.metric[i].bias);
    if (i + 1 < params.metric.size()) h = relu(h);
  }
  return h;
}

/// Full eval-mode pipeline over n pairs: rows of x1 and x2 are paired.
inline Matrix forward_pairs(const ModelParams& params, const Matrix& x1, const Matrix& x2) {
  return metric_forward(params, concat_cols(encode(params, x1), encode(params, x2)));
}

/**
 * Redraws, from the He-normal distribution, the incoming weights of every
 * hidden ReLU unit that is inactive on all probe pairs. Layers are handled
 * front to back so later layers see the repaired activations. Returns the
 * number of units redrawn; units still dead after `max_tries` are kept.
 */
inline std::size_t revive_dead_units(ModelParams& params, const Matrix& x1, const Matrix& x2, std::uint64_t seed,
                                     int max_tries = 32) {
  std::mt19937_64 rng(seed);
  std::size_t redrawn = 0;
  auto repair = [&](DenseLayer& layer, const Matrix& h) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(layer.weight.rows())));
    Matrix pre = add_row(bmn::matmul(h, layer.weight), layer.bias);
    for (std::size_t j = 0; j < pre.cols(); ++j) {
      auto alive = [&] {
        for (std::size_t i = 0; i < pre.rows(); ++i)
          if (pre(i, j) > 0.0) return true;
        return false;
      };
      for (int t = 0; t < max_tries && !alive(); ++t) {
        for (std::size_t k = 0; k < layer.weight.rows(); ++k) layer.weight(k, j) = dist(rng);
        for (std::size_t i = 0; i < pre.rows(); ++i) {
          double v = layer.bias[j];
          for (std::size_t k = 0; k < h.cols(); ++k) v += h(i, k) * layer.weight(k, j);
          pre(i, j) = v;
        }
        ++redrawn;
      }
    }
    return relu(pre);
  };

  Matrix h1 = x1, h2 = x2;
  const std::size_t n = x1.rows();
  for (std::size_t i = 0; i + 1 < params.encoder.size(); ++i) {
    Matrix both = repair(params.encoder[i], concat_rows(h1, h2));
    h1 = slice_rows(both, 0, n);
    h2 = slice_rows(both, n, 2 * n);
  }
  const DenseLayer& last = params.encoder.back();
  Matrix h = concat_cols(add_row(bmn::matmul(h1, last.weight), last.bias), add_row(bmn::matmul(h2, last.weight), last.bias));
  for (std::size_t i = 0; i + 1 < params.metric.size(); ++i) h = repair(params.metric[i], h);
  return redrawn;
}

// ---------------------------------------------------------------- tape path

/// Parameters registered as tape leaves, in ModelParams layer order.
struct ParamVars {
  std::vector<std::pair<ad::Var, ad::Var>> encoder;
  std::vector<std::pair<ad::Var, ad::Var>> metric;

  std::pair<ad::Var, ad::Var> layer(std::size_t i) const {
    return i < encoder.size() ? encoder[i] : metric[i - encoder.size()];
  }
  std::size_t layer_count() const { return encoder.size() + metric.size(); }
};

inline ParamVars bind_params(ad::Tape& tape, const ModelParams& params) {
  ParamVars vars;
  for (const auto& l : params.encoder) vars.encoder.emplace_back(tape.variable(l.weight), tape.variable(l.bias));
  for (const auto& l : params.metric) vars.metric.emplace_back(tape.variable(l.weight), tape.variable(l.bias));
  return vars;
}

/// Gradients in ModelParams layout, read off the tape after backward().
inline ModelParams collect_grads(const ParamVars& vars) {
  ModelParams g;
  for (const auto& [w, b] : vars.encoder) g.encoder.push_back({w.grad(), b.grad()});
  for (const auto& [w, b] : vars.metric) g.metric.push_back({w.grad(), b.grad()});
  return g;
}

/**
 * Encoder on the tape. In train mode `mask` (inverted dropout, n×width of
 * the last hidden layer) multiplies the activation feeding the projection
 * onto d; an empty mask means no dropout.
 */
inline ad::Var encode(const ParamVars& vars, ad::Var x, const Matrix& mask) {
  ad::Var h = x;
  const std::size_t n = vars.encoder.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i + 1 == n && !mask.empty()) h = ad::mask_mul(h, mask);
    h = ad::add_row(ad::matmul(h, vars.encoder[i].first), vars.encoder[i].second);
    if (i + 1 < n) h = ad::relu(h);
  }
  return h;
}

/// Width of the activation that dropout acts on.
inline std::size_t dropout_width(const ParamVars& vars) { return vars.encoder.back().first.value().rows(); }

inline ad::Var encode(const ParamVars& vars, ad::Var x, Mode mode, double keep, std::mt19937_64& rng) {
  const bool drop = mode == Mode::Train && keep < 1.0;
  return encode(vars, x, drop ? dropout_mask(x.value().rows(), dropout_width(vars), keep, rng) : Matrix());
}

inline ad::Var metric_forward(const ParamVars& vars, ad::Var f) {
  ad::Var h = f;
  for (std::size_t i = 0; i < vars.metric.size(); ++i) {
    h = ad::add_row(ad::matmul(h, vars.metric[i].first), vars.metric[i].second);
    if (i + 1 < vars.metric.size()) h = ad::relu(h);
  }
  return h;
}

/// Siamese forward on the tape. Both branches share the encoder leaves and,
/// in train mode, one dropout draw per pair.
inline ad::Var forward_pairs(const ParamVars& vars, ad::Var x1, ad::Var x2, Mode mode, double keep,
                             std::mt19937_64& rng) {
  const bool drop = mode == Mode::Train && keep < 1.0;
  const Matrix mask = drop ? dropout_mask(x1.value().rows(), dropout_width(vars), keep, rng) : Matrix();
  return metric_forward(vars, ad::concat_cols(encode(vars, x1, mask), encode(vars, x2, mask)));
}

}  // namespace bmn
