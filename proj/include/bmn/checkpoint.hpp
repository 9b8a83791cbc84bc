#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "bmn/binary_io.hpp"
#include "bmn/config.hpp"
#include "bmn/model.hpp"

namespace bmn {

inline constexpr std::string_view kCheckpointMagic = "BMNCK1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct Checkpoint {
  ModelConfig model;
  TargetSpec target;
  TrainConfig train;
  ModelParams params;
  /// Optimizer steps taken when this checkpoint was written.
  std::uint64_t step = 0;

  /// Throws ShapeError when these parameters cannot serve `expected`.
  void check_compatible(const ModelConfig& expected) const { params.check_shapes(expected); }
};

/**
 * Layout (little-endian):
 *   "BMNCK1" | u32 version | u32 len + JSON {model, target, train, step}
 *   | u32 matrix count | per matrix: u32 rows, u32 cols, rows*cols f64
 * Matrices are stored layer by layer (weight then bias), encoder first.
 */
inline std::string serialize_checkpoint(const Checkpoint& ck) {
  ck.params.check_shapes(ck.model);
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const nlohmann::json header = {
      {"model", to_json(ck.model)}, {"target", to_json(ck.target)}, {"train", to_json(ck.train)}, {"step", ck.step}};
  w.str(header.dump());
  w.u32(static_cast<std::uint32_t>(2 * ck.params.layer_count()));
  for (std::size_t i = 0; i < ck.params.layer_count(); ++i) {
    for (const Matrix* m : {&ck.params.layer(i).weight, &ck.params.layer(i).bias}) {
      w.u32(static_cast<std::uint32_t>(m->rows()));
      w.u32(static_cast<std::uint32_t>(m->cols()));
      for (double v : m->data()) w.f64(v);
    }
  }
  return w.bytes();
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kCheckpointMagic.size() || r.raw(kCheckpointMagic.size(), "magic") != kCheckpointMagic) {
    throw FormatError("bad checkpoint magic (expected BMNCK1)", 0);
  }
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("unsupported checkpoint version " + std::to_string(version) + " (reader supports " +
                                      std::to_string(kCheckpointVersion) + ")",
                                  version_at);
  }
  const std::size_t header_at = r.offset();
  const std::string header_text = r.str("config header");
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(header_text);
    detail::reject_unknown(header, {"model", "target", "train", "step"}, "checkpoint header");
    ck.model = model_config_from_json(header.at("model"));
    ck.target = target_from_json(header.at("target"));
    ck.train = train_config_from_json(header.at("train"));
    ck.step = header.at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what(), header_at);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("corrupt checkpoint header: ") + e.what(), header_at);
  }

  // Expected shape chain comes from the stored config.
  std::vector<LayerShape> shapes;
  try {
    ck.model.validate();
    shapes = encoder_widths(ck.model);
    const auto head = metricnet_widths(ck.model.d, ck.model.p);
    shapes.insert(shapes.end(), head.begin(), head.end());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what(), header_at);
  }

  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32("matrix count");
  if (count != 2 * shapes.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " matrices, config implies " +
                          std::to_string(2 * shapes.size()),
                      count_at);
  }
  std::vector<DenseLayer> layers;
  for (const auto& s : shapes) {
    DenseLayer layer;
    for (int part = 0; part < 2; ++part) {
      const std::size_t at = r.offset();
      const std::uint32_t rows = r.u32("matrix rows");
      const std::uint32_t cols = r.u32("matrix cols");
      const std::size_t want_rows = part == 0 ? s.in : 1;
      if (rows != want_rows || cols != s.out) {
        throw FormatError("shape chain violation: expected " + std::to_string(want_rows) + "x" + std::to_string(s.out) +
                              ", found " + std::to_string(rows) + "x" + std::to_string(cols),
                          at);
      }
      r.need(std::size_t{rows} * cols * 8, "matrix data");
      Matrix m(rows, cols);
      for (double& v : m.data()) v = r.f64();
      (part == 0 ? layer.weight : layer.bias) = std::move(m);
    }
    layers.push_back(std::move(layer));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload", r.offset());

  const std::size_t n_enc = encoder_widths(ck.model).size();
  ck.params.encoder.assign(layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(n_enc));
  ck.params.metric.assign(layers.begin() + static_cast<std::ptrdiff_t>(n_enc), layers.end());
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_file(path, serialize_checkpoint(ck)); }
inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

/// Loads and checks the parameters against an expected architecture.
inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  ck.check_compatible(expected);
  return ck;
}

}  // namespace bmn
