#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bmn/binary_io.hpp"
#include "bmn/matrix.hpp"
#include "bmn/target.hpp"

namespace bmn {

enum class Modality : std::uint8_t { Vector = 0, Image = 1 };

/// How a flattened input is laid out; decides what a horizontal flip means.
struct InputGeometry {
  Modality modality = Modality::Vector;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::size_t input_dim = 0;

  std::size_t channels() const {
    return modality == Modality::Image && width && height ? input_dim / (std::size_t{width} * height) : 1;
  }
  friend bool operator==(const InputGeometry&, const InputGeometry&) = default;
};

/**
 * Horizontal flip.
 *
 * Image inputs are stored row-major as (y, x, channel); column x maps to
 * width - x - 1. Vector inputs have no spatial axis, so the whole
 * coordinate order is reversed instead. Both are involutions.
 */
inline std::vector<double> flip(std::span<const double> x, const InputGeometry& g) {
  if (x.size() != g.input_dim) {
    throw ShapeError("flip: input has " + std::to_string(x.size()) + " entries, geometry expects " +
                     std::to_string(g.input_dim));
  }
  std::vector<double> out(x.size());
  if (g.modality == Modality::Vector) {
    std::reverse_copy(x.begin(), x.end(), out.begin());
    return out;
  }
  const std::size_t w = g.width, h = g.height, c = g.channels();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t k = 0; k < c; ++k) out[(y * w + (w - col - 1)) * c + k] = x[(y * w + col) * c + k];
  return out;
}

struct DatasetItem {
  std::uint32_t identity = 0;
  std::vector<float> values;
  friend bool operator==(const DatasetItem&, const DatasetItem&) = default;
};

struct Dataset {
  InputGeometry geometry;
  std::vector<DatasetItem> items;
  /// Set when every input lies in [-1, 1].
  bool normalized = true;

  std::size_t size() const { return items.size(); }
  std::size_t input_dim() const { return geometry.input_dim; }

  std::size_t identity_count() const {
    std::uint32_t max_id = 0;
    for (const auto& it : items) max_id = std::max(max_id, it.identity);
    return items.empty() ? 0 : max_id + 1;
  }

  /// Item indices grouped by identity id.
  std::vector<std::vector<std::size_t>> by_identity() const {
    std::vector<std::vector<std::size_t>> groups(identity_count());
    for (std::size_t i = 0; i < items.size(); ++i) groups[items[i].identity].push_back(i);
    return groups;
  }

  std::vector<double> input(std::size_t index) const {
    if (index >= items.size()) {
      throw std::out_of_range("item index " + std::to_string(index) + " out of range (" +
                              std::to_string(items.size()) + " items)");
    }
    const auto& v = items[index].values;
    return std::vector<double>(v.begin(), v.end());
  }

  bool compute_normalized() const {
    for (const auto& it : items)
      for (float v : it.values)
        if (!(v >= -1.0f && v <= 1.0f)) return false;
    return true;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ------------------------------------------------------------- synthetic data

struct SyntheticSpec {
  std::size_t n_identities = 50;
  std::size_t images_per_identity = 20;
  std::size_t input_dim = 16;
  double sigma_within = 0.1;
  double sigma_between = 1.0;
  std::uint64_t seed = 7;

  void validate() const {
    if (n_identities < 1 || images_per_identity < 1 || input_dim < 1) {
      throw ConfigError("synthetic spec counts must all be >= 1");
    }
    if (!(sigma_within >= 0.0) || !(sigma_between > 0.0)) throw ConfigError("synthetic sigmas must be non-negative");
    if (!(sigma_within < sigma_between)) {
      throw ConfigError("synthetic spec needs sigma_within < sigma_between for separable identities");
    }
  }
};

/**
 * Identity clusters: centers ~ N(0, σ_b²·I), items = center + N(0, σ_w²·I),
 * then divided by the global max-abs so every value lies in [-1, 1].
 */
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> between(0.0, spec.sigma_between);
  std::normal_distribution<double> within(0.0, 1.0);

  std::vector<std::vector<double>> raw;
  std::vector<std::uint32_t> ids;
  for (std::size_t id = 0; id < spec.n_identities; ++id) {
    std::vector<double> center(spec.input_dim);
    for (double& c : center) c = between(rng);
    for (std::size_t k = 0; k < spec.images_per_identity; ++k) {
      std::vector<double> x = center;
      for (double& v : x) v += spec.sigma_within * within(rng);
      raw.push_back(std::move(x));
      ids.push_back(static_cast<std::uint32_t>(id));
    }
  }
  double max_abs = 0.0;
  for (const auto& x : raw)
    for (double v : x) max_abs = std::max(max_abs, std::abs(v));
  const double scale = max_abs > 0.0 ? 1.0 / max_abs : 1.0;

  Dataset ds;
  ds.geometry = {Modality::Vector, 0, 0, spec.input_dim};
  ds.items.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    DatasetItem item{ids[i], std::vector<float>(spec.input_dim)};
    for (std::size_t j = 0; j < spec.input_dim; ++j) {
      item.values[j] = std::clamp(static_cast<float>(raw[i][j] * scale), -1.0f, 1.0f);
    }
    ds.items.push_back(std::move(item));
  }
  ds.normalized = true;
  return ds;
}

// ------------------------------------------------------------- binary format

inline constexpr std::string_view kDatasetMagic = "BMNDS1";

inline std::string serialize_dataset(const Dataset& ds) {
  ByteWriter w;
  w.raw(kDatasetMagic);
  w.u8(static_cast<std::uint8_t>(ds.geometry.modality));
  w.u32(ds.geometry.modality == Modality::Image ? ds.geometry.width : 0);
  w.u32(ds.geometry.modality == Modality::Image ? ds.geometry.height : 0);
  w.u32(static_cast<std::uint32_t>(ds.geometry.input_dim));
  w.u32(static_cast<std::uint32_t>(ds.items.size()));
  for (const auto& it : ds.items) {
    if (it.values.size() != ds.geometry.input_dim) {
      throw ShapeError("dataset item has " + std::to_string(it.values.size()) + " values, expected " +
                       std::to_string(ds.geometry.input_dim));
    }
    w.u32(it.identity);
    for (float v : it.values) w.f32(v);
  }
  return w.bytes();
}

inline Dataset parse_dataset(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kDatasetMagic.size() || r.raw(kDatasetMagic.size(), "magic") != kDatasetMagic) {
    throw FormatError("bad dataset magic (expected BMNDS1)", 0);
  }
  Dataset ds;
  const std::size_t modality_at = r.offset();
  const std::uint8_t tag = r.u8("modality tag");
  if (tag > 1) throw FormatError("unknown modality tag " + std::to_string(tag), modality_at);
  ds.geometry.modality = static_cast<Modality>(tag);
  ds.geometry.width = r.u32("width");
  ds.geometry.height = r.u32("height");
  const std::size_t dim_at = r.offset();
  ds.geometry.input_dim = r.u32("input_dim");
  if (ds.geometry.modality == Modality::Image) {
    const std::size_t plane = std::size_t{ds.geometry.width} * ds.geometry.height;
    if (plane == 0 || ds.geometry.input_dim % plane != 0 || ds.geometry.input_dim == 0) {
      throw FormatError("image input_dim " + std::to_string(ds.geometry.input_dim) + " is not a multiple of " +
                            std::to_string(ds.geometry.width) + "x" + std::to_string(ds.geometry.height),
                        dim_at);
    }
  } else if (ds.geometry.width != 0 || ds.geometry.height != 0) {
    throw FormatError("vector modality must store zero width/height", modality_at);
  }
  const std::uint32_t count = r.u32("item count");
  const std::size_t item_bytes = 4 + 4 * ds.geometry.input_dim;
  ds.items.reserve(std::min<std::size_t>(count, r.remaining() / std::max<std::size_t>(item_bytes, 1)));
  std::vector<std::size_t> item_offsets;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (r.remaining() < item_bytes) {
      throw FormatError("truncated dataset: item " + std::to_string(i) + " needs " + std::to_string(item_bytes) +
                            " bytes, " + std::to_string(r.remaining()) + " available",
                        r.offset());
    }
    item_offsets.push_back(r.offset());
    DatasetItem item;
    item.identity = r.u32("identity");
    item.values.resize(ds.geometry.input_dim);
    for (float& v : item.values) v = r.f32("value");
    ds.items.push_back(std::move(item));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last item", r.offset());

  // ids must be dense from 0
  std::set<std::uint32_t> seen;
  for (const auto& it : ds.items) seen.insert(it.identity);
  std::uint32_t expected = 0;
  for (std::uint32_t id : seen) {
    if (id != expected) {
      for (std::size_t i = 0; i < ds.items.size(); ++i) {
        if (ds.items[i].identity == id) {
          throw FormatError("identity ids are not dense: id " + std::to_string(expected) + " missing before " +
                                std::to_string(id),
                            item_offsets[i]);
        }
      }
    }
    ++expected;
  }
  ds.normalized = ds.compute_normalized();
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) { write_file(path, serialize_dataset(ds)); }
inline Dataset read_dataset(const std::string& path) { return parse_dataset(read_file(path)); }

// ------------------------------------------------------------- pairs files

/// A labeled pair of dataset item indices.
struct PairRef {
  std::size_t a = 0;
  std::size_t b = 0;
  PairLabel label = PairLabel::NonMatching;
  friend bool operator==(const PairRef&, const PairRef&) = default;
};

/// Text format, one pair per line: "idx1 idx2 label" with label 1 = matching, 0 = non-matching.
/// Blank lines and lines starting with '#' are skipped.
inline std::vector<PairRef> parse_pairs(std::string_view text, const Dataset& ds) {
  std::vector<PairRef> pairs;
  std::size_t line_start = 0, line_no = 0;
  while (line_start < text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    ++line_no;
    const std::string line(text.substr(line_start, line_end - line_start));
    const std::size_t at = line_start;
    line_start = line_end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;

    std::istringstream ss(line);
    long long a = -1, b = -1, label = -1;
    std::string extra;
    if (!(ss >> a >> b >> label) || (ss >> extra)) {
      throw FormatError("pairs line " + std::to_string(line_no) + ": expected 'idx1 idx2 label'", at);
    }
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= ds.size() || static_cast<std::size_t>(b) >= ds.size()) {
      throw FormatError("pairs line " + std::to_string(line_no) + ": item index out of range", at);
    }
    if (a == b) throw FormatError("pairs line " + std::to_string(line_no) + ": self-pair", at);
    if (label != 0 && label != 1) {
      throw FormatError("pairs line " + std::to_string(line_no) + ": label must be 0 or 1", at);
    }
    const PairLabel l = label == 1 ? PairLabel::Matching : PairLabel::NonMatching;
    const bool same = ds.items[a].identity == ds.items[b].identity;
    if (same != (l == PairLabel::Matching)) {
      throw FormatError("pairs line " + std::to_string(line_no) + ": label disagrees with identity ids", at);
    }
    pairs.push_back({static_cast<std::size_t>(a), static_cast<std::size_t>(b), l});
  }
  return pairs;
}

inline std::vector<PairRef> read_pairs(const std::string& path, const Dataset& ds) {
  return parse_pairs(read_file(path), ds);
}

inline std::string format_pairs(std::span<const PairRef> pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += std::to_string(p.a) + " " + std::to_string(p.b) + " " + (p.label == PairLabel::Matching ? "1" : "0") + "\n";
  }
  return out;
}

/**
 * Draws `n_matching` + `n_non_matching` distinct unordered pairs among the
 * items whose identity is in `identities`. Throws if not enough exist.
 */
inline std::vector<PairRef> sample_pairs(const Dataset& ds, std::span<const std::uint32_t> identities,
                                         std::size_t n_matching, std::size_t n_non_matching, std::uint64_t seed) {
  const std::set<std::uint32_t> allowed(identities.begin(), identities.end());
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (allowed.count(ds.items[i].identity)) pool.push_back(i);

  std::vector<PairRef> matching, non_matching;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (std::size_t j = i + 1; j < pool.size(); ++j) {
      const bool same = ds.items[pool[i]].identity == ds.items[pool[j]].identity;
      (same ? matching : non_matching)
          .push_back({pool[i], pool[j], same ? PairLabel::Matching : PairLabel::NonMatching});
    }
  }
  if (matching.size() < n_matching || non_matching.size() < n_non_matching) {
    throw ConfigError("not enough pairs: requested " + std::to_string(n_matching) + "+" +
                      std::to_string(n_non_matching) + ", available " + std::to_string(matching.size()) + "+" +
                      std::to_string(non_matching.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(matching.begin(), matching.end(), rng);
  std::shuffle(non_matching.begin(), non_matching.end(), rng);
  std::vector<PairRef> out(matching.begin(), matching.begin() + static_cast<std::ptrdiff_t>(n_matching));
  out.insert(out.end(), non_matching.begin(), non_matching.begin() + static_cast<std::ptrdiff_t>(n_non_matching));
  return out;
}

}  // namespace bmn
