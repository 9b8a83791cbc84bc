#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bmn/dataset.hpp"
#include "bmn/log.hpp"
#include "bmn/matrix.hpp"
#include "bmn/model.hpp"
#include "bmn/target.hpp"

namespace bmn {

/**
 * A labeled candidate pair: two dataset items, each optionally flipped.
 * Inputs are materialized from the dataset on demand.
 */
struct SamplePair {
  std::size_t item1 = 0;
  std::size_t item2 = 0;
  std::uint32_t id1 = 0;
  std::uint32_t id2 = 0;
  bool flip1 = false;
  bool flip2 = false;
  PairLabel label = PairLabel::NonMatching;

  std::vector<double> x1(const Dataset& ds) const {
    auto v = ds.input(item1);
    return flip1 ? flip(v, ds.geometry) : v;
  }
  std::vector<double> x2(const Dataset& ds) const {
    auto v = ds.input(item2);
    return flip2 ? flip(v, ds.geometry) : v;
  }

  friend bool operator==(const SamplePair&, const SamplePair&) = default;
};

/// b/2 matching + b/2 non-matching difficult pairs.
struct PairBatch {
  std::vector<SamplePair> matching;
  std::vector<SamplePair> non_matching;
  std::size_t b = 0;
};

/// ‖z − mu·1‖_∞ against the target of the pair's own class.
inline double target_deviation(std::span<const double> z, PairLabel label, const TargetSpec& target) {
  if (z.size() != target.p) {
    throw ShapeError("z has " + std::to_string(z.size()) + " entries, p=" + std::to_string(target.p));
  }
  const double mu = target.side(label).mu;
  double dev = 0.0;
  for (double v : z) dev = std::max(dev, std::abs(v - mu));
  return dev;
}

/// Deviation of at least 2σ of the pair's own class.
inline bool is_difficult(std::span<const double> z, PairLabel label, const TargetSpec& target) {
  return target_deviation(z, label, target) >= 2.0 * target.side(label).sigma;
}

/// Ordered candidate list consumed front to back.
class CandidateStream {
 public:
  CandidateStream() = default;
  explicit CandidateStream(std::vector<SamplePair> pairs) : pairs_(std::move(pairs)) {}

  bool exhausted() const { return cursor_ >= pairs_.size(); }
  std::size_t remaining() const { return pairs_.size() - cursor_; }
  std::size_t consumed() const { return cursor_; }
  std::size_t size() const { return pairs_.size(); }

  /// Up to n upcoming candidates without consuming them.
  std::span<const SamplePair> peek(std::size_t n) const {
    return std::span<const SamplePair>(pairs_).subspan(cursor_, std::min(n, remaining()));
  }
  void advance(std::size_t n) { cursor_ = std::min(pairs_.size(), cursor_ + n); }
  void rewind_to(std::size_t position) { cursor_ = std::min(position, cursor_); }

  const std::vector<SamplePair>& pairs() const { return pairs_; }

 private:
  std::vector<SamplePair> pairs_;
  std::size_t cursor_ = 0;
};

struct EpochConfig {
  /// Identities drawn per epoch (all eligible ones if fewer exist).
  std::size_t identities = 50;
  std::size_t min_images = 5;
  bool flip_augment = true;
  /// Non-matching candidates per matching candidate; 0 keeps every cross pair.
  double negatives_per_positive = 1.0;

  friend bool operator==(const EpochConfig&, const EpochConfig&) = default;
};

/**
 * Builds one epoch's candidate stream.
 *
 * Identities with at least `min_images` items (and listed in `allowed`, if
 * non-empty) are eligible; a uniform subset is drawn. Matching candidates
 * are every unordered within-identity pair, non-matching candidates are
 * cross-identity pairs. Each pair's orientation is randomized, flipped
 * copies are appended when enabled, and the result is shuffled.
 */
inline CandidateStream sample_epoch(const Dataset& ds, const EpochConfig& cfg, std::uint64_t seed,
                                    std::span<const std::uint32_t> allowed = {}) {
  std::mt19937_64 rng(seed);
  const auto groups = ds.by_identity();
  std::vector<bool> allowed_mask(groups.size(), allowed.empty());
  for (std::uint32_t id : allowed)
    if (id < allowed_mask.size()) allowed_mask[id] = true;

  std::vector<std::uint32_t> eligible;
  for (std::uint32_t id = 0; id < groups.size(); ++id) {
    if (!allowed_mask[id]) continue;
    if (groups[id].size() < cfg.min_images) {
      log::warn("identity {} has {} images (< {}); excluded from the epoch", id, groups[id].size(), cfg.min_images);
      continue;
    }
    eligible.push_back(id);
  }
  std::shuffle(eligible.begin(), eligible.end(), rng);
  if (eligible.size() > cfg.identities) eligible.resize(cfg.identities);
  std::sort(eligible.begin(), eligible.end());

  std::vector<SamplePair> matching, non_matching;
  for (std::uint32_t id : eligible) {
    const auto& g = groups[id];
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = i + 1; j < g.size(); ++j) matching.push_back({g[i], g[j], id, id, false, false, PairLabel::Matching});
  }
  for (std::size_t a = 0; a < eligible.size(); ++a) {
    for (std::size_t c = a + 1; c < eligible.size(); ++c) {
      for (std::size_t i : groups[eligible[a]])
        for (std::size_t j : groups[eligible[c]])
          non_matching.push_back({i, j, eligible[a], eligible[c], false, false, PairLabel::NonMatching});
    }
  }
  if (cfg.negatives_per_positive > 0.0) {
    const auto keep = static_cast<std::size_t>(std::llround(cfg.negatives_per_positive * static_cast<double>(matching.size())));
    if (keep < non_matching.size()) {
      // partial Fisher-Yates: the first `keep` entries become a uniform sample
      for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, non_matching.size() - 1);
        std::swap(non_matching[i], non_matching[pick(rng)]);
      }
      non_matching.resize(keep);
    }
  }

  std::vector<SamplePair> all;
  all.reserve((matching.size() + non_matching.size()) * (cfg.flip_augment ? 4 : 1));
  std::bernoulli_distribution coin(0.5);
  for (auto* list : {&matching, &non_matching}) {
    for (SamplePair p : *list) {
      if (coin(rng)) {
        std::swap(p.item1, p.item2);
        std::swap(p.id1, p.id2);
      }
      all.push_back(p);
      if (cfg.flip_augment) {
        for (int state = 1; state < 4; ++state) {
          SamplePair q = p;
          q.flip1 = (state & 1) != 0;
          q.flip2 = (state & 2) != 0;
          all.push_back(q);
        }
      }
    }
  }
  std::shuffle(all.begin(), all.end(), rng);
  return CandidateStream(std::move(all));
}

struct FillStats {
  std::size_t seen_m = 0;
  std::size_t seen_n = 0;
  std::size_t difficult_m = 0;
  std::size_t difficult_n = 0;

  double difficult_fraction_m() const { return seen_m ? static_cast<double>(difficult_m) / seen_m : 0.0; }
  double difficult_fraction_n() const { return seen_n ? static_cast<double>(difficult_n) / seen_n : 0.0; }
};

struct FillResult {
  /// Empty when the collection was discarded.
  std::optional<PairBatch> batch;
  FillStats stats;
  bool discarded() const { return !batch.has_value(); }
};

/// Input rows (x1, x2) for a run of candidates, flips applied.
inline std::pair<Matrix, Matrix> pair_inputs(const Dataset& ds, std::span<const SamplePair> pairs) {
  Matrix x1(pairs.size(), ds.input_dim()), x2(pairs.size(), ds.input_dim());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto a = pairs[i].x1(ds), b = pairs[i].x2(ds);
    std::copy(a.begin(), a.end(), x1.row_span(i).begin());
    std::copy(b.begin(), b.end(), x2.row_span(i).begin());
  }
  return {std::move(x1), std::move(x2)};
}

/// Eval-mode latent points for a run of candidates.
inline Matrix score_pairs(const ModelParams& params, const Dataset& ds, std::span<const SamplePair> pairs) {
  const auto [x1, x2] = pair_inputs(ds, pairs);
  return forward_pairs(params, x1, x2);
}

/**
 * Pulls candidates until b/2 difficult matching and b/2 difficult
 * non-matching pairs are collected. If the stream runs out, or `window`
 * candidates (0 = unbounded) are consumed first, the collection is
 * discarded. Difficulty is judged with the eval-mode forward of `params`.
 * With `select_difficult` off every candidate is accepted in stream order
 * (the batch stays balanced); stats still report true difficulty.
 */
inline FillResult fill_batch(CandidateStream& stream, const ModelParams& params, const Dataset& ds,
                             const TargetSpec& target, std::size_t b, std::size_t window = 0,
                             bool select_difficult = true) {
  if (b < 4 || b % 2 != 0) throw ConfigError("batch size b must be even and >= 4, got " + std::to_string(b));
  constexpr std::size_t kChunk = 64;
  const std::size_t half = b / 2;
  FillResult result;
  PairBatch batch;
  batch.b = b;
  std::size_t used = 0;

  while (!stream.exhausted() && (window == 0 || used < window)) {
    std::size_t take = kChunk;
    if (window) take = std::min(take, window - used);
    const auto chunk = stream.peek(take);
    const Matrix z = score_pairs(params, ds, chunk);
    std::size_t consumed = 0;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      ++consumed;
      const SamplePair& cand = chunk[i];
      const bool match = cand.label == PairLabel::Matching;
      (match ? result.stats.seen_m : result.stats.seen_n)++;
      const bool hard = is_difficult(z.row_span(i), cand.label, target);
      if (hard) (match ? result.stats.difficult_m : result.stats.difficult_n)++;
      if (select_difficult && !hard) continue;
      auto& bucket = match ? batch.matching : batch.non_matching;
      if (bucket.size() < half) bucket.push_back(cand);
      if (batch.matching.size() == half && batch.non_matching.size() == half) {
        stream.advance(consumed);
        result.batch = std::move(batch);
        return result;
      }
    }
    stream.advance(consumed);
    used += consumed;
  }
  return result;
}

/**
 * Scores the next `window` candidates and keeps the b/2 matching and b/2
 * non-matching ones with the largest target deviation (stream order breaks
 * ties). Consumes the whole window. Discards only when a class has fewer
 * than b/2 candidates in it.
 */
inline FillResult fill_batch_hardest(CandidateStream& stream, const ModelParams& params, const Dataset& ds,
                                     const TargetSpec& target, std::size_t b, std::size_t window) {
  if (b < 4 || b % 2 != 0) throw ConfigError("batch size b must be even and >= 4, got " + std::to_string(b));
  if (window == 0) throw ConfigError("fill_batch_hardest needs a window >= 1");
  const std::size_t half = b / 2;
  FillResult result;
  const auto chunk = stream.peek(window);
  stream.advance(chunk.size());
  if (chunk.empty()) return result;

  const Matrix z = score_pairs(params, ds, chunk);
  struct Scored {
    double dev;
    std::size_t index;
  };
  std::vector<Scored> m, n;
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    const bool match = chunk[i].label == PairLabel::Matching;
    const double dev = target_deviation(z.row_span(i), chunk[i].label, target);
    (match ? result.stats.seen_m : result.stats.seen_n)++;
    if (dev >= 2.0 * target.side(chunk[i].label).sigma) (match ? result.stats.difficult_m : result.stats.difficult_n)++;
    (match ? m : n).push_back({dev, i});
  }
  if (m.size() < half || n.size() < half) return result;
  PairBatch batch;
  batch.b = b;
  for (auto* list : {&m, &n}) {
    std::stable_sort(list->begin(), list->end(), [](const Scored& a, const Scored& c) { return a.dev > c.dev; });
    auto& bucket = list == &m ? batch.matching : batch.non_matching;
    for (std::size_t k = 0; k < half; ++k) bucket.push_back(chunk[(*list)[k].index]);
  }
  result.batch = std::move(batch);
  return result;
}

}  // namespace bmn
