#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmn/dataset.hpp"
#include "bmn/matrix.hpp"
#include "bmn/model.hpp"
#include "bmn/target.hpp"

namespace bmn {

class EmptyClassError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ------------------------------------------------------------ flip aggregation

/// Number of flip combinations averaged into z̄.
inline constexpr std::size_t kFlipCombinations = 4;

/// (flip x1, flip x2) for P1..P4: original, first flipped, second flipped, both.
inline constexpr std::array<std::pair<bool, bool>, kFlipCombinations> kFlipOrder{
    {{false, false}, {true, false}, {false, true}, {true, true}}};

struct AggregatedStatistic {
  std::vector<double> z_bar;
  std::array<std::vector<double>, kFlipCombinations> flips;
};

/**
 * Latent points for every flip combination of n pairs, plus their mean.
 * Row i of each returned matrix belongs to pair i.
 */
struct AggregatedBatch {
  std::array<Matrix, kFlipCombinations> flips;
  Matrix z_bar;
};

inline AggregatedBatch aggregate_batch(const ModelParams& params, const InputGeometry& geometry, const Matrix& x1,
                                       const Matrix& x2) {
  if (!x1.same_shape(x2)) throw ShapeError("aggregate: x1 and x2 batches differ in shape");
  const std::size_t n = x1.rows();
  auto flipped = [&](const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const auto f = flip(x.row_span(i), geometry);
      std::copy(f.begin(), f.end(), out.row_span(i).begin());
    }
    return out;
  };
  const Matrix x1f = flipped(x1), x2f = flipped(x2);
  // Encode each orientation once; the four pairings reuse the features.
  const Matrix f1 = encode(params, x1), f1f = encode(params, x1f);
  const Matrix f2 = encode(params, x2), f2f = encode(params, x2f);

  AggregatedBatch out;
  for (std::size_t k = 0; k < kFlipCombinations; ++k) {
    const auto [flip_a, flip_b] = kFlipOrder[k];
    out.flips[k] = metric_forward(params, concat_cols(flip_a ? f1f : f1, flip_b ? f2f : f2));
  }
  out.z_bar = Matrix(n, out.flips[0].cols());
  for (std::size_t e = 0; e < out.z_bar.size(); ++e) {
    double s = 0.0;
    for (const auto& z : out.flips) s += z[e];
    out.z_bar[e] = s / static_cast<double>(kFlipCombinations);
  }
  return out;
}

inline AggregatedStatistic aggregate(const ModelParams& params, const InputGeometry& geometry,
                                     std::span<const double> x1, std::span<const double> x2) {
  const auto batch = aggregate_batch(params, geometry, Matrix::row(x1), Matrix::row(x2));
  AggregatedStatistic s;
  s.z_bar.assign(batch.z_bar.data().begin(), batch.z_bar.data().end());
  for (std::size_t k = 0; k < kFlipCombinations; ++k) {
    s.flips[k].assign(batch.flips[k].data().begin(), batch.flips[k].data().end());
  }
  return s;
}

struct Verification {
  PairLabel label = PairLabel::NonMatching;
  double margin = 0.0;
  std::vector<double> z_bar;
};

/// Thresholded decision on the flip-aggregated statistic.
inline Verification verify(const ModelParams& params, const InputGeometry& geometry, std::span<const double> x1,
                           std::span<const double> x2, const TargetSpec& target) {
  const DecisionRule rule(target);
  auto agg = aggregate(params, geometry, x1, x2);
  Verification v;
  v.margin = rule.margin(agg.z_bar);
  v.label = rule.decide(agg.z_bar);
  v.z_bar = std::move(agg.z_bar);
  return v;
}

// ------------------------------------------------------------ ROC

struct RocPoint {
  /// Scores strictly above the threshold are accepted.
  double threshold = 0.0;
  double far = 0.0;
  double gar = 0.0;
};

struct RocCurve {
  /// Ordered by descending threshold: FAR and GAR both non-decreasing.
  std::vector<RocPoint> points;

  /// Best GAR among operating points with FAR ≤ alpha (no interpolation).
  double gar_at(double alpha) const {
    double best = 0.0;
    for (const auto& p : points)
      if (p.far <= alpha) best = std::max(best, p.gar);
    return best;
  }
};

/**
 * Empirical ROC over every distinct score, plus a -inf threshold that
 * accepts everything. Higher score means "more matching".
 */
inline RocCurve roc(std::span<const double> matching, std::span<const double> non_matching) {
  if (matching.empty() || non_matching.empty()) {
    throw EmptyClassError("roc needs scores for both classes (matching " + std::to_string(matching.size()) +
                          ", non-matching " + std::to_string(non_matching.size()) + ")");
  }
  std::vector<double> m(matching.begin(), matching.end()), n(non_matching.begin(), non_matching.end());
  std::sort(m.begin(), m.end(), std::greater<>());
  std::sort(n.begin(), n.end(), std::greater<>());
  std::vector<double> thresholds;
  thresholds.reserve(m.size() + n.size() + 1);
  std::merge(m.begin(), m.end(), n.begin(), n.end(), std::back_inserter(thresholds), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.push_back(-std::numeric_limits<double>::infinity());

  RocCurve curve;
  curve.points.reserve(thresholds.size());
  std::size_t im = 0, in = 0;
  for (double t : thresholds) {
    while (im < m.size() && m[im] > t) ++im;
    while (in < n.size() && n[in] > t) ++in;
    curve.points.push_back(
        {t, static_cast<double>(in) / static_cast<double>(n.size()), static_cast<double>(im) / static_cast<double>(m.size())});
  }
  return curve;
}

// ------------------------------------------------------------ moments

struct Moments {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  /// Raw standardized fourth moment (3 for a Gaussian).
  double kurtosis = 0.0;
  bool degenerate = false;
};

/// Population-normalized standardized moments; zero spread is flagged degenerate.
inline Moments moments_report(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("moments need at least 2 samples");
  Moments r;
  r.n = values.size();
  const double n = static_cast<double>(values.size());
  for (double v : values) r.mean += v;
  r.mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d = v - r.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  r.variance = m2;
  if (!(m2 > 0.0)) {
    r.degenerate = true;
    r.skewness = std::numeric_limits<double>::quiet_NaN();
    r.kurtosis = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.skewness = m3 / std::pow(m2, 1.5);
  r.kurtosis = m4 / (m2 * m2);
  return r;
}

// ------------------------------------------------------------ histograms

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> matching;
  std::vector<std::size_t> non_matching;

  std::size_t bins() const { return matching.size(); }
  double width() const { return (hi - lo) / static_cast<double>(bins()); }
  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : matching) s += c;
    for (auto c : non_matching) s += c;
    return s;
  }
};

/// Shared equal-width bins over the combined range of both classes.
inline Histogram histogram(std::span<const double> matching, std::span<const double> non_matching, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  Histogram h;
  h.matching.assign(bins, 0);
  h.non_matching.assign(bins, 0);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto list : {matching, non_matching})
    for (double v : list) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi <= lo) hi = lo + 1.0;
  h.lo = lo;
  h.hi = hi;
  auto bin_of = [&](double v) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    return std::min(b, bins - 1);
  };
  for (double v : matching) ++h.matching[bin_of(v)];
  for (double v : non_matching) ++h.non_matching[bin_of(v)];
  return h;
}

// ------------------------------------------------------------ full report

struct ClassMoments {
  Moments matching;
  Moments non_matching;
};

struct EvalReport {
  std::size_t n_matching = 0;
  std::size_t n_non_matching = 0;
  /// Accuracy of the rule on z̄ (four-flip aggregate).
  double accuracy = 0.0;
  /// Accuracy of the rule on the single-orientation z.
  double accuracy_single = 0.0;
  RocCurve roc;
  double gar_at_far_1e2 = 0.0;
  double gar_at_far_1e3 = 0.0;
  ClassMoments moments_z;
  ClassMoments moments_zbar;
  Histogram histogram_z;
  Histogram histogram_zbar;
  /// Per pair: scalar statistic (mean latent coordinate) and margin of z̄.
  std::vector<double> stat_z;
  std::vector<double> stat_zbar;
  std::vector<double> margins;
  std::vector<PairLabel> labels;
};

/// Mean latent coordinate; equals z itself when p = 1.
inline double scalar_statistic(std::span<const double> z) {
  double s = 0.0;
  for (double v : z) s += v;
  return s / static_cast<double>(z.size());
}

inline EvalReport evaluate(const ModelParams& params, const Dataset& ds, std::span<const PairRef> pairs,
                           const TargetSpec& target, std::size_t bins = 40) {
  EvalReport r;
  for (const auto& p : pairs) (p.label == PairLabel::Matching ? r.n_matching : r.n_non_matching)++;
  if (r.n_matching == 0 || r.n_non_matching == 0) {
    throw EmptyClassError("evaluation needs both matching and non-matching pairs (got " +
                          std::to_string(r.n_matching) + " + " + std::to_string(r.n_non_matching) + ")");
  }
  const DecisionRule rule(target);
  Matrix x1(pairs.size(), ds.input_dim()), x2(pairs.size(), ds.input_dim());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto a = ds.input(pairs[i].a), b = ds.input(pairs[i].b);
    std::copy(a.begin(), a.end(), x1.row_span(i).begin());
    std::copy(b.begin(), b.end(), x2.row_span(i).begin());
  }
  const AggregatedBatch agg = aggregate_batch(params, ds.geometry, x1, x2);

  std::vector<double> zm, zn, zbm, zbn, mm, mn;
  std::size_t correct = 0, correct_single = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto z = agg.flips[0].row_span(i);
    const auto zb = agg.z_bar.row_span(i);
    const double margin = rule.margin(zb);
    const bool match = pairs[i].label == PairLabel::Matching;
    if (rule.decide(zb) == pairs[i].label) ++correct;
    if (rule.decide(z) == pairs[i].label) ++correct_single;
    r.stat_z.push_back(scalar_statistic(z));
    r.stat_zbar.push_back(scalar_statistic(zb));
    r.margins.push_back(margin);
    r.labels.push_back(pairs[i].label);
    (match ? zm : zn).push_back(r.stat_z.back());
    (match ? zbm : zbn).push_back(r.stat_zbar.back());
    (match ? mm : mn).push_back(margin);
  }
  const double total = static_cast<double>(pairs.size());
  r.accuracy = static_cast<double>(correct) / total;
  r.accuracy_single = static_cast<double>(correct_single) / total;
  r.roc = roc(mm, mn);
  r.gar_at_far_1e2 = r.roc.gar_at(1e-2);
  r.gar_at_far_1e3 = r.roc.gar_at(1e-3);
  if (zm.size() >= 2 && zn.size() >= 2) {
    r.moments_z = {moments_report(zm), moments_report(zn)};
    r.moments_zbar = {moments_report(zbm), moments_report(zbn)};
  }
  r.histogram_z = histogram(zm, zn, bins);
  r.histogram_zbar = histogram(zbm, zbn, bins);
  return r;
}

// ------------------------------------------------------------ CSV output

namespace detail {
inline std::string fmt_double(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}
}  // namespace detail

inline std::string roc_csv(const RocCurve& c) {
  std::string s = "threshold,far,gar\n";
  for (const auto& p : c.points) {
    s += detail::fmt_double(p.threshold) + "," + detail::fmt_double(p.far) + "," + detail::fmt_double(p.gar) + "\n";
  }
  return s;
}

inline std::string histogram_csv(const Histogram& h) {
  std::string s = "bin,lo,hi,matching,non_matching\n";
  for (std::size_t b = 0; b < h.bins(); ++b) {
    const double lo = h.lo + h.width() * static_cast<double>(b);
    s += std::to_string(b) + "," + detail::fmt_double(lo) + "," + detail::fmt_double(lo + h.width()) + "," +
         std::to_string(h.matching[b]) + "," + std::to_string(h.non_matching[b]) + "\n";
  }
  return s;
}

inline std::string moments_csv(const EvalReport& r) {
  std::string s = "statistic,class,n,mean,variance,skewness,kurtosis,degenerate\n";
  auto row = [&](const char* stat, const char* cls, const Moments& m) {
    s += std::string(stat) + "," + cls + "," + std::to_string(m.n) + "," + detail::fmt_double(m.mean) + "," +
         detail::fmt_double(m.variance) + "," + detail::fmt_double(m.skewness) + "," +
         detail::fmt_double(m.kurtosis) + "," + (m.degenerate ? "1" : "0") + "\n";
  };
  row("z", "matching", r.moments_z.matching);
  row("z", "non_matching", r.moments_z.non_matching);
  row("zbar", "matching", r.moments_zbar.matching);
  row("zbar", "non_matching", r.moments_zbar.non_matching);
  return s;
}

inline std::string summary_csv(const EvalReport& r) {
  return "n_matching,n_non_matching,accuracy,accuracy_single,gar_at_far_1e-2,gar_at_far_1e-3\n" +
         std::to_string(r.n_matching) + "," + std::to_string(r.n_non_matching) + "," +
         detail::fmt_double(r.accuracy) + "," + detail::fmt_double(r.accuracy_single) + "," +
         detail::fmt_double(r.gar_at_far_1e2) + "," + detail::fmt_double(r.gar_at_far_1e3) + "\n";
}

inline std::string scores_csv(const EvalReport& r) {
  std::string s = "pair,label,z,zbar,margin\n";
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    s += std::to_string(i) + "," + (r.labels[i] == PairLabel::Matching ? "1" : "0") + "," +
         detail::fmt_double(r.stat_z[i]) + "," + detail::fmt_double(r.stat_zbar[i]) + "," +
         detail::fmt_double(r.margins[i]) + "\n";
  }
  return s;
}

/// roc.csv, moments.csv, histogram_z.csv, histogram_zbar.csv, summary.csv, scores.csv
inline void write_report(const std::string& dir, const EvalReport& r) {
  const std::filesystem::path d(dir);
  std::filesystem::create_directories(d);
  detail::write_text(d / "roc.csv", roc_csv(r.roc));
  detail::write_text(d / "moments.csv", moments_csv(r));
  detail::write_text(d / "histogram_z.csv", histogram_csv(r.histogram_z));
  detail::write_text(d / "histogram_zbar.csv", histogram_csv(r.histogram_zbar));
  detail::write_text(d / "summary.csv", summary_csv(r));
  detail::write_text(d / "scores.csv", scores_csv(r));
}

}  // namespace bmn
