#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bmn/binary_io.hpp"
#include "bmn/eval.hpp"

namespace bmn {

// ------------------------------------------------------------ CSV input

/// Header-keyed table of a CSV file written by this library (no quoting).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw FormatError("csv has no column '" + name + "'", 0);
  }

  std::vector<double> numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
      char* end = nullptr;
      const double v = std::strtod(r[c].c_str(), &end);
      if (end == r[c].c_str() || *end != '\0') throw FormatError("csv column '" + name + "': bad number '" + r[c] + "'", 0);
      out.push_back(v);
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.emplace_back();
    return cells;
  };
  while (std::getline(in, line)) {
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw FormatError("csv row has " + std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(t.header.size()),
                        at);
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw FormatError("csv is empty", 0);
  return t;
}

inline CsvTable read_csv(const std::string& path) { return parse_csv(read_file(path)); }

// ------------------------------------------------------------ SVG charts

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;
  /// Step (histogram-like) rendering instead of straight segments.
  bool step = false;
  bool markers = false;
};

/// Horizontal dashed reference line.
struct Reference {
  double y = 0.0;
  std::string label;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<Reference> references;
  double width = 640;
  double height = 420;
};

namespace detail {
inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}
}  // namespace detail

/// Renders a chart; non-finite points are dropped.
inline std::string render_svg(const Chart& c) {
  constexpr double ml = 70, mr = 150, mt = 40, mb = 55;
  const double pw = c.width - ml - mr, ph = c.height - mt - mb;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : c.series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  for (const auto& r : c.references) {
    y0 = std::min(y0, r.y);
    y1 = std::max(y1, r.y);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return mt + ph - (y - y0) / (y1 - y0) * ph; };

  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(c.width) + "\" height=\"" +
                  detail::num(c.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + detail::num(ml + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
       detail::esc(c.title) + "</text>\n";
  o += "<rect x=\"" + detail::num(ml) + "\" y=\"" + detail::num(mt) + "\" width=\"" + detail::num(pw) + "\" height=\"" +
       detail::num(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    o += "<text x=\"" + detail::num(px(xv)) + "\" y=\"" + detail::num(mt + ph + 16) + "\" text-anchor=\"middle\">" +
         detail::tick(xv) + "</text>\n";
    o += "<text x=\"" + detail::num(ml - 6) + "\" y=\"" + detail::num(py(yv) + 4) + "\" text-anchor=\"end\">" +
         detail::tick(yv) + "</text>\n";
  }
  o += "<text x=\"" + detail::num(ml + pw / 2) + "\" y=\"" + detail::num(c.height - 12) + "\" text-anchor=\"middle\">" +
       detail::esc(c.x_label) + "</text>\n";
  o += "<text transform=\"translate(16," + detail::num(mt + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       detail::esc(c.y_label) + "</text>\n";

  for (const auto& r : c.references) {
    o += "<line x1=\"" + detail::num(ml) + "\" x2=\"" + detail::num(ml + pw) + "\" y1=\"" + detail::num(py(r.y)) +
         "\" y2=\"" + detail::num(py(r.y)) + "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
    if (!r.label.empty()) {
      o += "<text x=\"" + detail::num(ml + pw - 4) + "\" y=\"" + detail::num(py(r.y) - 4) +
           "\" text-anchor=\"end\" fill=\"gray\">" + detail::esc(r.label) + "</text>\n";
    }
  }

  double legend_y = mt + 10;
  for (const auto& s : c.series) {
    std::string pts;
    const std::size_t n = std::min(s.x.size(), s.y.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (s.step && !pts.empty()) pts += detail::num(px(s.x[i])) + "," + detail::num(py(s.y[i - 1])) + " ";
      pts += detail::num(px(s.x[i])) + "," + detail::num(py(s.y[i])) + " ";
    }
    o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.6\" points=\"" + pts + "\"/>\n";
    if (s.markers) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        o += "<circle cx=\"" + detail::num(px(s.x[i])) + "\" cy=\"" + detail::num(py(s.y[i])) + "\" r=\"3\" fill=\"" +
             s.color + "\"/>\n";
      }
    }
    o += "<line x1=\"" + detail::num(ml + pw + 12) + "\" x2=\"" + detail::num(ml + pw + 32) + "\" y1=\"" +
         detail::num(legend_y) + "\" y2=\"" + detail::num(legend_y) + "\" stroke=\"" + s.color +
         "\" stroke-width=\"2\"/>\n";
    o += "<text x=\"" + detail::num(ml + pw + 36) + "\" y=\"" + detail::num(legend_y + 4) + "\">" + detail::esc(s.name) +
         "</text>\n";
    legend_y += 18;
  }
  o += "</svg>\n";
  return o;
}

// ------------------------------------------------------------ report charts

inline Chart roc_chart(const CsvTable& roc) {
  Chart c{"ROC", "FAR", "GAR", {}, {}};
  c.series.push_back({"z-bar margin", roc.numbers("far"), roc.numbers("gar"), "#1f77b4", true});
  return c;
}

/// Overlaid per-class bin counts at the bin centers.
inline Chart histogram_chart(const CsvTable& h, const std::string& title) {
  const auto lo = h.numbers("lo"), hi = h.numbers("hi");
  std::vector<double> x;
  for (std::size_t i = 0; i < lo.size(); ++i) x.push_back(0.5 * (lo[i] + hi[i]));
  Chart c{title, "statistic", "count", {}, {}};
  c.series.push_back({"matching", x, h.numbers("matching"), "#2ca02c", true});
  c.series.push_back({"non-matching", x, h.numbers("non_matching"), "#d62728", true});
  return c;
}

/// Skewness and kurtosis per class against w, with Gaussian references.
inline Chart moment_sweep_chart(const CsvTable& sweep) {
  const auto w = sweep.numbers("w");
  Chart c{"Moments vs w", "w (non-matching target mean)", "moment", {}, {{0.0, "skew 0"}, {3.0, "kurt 3"}}};
  c.series.push_back({"matching skewness", w, sweep.numbers("matching_skewness"), "#2ca02c", false, true});
  c.series.push_back({"matching kurtosis", w, sweep.numbers("matching_kurtosis"), "#98df8a", false, true});
  c.series.push_back({"non-matching skewness", w, sweep.numbers("non_matching_skewness"), "#d62728", false, true});
  c.series.push_back({"non-matching kurtosis", w, sweep.numbers("non_matching_kurtosis"), "#ff9896", false, true});
  return c;
}

inline Chart accuracy_sweep_chart(const CsvTable& sweep) {
  Chart c{"Accuracy vs w", "w (non-matching target mean)", "accuracy", {}, {}};
  c.series.push_back({"accuracy", sweep.numbers("w"), sweep.numbers("accuracy"), "#1f77b4", false, true});
  return c;
}

/**
 * Writes an SVG for every known CSV present in `dir`: roc.svg,
 * histogram_z.svg, histogram_zbar.svg, moment_sweep.svg and
 * accuracy_sweep.svg. Returns the files written.
 */
inline std::vector<std::string> plot_report(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  if (!fs::is_directory(d)) throw std::runtime_error("report directory not found: " + dir);
  std::vector<std::string> written;
  auto emit = [&](const char* name, const Chart& c) {
    const auto path = (d / name).string();
    detail::write_text(path, render_svg(c));
    written.push_back(path);
  };
  if (fs::exists(d / "roc.csv")) emit("roc.svg", roc_chart(read_csv((d / "roc.csv").string())));
  if (fs::exists(d / "histogram_z.csv")) {
    emit("histogram_z.svg", histogram_chart(read_csv((d / "histogram_z.csv").string()), "Histogram of z"));
  }
  if (fs::exists(d / "histogram_zbar.csv")) {
    emit("histogram_zbar.svg", histogram_chart(read_csv((d / "histogram_zbar.csv").string()), "Histogram of z-bar"));
  }
  if (fs::exists(d / "sweep.csv")) {
    const auto sweep = read_csv((d / "sweep.csv").string());
    emit("moment_sweep.svg", moment_sweep_chart(sweep));
    emit("accuracy_sweep.svg", accuracy_sweep_chart(sweep));
  }
  if (written.empty()) throw std::runtime_error("no report CSVs found in " + dir);
  return written;
}

}  // namespace bmn
