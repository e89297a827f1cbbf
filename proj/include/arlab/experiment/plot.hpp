// SPDX-License-Identifier: Apache-2.0
//
// Minimal SVG charts. Input tables:
//
//   loss-curve   series,step,loss
//   drift-curve  series,position,drift
//   sweep-curve  metrics CSV; x = alpha, y = value averaged over seeds,
//                one series per (metric, mode, norm)
//   heatmap      row,col,value
#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "arlab/experiment/csv.hpp"

namespace arlab {

enum class PlotKind { loss_curve, sweep_curve, drift_curve, heatmap };

inline PlotKind plot_kind_from_string(const std::string& s) {
  if (s == "loss-curve") return PlotKind::loss_curve;
  if (s == "sweep-curve") return PlotKind::sweep_curve;
  if (s == "drift-curve") return PlotKind::drift_curve;
  if (s == "heatmap") return PlotKind::heatmap;
  throw ContractError("unknown plot kind " + s);
}

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // sorted by x
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};
  return colors[i % 8];
}

constexpr double kW = 640, kH = 400, kL = 64, kR = 170, kT = 36, kB = 48;

inline std::string header(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kW) + "\" height=\"" + fmt(kH) +
         "\" viewBox=\"0 0 " + fmt(kW) + " " + fmt(kH) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" +
         "<text x=\"" + fmt(kW / 2) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         escape(title) + "</text>\n";
}

inline std::vector<Series> group_xy(const CsvTable& t, const std::string& sc, const std::string& xc,
                                    const std::string& yc) {
  const int s = t.column(sc), x = t.column(xc), y = t.column(yc);
  std::map<std::string, std::vector<std::pair<double, double>>> by;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::string where = "row " + std::to_string(i + 2);
    if (!by.count(r[s])) order.push_back(r[s]);
    by[r[s]].emplace_back(parse_number(r[x], where), parse_number(r[y], where));
  }
  std::vector<Series> out;
  for (const auto& name : order) {
    auto pts = by[name];
    std::stable_sort(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.first < b.first; });
    out.push_back({name, std::move(pts)});
  }
  return out;
}

inline std::vector<Series> sweep_series(const std::string& csv_text, const std::string& metric) {
  auto rows = parse_metrics(csv_text);
  std::map<std::string, std::map<double, std::pair<double, int>>> acc;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (!metric.empty() && r.metric != metric) continue;
    const std::string key = r.metric + " " + r.mode + (r.norm ? " +norm" : "");
    if (!acc.count(key)) order.push_back(key);
    auto& cell = acc[key][r.alpha];
    cell.first += r.value;
    cell.second += 1;
  }
  std::vector<Series> out;
  for (const auto& key : order) {
    Series s{key, {}};
    for (const auto& [a, c] : acc[key]) s.points.emplace_back(a, c.first / c.second);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

/// Line chart: one polyline per series, axes with min/max ticks, legend.
inline std::string render_curves(const std::vector<Series>& series, const std::string& title, const std::string& xlabel,
                                 const std::string& ylabel) {
  using namespace detail;
  if (series.empty()) throw InputError("nothing to plot");
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x1 <= x0) x1 = x0 + 1.0;
  if (y1 <= y0) y1 = y0 + 1.0;
  const double pw = kW - kL - kR, ph = kH - kT - kB;
  auto px = [&](double x) { return kL + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kT + ph - (y - y0) / (y1 - y0) * ph; };

  std::string svg = header(title);
  svg += "<g stroke=\"black\" stroke-width=\"1\">\n";
  svg += "<line x1=\"" + fmt(kL) + "\" y1=\"" + fmt(kT + ph) + "\" x2=\"" + fmt(kL + pw) + "\" y2=\"" + fmt(kT + ph) +
         "\"/>\n";
  svg += "<line x1=\"" + fmt(kL) + "\" y1=\"" + fmt(kT) + "\" x2=\"" + fmt(kL) + "\" y2=\"" + fmt(kT + ph) + "\"/>\n";
  svg += "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<text x=\"" + fmt(kL) + "\" y=\"" + fmt(kT + ph + 16) + "\" text-anchor=\"middle\">" + tick(x0) + "</text>\n";
  svg += "<text x=\"" + fmt(kL + pw) + "\" y=\"" + fmt(kT + ph + 16) + "\" text-anchor=\"middle\">" + tick(x1) +
         "</text>\n";
  svg += "<text x=\"" + fmt(kL - 6) + "\" y=\"" + fmt(kT + ph) + "\" text-anchor=\"end\">" + tick(y0) + "</text>\n";
  svg += "<text x=\"" + fmt(kL - 6) + "\" y=\"" + fmt(kT + 4) + "\" text-anchor=\"end\">" + tick(y1) + "</text>\n";
  svg += "<text x=\"" + fmt(kL + pw / 2) + "\" y=\"" + fmt(kH - 12) + "\" text-anchor=\"middle\">" + escape(xlabel) +
         "</text>\n";
  svg += "<text x=\"16\" y=\"" + fmt(kT + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fmt(kT + ph / 2) + ")\">" + escape(ylabel) + "</text>\n</g>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::string pts;
    for (auto [x, y] : series[i].points) pts += (pts.empty() ? "" : " ") + fmt(px(x)) + "," + fmt(py(y));
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(palette(i)) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
  }
  svg += "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double y = kT + 10 + 16.0 * static_cast<double>(i);
    svg += "<rect x=\"" + fmt(kW - kR + 12) + "\" y=\"" + fmt(y - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
           palette(i) + "\"/>\n";
    svg += "<text x=\"" + fmt(kW - kR + 28) + "\" y=\"" + fmt(y + 1) + "\">" + escape(series[i].name) + "</text>\n";
  }
  svg += "</g>\n</svg>\n";
  return svg;
}

/// One rectangle per (row, col) cell, grey-scale by value, with a min/max
/// legend.
inline std::string render_heatmap(const CsvTable& t, const std::string& title) {
  using namespace detail;
  const int rc = t.column("row"), cc = t.column("col"), vc = t.column("value");
  if (t.rows.empty()) throw InputError("heatmap CSV has no cells");
  struct Cell {
    int r, c;
    double v;
  };
  std::vector<Cell> cells;
  int rows = 0, cols = 0;
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string where = "row " + std::to_string(i + 2);
    const int r = static_cast<int>(parse_number(t.rows[i][rc], where));
    const int c = static_cast<int>(parse_number(t.rows[i][cc], where));
    if (r < 0 || c < 0) throw InputError(where + ": negative cell index");
    const double v = parse_number(t.rows[i][vc], where);
    cells.push_back({r, c, v});
    rows = std::max(rows, r + 1), cols = std::max(cols, c + 1);
    lo = std::min(lo, v), hi = std::max(hi, v);
  }
  const double size = std::min((kW - kL - kR) / cols, (kH - kT - kB) / rows);
  std::string svg = header(title);
  for (const auto& cell : cells) {
    const double u = hi > lo ? (cell.v - lo) / (hi - lo) : 0.5;
    const int g = static_cast<int>(std::lround(255 * (1.0 - u)));
    char col[16];
    std::snprintf(col, sizeof(col), "#%02x%02x%02x", g, g, g);
    svg += "<rect x=\"" + fmt(kL + cell.c * size) + "\" y=\"" + fmt(kT + cell.r * size) + "\" width=\"" + fmt(size) +
           "\" height=\"" + fmt(size) + "\" fill=\"" + col + "\" stroke=\"#888888\"/>\n";
  }
  svg += "<g font-family=\"sans-serif\" font-size=\"11\">\n<text x=\"" + fmt(kW - kR + 12) + "\" y=\"" + fmt(kT + 10) +
         "\">max " + tick(hi) + " (black)</text>\n<text x=\"" + fmt(kW - kR + 12) + "\" y=\"" + fmt(kT + 26) +
         "\">min " + tick(lo) + " (white)</text>\n</g>\n</svg>\n";
  return svg;
}

/// Renders `csv_text` as the requested chart. `metric` filters sweep-curve
/// input (empty keeps every metric).
inline std::string render_plot(const std::string& csv_text, PlotKind kind, const std::string& metric = "") {
  auto table = parse_csv(csv_text);
  if (table.rows.empty()) throw InputError("CSV has a header but no rows");
  switch (kind) {
    case PlotKind::loss_curve:
      return render_curves(detail::group_xy(table, "series", "step", "loss"), "training loss", "step", "loss");
    case PlotKind::drift_curve:
      return render_curves(detail::group_xy(table, "series", "position", "drift"), "exposure drift", "position",
                           "drift");
    case PlotKind::sweep_curve: {
      auto s = detail::sweep_series(csv_text, metric);
      if (s.empty()) throw InputError("no rows for metric " + metric);
      return render_curves(s, metric.empty() ? "noise sweep" : metric + " vs alpha", "alpha", "value");
    }
    case PlotKind::heatmap:
      return render_heatmap(table, "token map");
  }
  throw ContractError("unhandled plot kind");
}

inline void emit_plot(const std::string& csv_path, PlotKind kind, const std::string& svg_path,
                      const std::string& metric = "") {
  write_text(svg_path, render_plot(read_text(csv_path), kind, metric));
}

}  // namespace arlab
