// SPDX-License-Identifier: Apache-2.0
//
// Plain comma-separated tables. Fields never contain commas or quotes (run
// ids and metric names are validated), so no quoting is needed.
#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "arlab/core/error.hpp"

namespace arlab {

inline constexpr const char* kMetricsHeader = "run_id,profile,mode,alpha,norm,seed,metric,value";

/// Shortest text that reads back to the same double.
inline std::string format_number(double v) {
  ARLAB_REQUIRE(std::isfinite(v), "cannot write a non-finite value");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_number(const std::string& s, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InputError(where + ": not a number: " + s);
  return v;
}

struct MetricsRow {
  std::string run_id;
  std::string profile;
  std::string mode;
  double alpha = 0.0;
  bool norm = false;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw InputError("CSV lacks column " + name);
  }
};

inline CsvTable parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  CsvTable t;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (t.header.empty()) {
      t.header = split_fields(line);
      continue;
    }
    auto f = split_fields(line);
    if (f.size() != t.header.size())
      throw InputError("CSV row " + std::to_string(t.rows.size() + 2) + " has " + std::to_string(f.size()) +
                       " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(f));
  }
  if (t.header.empty()) throw InputError("CSV is empty");
  return t;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += r.run_id + "," + r.profile + "," + r.mode + "," + format_number(r.alpha) + "," + (r.norm ? "1" : "0") +
           "," + std::to_string(r.seed) + "," + r.metric + "," + format_number(r.value) + "\n";
  }
  return out;
}

inline std::vector<MetricsRow> parse_metrics(const std::string& text) {
  auto t = parse_csv(text);
  if (t.header != split_fields(kMetricsHeader)) throw InputError("not a metrics CSV: unexpected header");
  std::vector<MetricsRow> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& f = t.rows[i];
    const std::string where = "metrics row " + std::to_string(i + 2);
    MetricsRow r;
    r.run_id = f[0];
    r.profile = f[1];
    r.mode = f[2];
    r.alpha = parse_number(f[3], where);
    if (f[4] != "0" && f[4] != "1") throw InputError(where + ": norm must be 0 or 1");
    r.norm = f[4] == "1";
    auto res = std::from_chars(f[5].data(), f[5].data() + f[5].size(), r.seed);
    if (res.ec != std::errc() || res.ptr != f[5].data() + f[5].size()) throw InputError(where + ": bad seed " + f[5]);
    r.metric = f[6];
    r.value = parse_number(f[7], where);
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!out) throw InputError("short write to " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace arlab
