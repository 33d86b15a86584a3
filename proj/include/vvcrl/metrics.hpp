#pragma once

// Per-episode metrics and their CSV form. Numbers are written with
// std::to_chars (shortest round-trip, locale independent). Comment lines
// starting with '#' carry the version, the resolved config and a JSON footer.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vvcrl/config.hpp"

namespace vvcrl {

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_number(std::optional<double> v) { return v ? format_number(*v) : std::string(); }

inline double parse_number(const std::string& s, const std::string& where) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("bad number '" + s + "'", where);
  return v;
}

/// One episode. Step averages are taken over the steps actually played; the
/// loss and VR of a failed step are not defined and are left out.
struct MetricsRecord {
  std::uint64_t seed = 0;
  int episode = 0;
  int steps = 0;
  double loss_mw = 0.0;
  double vr = 0.0;
  double neg_reward = 0.0;
  int failures = 0;
  std::optional<double> loss_inc_mw;  // online: loss_mw - oracle loss on the plant
  std::optional<double> eval_loss_mw;
  std::optional<double> eval_vr;
  std::optional<double> eval_neg_reward;

  bool operator==(const MetricsRecord&) const = default;
};

inline constexpr const char* kMetricsColumns =
    "seed,episode,steps,loss_mw,vr,neg_reward,failures,loss_inc_mw,eval_loss_mw,eval_vr,eval_neg_reward";

inline std::string to_csv_row(const MetricsRecord& r) {
  std::string s = std::to_string(r.seed) + "," + std::to_string(r.episode) + "," + std::to_string(r.steps) + ",";
  s += format_number(r.loss_mw) + "," + format_number(r.vr) + "," + format_number(r.neg_reward) + ",";
  s += std::to_string(r.failures) + "," + format_number(r.loss_inc_mw) + ",";
  s += format_number(r.eval_loss_mw) + "," + format_number(r.eval_vr) + "," + format_number(r.eval_neg_reward);
  return s;
}

struct MetricsFile {
  ojson config = ojson::object();
  std::vector<MetricsRecord> records;
  ojson footer = ojson::object();
};

inline std::string render_metrics(const MetricsFile& m) {
  std::string out = "# version: ";
  out += kVersion;
  out += "\n# config: " + m.config.dump() + "\n";
  out += kMetricsColumns;
  out += "\n";
  for (const auto& r : m.records) out += to_csv_row(r) + "\n";
  if (!m.footer.empty()) out += "# footer: " + m.footer.dump() + "\n";
  return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file", path.string());
  out << text;
}

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}
}  // namespace detail

inline MetricsFile parse_metrics(const std::string& text, const std::string& origin = "<metrics>") {
  MetricsFile m;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto where = origin + " line " + std::to_string(line_no);
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto take = [&](const char* tag, ojson& dst) {
        const std::string prefix = std::string("# ") + tag + ": ";
        if (line.rfind(prefix, 0) == 0) {
          try {
            dst = ojson::parse(line.substr(prefix.size()));
          } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("malformed ") + tag + " comment", where);
          }
        }
      };
      take("config", m.config);
      take("footer", m.footer);
      continue;
    }
    if (!header_seen) {
      if (line != kMetricsColumns) throw ConfigError("unexpected column header", where);
      header_seen = true;
      continue;
    }
    const auto c = detail::split_csv(line);
    if (c.size() != 11) throw ConfigError("expected 11 cells, found " + std::to_string(c.size()), where);
    auto opt = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return parse_number(s, where);
    };
    MetricsRecord r;
    try {
      r.seed = std::stoull(c[0]);
      r.episode = std::stoi(c[1]);
      r.steps = std::stoi(c[2]);
      r.failures = std::stoi(c[6]);
    } catch (const std::logic_error&) {
      throw ConfigError("non-numeric integer cell", where);
    }
    r.loss_mw = parse_number(c[3], where);
    r.vr = parse_number(c[4], where);
    r.neg_reward = parse_number(c[5], where);
    r.loss_inc_mw = opt(c[7]);
    r.eval_loss_mw = opt(c[8]);
    r.eval_vr = opt(c[9]);
    r.eval_neg_reward = opt(c[10]);
    m.records.push_back(r);
  }
  if (!header_seen) throw ConfigError("no column header found", origin);
  return m;
}

inline MetricsFile load_metrics(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("metrics file not found", path.string());
  return parse_metrics(detail::read_text_file(path), path.string());
}

// -- summaries -----------------------------------------------------------------

struct Stats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for fewer than two values
  double min = 0.0;
  double max = 0.0;
  std::size_t n = 0;
};

inline Stats stats_of(const std::vector<double>& v) {
  Stats s;
  s.n = v.size();
  if (v.empty()) return s;
  s.min = s.max = v.front();
  for (double x : v) {
    s.mean += x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace vvcrl
