#pragma once

// Feeder case files (JSON with explicit units per field) and per-step profile
// CSVs. A case file carries the network, the controllable devices and the
// default stationary operating section.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "vvcrl/env.hpp"
#include "vvcrl/errors.hpp"
#include "vvcrl/netcore.hpp"

namespace vvcrl {

enum class ImpedanceUnit { ohm, pu };

struct CaseBusRow {
  int id = 0;
  double p_load_mw = 0.0;
  double q_load_mvar = 0.0;
  double shunt_g_pu = 0.0;
  double shunt_b_pu = 0.0;
  bool operator==(const CaseBusRow&) const = default;
};

struct CaseBranchRow {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  ImpedanceUnit unit = ImpedanceUnit::pu;
  bool operator==(const CaseBranchRow&) const = default;
};

struct CaseDeviceRow {
  enum class Kind { iber, svc } kind = Kind::iber;
  int bus = 0;
  double s_rated_mva = 0.0;  // iber
  double p_mw = 0.0;         // iber, stationary-section active output
  double q_min_mvar = 0.0;   // svc
  double q_max_mvar = 0.0;   // svc
  std::string p_profile;     // iber, profile CSV column name (optional)
  bool operator==(const CaseDeviceRow&) const = default;
};

struct CaseFile {
  std::string name;
  double base_mva = 1.0;
  double base_kv = 1.0;
  int slack_bus = 0;
  double slack_voltage_pu = 1.0;
  double load_multiplier = 1.0;  // stationary section
  std::vector<CaseBusRow> buses;
  std::vector<CaseBranchRow> branches;
  std::vector<CaseDeviceRow> devices;
  bool operator==(const CaseFile&) const = default;
};

namespace detail {

inline std::string line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

/// Parses JSON text, turning syntax errors into ConfigError with a line/column.
inline nlohmann::json parse_json(std::string_view text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON (" + std::string(e.what()) + ")", origin + " " + line_col(text, e.byte));
  }
}

template <class T>
T field(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw ConfigError(std::string("missing field '") + key + "'", where);
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("field '") + key + "' has the wrong type", where);
  }
}

template <class T>
T field_or(const nlohmann::json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  return field<T>(obj, key, where);
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline CaseFile parse_case(std::string_view text, const std::string& origin = "<case>") {
  using detail::field;
  using detail::field_or;
  const auto j = detail::parse_json(text, origin);
  CaseFile c;
  c.name = field_or<std::string>(j, "name", "", origin);
  c.base_mva = field<double>(j, "base_mva", origin);
  c.base_kv = field<double>(j, "base_kv", origin);
  c.slack_bus = field<int>(j, "slack_bus", origin);
  c.slack_voltage_pu = field_or<double>(j, "slack_voltage_pu", 1.0, origin);
  if (j.contains("section")) c.load_multiplier = field_or<double>(j.at("section"), "load_multiplier", 1.0, origin + " section");
  if (!j.contains("buses") || !j.at("buses").is_array()) throw ConfigError("missing array 'buses'", origin);
  if (!j.contains("branches") || !j.at("branches").is_array()) throw ConfigError("missing array 'branches'", origin);
  std::size_t k = 0;
  for (const auto& b : j.at("buses")) {
    const auto where = origin + " buses[" + std::to_string(k++) + "]";
    c.buses.push_back({field<int>(b, "id", where), field_or<double>(b, "p_load_mw", 0.0, where),
                       field_or<double>(b, "q_load_mvar", 0.0, where), field_or<double>(b, "shunt_g_pu", 0.0, where),
                       field_or<double>(b, "shunt_b_pu", 0.0, where)});
  }
  k = 0;
  for (const auto& b : j.at("branches")) {
    const auto where = origin + " branches[" + std::to_string(k++) + "]";
    CaseBranchRow row{field<int>(b, "from", where), field<int>(b, "to", where), field<double>(b, "r", where),
                      field<double>(b, "x", where), ImpedanceUnit::pu};
    const auto unit = field<std::string>(b, "unit", where);
    if (unit == "ohm")
      row.unit = ImpedanceUnit::ohm;
    else if (unit != "pu")
      throw ConfigError("unit must be 'ohm' or 'pu'", where);
    c.branches.push_back(row);
  }
  k = 0;
  if (j.contains("devices")) {
    for (const auto& d : j.at("devices")) {
      const auto where = origin + " devices[" + std::to_string(k++) + "]";
      CaseDeviceRow row;
      const auto kind = field<std::string>(d, "kind", where);
      row.bus = field<int>(d, "bus", where);
      if (kind == "iber") {
        row.kind = CaseDeviceRow::Kind::iber;
        row.s_rated_mva = field<double>(d, "s_rated_mva", where);
        row.p_mw = field_or<double>(d, "p_mw", 0.0, where);
        row.p_profile = field_or<std::string>(d, "p_profile", "", where);
      } else if (kind == "svc") {
        row.kind = CaseDeviceRow::Kind::svc;
        row.q_min_mvar = field<double>(d, "q_min_mvar", where);
        row.q_max_mvar = field<double>(d, "q_max_mvar", where);
      } else {
        throw ConfigError("kind must be 'iber' or 'svc'", where);
      }
      c.devices.push_back(row);
    }
  }
  return c;
}

inline CaseFile load_case_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("case file not found", path.string());
  return parse_case(detail::read_text_file(path), path.string());
}

inline nlohmann::ordered_json case_to_json(const CaseFile& c) {
  nlohmann::ordered_json j;
  j["name"] = c.name;
  j["base_mva"] = c.base_mva;
  j["base_kv"] = c.base_kv;
  j["slack_bus"] = c.slack_bus;
  j["slack_voltage_pu"] = c.slack_voltage_pu;
  j["section"] = {{"load_multiplier", c.load_multiplier}};
  auto& buses = j["buses"] = nlohmann::ordered_json::array();
  for (const auto& b : c.buses)
    buses.push_back({{"id", b.id},
                     {"p_load_mw", b.p_load_mw},
                     {"q_load_mvar", b.q_load_mvar},
                     {"shunt_g_pu", b.shunt_g_pu},
                     {"shunt_b_pu", b.shunt_b_pu}});
  auto& branches = j["branches"] = nlohmann::ordered_json::array();
  for (const auto& b : c.branches)
    branches.push_back(
        {{"from", b.from}, {"to", b.to}, {"r", b.r}, {"x", b.x}, {"unit", b.unit == ImpedanceUnit::ohm ? "ohm" : "pu"}});
  auto& devices = j["devices"] = nlohmann::ordered_json::array();
  for (const auto& d : c.devices) {
    if (d.kind == CaseDeviceRow::Kind::iber) {
      nlohmann::ordered_json e{{"kind", "iber"}, {"bus", d.bus}, {"s_rated_mva", d.s_rated_mva}, {"p_mw", d.p_mw}};
      if (!d.p_profile.empty()) e["p_profile"] = d.p_profile;
      devices.push_back(e);
    } else {
      devices.push_back({{"kind", "svc"}, {"bus", d.bus}, {"q_min_mvar", d.q_min_mvar}, {"q_max_mvar", d.q_max_mvar}});
    }
  }
  return j;
}

inline std::string serialize_case(const CaseFile& c) { return case_to_json(c).dump(2) + "\n"; }

/// Impedance base in ohms.
inline double impedance_base(double base_kv, double base_mva) { return base_kv * base_kv / base_mva; }

inline NetworkModel to_network(const CaseFile& c) {
  std::vector<Bus> buses;
  buses.reserve(c.buses.size());
  for (const auto& b : c.buses) buses.push_back({b.id, b.shunt_g_pu, b.shunt_b_pu, b.p_load_mw, b.q_load_mvar});
  const double zb = impedance_base(c.base_kv, c.base_mva);
  std::vector<Branch> branches;
  branches.reserve(c.branches.size());
  for (const auto& b : c.branches) {
    const double k = b.unit == ImpedanceUnit::ohm ? 1.0 / zb : 1.0;
    branches.push_back({b.from, b.to, b.r * k, b.x * k});
  }
  return NetworkModel(std::move(buses), std::move(branches), c.slack_bus, c.base_mva, c.base_kv);
}

inline DeviceSet to_devices(const CaseFile& c) {
  DeviceSet d;
  for (const auto& row : c.devices) {
    if (row.kind == CaseDeviceRow::Kind::iber)
      d.iber.push_back({row.bus, row.s_rated_mva, row.p_mw});
    else
      d.svc.push_back({row.bus, row.q_min_mvar, row.q_max_mvar});
  }
  return d;
}

/// Inverse of to_network/to_devices. Impedances are written in p.u.
inline CaseFile case_from_model(const NetworkModel& net, const DeviceSet& devices, std::string name = {},
                                double slack_voltage_pu = 1.0, double load_multiplier = 1.0) {
  CaseFile c;
  c.name = std::move(name);
  c.base_mva = net.base_mva();
  c.base_kv = net.base_kv();
  c.slack_bus = net.slack_id();
  c.slack_voltage_pu = slack_voltage_pu;
  c.load_multiplier = load_multiplier;
  for (const auto& b : net.buses()) c.buses.push_back({b.id, b.p_load, b.q_load, b.shunt_g, b.shunt_b});
  for (const auto& b : net.branches()) c.branches.push_back({b.from, b.to, b.r, b.x, ImpedanceUnit::pu});
  for (const auto& d : devices.iber) {
    CaseDeviceRow row;
    row.kind = CaseDeviceRow::Kind::iber;
    row.bus = d.bus;
    row.s_rated_mva = d.s_rated_mva;
    row.p_mw = d.p_output_mw;
    c.devices.push_back(row);
  }
  for (const auto& d : devices.svc) {
    CaseDeviceRow row;
    row.kind = CaseDeviceRow::Kind::svc;
    row.bus = d.bus;
    row.q_min_mvar = d.q_min_mvar;
    row.q_max_mvar = d.q_max_mvar;
    c.devices.push_back(row);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Profile CSV: header "t,load_multiplier,<one column per IB-ER>", one row per
// step. IB-ER columns are matched by the device's p_profile name, falling back
// to positional order.

inline std::vector<ProfileStep> parse_profile_csv(std::string_view text, std::size_t n_iber,
                                                  const std::string& origin = "<profile>",
                                                  std::size_t expected_rows = 0) {
  std::vector<ProfileStep> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split(line);
    const auto where = origin + " line " + std::to_string(line_no);
    if (columns == 0) {
      if (cells.size() < 2 || cells[0] != "t" || cells[1] != "load_multiplier")
        throw ConfigError("header must start with 't,load_multiplier'", where);
      columns = cells.size();
      if (columns != 2 && columns != 2 + n_iber)
        throw ConfigError("expected " + std::to_string(n_iber) + " IB-ER output columns", where);
      continue;
    }
    if (cells.size() != columns) throw ConfigError("wrong number of cells", where);
    ProfileStep row;
    try {
      std::size_t used = 0;
      const long t = std::stol(cells[0], &used);
      if (used != cells[0].size() || t != static_cast<long>(rows.size()))
        throw ConfigError("steps must be numbered 0,1,2,...", where);
      row.load_multiplier = std::stod(cells[1]);
      for (std::size_t i = 2; i < columns; ++i) row.iber_p_mw.push_back(std::stod(cells[i]));
    } catch (const std::logic_error&) {
      throw ConfigError("non-numeric cell", where);
    }
    if (!(row.load_multiplier > 0.0)) throw ConfigError("load multiplier must be positive", where);
    for (double p : row.iber_p_mw)
      if (!(p >= 0.0)) throw ConfigError("IB-ER active output must be non-negative", where);
    rows.push_back(std::move(row));
  }
  if (columns == 0) throw ConfigError("empty profile", origin);
  if (expected_rows != 0 && rows.size() != expected_rows)
    throw ConfigError("profile needs exactly " + std::to_string(expected_rows) + " rows, found " +
                          std::to_string(rows.size()),
                      origin);
  return rows;
}

inline std::vector<ProfileStep> load_profile_csv(const std::filesystem::path& path, std::size_t n_iber,
                                                 std::size_t expected_rows = 0) {
  if (!std::filesystem::exists(path)) throw ConfigError("profile file not found", path.string());
  return parse_profile_csv(detail::read_text_file(path), n_iber, path.string(), expected_rows);
}

/// Directory searched for bare case names such as "case33".
inline std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("VVCRL_DATA_DIR"); env && *env) return env;
#ifdef VVCRL_DEFAULT_DATA_DIR
  return VVCRL_DEFAULT_DATA_DIR;
#else
  return "data";
#endif
}

/// Accepts a path to a case file or a bare case name looked up as
/// <data dir>/<name>.json.
inline std::filesystem::path resolve_case_path(const std::string& case_ref) {
  std::filesystem::path p(case_ref);
  if (std::filesystem::exists(p)) return p;
  if (p.extension().empty()) {
    auto candidate = default_data_dir() / (case_ref + ".json");
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return p;
}

}  // namespace vvcrl
