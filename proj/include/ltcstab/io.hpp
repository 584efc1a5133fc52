#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltcstab/dynamics.hpp"
#include "ltcstab/network.hpp"

namespace ltcstab {

using nlohmann::json;

// All floating-point output is printed with 12 significant digits.
inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

// Rounds through the 12-digit decimal representation so that emitted JSON
// numbers never carry more precision than the documented contract.
inline double round12(double x) { return std::strtod(format_double(x).c_str(), nullptr); }

inline json to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(round12(v[i]));
  return arr;
}

inline json to_json(const Eigen::VectorXcd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    arr.push_back({{"re", round12(v[i].real())}, {"im", round12(v[i].imag())}});
  return arr;
}

inline std::string fnv1a64(const std::string& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Parsed network document: the validated network plus the optional r0,
// partition and event sections. Bus ids from the file are mapped onto the
// internal ordering (loads sorted by id first, then generators sorted by id).
struct NetworkFile {
  Network network;
  std::optional<Vector> r0;
  std::vector<int> partition;  // bus-indexed; empty when the file has none
  std::vector<NetworkEvent> events;
  std::vector<int> load_ids;  // file ids in internal index order
  std::vector<int> gen_ids;
};

namespace detail {

inline void expect_keys(const json& j, std::initializer_list<const char*> allowed,
                        const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw Error(ErrorCode::ParseError, ctx + ": unknown key '" + it.key() + "'");
  }
}

inline double get_num(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j[key].is_number())
    throw Error(ErrorCode::ParseError, ctx + ": missing numeric '" + key + "'");
  return j[key].get<double>();
}

}  // namespace detail

namespace detail {

inline NetworkFile parse_network_file_impl(const std::string& text) {
  json doc = json::parse(text);
  detail::expect_keys(doc, {"version", "buses", "lines", "r0", "partition", "events"}, "document");
  if (!doc.contains("version") || doc["version"].get<int>() != 1)
    throw Error(ErrorCode::ParseError, "unsupported or missing version (expected 1)");
  if (!doc.contains("buses") || !doc.contains("lines"))
    throw Error(ErrorCode::ParseError, "document needs 'buses' and 'lines'");

  struct RawBus {
    int id;
    bool is_load;
    double V = 0, b_s = 0, V0 = 0, T = 0;
  };
  std::vector<RawBus> loads, gens;
  for (const json& jb : doc["buses"]) {
    if (!jb.contains("id") || !jb.contains("kind"))
      throw Error(ErrorCode::ParseError, "bus needs 'id' and 'kind'");
    const std::string ctx = "bus " + jb["id"].dump();
    const std::string kind = jb["kind"].get<std::string>();
    RawBus b;
    b.id = jb["id"].get<int>();
    if (kind == "load") {
      detail::expect_keys(jb, {"id", "kind", "b_s", "V0", "T"}, ctx);
      b.is_load = true;
      b.b_s = detail::get_num(jb, "b_s", ctx);
      b.V0 = detail::get_num(jb, "V0", ctx);
      b.T = detail::get_num(jb, "T", ctx);
      loads.push_back(b);
    } else if (kind == "gen") {
      detail::expect_keys(jb, {"id", "kind", "V"}, ctx);
      b.is_load = false;
      b.V = detail::get_num(jb, "V", ctx);
      gens.push_back(b);
    } else {
      throw Error(ErrorCode::ParseError, ctx + ": kind must be 'load' or 'gen'");
    }
  }
  auto by_id = [](const RawBus& a, const RawBus& b) { return a.id < b.id; };
  std::sort(loads.begin(), loads.end(), by_id);
  std::sort(gens.begin(), gens.end(), by_id);

  NetworkFile nf;
  Network& net = nf.network;
  net.n_load = static_cast<int>(loads.size());
  net.n_gen = static_cast<int>(gens.size());
  net.load_susceptances.resize(net.n_load);
  net.setpoints.resize(net.n_load);
  net.time_constants.resize(net.n_load);
  net.gen_voltages.resize(net.n_gen);

  std::map<int, int> index_of;
  for (int i = 0; i < net.n_load; ++i) {
    if (index_of.count(loads[i].id))
      throw Error(ErrorCode::ParseError, "duplicate bus id " + std::to_string(loads[i].id));
    index_of[loads[i].id] = i;
    nf.load_ids.push_back(loads[i].id);
    net.load_susceptances[i] = loads[i].b_s;
    net.setpoints[i] = loads[i].V0;
    net.time_constants[i] = loads[i].T;
  }
  for (int i = 0; i < net.n_gen; ++i) {
    if (index_of.count(gens[i].id))
      throw Error(ErrorCode::ParseError, "duplicate bus id " + std::to_string(gens[i].id));
    index_of[gens[i].id] = net.n_load + i;
    nf.gen_ids.push_back(gens[i].id);
    net.gen_voltages[i] = gens[i].V;
  }

  const auto bus_index = [&](const json& v, const std::string& ctx) {
    const int id = v.get<int>();
    auto it = index_of.find(id);
    if (it == index_of.end())
      throw Error(ErrorCode::ParseError, ctx + ": unknown bus id " + std::to_string(id));
    return it->second;
  };

  for (const json& jl : doc["lines"]) {
    detail::expect_keys(jl, {"from", "to", "b"}, "line");
    if (!jl.contains("from") || !jl.contains("to"))
      throw Error(ErrorCode::ParseError, "line needs 'from' and 'to'");
    Line l;
    l.from = bus_index(jl["from"], "line");
    l.to = bus_index(jl["to"], "line");
    l.b = detail::get_num(jl, "b", "line");
    net.lines.push_back(l);
  }

  net = validate_network(std::move(net));

  if (doc.contains("r0")) {
    if (!doc["r0"].is_array() || static_cast<int>(doc["r0"].size()) != net.n_load)
      throw Error(ErrorCode::ParseError, "r0 must list one value per load bus");
    Vector r0(net.n_load);
    for (int i = 0; i < net.n_load; ++i) r0[i] = doc["r0"][i].get<double>();
    nf.r0 = r0;
  }

  if (doc.contains("partition")) {
    nf.partition.assign(net.n_bus(), -1);
    for (auto it = doc["partition"].begin(); it != doc["partition"].end(); ++it) {
      const int id = std::stoi(it.key());
      auto found = index_of.find(id);
      if (found == index_of.end())
        throw Error(ErrorCode::ParseError, "partition: unknown bus id " + it.key());
      nf.partition[found->second] = it.value().get<int>();
    }
    for (int b = 0; b < net.n_bus(); ++b)
      if (nf.partition[b] < 0)
        throw Error(ErrorCode::ParseError, "partition must assign every bus");
  }

  if (doc.contains("events")) {
    for (const json& je : doc["events"]) {
      detail::expect_keys(je, {"time", "action", "target", "factor"}, "event");
      NetworkEvent ev;
      ev.time = detail::get_num(je, "time", "event");
      const std::string action = je["action"].get<std::string>();
      if (action == "scale_bs") {
        ev.action = NetworkEvent::Action::ScaleLoad;
        const int idx = bus_index(je["target"], "event");
        if (!net.is_load(idx))
          throw Error(ErrorCode::ParseError, "event: scale_bs target must be a load bus");
        ev.target = idx;
        ev.factor = detail::get_num(je, "factor", "event");
      } else if (action == "scale_line" || action == "remove_line") {
        ev.action = action == "scale_line" ? NetworkEvent::Action::ScaleLine
                                           : NetworkEvent::Action::RemoveLine;
        if (!je.contains("target") || !je["target"].is_array() || je["target"].size() != 2)
          throw Error(ErrorCode::ParseError, "event: line target must be [from, to]");
        const int a = bus_index(je["target"][0], "event");
        const int b = bus_index(je["target"][1], "event");
        int found = -1;
        for (size_t li = 0; li < net.lines.size(); ++li) {
          const Line& l = net.lines[li];
          if ((l.from == a && l.to == b) || (l.from == b && l.to == a)) {
            found = static_cast<int>(li);
            break;
          }
        }
        if (found < 0) throw Error(ErrorCode::ParseError, "event: no such line");
        ev.target = found;
        if (action == "scale_line") ev.factor = detail::get_num(je, "factor", "event");
      } else {
        throw Error(ErrorCode::ParseError, "event: unknown action '" + action + "'");
      }
      nf.events.push_back(ev);
    }
  }
  return nf;
}

}  // namespace detail

inline NetworkFile parse_network_file(const std::string& text) {
  try {
    return detail::parse_network_file_impl(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline NetworkFile load_network_file(const std::string& path) {
  return parse_network_file(read_file(path));
}

// CSV helpers ---------------------------------------------------------------

inline void write_csv(std::ostream& os, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_double(row[i]);
    os << "\n";
  }
}

inline void trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const int n = traj.samples.empty() ? 0 : static_cast<int>(traj.samples.front().r.size());
  std::vector<std::string> header{"t"};
  for (int i = 0; i < n; ++i) header.push_back("r_" + std::to_string(i + 1));
  for (int i = 0; i < n; ++i) header.push_back("Vs_" + std::to_string(i + 1));
  std::vector<std::vector<double>> rows;
  rows.reserve(traj.samples.size());
  for (const auto& s : traj.samples) {
    std::vector<double> row{s.t};
    for (int i = 0; i < n; ++i) row.push_back(s.r[i]);
    for (int i = 0; i < n; ++i) row.push_back(s.V_s[i]);
    rows.push_back(std::move(row));
  }
  write_csv(os, header, rows);
}

}  // namespace ltcstab
