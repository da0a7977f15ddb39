#include "svie/report.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace svie {

using nlohmann::json;

json real_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json to_json(const Measured& m) {
  json trace = json::array();
  for (const auto& [level, value] : m.trace) trace.push_back({real_json(level), real_json(value)});
  return {{"value", m.finite ? real_json(m.value) : json(nullptr)}, {"finite", m.finite}, {"trace", trace}};
}

json to_json(const Partition& p) {
  json j = {{"blocks", p.blocks()}, {"T", p.T}};
  if (p.uniform()) {
    j["uniform_step"] = p.step;
  } else {
    j["breakpoints"] = p.breakpoints;
  }
  return j;
}

json to_json(const PartitionResult& r) {
  json j = {{"feasible", r.feasible}, {"budget_exceeded", r.budget_exceeded}, {"local_sup", real_json(r.local_sup)}};
  if (r.feasible) {
    j["partition"] = to_json(r.partition);
  } else if (!r.budget_exceeded) {
    j["witness"] = r.witness;
  }
  return j;
}

json to_json(const K0Report& r) {
  json sliding = json::array();
  for (const auto& [eps, v] : r.sliding) sliding.push_back({{"eps", eps}, {"sup", real_json(v)}});
  return {{"member", r.member}, {"sup_l1_slice", real_json(r.sup_l1_slice)}, {"sup_finite", r.sup_finite},
          {"sliding", sliding}};
}

json to_json(const KernelClassReport& r) {
  json parts = json::array();
  for (const auto& [eps, p] : r.partition_results) {
    json e = to_json(p);
    e["eps"] = eps;
    parts.push_back(e);
  }
  return {{"l2_triangle_norm", to_json(r.l2_triangle_norm)},
          {"script_norm", to_json(r.script_norm)},
          {"partition_results", parts},
          {"in_L2", r.in_L2},
          {"in_scriptL2", r.in_scriptL2},
          {"in_K0", r.in_K0},
          {"k0", to_json(r.k0)},
          {"diagnostics", r.diagnostics}};
}

bool RunReport::passed() const {
  if (partial) return false;
  for (const auto& [name, ok] : checks.items()) {
    if (!ok.get<bool>()) return false;
  }
  return true;
}

json to_json(const RunReport& r) {
  return {{"schema_version", kReportSchemaVersion},
          {"tool_version", kToolVersion},
          {"command", r.command},
          {"config_hash", r.config_hash},
          {"inputs", r.inputs},
          {"outputs", r.outputs},
          {"residuals", r.residuals},
          {"checks", r.checks},
          {"passed", r.passed()},
          {"partial", r.partial},
          {"timings", r.timings}};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << "\n";
}

void CsvTable::add(std::vector<double> row) {
  if (row.size() != columns.size()) throw std::invalid_argument("CsvTable: row width does not match the header");
  rows.push_back(std::move(row));
}

void CsvTable::write(std::ostream& os) const {
  for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c];
  os << "\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
    os << "\n";
  }
}

void CsvTable::write(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  write(f);
}

CsvTable process_table(const AdaptedProcess& p) {
  CsvTable t{{"depth", "node", "component", "value"}, {}};
  for (std::size_t i = 0; i < p.at.size(); ++i) {
    for (Eigen::Index n = 0; n < p.at[i].cols(); ++n) {
      for (Eigen::Index c = 0; c < p.at[i].rows(); ++c) {
        t.rows.push_back({static_cast<double>(i), static_cast<double>(n), static_cast<double>(c), p.at[i](c, n)});
      }
    }
  }
  return t;
}

}  // namespace svie
