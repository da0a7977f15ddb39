#pragma once

#include "svie/kernels.hpp"
#include "svie/lattice.hpp"

#include <json.hpp>

#include <ostream>
#include <string>
#include <vector>

namespace svie {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

/// Non-finite values serialize as null; Measured carries its own finite flag.
nlohmann::json real_json(double v);

nlohmann::json to_json(const Measured& m);
nlohmann::json to_json(const Partition& p);
nlohmann::json to_json(const PartitionResult& r);
nlohmann::json to_json(const K0Report& r);
nlohmann::json to_json(const KernelClassReport& r);

/// Everything but `timings` is a function of the config and seed.
struct RunReport {
  std::string command;
  std::string config_hash;
  nlohmann::json inputs = nlohmann::json::object();
  nlohmann::json outputs = nlohmann::json::object();
  nlohmann::json residuals = nlohmann::json::object();
  nlohmann::json checks = nlohmann::json::object();  // name -> bool
  nlohmann::json timings = nlohmann::json::object();
  bool partial = false;

  void check(const std::string& name, bool ok) { checks[name] = ok; }
  bool passed() const;
};

nlohmann::json to_json(const RunReport& r);
/// Two-space indented, keys sorted, trailing newline.
void write_json(const std::string& path, const nlohmann::json& j);

/// Minimal CSV table: a header row, then numeric rows with round-trip precision.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  void add(std::vector<double> row);
  void write(std::ostream& os) const;
  void write(const std::string& path) const;
};

/// (depth, node, component, value) rows of an adapted process.
CsvTable process_table(const AdaptedProcess& p);

}  // namespace svie
