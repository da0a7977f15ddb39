#pragma once

#include <json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace svie::suite {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool check = false;       // numerical checks only
  bool in_time = false;     // finished under its runtime limit
  bool skipped = false;     // not run: budget exhausted
  double seconds = 0.0;
  double limit_seconds = 0.0;
  std::string summary;
  nlohmann::json measured = nlohmann::json::object();

  bool passed() const { return check && in_time && !skipped; }
};

struct CriterionInfo {
  int id;
  std::string name;
  double limit_seconds;
};

const std::vector<CriterionInfo>& criteria();

struct SuiteOptions {
  std::vector<int> only;        // empty: all twelve
  double budget_seconds = 0.0;  // 0: unlimited; later criteria are skipped once exceeded
};

/// Runs the selected criteria in order, calling `on_result` after each.
std::vector<CriterionResult> run_suite(const SuiteOptions& opt,
                                       const std::function<void(const CriterionResult&)>& on_result = {});

/// `PASS  3  name  (0.41 s / 10 s)  summary`
std::string format_line(const CriterionResult& r);

nlohmann::json to_json(const CriterionResult& r);

}  // namespace svie::suite
