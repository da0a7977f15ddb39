#pragma once

#include "svie/config.hpp"
#include "svie/report.hpp"

#include <chrono>
#include <cstdint>
#include <string>

namespace svie::cli {

/// Wall-clock allowance shared by the steps of one subcommand; 0 means none.
class Budget {
 public:
  explicit Budget(double seconds) : seconds_(seconds), start_(std::chrono::steady_clock::now()) {}
  double elapsed() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }
  double remaining() const { return seconds_ > 0.0 ? seconds_ - elapsed() : 0.0; }
  bool exhausted() const { return seconds_ > 0.0 && elapsed() >= seconds_; }
  double seconds() const { return seconds_; }

 private:
  double seconds_;
  std::chrono::steady_clock::time_point start_;
};

struct RunContext {
  std::string out;  // directory; created if missing
  std::uint64_t seed = 1;
  Budget budget{0.0};
};

/// Each writes its CSV tables into ctx.out and returns the report (not yet written).
RunReport cmd_kernel(const Config& cfg, RunContext& ctx);
RunReport cmd_forward(const Config& cfg, RunContext& ctx);
RunReport cmd_backward(const Config& cfg, RunContext& ctx);
RunReport cmd_control(const Config& cfg, RunContext& ctx);
RunReport cmd_suite(const Config& cfg, RunContext& ctx);

/// Column reference printed by --help.
const char* csv_help();

/// The config without [run].out, as {section: {key: value}}; the hash uses the same view.
nlohmann::json inputs_echo(const Config& cfg);
std::string inputs_hash(const Config& cfg);

}  // namespace svie::cli
