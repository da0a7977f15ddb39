#include "commands.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

namespace {

std::string to_text(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace svie;
  CLI::App app{"Singular forward and backward stochastic Volterra equations on a binomial lattice."};
  app.footer(cli::csv_help());
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, method;
  std::optional<long long> seed;
  std::optional<double> budget, tol;
  app.add_option("--config", config_path, "experiment config (structured text)")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (default: [run] out, else ./out)");
  app.add_option("--seed", seed, "seed for sampled controls, instances and paths");
  app.add_option("--budget-seconds", budget, "runtime budget; 0 disables")->check(CLI::NonNegativeNumber);
  app.add_option("--method", method, "BSVIE method")->check(CLI::IsMember({"fixed_point", "block"}));
  app.add_option("--tol", tol, "solver tolerance")->check(CLI::PositiveNumber);

  const std::map<std::string, std::pair<std::string, RunReport (*)(const Config&, cli::RunContext&)>> commands = {
      {"kernel", {"classify the [kernel] block", cli::cmd_kernel}},
      {"forward", {"solve the [forward] problem", cli::cmd_forward}},
      {"backward", {"solve the [backward] problem", cli::cmd_backward}},
      {"control", {"duality, FD, optimizer and stationarity for [control]", cli::cmd_control}},
      {"suite", {"run the acceptance criteria", cli::cmd_suite}},
  };
  for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  Config cfg;
  try {
    if (!config_path.empty()) cfg = Config::load(config_path);
    if (seed) cfg.set("run", "seed", std::to_string(*seed));
    if (budget) cfg.set("run", "budget_seconds", to_text(*budget));
    if (!method.empty()) cfg.set("run", "method", method);
    if (tol) cfg.set("run", "tol", to_text(*tol));
    validate(cfg, experiment_schema());
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  cli::RunContext ctx;
  ctx.out = !out_dir.empty() ? out_dir : cfg.str("run", "out", std::string("out"));
  ctx.seed = static_cast<std::uint64_t>(cfg.integer("run", "seed", 1));
  ctx.budget = cli::Budget(cfg.real("run", "budget_seconds", 0.0));
  std::filesystem::create_directories(ctx.out);

  RunReport report;
  try {
    report = commands.at(command).second(cfg, ctx);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << command << " failed: " << e.what() << "\n";
    return 1;
  }
  const std::string path = (std::filesystem::path(ctx.out) / "report.json").string();
  write_json(path, to_json(report));

  for (const auto& [name, ok] : report.checks.items()) {
    std::cout << (ok.get<bool>() ? "PASS " : "FAIL ") << name << "\n";
  }
  if (report.partial) std::cout << "PARTIAL: runtime budget exhausted, results are incomplete\n";
  std::cout << "report: " << path << "\n";
  if (report.partial) return 3;
  return report.passed() ? 0 : 1;
}
