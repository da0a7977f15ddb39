#include "commands.hpp"

#include "suite.hpp"
#include "svie/control.hpp"
#include "svie/delay.hpp"
#include "svie/registry.hpp"
#include "svie/special.hpp"

#include <cmath>
#include <filesystem>

namespace svie::cli {

using nlohmann::json;
using Vec = Eigen::VectorXd;

namespace {

std::string path_in(const RunContext& ctx, const std::string& file) {
  return (std::filesystem::path(ctx.out) / file).string();
}

RunReport start(const std::string& command, const Config& cfg) {
  RunReport r;
  r.command = command;
  r.inputs = inputs_echo(cfg);
  r.config_hash = inputs_hash(cfg);
  return r;
}

void finish(RunReport& r, const RunContext& ctx) {
  r.timings["total_seconds"] = ctx.budget.elapsed();
  r.timings["budget_seconds"] = ctx.budget.seconds();
}

// Registry parameters with the horizon taken from [tree] unless given.
Params problem_params(const Config& cfg, const std::string& section, const std::vector<std::string>& reserved) {
  Params p = params_from_section(cfg, section, reserved);
  if (!p.values().count("T")) p.set("T", cfg.real("tree", "T", 1.0));
  return p;
}

int tree_N(const Config& cfg, int fallback) { return static_cast<int>(cfg.integer("tree", "N", fallback)); }

std::vector<double> mean_path(const std::string& method, const SVIEProblem& p, int N, double T, double tol,
                              const Config& cfg, std::uint64_t seed) {
  std::vector<double> m(N + 1);
  if (method == "deterministic") {
    const auto x = solve_deterministic(p, N);
    for (int i = 0; i <= N; ++i) m[i] = x[i](0);
  } else if (method == "paths") {
    const PathEnsemble e = solve_paths(p, static_cast<int>(cfg.integer("forward", "paths", 2000)), N, seed);
    for (int i = 0; i <= N; ++i) m[i] = e.mean(0, i);
  } else {
    const Tree tree = make_tree(N, T, static_cast<int>(cfg.integer("tree", "m", 1)));
    const SVIESolution s = method == "picard" ? solve_picard(p, tree, tol) : solve_lattice(p, tree);
    for (int i = 0; i <= N; ++i) m[i] = expectation(s.X.at[i])(0);
  }
  return m;
}

double mittag_leffler_error(const std::vector<double>& mean, const Params& prm, double T) {
  const double alpha = prm.get("alpha", 0.75), lambda = prm.get("lambda", -1.0);
  const int N = static_cast<int>(mean.size()) - 1;
  double e = 0.0;
  for (int i = 0; i <= N; ++i) {
    const double t = T * i / N;
    e = std::max(e, std::abs(mean[i] - mittag_leffler(alpha, 1.0, lambda * std::pow(t, alpha))));
  }
  return e;
}

json stationarity_json(const StationarityReport& s) {
  return {{"margin", s.margin}, {"worst_depth", s.worst_depth}, {"worst_node", s.worst_node},
          {"probes", s.probes}, {"gradient_norm", s.gradient_norm}};
}

void write_fd(const std::vector<FDRow>& rows, RunReport& r, const RunContext& ctx) {
  CsvTable t{{"eps", "fd", "analytic", "error"}, {}};
  json j = json::array();
  for (const auto& row : rows) {
    t.add({row.eps, row.fd, row.analytic, row.error});
    j.push_back({{"eps", row.eps}, {"fd", row.fd}, {"analytic", row.analytic}, {"error", row.error}});
  }
  t.write(path_in(ctx, "fd.csv"));
  r.outputs["fd"] = j;
  // Linear decay is only visible when the largest step is above rounding.
  if (rows.size() >= 2 && rows.front().error > 1e-11) {
    bool ok = true;
    for (std::size_t k = 1; k < rows.size(); ++k) {
      const double ratio = rows[k - 1].error / rows[k].error;
      ok = ok && ratio >= 5.0 && ratio <= 20.0;
    }
    r.check("fd_linear_decay", ok);
  }
}

void write_search(const SearchResult& s, RunReport& r, const RunContext& ctx) {
  CsvTable t{{"step", "cost", "gradient_norm", "update_norm", "rate"}, {}};
  json trace = json::array();
  for (const auto& st : s.trace) {
    t.add({static_cast<double>(st.step), st.cost, st.gradient_norm, st.update_norm, st.rate});
    trace.push_back({{"step", st.step}, {"cost", st.cost}, {"gradient_norm", st.gradient_norm},
                     {"update_norm", st.update_norm}, {"rate", st.rate}});
  }
  t.write(path_in(ctx, "trace.csv"));
  process_table(s.u).write(path_in(ctx, "control.csv"));
  r.outputs["optimizer"] = {{"converged", s.converged}, {"steps", s.trace.size()}, {"trace", trace},
                            {"final_cost", s.trace.empty() ? 0.0 : s.trace.back().cost}};
  r.check("optimizer_converged", s.converged);
}

std::optional<Kernel> optional_fractional(const Config& cfg, const std::string& key, double T) {
  if (!cfg.has("control", key)) return std::nullopt;
  return make_fractional(cfg.real("control", key), Orientation::causal, T);
}

}  // namespace

json inputs_echo(const Config& cfg) {
  json j = json::object();
  for (const auto& [name, sec] : cfg.sections()) {
    for (const auto& [key, e] : sec.entries) {
      if (name == "run" && key == "out") continue;
      j[name][key] = e.value;
    }
  }
  return j;
}

std::string inputs_hash(const Config& cfg) {
  Config c = cfg;
  c.erase("run", "out");
  return config_hash(c);
}

RunReport cmd_kernel(const Config& cfg, RunContext& ctx) {
  RunReport r = start("kernel", cfg);
  const Kernel k = kernel_from_config(cfg);
  const std::vector<double> eps = cfg.reals("kernel", "eps_grid", default_eps_grid());
  for (double e : eps) {
    if (!(e > 0.0)) throw ConfigError(cfg.where("kernel", "eps_grid") + ": eps_grid entries must be positive");
  }
  const KernelClassReport rep = classify(k, eps);
  r.outputs["kernel"] = k.label;
  r.outputs["kernel_report"] = to_json(rep);

  CsvTable t{{"eps", "feasible", "budget_exceeded", "blocks", "local_sup"}, {}};
  bool all_feasible = true;
  for (const auto& [e, p] : rep.partition_results) {
    t.add({e, p.feasible ? 1.0 : 0.0, p.budget_exceeded ? 1.0 : 0.0,
           p.feasible ? static_cast<double>(p.partition.blocks()) : 0.0, p.local_sup});
    all_feasible = all_feasible && p.feasible;
  }
  t.write(path_in(ctx, "partitions.csv"));
  r.check("scriptL2_implies_L2", !rep.in_scriptL2 || rep.in_L2);
  r.check("scriptL2_implies_conditions", !rep.in_scriptL2 || (rep.script_norm.finite && all_feasible));
  r.partial = ctx.budget.exhausted();
  finish(r, ctx);
  return r;
}

RunReport cmd_forward(const Config& cfg, RunContext& ctx) {
  RunReport r = start("forward", cfg);
  const std::vector<std::string> reserved = {"problem", "method", "N_list", "paths", "steps", "tol"};
  const std::string name = cfg.str("forward", "problem");
  const std::string method = cfg.str("forward", "method", std::string("lattice"));
  const Params prm = problem_params(cfg, "forward", reserved);
  const SVIEProblem p = make_forward_example(name, prm);
  const double T = prm.get("T", 1.0);
  const double tol = cfg.real("forward", "tol", cfg.real("run", "tol", 1e-12));
  r.outputs["problem"] = name;
  r.outputs["method"] = method;
  const auto warnings = validate(p);
  r.outputs["validation_warnings"] = warnings;

  if (method == "lattice" || method == "picard") {
    const Tree tree = tree_from_config(cfg);
    const SVIESolution s = method == "picard" ? solve_picard(p, tree, tol) : solve_lattice(p, tree);
    process_table(s.X).write(path_in(ctx, "solution.csv"));
    const double res = forward_residual(p, tree, s.X);
    r.residuals["equation"] = res;
    r.outputs["iterations"] = s.iterations;
    r.outputs["block_starts"] = s.block_starts;
    r.outputs["contraction_ratios"] = s.contraction_ratios;
    r.outputs["mean_at_T"] = expectation(s.X.at[tree.N])(0);
    r.check("equation_residual", res <= 1e-8);
  } else if (method == "deterministic") {
    const int N = tree_N(cfg, 64);
    const auto x = solve_deterministic(p, N);
    CsvTable t{{"index", "time", "component", "value"}, {}};
    for (int i = 0; i <= N; ++i) {
      for (Eigen::Index c = 0; c < x[i].size(); ++c) t.add({double(i), T * i / N, double(c), x[i](c)});
    }
    t.write(path_in(ctx, "solution.csv"));
    r.outputs["value_at_T"] = x[N](0);
    r.check("finite", x[N].allFinite());
  } else {
    const int N = tree_N(cfg, 32);
    const int paths = static_cast<int>(cfg.integer("forward", "paths", 2000));
    const PathEnsemble e = solve_paths(p, paths, N, ctx.seed);
    CsvTable t{{"time", "component", "mean", "mean_se", "second_moment", "second_se"}, {}};
    for (int i = 0; i <= N; ++i) {
      for (Eigen::Index c = 0; c < e.mean.rows(); ++c) {
        t.add({e.times[i], double(c), e.mean(c, i), e.mean_se(c, i), e.second_moment(c, i), e.second_se(c, i)});
      }
    }
    t.write(path_in(ctx, "moments.csv"));
    r.outputs["paths"] = paths;
    r.outputs["mean_at_T"] = e.mean(0, N);
    r.outputs["mean_se_at_T"] = e.mean_se(0, N);
    r.check("finite", e.mean.allFinite() && e.second_moment.allFinite());
  }

  if (cfg.has("forward", "N_list")) {
    const bool reference = name == "fractional_relaxation";
    CsvTable t{{"N", "mean_at_T", "increment", "reference_error"}, {}};
    json rows = json::array();
    double prev = std::nan(""), prev_err = std::numeric_limits<double>::infinity();
    bool decreasing = true;
    for (double Nd : cfg.reals("forward", "N_list")) {
      if (ctx.budget.exhausted()) {
        r.partial = true;
        break;
      }
      const int N = static_cast<int>(Nd);
      const auto m = mean_path(method, p, N, T, tol, cfg, ctx.seed);
      const double err = reference ? mittag_leffler_error(m, prm, T) : std::nan("");
      const double inc = std::isnan(prev) ? std::nan("") : std::abs(m[N] - prev);
      t.add({double(N), m[N], inc, err});
      rows.push_back({{"N", N}, {"mean_at_T", m[N]}, {"increment", real_json(inc)}, {"reference_error", real_json(err)}});
      if (reference) decreasing = decreasing && err < prev_err;
      prev = m[N];
      prev_err = err;
    }
    t.write(path_in(ctx, "convergence.csv"));
    r.outputs["convergence"] = rows;
    if (reference && method != "paths") r.check("reference_error_decreasing", decreasing);
  }
  r.partial = r.partial || ctx.budget.exhausted();
  finish(r, ctx);
  return r;
}

RunReport cmd_backward(const Config& cfg, RunContext& ctx) {
  RunReport r = start("backward", cfg);
  const std::string name = cfg.str("backward", "problem");
  const BSVIEProblem p = make_backward_example(name, problem_params(cfg, "backward", {"problem", "method", "tol"}));
  const Tree tree = tree_from_config(cfg, 6);
  BSVIEOptions opt;
  const std::string method = cfg.str("run", "method", cfg.str("backward", "method", std::string("fixed_point")));
  opt.method = method == "block" ? BSVIEMethod::block : BSVIEMethod::fixed_point;
  opt.tol = cfg.real("run", "tol", cfg.real("backward", "tol", opt.tol));
  const MSolution s = solve_bsvie(p, tree, opt);

  process_table(s.Y).write(path_in(ctx, "Y.csv"));
  CsvTable z{{"i", "j", "node", "component", "value"}, {}};
  for (int i = 0; i < tree.N; ++i) {
    for (int j = 0; j < tree.N; ++j) {
      const NodeField& f = s.Z.z[i][j];
      for (Eigen::Index n = 0; n < f.cols(); ++n) {
        for (Eigen::Index c = 0; c < f.rows(); ++c) z.add({double(i), double(j), double(n), double(c), f(c, n)});
      }
    }
  }
  z.write(path_in(ctx, "Z.csv"));
  CsvTable res{{"quantity", "value"}, {}};
  res.add({0.0, s.residual});
  res.add({1.0, s.m_residual});
  res.write(path_in(ctx, "residuals.csv"));

  r.outputs["problem"] = name;
  r.outputs["method"] = s.method;
  r.outputs["tol"] = opt.tol;
  r.outputs["iterations"] = s.iterations;
  r.outputs["block_starts"] = s.block_starts;
  r.outputs["contraction_ratios"] = s.contraction_ratios;
  r.outputs["Y0"] = s.Y.at[0](0, 0);
  r.residuals["equation"] = s.residual;
  r.residuals["m_condition"] = s.m_residual;
  r.check("m_condition", s.m_residual <= 1e-10);
  r.check("equation_residual", s.residual <= std::max(1e-8, 100 * opt.tol));
  r.partial = ctx.budget.exhausted();
  finish(r, ctx);
  return r;
}

RunReport cmd_control(const Config& cfg, RunContext& ctx) {
  RunReport r = start("control", cfg);
  const std::string name = cfg.str("control", "problem");
  const Tree tree = tree_from_config(cfg, 6);
  const double T = tree.T;
  const int instances = static_cast<int>(cfg.integer("control", "instances", 1));
  const std::vector<double> eps = cfg.reals("control", "eps_list", std::vector<double>{1e-2, 1e-3, 1e-4});
  const bool optimize = cfg.boolean("control", "optimize", true);
  const int steps = static_cast<int>(cfg.integer("control", "steps", 400));
  const double rate = cfg.real("control", "rate", 0.8);
  const int interior = static_cast<int>(cfg.integer("control", "interior", 8));
  auto num = [&](const std::string& key, double fallback) { return cfg.real("control", key, fallback); };
  r.outputs["problem"] = name;

  CsvTable gaps{{"instance", "lhs", "rhs", "gap"}, {}};
  json gap_rows = json::array();
  auto record_gap = [&](int i, double lhs, double rhs, double gap) {
    gaps.add({double(i), lhs, rhs, gap});
    gap_rows.push_back({{"instance", i}, {"lhs", lhs}, {"rhs", rhs}, {"gap", gap}});
    r.check("duality_" + std::to_string(i), gap <= 1e-10 * std::max(1.0, std::abs(rhs)));
  };
  auto budget_left = [&] {
    if (ctx.budget.exhausted()) r.partial = true;
    return !r.partial;
  };

  if (name == "lq" || name == "random_linear") {
    const ControlProblem cp =
        name == "lq"
            ? make_lq_control(num("a", -0.6), num("bu", 0.8), num("c", 0.3), num("cu", 0.4), num("rho", 1.0),
                              num("target", 0.5), num("x0", 1.0), num("bound", 5.0), optional_fractional(cfg, "alpha1", T),
                              optional_fractional(cfg, "alpha2", T), T)
            : make_random_linear_control(static_cast<int>(num("d", 2)), static_cast<int>(num("k", 2)), num("scale", 0.6),
                                         ctx.seed, optional_fractional(cfg, "alpha1", T),
                                         optional_fractional(cfg, "alpha2", T), T);
    const int k = cp.k;
    for (int i = 0; i < instances && budget_left(); ++i) {
      const AdaptedProcess u = random_control(tree, k, 0.5, ctx.seed * 1000 + 2 * i);
      const AdaptedProcess v = random_control(tree, k, 0.5, ctx.seed * 1000 + 2 * i + 1);
      const DualityReport d = duality_gap(cp, u, v, tree);
      record_gap(i, d.forcing_side, d.cost_side, d.gap);
    }
    if (budget_left()) {
      write_fd(fd_cost_derivative(cp, random_control(tree, k, 0.3, ctx.seed), random_control(tree, k, 0.3, ctx.seed + 1),
                                  tree, eps),
               r, ctx);
    }
    if (optimize && budget_left()) {
      const SearchResult s = projected_gradient_search(cp, constant_control(tree, cp.U.project(Vec::Zero(k))), tree, steps, rate, 1e-12);
      write_search(s, r, ctx);
      const StationarityReport st = check_stationarity(cp, s.u, tree, interior, ctx.seed);
      r.outputs["stationarity"] = stationarity_json(st);
      r.check("stationarity", st.margin >= -1e-6);
    }
  } else {
    DelayLQParams prm;
    prm.T = T;
    prm.delta = num("delta", prm.delta);
    prm.lambda = num("lambda", prm.lambda);
    prm.noise = num("noise", prm.noise);
    prm.rho = num("rho", prm.rho);
    prm.target = num("target", prm.target);
    prm.zero_delay = name == "delay_lq_zero";
    const DelayProblem dp = make_delay_lq(prm);
    for (int i = 0; i < instances && budget_left(); ++i) {
      const AdaptedProcess u = random_control(tree, dp.k, 0.5, ctx.seed * 1000 + 2 * i);
      const AdaptedProcess v = random_control(tree, dp.k, 0.5, ctx.seed * 1000 + 2 * i + 1);
      const DelayDuality d = delay_duality(dp, u, v, tree);
      record_gap(i, d.state_side, d.pq_side, d.gap);
    }
    const AdaptedProcess u = random_control(tree, dp.k, 0.4, ctx.seed);
    if (budget_left()) {
      write_fd(delay_fd_derivative(dp, u, random_control(tree, dp.k, 0.4, ctx.seed + 1), tree, eps), r, ctx);
    }
    if (prm.zero_delay && budget_left()) {
      const ControlProblem cp = undelayed_problem(dp);
      const AdaptedProcess g1 = delay_gradient(dp, u, tree), g2 = mp_gradient(cp, u, tree);
      double e = 0.0;
      for (int j = 0; j < tree.N; ++j) e = std::max(e, (g1.at[j] - g2.at[j]).cwiseAbs().maxCoeff());
      r.outputs["zero_delay_gradient_gap"] = e;
      r.check("zero_delay_reduction", e <= 1e-8);
    }
    if (optimize && budget_left()) {
      const SearchResult s = delay_projected_gradient_search(dp, constant_control(tree, Vec::Zero(dp.k)), tree, steps,
                                                             rate, 1e-12);
      write_search(s, r, ctx);
      const StationarityReport st = delay_mp_check(dp, s.u, tree, interior, ctx.seed);
      r.outputs["stationarity"] = stationarity_json(st);
      r.check("stationarity", st.margin >= -1e-6);
    }
  }
  gaps.write(path_in(ctx, "duality.csv"));
  r.outputs["duality"] = gap_rows;
  r.partial = r.partial || ctx.budget.exhausted();
  finish(r, ctx);
  return r;
}

RunReport cmd_suite(const Config& cfg, RunContext& ctx) {
  RunReport r = start("suite", cfg);
  suite::SuiteOptions opt;
  for (double c : cfg.reals("suite", "criteria", std::vector<double>{})) opt.only.push_back(static_cast<int>(c));
  opt.budget_seconds = ctx.budget.seconds() > 0.0 ? ctx.budget.remaining() : 0.0;
  if (ctx.budget.seconds() > 0.0 && opt.budget_seconds <= 0.0) opt.budget_seconds = 1e-9;
  CsvTable t{{"id", "check", "skipped", "seconds", "limit_seconds"}, {}};
  json rows = json::array(), seconds = json::object();
  for (const auto& c : suite::run_suite(opt)) {
    t.add({double(c.id), c.check ? 1.0 : 0.0, c.skipped ? 1.0 : 0.0, c.seconds, c.limit_seconds});
    rows.push_back(suite::to_json(c));
    seconds[std::to_string(c.id)] = c.seconds;
    if (c.skipped) {
      r.partial = true;
    } else {
      r.check("criterion_" + std::to_string(c.id), c.passed());
    }
  }
  t.write(path_in(ctx, "suite.csv"));
  r.outputs["criteria"] = rows;
  r.timings["criteria_seconds"] = seconds;
  finish(r, ctx);
  return r;
}

const char* csv_help() {
  return R"(CSV tables written to --out:
  kernel    partitions.csv   eps, feasible, budget_exceeded, blocks, local_sup
  forward   solution.csv     depth, node, component, value          (lattice, picard)
            solution.csv     index, time, component, value          (deterministic)
            moments.csv      time, component, mean, mean_se, second_moment, second_se  (paths)
            convergence.csv  N, mean_at_T, increment, reference_error   (with N_list)
  backward  Y.csv            depth, node, component, value
            Z.csv            i, j, node, component, value           (Z(t_i, t_j) at depth j)
            residuals.csv    quantity (0 equation, 1 M-condition), value
  control   duality.csv      instance, lhs, rhs, gap
            fd.csv           eps, fd, analytic, error
            trace.csv        step, cost, gradient_norm, update_norm, rate
            control.csv      depth, node, component, value          (optimizer output)
  suite     suite.csv        id, check, skipped, seconds, limit_seconds
Every run also writes report.json (schema_version, inputs, outputs, residuals,
checks, timings, tool_version, config_hash). Exit codes: 0 all checks pass,
1 a check failed, 2 invalid config or arguments, 3 partial result (budget).)";
}

}  // namespace svie::cli
