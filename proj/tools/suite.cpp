#include "suite.hpp"

#include "oracles.hpp"
#include "svie/control.hpp"
#include "svie/delay.hpp"
#include "svie/kernels.hpp"
#include "svie/registry.hpp"
#include "svie/report.hpp"
#include "svie/special.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <future>
#include <random>

namespace svie::suite {

using nlohmann::json;
using Vec = Eigen::VectorXd;

namespace {

// Frozen regression bounds. Measured maxima: forward 0.586 (free-term and
// drift shifts), backward 1.041 (constant and Brownian free-term shifts),
// both flat across the three perturbation sizes.
constexpr double kForwardStabilityBound = 0.75;
constexpr double kBackwardStabilityBound = 1.25;

struct Outcome {
  bool ok = false;
  std::string summary;
  json measured = json::object();
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double max_abs(const AdaptedProcess& a, const AdaptedProcess& b, int N) {
  double e = 0.0;
  for (int i = 0; i < N; ++i) e = std::max(e, (a.at[i] - b.at[i]).cwiseAbs().maxCoeff());
  return e;
}

double max_gap(const MSolution& a, const MSolution& b, int N) {
  double e = max_abs(a.Y, b.Y, N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N; ++j) e = std::max(e, (a.Z.z[i][j] - b.Z.z[i][j]).cwiseAbs().maxCoeff());
  }
  return e;
}

std::vector<NodeField> random_free_terms(const Tree& tree, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<NodeField> psi;
  for (int i = 0; i <= tree.N; ++i) {
    NodeField x(1, tree.nodes(tree.N));
    for (Eigen::Index n = 0; n < x.cols(); ++n) x(0, n) = g(rng);
    psi.push_back(x);
  }
  return psi;
}

Outcome c1_classification() {
  Outcome o;
  int matches = 0;
  json table = json::array();
  for (int a = 0; a <= 4; ++a) {
    for (int b = 0; b <= 4; ++b) {
      const KernelClassReport r = classify(make_doubly_singular(a / 10.0, b / 10.0));
      const bool ok = r.in_L2 && r.in_scriptL2 == (b == 0);
      matches += ok;
      table.push_back({{"alpha", a / 10.0}, {"beta", b / 10.0}, {"in_L2", r.in_L2}, {"in_scriptL2", r.in_scriptL2}});
    }
  }
  o.ok = matches == 25;
  o.measured = {{"matches", matches}, {"table", table}};
  o.summary = std::to_string(matches) + "/25 cells match";
  return o;
}

Outcome c2_counterexamples() {
  Outcome o;
  const KernelClassReport sup = classify(make_counterexample_sup(1.0), {1.0});
  const double sq = sup.script_norm.value * sup.script_norm.value;
  const bool cond1 = sup.script_norm.finite && std::abs(sq - 2.0) <= 1e-3;
  const bool cond2_fails = !sup.partition_results.at(1.0).feasible && !sup.partition_results.at(1.0).budget_exceeded;

  const double T = 1.0;
  const Kernel rev = make_convolution([T](double r) { return 1.0 / std::sqrt(T - r); }, false, T,
                                      Orientation::anticausal, "reverse_sqrt");
  const KernelClassReport f = classify(rev);
  bool all_feasible = !f.partition_results.empty();
  for (const auto& [eps, p] : f.partition_results) all_feasible = all_feasible && p.feasible;
  const bool divergent = !f.script_norm.finite;
  o.ok = cond1 && cond2_fails && all_feasible && divergent;
  o.measured = {{"sup_script_norm_sq", sq}, {"sup_partition_eps1_feasible", !cond2_fails},
                {"reverse_partitions_feasible", all_feasible}, {"reverse_script_norm_finite", !divergent}};
  o.summary = "script_norm^2 = " + fmt(sq) + ", eps=1 " + (cond2_fails ? "infeasible" : "feasible") +
              "; reverse kernel: partitions " + (all_feasible ? "feasible" : "not all feasible") +
              ", condition 1 " + (divergent ? "divergent" : "finite");
  return o;
}

Outcome c3_mittag_leffler() {
  Outcome o;
  const double alpha = 0.75, lambda = -1.0;
  const SVIEProblem p = make_fractional_relaxation(alpha, lambda);
  std::vector<double> errors;
  for (int N : {32, 64, 128, 256}) {
    const auto x = solve_deterministic(p, N);
    double e = 0.0;
    for (int i = 0; i <= N; ++i) {
      const double t = static_cast<double>(i) / N;
      e = std::max(e, std::abs(x[i](0) - mittag_leffler(alpha, 1.0, lambda * std::pow(t, alpha))));
    }
    errors.push_back(e);
  }
  bool monotone = true;
  for (std::size_t k = 1; k < errors.size(); ++k) monotone = monotone && errors[k] < errors[k - 1];
  o.ok = monotone && errors.back() <= 5e-3;
  o.measured = {{"N", {32, 64, 128, 256}}, {"sup_error", errors}};
  o.summary = "sup error at N=256: " + fmt(errors.back()) + (monotone ? ", decreasing" : ", not monotone");
  return o;
}

Outcome c4_identities() {
  Outcome o;
  const Tree tree = make_tree(8, 1.0, 1);
  std::mt19937_64 rng(404);
  std::normal_distribution<double> g;
  double m_worst = 0.0, ito_worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const auto psi = random_free_terms(tree, rng);
    const double a = 0.8 * g(rng), b = 0.8 * g(rng), c = 0.8 * g(rng);
    const MSolution s = solve_bsvie(oracle::linear_problem(make_fractional(0.7, Orientation::anticausal), a, b, c, psi), tree);
    m_worst = std::max(m_worst, m_condition_residual(s, tree));
    for (int i = 1; i < tree.N; ++i) {
      const auto rep = martingale_representation(tree, s.Y.at[i], i, 0);
      ito_worst = std::max(ito_worst, ito_isometry_check(tree, rep.z, 0, i));
    }
    const auto rep = martingale_representation(tree, psi[trial], tree.N, 0);
    ito_worst = std::max(ito_worst, ito_isometry_check(tree, rep.z, 0, tree.N));
  }
  o.ok = m_worst <= 1e-12 && ito_worst <= 1e-12;
  o.measured = {{"m_condition_residual", m_worst}, {"ito_isometry_residual", ito_worst}};
  o.summary = "M-condition " + fmt(m_worst) + ", isometry " + fmt(ito_worst);
  return o;
}

Outcome c5_bsde_reduction() {
  Outcome o;
  const Tree tree = make_tree(8, 1.0);
  const NodeField xi = (brownian(tree, 8).array().sin() + 0.5).matrix();
  auto ghat = [](double s, const Vec& y, const Vec& z) {
    return Vec(-0.7 * y + 0.4 * z.array().sin().matrix() + 0.2 * std::cos(s) * y.array().square().matrix());
  };
  BSVIEProblem p;
  p.label = "bsde_reduction";
  p.psi = [xi](const Tree&, int) { return xi; };
  p.terms.push_back({std::nullopt, [ghat](const GenPoint& pt, const Vec& y, const Vec& z1, const Vec&) {
                       return ghat(pt.s, y, z1);
                     }});
  p.lipschitz_y = make_constant(1.0);
  p.lipschitz_z1 = make_constant(0.4);
  const BSDESolution bsde = solve_bsde(xi, ghat, tree);
  const MSolution s = solve_bsvie(p, tree);
  double ey = 0.0, ez = 0.0;
  for (int i = 0; i < 8; ++i) {
    ey = std::max(ey, (s.Y.at[i] - bsde.Y.at[i]).cwiseAbs().maxCoeff());
    for (int j = i; j < 8; ++j) ez = std::max(ez, (s.Z.z[i][j] - bsde.Z[j]).cwiseAbs().maxCoeff());
  }
  o.ok = ey <= 1e-10 && ez <= 1e-10;
  o.measured = {{"max_Y_discrepancy", ey}, {"max_Z_discrepancy", ez}};
  o.summary = "|dY| " + fmt(ey) + ", |dZ| " + fmt(ez);
  return o;
}

Outcome c6_method_agreement() {
  Outcome o;
  const Tree tree = make_tree(6, 1.0);
  const std::vector<std::pair<std::string, Params>> problems = {
      {"fractional_generator", Params({{"alpha", 0.7}})},
      {"fbm_rl_generator", Params({{"H", 0.7}})},
      {"caputo_bsde", Params({{"alpha", 0.75}})}};
  double worst = 0.0;
  for (const auto& [name, prm] : problems) {
    const BSVIEProblem p = make_backward_example(name, prm);
    BSVIEOptions opt;
    opt.method = BSVIEMethod::block;
    const double e = max_gap(solve_bsvie(p, tree), solve_bsvie(p, tree, opt), 6);
    o.measured[name] = e;
    worst = std::max(worst, e);
  }
  o.ok = worst <= 1e-8;
  o.summary = "max discrepancy " + fmt(worst);
  return o;
}

Outcome c7_dense_oracle() {
  Outcome o;
  const int N = 6;
  const Tree tree = make_tree(N, 1.0);
  const Kernel k = make_fractional(0.7, Orientation::anticausal);
  std::vector<std::future<double>> jobs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    jobs.push_back(std::async(std::launch::async, [seed, &tree, &k] {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> g;
      const double a = 0.8 * g(rng), b = 0.8 * g(rng), c = 0.8 * g(rng);
      const auto psi = random_free_terms(tree, rng);
      const BSVIEProblem p = oracle::linear_problem(k, a, b, c, psi);
      const oracle::DenseOracle dense{tree, generator_weights(p.terms[0], tree), a, b, c};
      std::vector<std::vector<Vec>> zo;
      const auto yo = dense.solve(psi, zo);
      const MSolution s = solve_bsvie(p, tree);
      double e = 0.0;
      for (int i = 0; i < N; ++i) {
        e = std::max(e, (s.Y.at[i].row(0).transpose() - yo[i]).cwiseAbs().maxCoeff());
        for (int r = i; r < N; ++r) e = std::max(e, (s.Z.z[i][r].row(0).transpose() - zo[i][r]).cwiseAbs().maxCoeff());
      }
      return e;
    }));
  }
  std::vector<double> errs;
  for (auto& j : jobs) errs.push_back(j.get());
  const double worst = *std::max_element(errs.begin(), errs.end());
  o.ok = worst <= 1e-10;
  o.measured = {{"discrepancy", errs}};
  o.summary = "max discrepancy over 5 seeds " + fmt(worst);
  return o;
}

Outcome c8_duality() {
  Outcome o;
  const Tree tree = make_tree(6, 1.0);
  std::vector<std::future<DualityReport>> jobs;
  jobs.push_back(std::async(std::launch::async, [&tree] {
    const ControlProblem cp = make_lq_control(-0.6, 0.8, 0.3, 0.4, 1.0, 0.5, 1.0, 5.0, std::nullopt, std::nullopt);
    return duality_gap(cp, random_control(tree, 1, 0.5, 1), random_control(tree, 1, 0.5, 2), tree);
  }));
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    jobs.push_back(std::async(std::launch::async, [seed, &tree] {
      ControlProblem cp = make_random_linear_control(2, 2, 0.6, seed, make_fractional(0.7, Orientation::causal),
                                                     make_fractional(0.8, Orientation::causal));
      if (seed % 2 == 0) cp.diffusion_weight = DiffusionWeight::l2_matched;
      return duality_gap(cp, random_control(tree, 2, 0.7, 10 + seed), random_control(tree, 2, 0.7, 20 + seed), tree);
    }));
  }
  std::vector<double> gaps;
  for (auto& j : jobs) gaps.push_back(j.get().gap);
  const double worst = *std::max_element(gaps.begin(), gaps.end());
  o.ok = worst <= 1e-10;
  o.measured = {{"gaps", gaps}};
  o.summary = "max gap over 6 instances " + fmt(worst);
  return o;
}

Outcome c9_fd_consistency() {
  Outcome o;
  const Tree tree = make_tree(6, 1.0);
  const ControlProblem cp = make_lq_control(-0.6, 0.8, 0.3, 0.4, 1.0, 0.5, 1.0, 5.0, std::nullopt, std::nullopt);
  const auto rows = fd_cost_derivative(cp, random_control(tree, 1, 0.3, 1), random_control(tree, 1, 0.3, 2), tree);
  std::vector<double> errors, ratios;
  bool ratio_ok = rows.size() == 3;
  for (const auto& r : rows) errors.push_back(r.error);
  for (std::size_t k = 1; k < rows.size(); ++k) {
    ratios.push_back(rows[k - 1].error / rows[k].error);
    ratio_ok = ratio_ok && ratios.back() >= 5.0 && ratios.back() <= 20.0;
  }
  const SearchResult s = projected_gradient_search(cp, constant_control(tree, Vec::Zero(1)), tree, 400, 0.8, 1e-12);
  const StationarityReport st = check_stationarity(cp, s.u, tree);
  o.ok = ratio_ok && st.margin >= -1e-6;
  o.measured = {{"fd_errors", errors}, {"error_ratios", ratios}, {"stationarity_margin", st.margin},
                {"optimizer_steps", s.trace.size()}, {"converged", s.converged}};
  o.summary = "error ratios " + fmt(ratios.empty() ? 0 : ratios.front()) + ", " +
              fmt(ratios.size() > 1 ? ratios[1] : 0) + "; stationarity margin " + fmt(st.margin);
  return o;
}

Outcome c10_delay() {
  Outcome o;
  const Tree tree = make_tree(8, 1.0);
  const DelayProblem dp = make_delay_lq();
  const AdaptedProcess u = random_control(tree, 1, 0.5, 1), v = random_control(tree, 1, 0.5, 51);
  const AdaptedProcess X = solve_linear_svie(delay_to_svie(dp, u, v, tree).sys, tree);
  const AdaptedProcess x1 = delay_variational_direct(dp, u, v, tree);
  double e_aug = 0.0;
  for (int i = 0; i <= tree.N; ++i) e_aug = std::max(e_aug, (X.at[i].topRows(dp.d) - x1.at[i]).cwiseAbs().maxCoeff());

  DelayLQParams prm;
  prm.zero_delay = true;
  const DelayProblem dz = make_delay_lq(prm);
  const ControlProblem cp = undelayed_problem(dz);
  const AdaptedProcess w = random_control(tree, 1, 0.4, 1);
  const AdaptedProcess g1 = delay_gradient(dz, w, tree), g2 = mp_gradient(cp, w, tree);
  const double e_grad = max_abs(g1, g2, tree.N);
  o.ok = std::abs(dp.delta - tree.T / 4) < 1e-15 && e_aug <= 1e-10 && e_grad <= 1e-8;
  o.measured = {{"augmented_vs_direct", e_aug}, {"zero_delay_gradient_gap", e_grad}};
  o.summary = "augmented vs direct " + fmt(e_aug) + ", zero-delay gradient " + fmt(e_grad);
  return o;
}

Outcome c11_stability() {
  Outcome o;
  const std::vector<double> deltas = {1e-1, 1e-2, 1e-3};
  std::vector<double> fwd, bwd;
  {
    const Tree tree = make_tree(8, 1.0);
    const SVIEProblem p = make_linear_scalar(make_fractional(0.7, Orientation::causal), -1.0,
                                             make_constant(1.0, 1.0, Orientation::causal), 0.5, 1.0);
    for (double delta : deltas) {
      SVIEProblem q = p;
      q.phi = [delta](double) { return Vec::Constant(1, 1.0 + delta); };
      fwd.push_back(stability_gap(p, q, tree).ratio);
      SVIEProblem r = p;
      r.drift = [delta](const FwdPoint&, const Vec& x) { return Vec((-x.array() + delta).matrix()); };
      fwd.push_back(stability_gap(p, r, tree).ratio);
    }
  }
  {
    const Tree tree = make_tree(6, 1.0);
    const BSVIEProblem p = make_backward_example("fractional_generator");
    for (double delta : deltas) {
      BSVIEProblem q = p;
      q.psi = [delta](const Tree& t, int i) { return NodeField((default_free_term(t, i).array() + delta).matrix()); };
      bwd.push_back(stability_gap_bsvie(p, q, tree).ratio);
      BSVIEProblem r = p;
      r.psi = [delta](const Tree& t, int i) {
        return NodeField((default_free_term(t, i).array() + delta * brownian(t, t.N).array()).matrix());
      };
      bwd.push_back(stability_gap_bsvie(p, r, tree).ratio);
    }
  }
  auto within = [](const std::vector<double>& v, double bound) {
    return std::all_of(v.begin(), v.end(), [bound](double r) { return r > 0.0 && r <= bound; });
  };
  o.ok = within(fwd, kForwardStabilityBound) && within(bwd, kBackwardStabilityBound);
  o.measured = {{"perturbations", deltas}, {"forward_ratios", fwd}, {"backward_ratios", bwd},
                {"forward_bound", kForwardStabilityBound}, {"backward_bound", kBackwardStabilityBound}};
  o.summary = "forward max " + fmt(*std::max_element(fwd.begin(), fwd.end())) + " <= " + fmt(kForwardStabilityBound) +
              ", backward max " + fmt(*std::max_element(bwd.begin(), bwd.end())) + " <= " +
              fmt(kBackwardStabilityBound);
  return o;
}

Outcome c12_fbm_bound() {
  Outcome o;
  auto bound = [](double H, double t, double s) {
    return std::pow(s, -std::abs(H - 0.5)) * std::pow(t - s, -std::max(0.5 - H, 0.0));
  };
  auto grid_point = [](int i, int j) {
    const double t = (i + 1) / 51.0;
    return std::pair{t, t * (j + 1) / 51.0};
  };
  double C = 0.0;
  for (double H : {0.3, 0.7}) {
    const Kernel k = make_fbm_full(H);
    for (int i = 0; i < 50; ++i) {
      for (int j = 0; j < 50; ++j) {
        const auto [t, s] = grid_point(i, j);
        C = std::max(C, k(t, s) / bound(H, t, s));
      }
    }
  }
  double worst = -std::numeric_limits<double>::infinity();
  int violations = 0;
  for (double H : {0.3, 0.7}) {
    const Kernel k = make_fbm_full(H);
    for (int i = 0; i < 50; ++i) {
      for (int j = 0; j < 50; ++j) {
        const auto [t, s] = grid_point(i, j);
        const double excess = k(t, s) - C * bound(H, t, s);
        worst = std::max(worst, excess);
        violations += excess > 1e-9;
      }
    }
  }
  o.ok = std::isfinite(C) && C > 0.0 && violations == 0;
  o.measured = {{"C", C}, {"max_excess", worst}, {"violations", violations}};
  o.summary = "C = " + fmt(C) + ", " + std::to_string(violations) + " violations";
  return o;
}

using Runner = Outcome (*)();

const std::vector<Runner>& runners() {
  static const std::vector<Runner> r = {c1_classification, c2_counterexamples, c3_mittag_leffler, c4_identities,
                                        c5_bsde_reduction, c6_method_agreement, c7_dense_oracle,   c8_duality,
                                        c9_fd_consistency, c10_delay,           c11_stability,     c12_fbm_bound};
  return r;
}

}  // namespace

const std::vector<CriterionInfo>& criteria() {
  static const std::vector<CriterionInfo> c = {
      {1, "kernel classification table", 10},
      {2, "counterexample pair", 5},
      {3, "Mittag-Leffler forward oracle", 10},
      {4, "M-condition and Ito identities", 5},
      {5, "BSDE reduction", 5},
      {6, "method agreement", 30},
      {7, "dense-solve oracle", 30},
      {8, "duality principle", 20},
      {9, "variational inequality and FD consistency", 30},
      {10, "delay reduction", 20},
      {11, "stability estimates", 20},
      {12, "fBm kernel bound", 10},
  };
  return c;
}

std::vector<CriterionResult> run_suite(const SuiteOptions& opt, const std::function<void(const CriterionResult&)>& on_result) {
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  std::vector<CriterionResult> out;
  for (const auto& info : criteria()) {
    if (!opt.only.empty() && std::find(opt.only.begin(), opt.only.end(), info.id) == opt.only.end()) continue;
    CriterionResult r;
    r.id = info.id;
    r.name = info.name;
    r.limit_seconds = info.limit_seconds;
    const double used = std::chrono::duration<double>(clock::now() - start).count();
    if (opt.budget_seconds > 0.0 && used >= opt.budget_seconds) {
      r.skipped = true;
      r.summary = "skipped: budget exhausted";
    } else {
      const auto t0 = clock::now();
      try {
        Outcome o = runners()[info.id - 1]();
        r.check = o.ok;
        r.summary = std::move(o.summary);
        r.measured = std::move(o.measured);
      } catch (const std::exception& e) {
        r.check = false;
        r.summary = std::string("error: ") + e.what();
      }
      r.seconds = std::chrono::duration<double>(clock::now() - t0).count();
      r.in_time = r.seconds < r.limit_seconds;
    }
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_line(const CriterionResult& r) {
  char head[128];
  std::snprintf(head, sizeof head, "%s %2d  %-42s (%.2f s / %.0f s)  ", r.skipped ? "SKIP" : (r.passed() ? "PASS" : "FAIL"),
                r.id, r.name.c_str(), r.seconds, r.limit_seconds);
  std::string line = head + r.summary;
  if (!r.skipped && r.check && !r.in_time) line += " [over time limit]";
  return line;
}

json to_json(const CriterionResult& r) {
  return {{"id", r.id}, {"name", r.name}, {"check", r.check}, {"skipped", r.skipped},
          {"limit_seconds", r.limit_seconds}, {"summary", r.summary}, {"measured", r.measured}};
}

}  // namespace svie::suite
