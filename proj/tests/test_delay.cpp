#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "svie/delay.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <future>

using namespace svie;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace {

double max_diff(const AdaptedProcess& a, const AdaptedProcess& b, int rows_from = 0, int rows = -1) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.at.size(); ++i) {
    const int r = rows < 0 ? static_cast<int>(a.at[i].rows()) : rows;
    e = std::max(e, (a.at[i].middleRows(rows_from, r) - b.at[i]).cwiseAbs().maxCoeff());
  }
  return e;
}

}  // namespace

TEST_CASE("delay grid: snapping, cell weights and rejection of off-grid delays") {
  DelayProblem dp = make_delay_lq();
  const Tree tree = make_tree(8, 1.0);
  const DelayGrid g = delay_grid(dp, tree);
  CHECK(g.D == 2);
  double sum = 0.0;
  for (int k = 1; k <= g.D; ++k) sum += g.c[k];
  CHECK(sum == doctest::Approx(-std::expm1(-dp.lambda * dp.delta) / dp.lambda).epsilon(1e-14));
  CHECK((g.S[3] - Mat(dp.M * 0.375).exp()).norm() <= 1e-14);
  dp.delta = 0.3;
  CHECK_THROWS_AS(delay_grid(dp, tree), ControlError);
  dp.delta = 1.0;
  CHECK_THROWS_AS(delay_grid(dp, tree), ControlError);
  dp.delta = 0.1;
  CHECK_THROWS_AS(delay_grid(dp, make_tree(4, 1.0)), ControlError);
}

TEST_CASE("delay state: mild sum equals the step recursion with buffers") {
  const Tree tree = make_tree(8, 1.0);
  const DelayProblem dp = make_delay_lq();
  const AdaptedProcess u = random_control(tree, 1, 0.5, 3);
  const DelayState s = solve_delay_state(dp, u, tree);
  const DelayGrid g = delay_grid(dp, tree);
  const double dt = tree.dt();
  AdaptedProcess x = AdaptedProcess::zeros(tree, 2);
  x.at[0].col(0) = dp.xi(0.0);
  auto past = [&](int q, int j, std::size_t n) -> Vec {
    return q >= 0 ? Vec(x.at[q].col(tree.ancestor(n, j, q))) : dp.xi(q * dt);
  };
  for (int j = 0; j < tree.N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) {
      DelayArgs a;
      a.x = x.at[j].col(n);
      a.y = past(j - g.D, j, n);
      a.z = Vec::Zero(2);
      for (int k = 1; k <= g.D; ++k) a.z += g.c[k] * past(j - k, j, n);
      a.u = u.at[j].col(n);
      a.mu = j >= g.D ? Vec(u.at[j - g.D].col(tree.ancestor(n, j, j - g.D))) : dp.eta((j - g.D) * dt);
      for (int bit = 0; bit < 2; ++bit) {
        const double dw = bit ? tree.sqdt() : -tree.sqdt();
        x.at[j + 1].col(2 * n + bit) = g.S[1] * (a.x + dp.b.f(tree.time(j), a) * dt + dp.sigma.f(tree.time(j), a) * dw);
      }
    }
  }
  CHECK(max_diff(s.x, x) <= 1e-12);
}

TEST_CASE("augmented system reproduces the delayed variational equation") {
  const Tree tree = make_tree(8, 1.0);
  REQUIRE(std::abs(make_delay_lq().delta - tree.T / 4) < 1e-15);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const DelayProblem dp = make_delay_lq();
    const AdaptedProcess u = random_control(tree, 1, 0.5, seed), v = random_control(tree, 1, 0.5, seed + 50);
    const DelayVariation var = delay_to_svie(dp, u, v, tree);
    const AdaptedProcess X = solve_linear_svie(var.sys, tree);
    const AdaptedProcess x1 = delay_variational_direct(dp, u, v, tree);
    double scale = 0.0;
    for (const auto& f : x1.at) scale = std::max(scale, f.cwiseAbs().maxCoeff());
    CHECK(scale > 1e-2);
    CHECK(max_diff(X, x1, 0, 2) <= 1e-10);
    // The second and third blocks carry y1 1_{t > delta} and z1 on the buffers.
    const DelayGrid g = delay_grid(dp, tree);
    double e = 0.0;
    for (int i = 0; i <= tree.N; ++i) {
      for (std::size_t n = 0; n < tree.nodes(i); ++n) {
        const Vec y = i - g.D > 0 ? Vec(x1.at[i - g.D].col(tree.ancestor(n, i, i - g.D))) : Vec(Vec::Zero(2));
        Vec z = Vec::Zero(2);
        for (int k = 1; k <= std::min(i, g.D); ++k) z += g.c[k] * x1.at[i - k].col(tree.ancestor(n, i, i - k));
        e = std::max(e, (X.at[i].block(2, n, 2, 1) - y).cwiseAbs().maxCoeff());
        e = std::max(e, (X.at[i].block(4, n, 2, 1) - z).cwiseAbs().maxCoeff());
      }
    }
    CHECK(e <= 1e-10);
  }
}

TEST_CASE("differential third row approaches the buffered moving average under refinement") {
  double prev = 1e300;
  for (int N : {4, 8, 12, 16}) {
    const Tree tree = make_tree(N, 1.0);
    DelayLQParams prm;
    prm.noise = 0.0;
    const DelayProblem dp = make_delay_lq(prm);
    const AdaptedProcess u = constant_control(tree, Vec::Constant(1, 0.2));
    const AdaptedProcess v = constant_control(tree, Vec::Constant(1, -0.5));
    const AdaptedProcess a = solve_linear_svie(delay_to_svie(dp, u, v, tree).sys, tree);
    const AdaptedProcess b = solve_linear_svie(delay_to_svie(dp, u, v, tree, MovingAverageRow::differential).sys, tree);
    const double e = (a.at[N] - b.at[N]).cwiseAbs().maxCoeff();
    CHECK(e < prev);
    prev = e;
  }
  CHECK(prev < 2e-2);
}

TEST_CASE("delay adjoint: terminal representation and duality") {
  const Tree tree = make_tree(8, 1.0);
  const DelayProblem dp = make_delay_lq();
  const AdaptedProcess u = random_control(tree, 1, 0.5, 7);
  const DelayState s = solve_delay_state(dp, u, tree);
  const AdjointSolution adj = solve_delay_adjoint(dp, s, u, tree);
  for (int j = 0; j < tree.N; ++j) {
    std::vector<NodeField> tail(adj.zeta.begin() + j, adj.zeta.end());
    const NodeField rebuilt = lift(tree, adj.eta.at[j], j, tree.N) + stochastic_integral(tree, tail, j, tree.N);
    CHECK((rebuilt - adj.H).cwiseAbs().maxCoeff() <= 1e-13);
  }
  CHECK(m_condition_residual(adj.m, tree) <= 1e-12);

  std::vector<std::future<DelayDuality>> jobs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    jobs.push_back(std::async(std::launch::async, [seed, &tree, &dp] {
      return delay_duality(dp, random_control(tree, 1, 0.6, seed), random_control(tree, 1, 0.6, seed + 10), tree);
    }));
  }
  for (auto& j : jobs) {
    const DelayDuality r = j.get();
    CHECK(std::abs(r.state_side) > 1e-3);
    CHECK(r.gap <= 1e-10);
  }
  const DelayDuality d = delay_duality(dp, u, random_control(tree, 1, 0.6, 99), tree, {}, MovingAverageRow::differential);
  CHECK(d.gap <= 1e-10);
}

TEST_CASE("delay gradient matches node-wise finite differences of the cost") {
  const Tree tree = make_tree(8, 1.0);
  const DelayProblem dp = make_delay_lq();
  const AdaptedProcess u = random_control(tree, 1, 0.4, 5);
  const AdaptedProcess grad = delay_gradient(dp, u, tree);
  const double h = 1e-3;
  double worst = 0.0, size = 0.0;
  for (int j = 0; j < tree.N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) {
      AdaptedProcess up = u, dn = u;
      up.at[j](0, n) += h;
      dn.at[j](0, n) -= h;
      const double fd = (delay_cost(dp, up, tree) - delay_cost(dp, dn, tree)) / (2 * h);
      const double weight = tree.dt() / static_cast<double>(tree.nodes(j));
      worst = std::max(worst, std::abs(fd / weight - grad.at[j](0, n)));
      size = std::max(size, std::abs(grad.at[j](0, n)));
    }
  }
  CHECK(size > 1e-2);
  CHECK(worst <= 1e-8);
}

TEST_CASE("Hamiltonian gradient agrees with differences of G") {
  const DelayProblem dp = make_delay_lq();
  DelayArgs a{Vec::Constant(2, 0.3), Vec::Constant(2, -0.2), Vec::Constant(2, 0.1), Vec::Constant(1, 0.4),
              Vec::Constant(1, -0.1)};
  const Vec p = (Vec(2) << 0.7, -0.3).finished(), q = (Vec(2) << -0.2, 0.5).finished();
  const HamiltonianGradient G = hamiltonian_gradient(dp, 0.5, a, p, q);
  const double h = 1e-6;
  DelayArgs up = a, dn = a;
  up.u(0) += h;
  dn.u(0) -= h;
  CHECK(G.G_u(0) == doctest::Approx((hamiltonian_G(dp, 0.5, up, p, q) - hamiltonian_G(dp, 0.5, dn, p, q)) / (2 * h)).epsilon(1e-7));
  up = a;
  dn = a;
  up.mu(0) += h;
  dn.mu(0) -= h;
  CHECK(G.G_mu(0) == doctest::Approx((hamiltonian_G(dp, 0.5, up, p, q) - hamiltonian_G(dp, 0.5, dn, p, q)) / (2 * h)).epsilon(1e-7));
}

TEST_CASE("delay maximum condition") {
  const Tree tree = make_tree(8, 1.0);
  SUBCASE("control-free coefficients give a zero margin") {
    DelayProblem dp = make_delay_lq();
    auto zero_u = [](DelayMap& m) {
      m.f = [f = m.f](double t, const DelayArgs& a) {
        DelayArgs b = a;
        if (b.u.size()) b.u.setZero();
        if (b.mu.size()) b.mu.setZero();
        return f(t, b);
      };
      m.fu = [](double, const DelayArgs& a) { return Mat(Mat::Zero(a.x.size(), 1)); };
      m.fmu = m.fu;
    };
    zero_u(dp.b);
    zero_u(dp.sigma);
    dp.l.f = [](double, const DelayArgs& a) { return Vec(Vec::Constant(1, 0.5 * a.x.squaredNorm())); };
    dp.l.fx = [](double, const DelayArgs& a) { return Mat(a.x.transpose()); };
    dp.l.fy = dp.l.fz = [](double, const DelayArgs& a) { return Mat(Mat::Zero(1, a.x.size())); };
    dp.l.fu = dp.l.fmu = [](double, const DelayArgs&) { return Mat(Mat::Zero(1, 1)); };
    check_derivatives(dp);
    const StationarityReport r = delay_mp_check(dp, random_control(tree, 1, 0.5, 2), tree);
    CHECK(r.margin == 0.0);
  }
  SUBCASE("LQ optimum over the whole line") {
    const DelayProblem dp = make_delay_lq();
    const SearchResult s = delay_projected_gradient_search(dp, constant_control(tree, Vec::Zero(1)), tree, 500, 0.8, 1e-13);
    CHECK(s.converged);
    CHECK(delay_mp_check(dp, s.u, tree).margin >= -1e-8);
    CHECK(delay_mp_check(dp, constant_control(tree, Vec::Zero(1)), tree).margin < -1e-3);
  }
}

TEST_CASE("delay FD slope and zero-delay reduction to the Volterra problem") {
  const Tree tree = make_tree(8, 1.0);
  const AdaptedProcess u = random_control(tree, 1, 0.4, 1), v = random_control(tree, 1, 0.4, 2);
  const auto rows = delay_fd_derivative(make_delay_lq(), u, v, tree);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const double ratio = rows[r - 1].error / rows[r].error;
    CHECK(ratio >= 5.0);
    CHECK(ratio <= 20.0);
  }
  DelayLQParams prm;
  prm.zero_delay = true;
  const DelayProblem dz = make_delay_lq(prm);
  const ControlProblem cp = undelayed_problem(dz);
  check_derivatives(cp);
  const AdaptedProcess g1 = delay_gradient(dz, u, tree), g2 = mp_gradient(cp, u, tree);
  double e = 0.0;
  for (int j = 0; j < tree.N; ++j) e = std::max(e, (g1.at[j] - g2.at[j]).cwiseAbs().maxCoeff());
  CHECK(std::sqrt(pairing(tree, g1, g1)) > 1e-2);
  CHECK(e <= 1e-8);
  CHECK(delay_cost(dz, u, tree) == doctest::Approx(cost(cp, u, tree)).epsilon(1e-12));
}

TEST_CASE("delay problems without noise") {
  const Tree tree = make_tree(4, 1.0);
  DelayLQParams prm;
  prm.noise = 0.0;
  const DelayProblem dp = make_delay_lq(prm);
  CHECK(!dp.sigma.f);
  const AdaptedProcess u = random_control(tree, 1, 0.5, 1), v = random_control(tree, 1, 0.5, 2);
  CHECK(delay_duality(dp, u, v, tree).gap <= 1e-12);
  CHECK(max_diff(solve_linear_svie(delay_to_svie(dp, u, v, tree).sys, tree), delay_variational_direct(dp, u, v, tree), 0, 2) <= 1e-12);
}
