#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "svie/backward.hpp"
#include "svie/registry.hpp"
#include "svie/special.hpp"

#include <cmath>
#include <random>

using namespace svie;
using Vec = Eigen::VectorXd;
using oracle::DenseOracle;
using oracle::linear_problem;

namespace {

double max_gap(const MSolution& a, const MSolution& b, int N) {
  double e = 0.0;
  for (int i = 0; i < N; ++i) {
    e = std::max(e, (a.Y.at[i] - b.Y.at[i]).cwiseAbs().maxCoeff());
    for (int j = 0; j < N; ++j) e = std::max(e, (a.Z.z[i][j] - b.Z.z[i][j]).cwiseAbs().maxCoeff());
  }
  return e;
}

}  // namespace

TEST_CASE("BSDE examples") {
  Tree tree = make_tree(7, 1.0);
  SUBCASE("zero generator, deterministic terminal value") {
    auto s = solve_bsde(NodeField::Constant(1, tree.nodes(7), 2.5), [](double, const Vec& y, const Vec&) {
      return Vec(0 * y);
    }, tree);
    for (const auto& y : s.Y.at) CHECK((y.array() == 2.5).all());
    for (const auto& z : s.Z) CHECK(z.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("zero generator, Brownian terminal value") {
    auto s = solve_bsde(brownian(tree, 7), [](double, const Vec& y, const Vec&) { return Vec(0 * y); }, tree);
    for (int j = 0; j <= 7; ++j) CHECK((s.Y.at[j] - brownian(tree, j)).cwiseAbs().maxCoeff() <= 1e-15);
    for (const auto& z : s.Z) CHECK((z.array() - 1.0).abs().maxCoeff() <= 1e-14);
  }
  SUBCASE("linear decay against the discrete closed forms") {
    const double c = 0.9, dt = tree.dt();
    auto g = [c](double, const Vec& y, const Vec&) { return Vec(-c * y); };
    const NodeField one = NodeField::Ones(1, tree.nodes(7));
    CHECK(std::abs(solve_bsde(one, g, tree).Y.at[0](0, 0) - std::pow(1 + c * dt, -7)) <= 1e-12);
    CHECK(std::abs(solve_bsde(one, g, tree, YInput::next).Y.at[0](0, 0) - std::pow(1 - c * dt, 7)) <= 1e-12);
  }
  CHECK_THROWS_AS(solve_bsde(NodeField::Ones(1, 4), [](double, const Vec& y, const Vec&) { return y; }, tree),
                  std::invalid_argument);
  CHECK_THROWS_AS(solve_bsde(NodeField::Ones(1, 16), [](double, const Vec& y, const Vec&) { return y; },
                             make_tree(2, 1.0, 2)),
                  std::invalid_argument);
}

TEST_CASE("BSVIE trivial examples") {
  Tree tree = make_tree(6, 1.0);
  for (BSVIEMethod m : {BSVIEMethod::fixed_point, BSVIEMethod::block}) {
    BSVIEOptions opt;
    opt.method = m;
    BSVIEProblem p;
    p.psi = [](const Tree& t, int i) { return NodeField::Constant(1, t.nodes(t.N), 1.0 + i); };
    MSolution s = solve_bsvie(p, tree, opt);
    for (int i = 0; i < 6; ++i) {
      CHECK((s.Y.at[i].array() == 1.0 + i).all());
      for (int j = 0; j < 6; ++j) CHECK(s.Z.z[i][j].cwiseAbs().maxCoeff() == 0.0);
    }
    BSVIEProblem q;
    q.psi = [](const Tree& t, int) { return brownian(t, t.N); };
    MSolution w = solve_bsvie(q, tree, opt);
    for (int i = 0; i < 6; ++i) {
      CHECK((w.Y.at[i] - brownian(tree, i)).cwiseAbs().maxCoeff() <= 1e-15);
      for (int j = 0; j < 6; ++j) CHECK((w.Z.z[i][j].array() - 1.0).abs().maxCoeff() <= 1e-14);
    }
    CHECK(w.m_residual <= 1e-14);
    CHECK(w.residual <= 1e-14);
  }
}

TEST_CASE("BSVIE with t-independent data reduces to the BSDE") {
  Tree tree = make_tree(8, 1.0);
  const NodeField xi = (brownian(tree, 8).array().sin() + 0.5).matrix();
  auto ghat = [](double s, const Vec& y, const Vec& z) {
    return Vec(-0.7 * y + 0.4 * z.array().sin().matrix() + 0.2 * std::cos(s) * y.array().square().matrix());
  };
  BSVIEProblem p;
  p.psi = [xi](const Tree&, int) { return xi; };
  p.terms.push_back({std::nullopt, [ghat](const GenPoint& pt, const Vec& y, const Vec& z1, const Vec&) {
                       return ghat(pt.s, y, z1);
                     }});
  p.lipschitz_y = make_constant(1.0);
  p.lipschitz_z1 = make_constant(0.4);
  const BSDESolution bsde = solve_bsde(xi, ghat, tree);
  for (BSVIEMethod m : {BSVIEMethod::fixed_point, BSVIEMethod::block}) {
    BSVIEOptions opt;
    opt.method = m;
    MSolution s = solve_bsvie(p, tree, opt);
    double e = 0.0;
    for (int i = 0; i < 8; ++i) {
      e = std::max(e, (s.Y.at[i] - bsde.Y.at[i]).cwiseAbs().maxCoeff());
      for (int j = i; j < 8; ++j) e = std::max(e, (s.Z.z[i][j] - bsde.Z[j]).cwiseAbs().maxCoeff());
    }
    CHECK(e <= 1e-10);
    CHECK(s.residual <= 1e-10);
  }
}

TEST_CASE("dense linear-algebra oracle") {
  const int N = 6;
  Tree tree = make_tree(N, 1.0);
  SUBCASE("decay generator with unit free term") {
    BSVIEProblem p = make_backward_example("linear", Params({{"c", 0.8}}));
    DenseOracle o{tree, generator_weights(p.terms[0], tree), -0.8, 0.0, 0.0};
    std::vector<std::vector<Vec>> z;
    auto y = o.solve(std::vector<NodeField>(N, NodeField::Ones(1, tree.nodes(N))), z);
    MSolution s = solve_bsvie(p, tree);
    for (int i = 0; i < N; ++i) CHECK((s.Y.at[i].row(0).transpose() - y[i]).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("random linear generators and free terms") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g;
    const Kernel k = make_fractional(0.7, Orientation::anticausal);
    for (int seed = 0; seed < 5; ++seed) {
      const double a = 0.8 * g(rng), b = 0.8 * g(rng), c = 0.8 * g(rng);
      std::vector<NodeField> psi;
      for (int i = 0; i <= N; ++i) {
        NodeField x(1, tree.nodes(N));
        for (Eigen::Index n = 0; n < x.cols(); ++n) x(0, n) = g(rng);
        psi.push_back(x);
      }
      BSVIEProblem p = linear_problem(k, a, b, c, psi);
      DenseOracle o{tree, generator_weights(p.terms[0], tree), a, b, c};
      std::vector<std::vector<Vec>> zo;
      auto yo = o.solve(psi, zo);
      for (BSVIEMethod m : {BSVIEMethod::fixed_point, BSVIEMethod::block}) {
        BSVIEOptions opt;
        opt.method = m;
        MSolution s = solve_bsvie(p, tree, opt);
        double e = 0.0;
        for (int i = 0; i < N; ++i) {
          e = std::max(e, (s.Y.at[i].row(0).transpose() - yo[i]).cwiseAbs().maxCoeff());
          for (int r = i; r < N; ++r) e = std::max(e, (s.Z.z[i][r].row(0).transpose() - zo[i][r]).cwiseAbs().maxCoeff());
        }
        CHECK(e <= 1e-10);
        CHECK(s.m_residual <= 1e-12);
        CHECK(s.residual <= 1e-10);
      }
    }
  }
}

TEST_CASE("fixed point and block methods agree on the registry problems") {
  Tree tree = make_tree(6, 1.0);
  for (const std::string name : {"fractional_generator", "fbm_rl_generator", "caputo_bsde"}) {
    CAPTURE(name);
    BSVIEProblem p = make_backward_example(name);
    MSolution f = solve_bsvie(p, tree);
    BSVIEOptions opt;
    opt.method = BSVIEMethod::block;
    MSolution b = solve_bsvie(p, tree, opt);
    CHECK(b.block_starts.size() > 1);
    CHECK(max_gap(f, b, 6) <= 1e-8);
    CHECK(f.m_residual <= 1e-12);
    CHECK(b.m_residual <= 1e-12);
    CHECK(b.residual <= 1e-10);
    // A hand-picked partition gives the same answer.
    opt.block_starts = {2, 3, 5};
    CHECK(max_gap(f, solve_bsvie(p, tree, opt), 6) <= 1e-8);
  }
}

TEST_CASE("last-block contraction ratio at the half budget") {
  Tree tree = make_tree(8, 1.0);
  BSVIEProblem p = make_backward_example("fractional_generator");
  BSVIEOptions opt;
  opt.method = BSVIEMethod::block;
  MSolution s = solve_bsvie(p, tree, opt);
  REQUIRE(!s.contraction_ratios.empty());
  CHECK(s.contraction_ratios.back() <= 0.5 + 1e-12);
}

TEST_CASE("parameterized family and Fredholm equation") {
  Tree tree = make_tree(6, 1.0);
  TerminalField psi;
  for (int i = 0; i <= 6; ++i) psi.push_back(default_free_term(tree, i));
  SUBCASE("h = 0 gives conditional expectations") {
    auto fam = solve_param_bsde_family(psi, [](const GenPoint&, const Vec& z) { return Vec(0 * z); }, tree, 1, 2);
    REQUIRE(fam.outer.size() == 4);
    for (std::size_t k = 0; k < fam.outer.size(); ++k) {
      const int i = fam.outer[k];
      for (int r = 1; r <= 6; ++r) {
        CHECK((fam.lambda[k].at[r] - conditional_expectation(tree, psi[i], 6, r)).cwiseAbs().maxCoeff() <= 1e-15);
      }
      CHECK(fam.lambda[k].at[0].size() == 0);
    }
  }
  SUBCASE("linear h matches the BSDE") {
    auto h = [](const GenPoint&, const Vec& z) { return Vec(0.5 * z); };
    auto fam = solve_param_bsde_family(psi, h, tree, 0, 3);
    auto bsde = solve_bsde(psi[3], [](double, const Vec&, const Vec& z) { return Vec(0.5 * z); }, tree);
    for (int r = 0; r <= 6; ++r) CHECK((fam.lambda[0].at[r] - bsde.Y.at[r]).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("Fredholm values are measurable at the window start") {
    auto h = [](const GenPoint& pt, const Vec& z) { return Vec(std::cos(pt.t) * z.array().sin().matrix()); };
    auto sf = solve_sfie(psi, h, tree, 1, 4, make_fractional(0.75, Orientation::anticausal));
    REQUIRE(sf.outer == std::vector<int>({1, 2, 3, 4}));
    for (const auto& f : sf.psiS) CHECK(f.cols() == static_cast<Eigen::Index>(tree.nodes(4)));
    CHECK(sf.Z[0][3].size() == 0);
    CHECK(sf.Z[0][4].cols() == static_cast<Eigen::Index>(tree.nodes(4)));
  }
}

TEST_CASE("Caputo backward examples") {
  Tree tree = make_tree(7, 1.0);
  const NodeField xi = (brownian(tree, 7).array().cos()).matrix();
  auto xi_fn = [xi](const Tree&) { return xi; };
  SUBCASE("f = 0 and A = 0 give conditional expectations") {
    BSVIEProblem p = make_caputo_bsde(0.75, Eigen::MatrixXd::Zero(1, 1), nullptr, xi_fn, 0.0);
    MSolution s = solve_bsvie(p, tree);
    for (int i = 0; i < 7; ++i) CHECK((s.Y.at[i] - conditional_expectation(tree, xi, 7, i)).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("alpha near 1 approaches the BSDE") {
    auto f = [](double, const Vec& y, const Vec& z) { return Vec(0.3 * y.array().sin().matrix() + 0.5 * z); };
    const Eigen::MatrixXd A = Eigen::MatrixXd::Constant(1, 1, 0.5);
    auto bsde = solve_bsde(xi, [f, A](double s, const Vec& y, const Vec& z) { return Vec(f(s, y, z) - A * y); }, tree);
    MSolution one = solve_bsvie(make_caputo_bsde(1.0, A, f, xi_fn, 0.8), tree);
    for (int i = 0; i < 7; ++i) CHECK((one.Y.at[i] - bsde.Y.at[i]).cwiseAbs().maxCoeff() <= 1e-12);
    double prev = 1.0;
    for (double alpha : {0.9, 0.99, 0.999}) {
      MSolution s = solve_bsvie(make_caputo_bsde(alpha, A, f, xi_fn, 0.8), tree);
      const double e = (s.Y.at[0] - bsde.Y.at[0]).cwiseAbs().maxCoeff();
      CHECK(e < prev);
      prev = e;
    }
    CHECK(prev <= 1e-2);
  }
  CHECK_THROWS_AS(make_caputo_bsde(0.4, Eigen::MatrixXd::Zero(1, 1), nullptr, xi_fn, 0.0), std::invalid_argument);
}

TEST_CASE("linear adjoint example") {
  Tree tree = make_tree(6, 1.0);
  auto M1 = [](double t) { return Eigen::MatrixXd::Constant(1, 1, -0.5 + 0.2 * t); };
  auto M2 = [](double) { return Eigen::MatrixXd::Constant(1, 1, 0.3); };
  auto S = [](double lag) { return Eigen::MatrixXd::Constant(1, 1, std::exp(-lag)); };
  BSVIEProblem p = make_linear_adjoint(M1, M2, S, default_free_term, 1, 0.7, 0.3,
                                       make_fractional(0.8, Orientation::anticausal));
  MSolution f = solve_bsvie(p, tree);
  BSVIEOptions opt;
  opt.block_starts = {3};
  MSolution b = solve_bsvie(p, tree, opt);
  CHECK(max_gap(f, b, 6) <= 1e-10);
  CHECK(f.residual <= 1e-10);
}

TEST_CASE("backward stability ratios stay bounded") {
  Tree tree = make_tree(6, 1.0);
  BSVIEProblem p = make_backward_example("fractional_generator");
  CHECK(stability_gap_bsvie(p, p, tree).exact_zero);
  std::vector<double> ratios;
  for (double delta : {1e-1, 1e-2, 1e-3}) {
    BSVIEProblem q = p;
    q.psi = [delta](const Tree& t, int i) { return NodeField((default_free_term(t, i).array() + delta).matrix()); };
    ratios.push_back(stability_gap_bsvie(p, q, tree).ratio);
  }
  for (double r : ratios) {
    CHECK(r > 0.0);
    CHECK(r <= 5.0);
  }
  CHECK(ratios[0] == doctest::Approx(ratios[2]).epsilon(0.1));
}

TEST_CASE("divergence and invalid inputs") {
  Tree tree = make_tree(6, 1.0);
  BSVIEProblem p = make_backward_example("linear", Params({{"c", -40.0}}));
  CHECK_THROWS_AS(solve_bsvie(p, tree), BackwardError);
  CHECK_THROWS_AS(solve_bsvie(p, make_tree(3, 1.0, 2)), std::invalid_argument);
  BSVIEOptions opt;
  opt.block_starts = {7};
  CHECK_THROWS_AS(solve_bsvie(make_backward_example("linear"), tree, opt), std::invalid_argument);
  BSVIEProblem bad = make_backward_example("fractional_generator");
  bad.lipschitz_z2 = make_doubly_singular(0.5, 0.0);
  opt = {};
  opt.method = BSVIEMethod::block;
  CHECK_THROWS_AS(solve_bsvie(bad, tree, opt), BackwardError);
}
