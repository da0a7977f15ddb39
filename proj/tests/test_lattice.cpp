#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "svie/lattice.hpp"

#include <random>
#include <sstream>

using namespace svie;

namespace {

NodeField random_field(const Tree& tree, int depth, int rows, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  NodeField x(rows, tree.nodes(depth));
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) x(r, c) = g(rng);
  }
  return x;
}

// Brute-force conditional expectation: average over every leaf whose
// ancestor at depth a matches.
NodeField enumerate_cond(const Tree& tree, const NodeField& x, int b, int a) {
  NodeField out = NodeField::Zero(x.rows(), tree.nodes(a));
  for (std::size_t n = 0; n < tree.nodes(b); ++n) {
    out.col(tree.ancestor(n, b, a)) += x.col(n);
  }
  return out / static_cast<double>(tree.nodes(b - a));
}

}  // namespace

TEST_CASE("tree construction and budget") {
  Tree t = make_tree(4, 2.0, 2, 3);
  CHECK(t.dt() == doctest::Approx(0.5));
  CHECK(t.nodes(3) == 64);
  CHECK(t.branches() == 4);
  CHECK_THROWS_AS(make_tree(12, 1.0, 2), std::invalid_argument);
  CHECK_THROWS_AS(make_tree(0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_tree(4, -1.0), std::invalid_argument);
  CHECK_NOTHROW(make_tree(22, 1.0));
}

TEST_CASE("increments have exact mean 0 and variance dt") {
  for (int m : {1, 2}) {
    Tree t = make_tree(5, 1.0, m);
    for (int step = 0; step < t.N; ++step) {
      NodeField w = increment_field(t, step, step + 1);
      NodeField m0 = conditional_expectation(t, w, step + 1, step);
      CHECK(m0.cwiseAbs().maxCoeff() == 0.0);
      NodeField sq = w.cwiseProduct(w);
      CHECK((conditional_expectation(t, sq, step + 1, step).array() - t.dt()).abs().maxCoeff() <= 1e-16);
      if (m == 2) {
        NodeField cross = w.row(0).cwiseProduct(w.row(1));
        CHECK(expectation(cross)(0) == 0.0);
      }
    }
  }
}

TEST_CASE("conditional expectation examples") {
  Tree t = make_tree(6, 1.0);
  NodeField c = NodeField::Constant(2, t.nodes(6), 3.5);
  CHECK((conditional_expectation(t, c, 6, 2).array() == 3.5).all());

  // W(t_b)^2 given F_a is W(t_a)^2 + (b - a) dt, checked against enumeration.
  for (int a : {0, 2, 5}) {
    NodeField w6 = brownian(t, 6);
    NodeField sq = w6.cwiseProduct(w6);
    NodeField wa = brownian(t, a);
    NodeField expect = (wa.cwiseProduct(wa).array() + (6 - a) * t.dt()).matrix();
    CHECK((conditional_expectation(t, sq, 6, a) - expect).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((conditional_expectation(t, sq, 6, a) - enumerate_cond(t, sq, 6, a)).cwiseAbs().maxCoeff() <= 1e-14);
  }
  CHECK_THROWS_AS(conditional_expectation(t, c, 6, 7), std::out_of_range);
  CHECK_THROWS_AS(conditional_expectation(t, c, 5, 2), std::invalid_argument);
}

TEST_CASE("property: tower property holds exactly") {
  std::mt19937_64 rng(3);
  for (int m : {1, 2}) {
    for (int N = 1; N <= (m == 1 ? 8 : 4); ++N) {
      Tree t = make_tree(N, 1.0, m);
      NodeField x = random_field(t, N, 2, rng);
      for (int a = 0; a <= N; ++a) {
        for (int c = a; c <= N; ++c) {
          NodeField two = conditional_expectation(t, conditional_expectation(t, x, N, c), c, a);
          NodeField one = conditional_expectation(t, x, N, a);
          CHECK((two - one).cwiseAbs().maxCoeff() == 0.0);
        }
      }
    }
  }
}

TEST_CASE("martingale representation examples") {
  Tree t = make_tree(6, 1.0);
  SUBCASE("a single increment") {
    const int j = 3;
    NodeField x = increment_field(t, j, 6);
    auto rep = martingale_representation(t, x, 6, 0);
    CHECK(rep.mean.cwiseAbs().maxCoeff() == 0.0);
    for (int s = 0; s < 6; ++s) {
      const double expect = s == j ? 1.0 : 0.0;
      CHECK((rep.z[s].array() - expect).abs().maxCoeff() <= 1e-15);
    }
  }
  SUBCASE("a constant") {
    NodeField c = NodeField::Constant(1, t.nodes(6), 2.0);
    auto rep = martingale_representation(t, c, 6, 2);
    for (const auto& z : rep.z) CHECK(z.cwiseAbs().maxCoeff() == 0.0);
    CHECK((rep.mean.array() == 2.0).all());
  }
  SUBCASE("W(T)^3 reconstructs at every leaf") {
    NodeField w = brownian(t, 6);
    NodeField x = w.cwiseProduct(w).cwiseProduct(w);
    auto rep = martingale_representation(t, x, 6, 0);
    NodeField back = lift(t, rep.mean, 0, 6) + stochastic_integral(t, rep.z, 0, 6);
    CHECK((back - x).cwiseAbs().maxCoeff() <= 1e-14);
  }
  SUBCASE("up/down difference formula") {
    std::mt19937_64 rng(5);
    NodeField x = random_field(t, 6, 1, rng);
    auto rep = martingale_representation(t, x, 6, 4);
    NodeField x5 = conditional_expectation(t, x, 6, 5);
    for (std::size_t n = 0; n < t.nodes(4); ++n) {
      const double up = x5(0, 2 * n + 1), down = x5(0, 2 * n);
      CHECK(rep.z[0](0, n) == doctest::Approx((up - down) / (2 * t.sqdt())).epsilon(1e-14));
    }
  }
}

TEST_CASE("property: reconstruction and isometry on random fields") {
  std::mt19937_64 rng(9);
  for (int N : {1, 3, 8}) {
    Tree t = make_tree(N, 0.7);
    for (int trial = 0; trial < 5; ++trial) {
      NodeField x = random_field(t, N, 3, rng);
      const int a = static_cast<int>(rng() % (N + 1));
      auto rep = martingale_representation(t, x, N, a);
      NodeField back = lift(t, rep.mean, a, N) + (N > a ? stochastic_integral(t, rep.z, a, N)
                                                         : NodeField::Zero(3, t.nodes(N)));
      CHECK((back - x).cwiseAbs().maxCoeff() <= 1e-13);
      // The integral is centred at depth a.
      if (N > a) {
        NodeField I = stochastic_integral(t, rep.z, a, N);
        CHECK(conditional_expectation(t, I, N, a).cwiseAbs().maxCoeff() <= 1e-14);
        CHECK(ito_isometry_check(t, rep.z, a, N) <= 1e-12);
      }
    }
  }
}

TEST_CASE("multi-dimensional noise: projection property and exact identities for linear fields") {
  Tree t = make_tree(4, 1.0, 2);
  NodeField w = brownian(t, 4);
  NodeField x = 2.0 * w.row(0) - 0.5 * w.row(1);
  auto rep = martingale_representation(t, x, 4, 0);
  for (const auto& z : rep.z) {
    CHECK((z.row(0).array() - 2.0).abs().maxCoeff() <= 1e-14);
    CHECK((z.row(1).array() + 0.5).abs().maxCoeff() <= 1e-14);
  }
  NodeField back = lift(t, rep.mean, 0, 4) + stochastic_integral(t, rep.z, 0, 4);
  CHECK((back - x).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("lattice works with long double scalars") {
  Tree t = make_tree(5, 1.0);
  NodeFieldT<long double> x = brownian(t, 5).cast<long double>();
  auto rep = martingale_representation(t, x, 5, 0);
  for (const auto& z : rep.z) CHECK(std::abs(static_cast<double>(z(0, 0)) - 1.0) <= 1e-15);
}

TEST_CASE("adapted storage and CSV dump") {
  Tree t = make_tree(2, 1.0);
  AdaptedProcess p = AdaptedProcess::zeros(t, 1);
  REQUIRE(p.at.size() == 3);
  CHECK(p.at[2].cols() == 4);
  p.at[1](0, 1) = 0.5;
  std::ostringstream os;
  write_csv(os, p);
  const std::string s = os.str();
  CHECK(s.rfind("depth,node,component,value\n", 0) == 0);
  CHECK(s.find("1,1,0,0.5\n") != std::string::npos);
  TwoParameterProcess z = TwoParameterProcess::zeros(t, 1);
  CHECK(z.z[1][0].cols() == 1);
  CHECK(z.z[0][1].cols() == 2);
}
