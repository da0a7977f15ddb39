#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "svie/kernels.hpp"
#include "svie/quadrature.hpp"

#include <cmath>
#include <random>

using namespace svie;

namespace {

// Composite Gauss-Legendre on a geometric mesh toward both endpoints; an
// oracle independent of the tanh-sinh rule used by the library.
double graded_gauss(const std::function<double(double)>& f, double a, double b, int levels) {
  double sum = 0.0;
  const double mid = 0.5 * (a + b);
  double hi = mid;
  for (int k = 0; k < levels; ++k) {
    const double lo = a + 0.5 * (hi - a);
    sum += gauss_legendre(f, lo, hi, 1);
    hi = lo;
  }
  double lo = mid;
  for (int k = 0; k < levels; ++k) {
    const double up = b - 0.5 * (b - lo);
    sum += gauss_legendre(f, lo, up, 1);
    lo = up;
  }
  return sum;
}

Kernel f1_kernel(double T) {
  return make_convolution([T](double r) { return 1.0 / std::sqrt(T - r); }, false, T,
                          Orientation::anticausal, "f1");
}

}  // namespace

TEST_CASE("slice_l2 closed forms") {
  SUBCASE("doubly singular") {
    for (double a : {0.0, 0.2, 0.4}) {
      for (double b : {0.0, 0.3}) {
        auto k = make_doubly_singular(a, b);
        for (double t : {0.01, 0.3, 0.9}) {
          const double expect = std::pow(1 - t, 1 - 2 * a) * std::pow(t, -2 * b) / (1 - 2 * a);
          CHECK(slice_l2(k, t, 1.0) == doctest::Approx(std::sqrt(expect)).epsilon(1e-13));
        }
      }
    }
  }
  SUBCASE("constant kernel gives sqrt(T)") {
    CHECK(slice_l2(make_constant(1.0, 2.5), 0.0, 2.5) == doctest::Approx(std::sqrt(2.5)));
  }
  SUBCASE("counterexample has squared slice 2") {
    auto k = make_counterexample_sup();
    for (double t : {0.0, 0.5, 0.999}) {
      const double v = slice_l2(k, t, 1.0);
      CHECK(v * v == doctest::Approx(2.0).epsilon(1e-13));
    }
  }
  SUBCASE("divergent diagonal is flagged") {
    CHECK(std::isinf(slice_l2(make_doubly_singular(0.5, 0.0), 0.2, 1.0)));
  }
  SUBCASE("adaptive path agrees with closed form") {
    auto k = make_kernel("raw", Orientation::anticausal, 1.0,
                         [](double e, double g) { return std::pow(g, -0.3) * std::exp(-e); });
    const double t = 0.25;
    const double expect = std::exp(-t) * std::sqrt(std::pow(0.75, 0.4) / 0.4);
    CHECK(slice_l2(k, t, 1.0) == doctest::Approx(expect).epsilon(1e-8));
  }
  SUBCASE("invalid interval") {
    CHECK_THROWS_AS(slice_l2(make_constant(1.0), 0.5, 0.5), std::invalid_argument);
  }
}

TEST_CASE("triangle_l2_norm") {
  CHECK(triangle_l2_norm(make_constant(1.0)).value == doctest::Approx(std::sqrt(0.5)));
  CHECK_FALSE(triangle_l2_norm(make_fractional(0.4, Orientation::causal)).finite);
  CHECK_FALSE(triangle_l2_norm(make_fractional(0.2, Orientation::causal)).finite);

  // doubly_singular(0.3, 0.3): analytic value B(0.4, 1.4)/0.4 plus an
  // independent two-level graded Gauss check.
  auto k = make_doubly_singular(0.3, 0.3);
  Measured m = triangle_l2_norm(k);
  REQUIRE(m.finite);
  const double exact = std::beta(0.4, 1.4) / 0.4;
  CHECK(m.value * m.value == doctest::Approx(exact).epsilon(1e-8));
  auto outer = [](double t) { return std::pow(t, -0.6) * std::pow(1 - t, 0.4) / 0.4; };
  const double lvl1 = graded_gauss(outer, 0.0, 1.0, 60);
  const double lvl2 = graded_gauss(outer, 0.0, 1.0, 120);
  CHECK(std::abs(lvl2 - lvl1) <= 1e-6 * lvl2);
  CHECK(m.value * m.value == doctest::Approx(lvl2).epsilon(1e-6));

  // Non-closed-form kernel with a divergent diagonal.
  auto bad = make_kernel("bad", Orientation::anticausal, 1.0,
                         [](double, double g) { return std::pow(g, -0.7); });
  CHECK_FALSE(triangle_l2_norm(bad).finite);
}

TEST_CASE("find_partition examples") {
  SUBCASE("square integrable convolution is feasible for every eps") {
    auto k = make_convolution([](double r) { return 1.0 + std::pow(r, -0.2); }, true);
    for (double eps : {1.0, 0.3, 0.05, 0.01}) {
      PartitionResult p = find_partition(k, eps);
      CHECK(p.feasible);
      CHECK(verify_partition(k, p.partition, eps, 8));
    }
  }
  SUBCASE("counterexample is infeasible below sqrt 2 with witness near T") {
    auto k = make_counterexample_sup();
    for (double eps : {1.0, 1.4}) {
      PartitionResult p = find_partition(k, eps);
      CHECK_FALSE(p.feasible);
      CHECK_FALSE(p.budget_exceeded);
      CHECK(p.witness > 0.99);
    }
    CHECK(find_partition(k, 1.5).feasible);
  }
  SUBCASE("zero kernel uses a single interval") {
    for (double eps : {1.0, 1e-3}) {
      PartitionResult p = find_partition(make_zero(), eps);
      REQUIRE(p.feasible);
      CHECK(p.partition.blocks() == 1);
      CHECK(p.partition.points() == std::vector<double>{0.0, 1.0});
    }
  }
  SUBCASE("non-convolution kernel gets explicit breakpoints") {
    auto k = make_kernel("tilted", Orientation::anticausal, 1.0,
                         [](double e, double g) { return (1.0 + 3.0 * e) * std::pow(g, -0.25); },
                         SingularityHint{-0.25, 0.0});
    PartitionResult p = find_partition(k, 1.0);
    REQUIRE(p.feasible);
    CHECK_FALSE(p.partition.uniform());
    const auto& b = p.partition.breakpoints;
    CHECK(b.front() == 0.0);
    CHECK(b.back() == 1.0);
    for (std::size_t i = 0; i + 1 < b.size(); ++i) CHECK(b[i + 1] > b[i]);
    // The later blocks see a larger kernel, so they are shorter.
    CHECK(b[1] - b[0] > b[b.size() - 1] - b[b.size() - 2]);
    CHECK(verify_partition(k, p.partition, 1.0, 8));
  }
  SUBCASE("breakpoint cap reports budget, not infeasibility") {
    auto k = make_kernel("tilted", Orientation::anticausal, 1.0,
                         [](double e, double g) { return (1.0 + e) * std::pow(g, -0.25); },
                         SingularityHint{-0.25, 0.0});
    PartitionOptions opt;
    opt.max_breakpoints = 3;
    PartitionResult p = find_partition(k, 0.3, opt);
    CHECK_FALSE(p.feasible);
    CHECK(p.budget_exceeded);
  }
  CHECK_THROWS_AS(find_partition(make_constant(1.0), 0.0), std::invalid_argument);
}

TEST_CASE("uniform partitions expand consistently") {
  Partition p;
  p.T = 1.0;
  p.step = 0.3;
  CHECK(p.blocks() == 4);
  CHECK(p.block(3).second == 1.0);
  const auto pts = p.points();
  REQUIRE(pts.size() == 5);
  CHECK(pts[2] == doctest::Approx(0.6));
}

TEST_CASE("classify examples") {
  for (int a = 0; a <= 4; ++a) {
    for (int b = 0; b <= 4; ++b) {
      KernelClassReport r = classify(make_doubly_singular(a / 10.0, b / 10.0));
      CHECK(r.in_L2);
      CHECK(r.in_scriptL2 == (b == 0));
    }
  }
  KernelClassReport f = classify(f1_kernel(1.0));
  CHECK(f.in_L2);
  CHECK_FALSE(f.script_norm.finite);
  CHECK_FALSE(f.in_scriptL2);
  for (const auto& [eps, p] : f.partition_results) CHECK(p.feasible);

  KernelClassReport one = classify(make_constant(1.0));
  CHECK(one.in_L2);
  CHECK(one.in_scriptL2);
  CHECK(one.in_K0);
  CHECK(one.diagnostics.count("grid_density_per_decade"));
  CHECK_THROWS_AS(classify(make_constant(1.0), {}), std::invalid_argument);
}

TEST_CASE("property: class inclusion and partition re-verification on random kernels") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 12; ++trial) {
    Kernel k;
    switch (trial % 3) {
      case 0: k = make_doubly_singular(0.45 * u(rng), u(rng) < 0.5 ? 0.0 : 0.45 * u(rng)); break;
      case 1: k = make_exp_sum({u(rng), u(rng)}, {5 * u(rng), 5 * u(rng)}, 1.0, Orientation::anticausal); break;
      default: {
        const double c = 1 + 2 * u(rng);
        k = make_kernel("random_tilt", Orientation::anticausal, 1.0,
                        [c](double e, double g) { return (1 + c * e) * std::pow(g, -0.2); },
                        SingularityHint{-0.2, 0.0});
        k.power = PowerForm{1.0, -0.2, [c](double e) { return 1 + c * e; }};
      }
    }
    const std::vector<double> grid{1.0, 0.5};
    KernelClassReport r = classify(k, grid);
    if (r.in_scriptL2) {
      CHECK(r.in_L2);
      CHECK(r.script_norm.finite);
    }
    for (const auto& [eps, p] : r.partition_results) {
      if (p.feasible) CHECK(verify_partition(k, p.partition, eps, 8));
    }
  }
}

TEST_CASE("k0_membership") {
  SUBCASE("fractional kernels are members with sliding integral eps^a/a") {
    for (double a : {0.3, 0.6, 0.9}) {
      K0Report r = k0_membership(make_fractional(a, Orientation::causal));
      CHECK(r.member);
      CHECK(r.sup_l1_slice == doctest::Approx(1.0 / a).epsilon(1e-10));
      for (const auto& [eps, v] : r.sliding) CHECK(v == doctest::Approx(std::pow(eps, a) / a));
    }
  }
  SUBCASE("1/t has bounded slices but a sliding sup that stays at 1") {
    auto k = make_kernel("inverse_t", Orientation::causal, 1.0,
                         [](double s, double g) { return 1.0 / (s + g); });
    K0Report r = k0_membership(k);
    CHECK_FALSE(r.member);
    CHECK(r.sup_l1_slice == doctest::Approx(1.0));
    for (const auto& [eps, v] : r.sliding) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("zero kernel") { CHECK(k0_membership(make_zero(1.0, Orientation::causal)).member); }
  SUBCASE("non-integrable diagonal") {
    CHECK_FALSE(k0_membership(make_kernel("bad", Orientation::causal, 1.0,
                                          [](double, double g) { return 1.0 / g; }))
                    .member);
  }
}

TEST_CASE("product_weights") {
  for (double a : {0.25, 0.5, 0.75}) {
    auto k = make_fractional(a, Orientation::causal);
    for (int n : {7, 64}) {
      const double t = 0.8;
      std::vector<double> grid;
      for (int j = 0; j <= n; ++j) grid.push_back(t * j / n);
      auto w = product_weights(k, t, grid);
      double s = 0.0;
      for (double x : w) s += x;
      CHECK(std::abs(s / (std::pow(t, a) / a) - 1.0) <= 1e-12);
    }
  }
  SUBCASE("exp sum and adaptive cells agree") {
    auto e = make_exp_sum({1.0, 0.5}, {2.0, 0.0});
    auto raw = make_kernel("raw", Orientation::causal, 1.0,
                           [](double, double g) { return std::exp(-2 * g) + 0.5; });
    for (double lo : {0.0, 0.3, 0.69}) {
      CHECK(cell_integral(e, 0.7, lo, lo + 0.01) ==
            doctest::Approx(cell_integral(raw, 0.7, lo, lo + 0.01)).epsilon(1e-11));
    }
  }
  SUBCASE("anticausal cells integrate over the later time") {
    auto k = make_doubly_singular(0.3, 0.2);
    const double t = 0.4;
    const double expect = std::pow(t, -0.2) * (std::pow(0.2, 0.7) - std::pow(0.1, 0.7)) / 0.7;
    CHECK(cell_integral(k, t, 0.5, 0.6) == doctest::Approx(expect).epsilon(1e-13));
  }
  SUBCASE("gap primitive is used when present") {
    auto k = make_kernel("expo", Orientation::causal, 1.0, [](double, double g) { return std::exp(g); });
    k.gap_primitive = [](double g) { return std::expm1(g); };
    CHECK(cell_integral(k, 1.0, 0.25, 0.5) == doctest::Approx(std::exp(0.75) - std::exp(0.5)));
  }
  CHECK_THROWS_AS(cell_integral(make_constant(1.0, 1.0, Orientation::causal), 0.5, 0.2, 0.7),
                  std::invalid_argument);
}

TEST_CASE("kernel_squared keeps closed forms") {
  auto k = make_doubly_singular(0.2, 0.1);
  auto q = kernel_squared(k);
  REQUIRE(q.power);
  CHECK(q.power->power == doctest::Approx(-0.4));
  CHECK(q(0.3, 0.7) == doctest::Approx(k(0.3, 0.7) * k(0.3, 0.7)));
  CHECK(cell_integral(q, 0.3, 0.4, 0.6) ==
        doctest::Approx(std::pow(0.3, -0.2) * (std::pow(0.3, 0.6) - std::pow(0.1, 0.6)) / 0.6));
  auto e = kernel_squared(make_exp_sum({1.0, 2.0}, {1.0, 3.0}));
  CHECK(e(0.9, 0.2) == doctest::Approx(std::pow(std::exp(-0.7) + 2 * std::exp(-2.1), 2)));
}

TEST_CASE("fractional Brownian motion kernels") {
  SUBCASE("H = 1/2 reduces to the constant kernel") {
    CHECK(fbm_cH(0.5) == doctest::Approx(1.0).epsilon(1e-14));
    auto k = make_fbm_full(0.5);
    CHECK(k(0.7, 0.2) == 1.0);
    CHECK(fbm_F(0.5, 3.0) == 0.0);
  }
  SUBCASE("F(2) agrees between the substituted rule and tanh-sinh") {
    for (double H : {0.3, 0.7}) {
      CHECK(std::abs(fbm_F(H, 1.0) - fbm_F(H, 1.0, true)) <= 1e-8);
      CHECK(std::abs(fbm_F(H, 1e-3) - fbm_F(H, 1e-3, true)) <= 1e-8);
    }
  }
  SUBCASE("F against graded Gauss on the raw integrand") {
    const double H = 0.3, u = 2.0;
    auto f = [H](double r) {
      return std::pow(r - 1, H - 1.5) * (1 - std::pow(r, H - 0.5));
    };
    const double oracle = fbm_cH(H) * (0.5 - H) * graded_gauss(f, 1.0, u, 40);
    CHECK(fbm_F(H, u - 1) == doctest::Approx(oracle).epsilon(1e-9));
  }
  SUBCASE("Riemann-Liouville kernel") {
    auto k = make_fbm_rl(0.7);
    CHECK(k(0.5, 0.25) == doctest::Approx(std::pow(0.25, 0.2) / std::tgamma(1.2)));
  }
  SUBCASE("bound C s^-|H-1/2| (t-s)^-(1/2-H)+ holds with one C, including near the edges") {
    double C = 0.0;
    auto bound = [](double H, double t, double s) {
      return std::pow(s, -std::abs(H - 0.5)) * std::pow(t - s, -std::max(0.5 - H, 0.0));
    };
    for (double H : {0.3, 0.7}) {
      auto k = make_fbm_full(H);
      for (int i = 0; i < 50; ++i) {
        for (int j = 0; j < 50; ++j) {
          const double t = (i + 1) / 51.0, s = t * (j + 1) / 51.0;
          C = std::max(C, k(t, s) / bound(H, t, s));
        }
      }
    }
    CHECK(std::isfinite(C));
    for (double H : {0.3, 0.7}) {
      auto k = make_fbm_full(H);
      for (double s : {1e-9, 1e-6, 1e-3}) {
        for (double t : {2 * s, 0.5, 1.0}) CHECK(k(t, s) <= C * bound(H, t, s));
      }
      for (double g : {1e-9, 1e-6, 1e-3}) CHECK(k(0.5, 0.5 - g) <= C * bound(H, 0.5, 0.5 - g));
    }
  }
}

TEST_CASE("kernel evaluation off the triangle is zero and inputs are validated") {
  auto c = make_fractional(0.5, Orientation::causal);
  CHECK(c(0.2, 0.5) == 0.0);
  auto a = make_fractional(0.5, Orientation::anticausal);
  CHECK(a(0.5, 0.2) == 0.0);
  CHECK(a(0.2, 0.5) == doctest::Approx(std::pow(0.3, -0.5)));
  CHECK_THROWS_AS(make_fractional(0.0, Orientation::causal), std::invalid_argument);
  CHECK_THROWS_AS(make_exp_sum({1.0}, {1.0, 2.0}), std::invalid_argument);
  CHECK_THROWS_AS(make_constant(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_fbm_full(1.0), std::invalid_argument);
}
