#include "svie/kernels.hpp"

#include "svie/quadrature.hpp"
#include "svie/special.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace svie {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kGrowth = 1.5;  // refinement growth that flags divergence
constexpr int kBaseDecades = 6;

// int_{g0}^{g1} g^p dg
double power_cell(double p, double g0, double g1) {
  if (g1 <= g0) return 0.0;
  if (std::abs(p + 1.0) < 1e-14) return g0 > 0 ? std::log(g1 / g0) : kInf;
  if (p < -1.0 && g0 == 0.0) return kInf;
  return (std::pow(g1, p + 1.0) - std::pow(g0, p + 1.0)) / (p + 1.0);
}

double outer_at(const PowerForm& f, double early) { return f.outer ? f.outer(early) : 1.0; }

// Squared slice with explicit length L = b - early.
double slice_sq(const Kernel& k, double early, double L) {
  if (L <= 0) return 0.0;
  if (k.power) {
    const auto& f = *k.power;
    if (2.0 * f.power <= -1.0) return kInf;
    const double o = f.scale * outer_at(f, early);
    if (!std::isfinite(o)) return kInf;
    return o * o * std::pow(L, 2.0 * f.power + 1.0) / (2.0 * f.power + 1.0);
  }
  if (k.exp_sum) {
    const auto& e = *k.exp_sum;
    double s = 0.0;
    for (std::size_t i = 0; i < e.weights.size(); ++i) {
      for (std::size_t j = 0; j < e.weights.size(); ++j) {
        const double r = e.rates[i] + e.rates[j];
        const double v = std::abs(r) < 1e-300 ? L : -std::expm1(-r * L) / r;
        s += e.weights[i] * e.weights[j] * v;
      }
    }
    return s;
  }
  if (k.singularity_hint && 2.0 * k.singularity_hint->diagonal <= -1.0) return kInf;
  auto f2 = [&](double, double ga, double) {
    const double v = k.fn(early, ga);
    return v * v;
  };
  Integral I = integrate(f2, 0.0, L, 1e-10);
  if (I.finite && I.error <= 1e-6 * std::max(1.0, std::abs(I.value))) return I.value;
  // Suspect a divergent diagonal: compare two truncations.
  Integral a = integrate(f2, 1e-6 * L, L, 1e-8);
  Integral b = integrate(f2, 1e-12 * L, L, 1e-8);
  if (!a.finite || !b.finite || b.value > kGrowth * a.value) return kInf;
  return b.value;
}

// Points in (lo, hi) clustered geometrically at both ends.
void clustered_points(double lo, double hi, int decades, int density, std::vector<double>& x,
                      std::vector<double>& gap_hi, int skip_decades = 0) {
  const double L = hi - lo;
  for (int j = skip_decades * density + 1; j <= decades * density; ++j) {
    const double g = L * std::pow(10.0, -static_cast<double>(j) / density);
    x.push_back(lo + g);
    gap_hi.push_back(L - g);
    x.push_back(hi - g);
    gap_hi.push_back(g);
  }
  if (skip_decades == 0) {
    for (int i = 0; i < 32; ++i) {
      const double g = L * (i + 0.5) / 32.0;
      x.push_back(lo + g);
      gap_hi.push_back(L - g);
    }
  }
}

double integrate_early(const Kernel& k, double late_fixed, double lo, double hi) {
  // int_lo^hi fn(s, late_fixed - s) ds, with exact gaps at lo = 0 and hi = late_fixed.
  auto f = [&](double s, double ga, double gb) {
    const double early = lo == 0.0 ? ga : s;
    const double gap = hi == late_fixed ? gb : late_fixed - s;
    return k.fn(early, gap);
  };
  Integral I = integrate(f, lo, hi, 1e-10);
  return I.finite ? I.value : kInf;
}

double integrate_late(const Kernel& k, double early, double lo, double hi) {
  auto f = [&](double s, double ga, double) {
    const double gap = lo == early ? ga : s - early;
    return k.fn(early, gap);
  };
  Integral I = integrate(f, lo, hi, 1e-10);
  return I.finite ? I.value : kInf;
}

}  // namespace

double Kernel::operator()(double t, double s) const {
  const double early = orientation == Orientation::causal ? s : t;
  const double gap = orientation == Orientation::causal ? t - s : s - t;
  if (gap < 0) return 0.0;
  return fn(early, gap);
}

Kernel make_kernel(std::string label, Orientation o, double T,
                   std::function<double(double, double)> fn, std::optional<SingularityHint> hint) {
  if (!(T > 0)) throw std::invalid_argument("kernel horizon must be positive");
  Kernel k;
  k.orientation = o;
  k.T = T;
  k.fn = std::move(fn);
  k.singularity_hint = hint;
  k.label = std::move(label);
  return k;
}

Kernel make_zero(double T, Orientation o) { return make_constant(0.0, T, o); }

Kernel make_constant(double c, double T, Orientation o) {
  if (c < 0) throw std::invalid_argument("make_constant: kernel must be nonnegative");
  Kernel k = make_kernel(c == 0 ? "zero" : "constant", o, T, [c](double, double) { return c; },
                         SingularityHint{0.0, 0.0});
  k.power = PowerForm{c, 0.0, nullptr};
  k.gap_only = true;
  return k;
}

Kernel make_fractional(double alpha, Orientation o, double T, double scale) {
  if (!(alpha > 0)) throw std::invalid_argument("make_fractional: alpha must be positive");
  const double p = alpha - 1.0;
  Kernel k = make_kernel("fractional", o, T,
                         [p, scale](double, double g) { return scale * std::pow(g, p); },
                         SingularityHint{p, 0.0});
  k.power = PowerForm{scale, p, nullptr};
  k.gap_only = true;
  return k;
}

Kernel make_doubly_singular(double alpha, double beta, double T) {
  if (alpha < 0 || beta < 0) throw std::invalid_argument("make_doubly_singular: exponents >= 0");
  Kernel k = make_kernel(
      "doubly_singular", Orientation::anticausal, T,
      [alpha, beta](double e, double g) { return std::pow(g, -alpha) * std::pow(e, -beta); },
      SingularityHint{-alpha, -beta});
  k.power = PowerForm{1.0, -alpha, nullptr};
  if (beta != 0.0) k.power->outer = [beta](double e) { return std::pow(e, -beta); };
  k.gap_only = beta == 0.0;
  return k;
}

Kernel make_convolution(std::function<double(double)> h, bool h_in_l2, double T, Orientation o,
                        std::string label) {
  Kernel k = make_kernel(std::move(label), o, T,
                         [h = std::move(h)](double, double g) { return h(g); });
  if (h_in_l2) k.singularity_hint = SingularityHint{0.0, 0.0};
  k.gap_only = true;
  return k;
}

Kernel make_fbm_rl(double H, double T) {
  if (!(H > 0 && H < 1)) throw std::invalid_argument("make_fbm_rl: H in (0,1)");
  Kernel k = make_fractional(H + 0.5, Orientation::causal, T, 1.0 / gamma_fn(H + 0.5));
  k.label = "fbm_rl";
  return k;
}

Kernel kernel_squared(const Kernel& k) {
  Kernel q = k;
  q.label = k.label + "^2";
  q.fn = [f = k.fn](double e, double g) {
    const double v = f(e, g);
    return v * v;
  };
  q.gap_primitive = nullptr;
  q.exp_sum.reset();
  if (k.singularity_hint) {
    q.singularity_hint = SingularityHint{2 * k.singularity_hint->diagonal, 2 * k.singularity_hint->edge};
  }
  if (k.power) {
    PowerForm f = *k.power;
    f.scale *= f.scale;
    f.power *= 2.0;
    if (f.outer) {
      f.outer = [o = k.power->outer](double e) {
        const double v = o(e);
        return v * v;
      };
    }
    q.power = f;
  }
  if (k.exp_sum) {
    ExpSumForm e;
    for (std::size_t i = 0; i < k.exp_sum->weights.size(); ++i) {
      for (std::size_t j = 0; j < k.exp_sum->weights.size(); ++j) {
        e.weights.push_back(k.exp_sum->weights[i] * k.exp_sum->weights[j]);
        e.rates.push_back(k.exp_sum->rates[i] + k.exp_sum->rates[j]);
      }
    }
    q.exp_sum = e;
  }
  return q;
}

Kernel scaled(const Kernel& k, double c) {
  if (c < 0) throw std::invalid_argument("scaled: factor must be nonnegative");
  Kernel q = k;
  q.fn = [f = k.fn, c](double e, double g) { return c == 0.0 ? 0.0 : c * f(e, g); };
  if (q.power) q.power->scale *= c;
  if (q.exp_sum) {
    for (double& w : q.exp_sum->weights) w *= c;
  }
  if (k.gap_primitive) q.gap_primitive = [P = k.gap_primitive, c](double g) { return c * P(g); };
  return q;
}

double fbm_cH(double H) {
  return std::sqrt(2.0 * H * gamma_fn(1.5 - H) / (gamma_fn(H + 0.5) * gamma_fn(2.0 - 2.0 * H)));
}

double fbm_F(double H, double v, bool adaptive) {
  if (v <= 0) return 0.0;
  const double p = H - 0.5;
  if (p == 0.0) return 0.0;
  // rho(w) = (1 - (1+w)^p) / w, smooth with rho(0) = -p.
  auto rho = [p](double w) { return w > 0 ? -std::expm1(p * std::log1p(w)) / w : -p; };
  double I = 0.0;
  if (!adaptive) {
    // w = x^q removes the w^p factor: int_0^v w^p rho(w) dw = q int_0^{v^(1/q)} rho(x^q) dx.
    const double q = 1.0 / (H + 0.5);
    const double X = std::pow(v, 1.0 / q);
    auto g = [&](double x) { return rho(std::pow(x, q)); };
    double hi = X;
    for (int k = 0; k < 48; ++k) {
      const double lo = 0.5 * hi;
      I += boost::math::quadrature::gauss<double, 20>::integrate(g, lo, hi);
      hi = lo;
    }
    I += boost::math::quadrature::gauss<double, 20>::integrate(g, 0.0, hi);
    I *= q;
  } else {
    auto f = [&](double, double ga, double) { return std::pow(ga, p) * rho(ga); };
    I = integrate(f, 0.0, v, 1e-13).value;
  }
  return fbm_cH(H) * (0.5 - H) * I;
}

Kernel make_fbm_full(double H, double T) {
  if (!(H > 0 && H < 1)) throw std::invalid_argument("make_fbm_full: H in (0,1)");
  const double c = fbm_cH(H);
  const double p = H - 0.5;
  return make_kernel(
      "fbm_full", Orientation::causal, T,
      [H, c, p](double s, double g) {
        if (p == 0.0) return 1.0;
        if (s <= 0) return kInf;
        return c * std::pow(g, p) + std::pow(s, p) * fbm_F(H, g / s);
      },
      SingularityHint{std::min(p, 0.0), -std::abs(p)});
}

Kernel make_exp_sum(std::vector<double> weights, std::vector<double> rates, double T,
                    Orientation o) {
  if (weights.size() != rates.size() || weights.empty()) {
    throw std::invalid_argument("make_exp_sum: weights and rates must match and be nonempty");
  }
  for (double w : weights) {
    if (w < 0) throw std::invalid_argument("make_exp_sum: weights must be nonnegative");
  }
  ExpSumForm form{weights, rates};
  Kernel k = make_kernel(
      "exp_sum", o, T,
      [form](double, double g) {
        double s = 0.0;
        for (std::size_t i = 0; i < form.weights.size(); ++i) {
          s += form.weights[i] * std::exp(-form.rates[i] * g);
        }
        return s;
      },
      SingularityHint{0.0, 0.0});
  k.exp_sum = std::move(form);
  k.gap_only = true;
  return k;
}

Kernel make_counterexample_sup(double T) {
  Kernel k = make_kernel(
      "counterexample_sup", Orientation::anticausal, T,
      [T](double e, double) { return std::sqrt(2.0 / (T - e)); }, SingularityHint{0.0, 0.0});
  k.power = PowerForm{std::sqrt(2.0), 0.0, [T](double e) { return 1.0 / std::sqrt(T - e); }};
  return k;
}

double cell_integral(const Kernel& k, double t, double lo, double hi) {
  if (hi <= lo) return 0.0;
  const bool causal = k.orientation == Orientation::causal;
  // Gap range covered by the cell.
  const double g0 = causal ? t - hi : lo - t;
  const double g1 = causal ? t - lo : hi - t;
  if (g0 < -1e-14 * std::max(1.0, std::abs(t))) {
    throw std::invalid_argument("cell_integral: cell leaves the kernel's triangle");
  }
  const double ga = std::max(g0, 0.0);
  if (k.power && (!causal || !k.power->outer)) {
    const auto& f = *k.power;
    const double o = f.scale * (causal ? 1.0 : outer_at(f, t));
    return o == 0.0 ? 0.0 : o * power_cell(f.power, ga, g1);
  }
  if (k.gap_primitive) return k.gap_primitive(g1) - k.gap_primitive(ga);
  if (k.exp_sum) {
    double s = 0.0;
    for (std::size_t i = 0; i < k.exp_sum->weights.size(); ++i) {
      const double r = k.exp_sum->rates[i];
      const double v =
          std::abs(r) < 1e-300 ? g1 - ga : (std::exp(-r * ga) - std::exp(-r * g1)) / r;
      s += k.exp_sum->weights[i] * v;
    }
    return s;
  }
  return causal ? integrate_early(k, t, lo, std::min(hi, t)) : integrate_late(k, t, std::max(lo, t), hi);
}

std::vector<double> product_weights(const Kernel& k, double t, const std::vector<double>& grid) {
  std::vector<double> w;
  if (grid.size() < 2) return w;
  w.reserve(grid.size() - 1);
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    if (grid[j + 1] <= grid[j]) throw std::invalid_argument("product_weights: grid not increasing");
    w.push_back(cell_integral(k, t, grid[j], grid[j + 1]));
  }
  return w;
}

double slice_l2(const Kernel& k, double early, double b) {
  if (!(early < b)) throw std::invalid_argument("slice_l2: need t < b");
  if (b > k.T * (1 + 1e-14)) throw std::invalid_argument("slice_l2: b beyond the horizon");
  return std::sqrt(slice_sq(k, early, b - early));
}

Measured triangle_l2_norm(const Kernel& k) {
  Measured m;
  const double T = k.T;
  if (k.power && 2.0 * k.power->power <= -1.0) {
    m.finite = false;
    m.value = kInf;
    m.trace.emplace_back(0.0, kInf);
    return m;
  }
  auto f = [&](double, double ga, double gb) { return slice_sq(k, ga, gb); };
  Integral I = integrate(f, 0.0, T, 1e-10);
  m.trace.emplace_back(0.0, I.value);
  if (I.finite && I.error <= 1e-6 * std::max(1.0, std::abs(I.value))) {
    m.value = std::sqrt(I.value);
    return m;
  }
  auto trunc = [&](double h) {
    auto g = [&](double s, double, double) { return slice_sq(k, s, T - s); };
    return integrate(g, h, T - h, 1e-8);
  };
  Integral a = trunc(1e-6 * T);
  Integral b = trunc(1e-12 * T);
  m.trace.emplace_back(1e-6 * T, a.value);
  m.trace.emplace_back(1e-12 * T, b.value);
  if (!a.finite || !b.finite || b.value > kGrowth * a.value) {
    m.finite = false;
    m.value = kInf;
  } else {
    m.value = std::sqrt(b.value);
  }
  return m;
}

double block_l2_sq(const Kernel& k, double a, double b) {
  if (!(b > a)) return 0.0;
  const double L = b - a;
  if (k.power && !k.power->outer) {
    const auto& f = *k.power;
    if (2.0 * f.power <= -1.0) return kInf;
    return f.scale * f.scale * std::pow(L, 2.0 * f.power + 2.0) /
           ((2.0 * f.power + 1.0) * (2.0 * f.power + 2.0));
  }
  auto f = [&](double s, double ga, double gb) { return slice_sq(k, a == 0.0 ? ga : s, gb); };
  Integral I = integrate(f, a, b, 1e-10);
  return I.finite ? I.value : kInf;
}

SupResult local_sup(const Kernel& k, double lo, double b, int density) {
  SupResult r;
  auto scan = [&](const std::vector<double>& x, const std::vector<double>& gh, double& best,
                  double& arg) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = slice_sq(k, x[i], gh[i]);
      if (!(v <= best)) {
        best = v;
        arg = x[i];
      }
    }
  };
  std::vector<double> x0, g0, x1, g1;
  clustered_points(lo, b, kBaseDecades, density, x0, g0);
  clustered_points(lo, b, 2 * kBaseDecades, density, x1, g1, kBaseDecades);
  double s0 = 0.0, a0 = lo + 0.5 * (b - lo);
  scan(x0, g0, s0, a0);
  double s1 = s0, a1 = a0;
  scan(x1, g1, s1, a1);
  if (!std::isfinite(s1) || s1 > kGrowth * s0) {
    r.finite = false;
    r.value = kInf;
    r.argmax = a1;
    return r;
  }
  r.value = std::sqrt(s1);
  r.argmax = a1;
  return r;
}

std::size_t Partition::blocks() const {
  if (uniform()) return static_cast<std::size_t>(std::ceil(T / step * (1 - 1e-15)));
  return breakpoints.empty() ? 0 : breakpoints.size() - 1;
}

std::pair<double, double> Partition::block(std::size_t i) const {
  if (!uniform()) return {breakpoints.at(i), breakpoints.at(i + 1)};
  const std::size_t n = blocks();
  if (i >= n) throw std::out_of_range("Partition::block");
  return {static_cast<double>(i) * step, i + 1 == n ? T : static_cast<double>(i + 1) * step};
}

std::vector<double> Partition::points() const {
  if (!uniform()) return breakpoints;
  std::vector<double> p;
  const std::size_t n = blocks();
  p.reserve(n + 1);
  for (std::size_t i = 0; i < n; ++i) p.push_back(block(i).first);
  p.push_back(T);
  return p;
}

PartitionResult find_partition(const Kernel& k, double eps, const PartitionOptions& opt) {
  if (!(eps > 0)) throw std::invalid_argument("find_partition: eps must be positive");
  PartitionResult out;
  const double T = k.T;
  out.partition.T = T;
  std::vector<double> bp{0.0};
  double U = 0.0;
  auto ok = [&](double lo, double hi) {
    SupResult s = local_sup(k, lo, hi, opt.grid_density);
    return std::make_pair(s.finite && s.value < eps, s);
  };
  auto fail = [&](const SupResult& sw) {
    out.feasible = false;
    out.witness = sw.argmax;
    out.local_sup = sw.value;
    out.partition.breakpoints = bp;
    return out;
  };
  while (true) {
    auto [whole, sw] = ok(U, T);
    if (whole) {
      bp.push_back(T);
      out.local_sup = std::max(out.local_sup, sw.value);
      break;
    }
    if (k.gap_only) {
      // Every block of a convolution kernel sees the same profile, so one
      // block length measured at U = 0 (exact small gaps) fixes the partition.
      // Descend by decades to the first passing length, then bisect in log.
      double hi = std::log(T), lo = hi;
      SupResult best{};
      bool found = false;
      while (lo > std::log(opt.min_block_gap_only_rel * T)) {
        lo -= std::log(10.0);
        auto [good, s] = ok(0.0, std::exp(lo));
        if (good) {
          best = s;
          found = true;
          break;
        }
        hi = lo;
      }
      if (!found) return fail(sw);
      while (hi - lo > opt.bisection_rel) {
        const double mid = 0.5 * (lo + hi);
        auto [g2, s2] = ok(0.0, std::exp(mid));
        if (g2) {
          lo = mid;
          best = s2;
        } else {
          hi = mid;
        }
      }
      out.feasible = true;
      out.local_sup = best.value;
      out.partition.step = std::exp(lo);
      return out;
    }
    if (T - U <= opt.tail_rel * T) return fail(sw);
    // Halve until the block passes, then bisect between L and 2L.
    double L = 0.5 * (T - U);
    SupResult best{};
    bool found = false;
    while (L >= opt.min_block_rel * T) {
      auto [good, s] = ok(U, U + L);
      if (good) {
        best = s;
        found = true;
        break;
      }
      L *= 0.5;
    }
    if (!found) return fail(sw);
    double lo = L, hi = std::min(2.0 * L, T - U);
    while (hi - lo > opt.bisection_rel * lo) {
      const double mid = 0.5 * (lo + hi);
      auto [good, s] = ok(U, U + mid);
      if (good) {
        lo = mid;
        best = s;
      } else {
        hi = mid;
      }
    }
    out.local_sup = std::max(out.local_sup, best.value);
    U += lo;
    bp.push_back(U);
    if (static_cast<int>(bp.size()) > opt.max_breakpoints) {
      out.feasible = false;
      out.budget_exceeded = true;
      out.witness = U;
      out.partition.breakpoints = bp;
      return out;
    }
  }
  out.feasible = true;
  out.partition.breakpoints = bp;
  return out;
}

bool verify_partition(const Kernel& k, const Partition& p, double eps, int density) {
  const std::size_t n = p.blocks();
  if (n == 0) return false;
  auto check = [&](std::size_t i) {
    const auto [a, b] = p.block(i);
    if (!(b > a)) return false;
    SupResult s = local_sup(k, a, b, density);
    return s.finite && s.value < eps;
  };
  if (p.uniform()) {
    if (!k.gap_only || p.T != k.T) return false;
    return check(0) && check(n - 1);
  }
  const auto& b = p.breakpoints;
  if (b.front() != 0.0 || b.back() != k.T) return false;
  for (std::size_t i = 0; i < n; ++i) {
    if (!check(i)) return false;
  }
  return true;
}

PartitionResult find_budget_partition(const Kernel& k, double budget, const PartitionOptions& opt) {
  if (!(budget > 0)) throw std::invalid_argument("find_budget_partition: budget must be positive");
  const double T = k.T;
  PartitionResult out;
  std::vector<double> bp{0.0};
  double U = 0.0;
  while (true) {
    const double whole = block_l2_sq(k, U, T);
    if (whole <= budget) break;
    const double first = block_l2_sq(k, U, U + opt.min_block_rel * T);
    if (!(first <= budget)) {
      out.witness = U;
      out.partition.breakpoints = bp;
      return out;
    }
    double lo = U + opt.min_block_rel * T, hi = T;
    while (hi - lo > opt.bisection_rel * (lo - U)) {
      const double mid = 0.5 * (lo + hi);
      if (block_l2_sq(k, U, mid) <= budget) lo = mid;
      else hi = mid;
    }
    U = lo;
    bp.push_back(U);
    if (static_cast<int>(bp.size()) > opt.max_breakpoints) {
      out.budget_exceeded = true;
      out.witness = U;
      out.partition.breakpoints = bp;
      return out;
    }
  }
  bp.push_back(T);
  out.feasible = true;
  out.partition.breakpoints = bp;
  out.partition.T = T;
  return out;
}

std::vector<int> grid_block_starts(const Partition& part, int N) {
  const double T = part.T > 0 ? part.T : part.breakpoints.back();
  const std::size_t nb = part.blocks();
  auto block_of = [&](double t) -> std::size_t {
    if (part.uniform()) return std::min<std::size_t>(static_cast<std::size_t>(t / part.step), nb - 1);
    const auto& b = part.breakpoints;
    const auto k = static_cast<std::size_t>(std::upper_bound(b.begin(), b.end(), t) - b.begin());
    return std::min<std::size_t>(k == 0 ? 0 : k - 1, nb - 1);
  };
  std::vector<int> out{0};
  std::size_t prev = block_of(0.0);
  for (int i = 1; i <= N; ++i) {
    const std::size_t cur = block_of(T * static_cast<double>(i) / N);
    if (cur != prev && i < N) out.push_back(i);
    prev = cur;
  }
  return out;
}

K0Report k0_membership(const Kernel& k) {
  K0Report r;
  const double T = k.T;
  auto l1_slice = [&](double late) {
    if (late <= 0) return 0.0;
    if (k.power && !k.power->outer) {
      return k.power->scale == 0.0 ? 0.0 : k.power->scale * power_cell(k.power->power, 0.0, late);
    }
    return integrate_early(k, late, 0.0, late);
  };
  // sup over late of the L1 slice, with the same refinement test as the esssup.
  std::vector<double> x0, g0, x1, g1;
  clustered_points(0.0, T, kBaseDecades, 4, x0, g0);
  x0.push_back(T);
  clustered_points(0.0, T, 2 * kBaseDecades, 4, x1, g1, kBaseDecades);
  double s0 = 0.0, s1 = 0.0;
  for (double x : x0) s0 = std::max(s0, l1_slice(x));
  s1 = s0;
  for (double x : x1) s1 = std::max(s1, l1_slice(x));
  r.sup_finite = std::isfinite(s1) && s1 <= kGrowth * s0 + 1e-300;
  r.sup_l1_slice = r.sup_finite ? s1 : kInf;

  for (int e = 1; e <= 6; ++e) {
    const double eps = T * std::pow(10.0, -e);
    auto sliding = [&](double t) {
      const double late = t + eps;
      if (k.power && !k.power->outer) {
        return k.power->scale == 0.0 ? 0.0 : k.power->scale * power_cell(k.power->power, 0.0, eps);
      }
      return integrate_early(k, late, t, late);
    };
    std::vector<double> tx{0.0}, tg;
    clustered_points(0.0, T - eps, kBaseDecades, 2, tx, tg);
    double best = 0.0;
    for (double t : tx) best = std::max(best, sliding(t));
    r.sliding.emplace_back(eps, best);
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < r.sliding.size(); ++i) {
    if (r.sliding[i].second > r.sliding[i - 1].second * (1 + 1e-9) + 1e-300) decreasing = false;
  }
  const double first = r.sliding.front().second;
  const double last = r.sliding.back().second;
  const bool vanishing = first == 0.0 || (std::isfinite(last) && last <= 0.25 * first);
  r.member = r.sup_finite && decreasing && vanishing;
  return r;
}

std::vector<double> default_eps_grid() { return {1.0, 0.5, 0.25, 0.125}; }

KernelClassReport classify(const Kernel& k, const std::vector<double>& eps_grid) {
  if (eps_grid.empty()) throw std::invalid_argument("classify: empty eps grid");
  KernelClassReport rep;
  rep.l2_triangle_norm = triangle_l2_norm(k);
  SupResult s = local_sup(k, 0.0, k.T);
  rep.script_norm.value = s.value;
  rep.script_norm.finite = s.finite;
  rep.script_norm.trace.emplace_back(s.argmax, s.value);
  bool all_feasible = true;
  for (double eps : eps_grid) {
    PartitionResult p = find_partition(k, eps);
    all_feasible = all_feasible && p.feasible;
    rep.partition_results[eps] = std::move(p);
  }
  rep.k0 = k0_membership(k);
  rep.in_L2 = rep.l2_triangle_norm.finite;
  rep.in_scriptL2 = rep.in_L2 && rep.script_norm.finite && all_feasible;
  rep.in_K0 = rep.k0.member;
  rep.diagnostics["grid_density_per_decade"] = 4;
  rep.diagnostics["grid_decades_base"] = kBaseDecades;
  rep.diagnostics["grid_decades_refined"] = 2 * kBaseDecades;
  rep.diagnostics["divergence_growth_factor"] = kGrowth;
  rep.diagnostics["bisection_rel"] = PartitionOptions{}.bisection_rel;
  rep.diagnostics["min_block_rel"] = PartitionOptions{}.min_block_rel;
  rep.diagnostics["tail_rel"] = PartitionOptions{}.tail_rel;
  rep.diagnostics["min_block_gap_only_rel"] = PartitionOptions{}.min_block_gap_only_rel;
  rep.diagnostics["max_breakpoints"] = PartitionOptions{}.max_breakpoints;
  rep.diagnostics["eps_count"] = static_cast<double>(eps_grid.size());
  return rep;
}

}  // namespace svie
