#include "svie/forward.hpp"

#include "svie/quadrature.hpp"
#include "svie/special.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>

namespace svie {

namespace {

double grid_time(double T, int N, int i) { return T * static_cast<double>(i) / N; }

NodeField free_term(const SVIEProblem& p, const Tree& tree, int i) {
  if (p.phi_field) return p.phi_field(tree, i);
  if (!p.phi) throw std::invalid_argument("SVIEProblem: no free term");
  const Eigen::VectorXd v = p.phi(tree.time(i));
  NodeField f(p.d, tree.nodes(i));
  f.colwise() = v;
  return f;
}

void check_problem(const SVIEProblem& p, const Tree& tree) {
  if (tree.m != p.m) throw std::invalid_argument("SVIEProblem: noise dimension differs from the tree");
  if (std::abs(tree.T - p.T) > 1e-12 * p.T) throw std::invalid_argument("SVIEProblem: horizon differs from the tree");
}

// Drift and diffusion contributions of steps j in [j0, j1) to X(t_i) at depth i.
NodeField terms(const SVIEProblem& p, const Tree& tree, const FwdWeights& W, const AdaptedProcess& X,
                int i, int j0, int j1) {
  NodeField acc = NodeField::Zero(p.d, tree.nodes(i));
  const auto B = tree.branches();
  for (int j = j0; j < std::min(j1, i); ++j) {
    const NodeField& Xj = X.at[j];
    FwdPoint pt{i, j, tree.time(i), tree.time(j), 0};
    if (p.drift) {
      NodeField F(p.d, tree.nodes(j));
      const double w = W.w(i, j);
      for (std::size_t n = 0; n < tree.nodes(j); ++n) {
        pt.node = n;
        F.col(n) = w == 0.0 ? Eigen::VectorXd::Zero(p.d) : Eigen::VectorXd(w * p.drift(pt, Xj.col(n)));
      }
      acc += lift(tree, F, j, i);
    }
    if (p.diffusion) {
      NodeField G(p.d, tree.nodes(j + 1));
      const double v = W.v(i, j);
      Eigen::VectorXd dw(p.m);
      for (std::size_t n = 0; n < tree.nodes(j); ++n) {
        pt.node = n;
        const Eigen::MatrixXd S = v == 0.0 ? Eigen::MatrixXd::Zero(p.d, p.m)
                                           : Eigen::MatrixXd(v * p.diffusion(pt, Xj.col(n)));
        for (std::size_t b = 0; b < B; ++b) {
          for (int k = 0; k < p.m; ++k) dw(k) = ((b >> k) & 1u) ? tree.sqdt() : -tree.sqdt();
          G.col(n * B + b) = S * dw;
        }
      }
      acc += lift(tree, G, j + 1, i);
    }
  }
  return acc;
}

double l2_norm_sq(const Tree& tree, const AdaptedProcess& a, const AdaptedProcess& b, int i0, int i1) {
  double s = 0.0;
  for (int i = i0; i < i1; ++i) s += (a.at[i] - b.at[i]).colwise().squaredNorm().mean() * tree.dt();
  return s;
}

// Endpoint weights of the linear hat interpolant on one cell.
std::pair<double, double> hat_weights(const Kernel& k, double t, double lo, double hi) {
  const double h = hi - lo;
  if (k.power && !k.power->outer) {
    const double p = k.power->power, c = k.power->scale;
    const double u0 = t - lo, u1 = t - hi;
    const double A0 = (std::pow(u0, p + 1) - std::pow(u1, p + 1)) / (p + 1);
    const double B0 = (std::pow(u0, p + 2) - std::pow(u1, p + 2)) / (p + 2);
    const double wl = (B0 - u1 * A0) / h;
    return {c * wl, c * (A0 - wl)};
  }
  auto f = [&](double s, double ga, double gb, bool left) {
    const double early = lo == 0.0 ? ga : s;
    const double gap = hi == t ? gb : t - s;
    return k.fn(early, gap) * (left ? gb : ga) / h;
  };
  Integral L = integrate([&](double s, double ga, double gb) { return f(s, ga, gb, true); }, lo, hi, 1e-11);
  Integral R = integrate([&](double s, double ga, double gb) { return f(s, ga, gb, false); }, lo, hi, 1e-11);
  if (!L.finite || !R.finite) throw std::domain_error("resolvent_linear: kernel cell integral failed");
  return {L.value, R.value};
}

}  // namespace

FwdWeights forward_weights(const SVIEProblem& p, int N) {
  FwdWeights W;
  W.w = Eigen::MatrixXd::Zero(N + 1, N);
  W.v = Eigen::MatrixXd::Zero(N + 1, N);
  const double dt = p.T / N;
  std::optional<Kernel> k2sq;
  if (p.diffusion_kernel && p.diffusion_weight == DiffusionWeight::l2_matched) {
    k2sq = kernel_squared(*p.diffusion_kernel);
  }
  for (int i = 1; i <= N; ++i) {
    const double t = grid_time(p.T, N, i);
    for (int j = 0; j < i; ++j) {
      const double lo = grid_time(p.T, N, j), hi = j + 1 == i ? t : grid_time(p.T, N, j + 1);
      W.w(i, j) = p.drift_kernel ? cell_integral(*p.drift_kernel, t, lo, hi) : dt;
      if (!p.diffusion_kernel) {
        W.v(i, j) = 1.0;
      } else if (k2sq) {
        W.v(i, j) = std::sqrt(cell_integral(*k2sq, t, lo, hi) / dt);
      } else {
        W.v(i, j) = (*p.diffusion_kernel)(t, lo);
      }
      if (!std::isfinite(W.w(i, j)) || !std::isfinite(W.v(i, j))) {
        throw std::domain_error("forward_weights: kernel weight not finite at (" + std::to_string(i) +
                                ", " + std::to_string(j) + ")");
      }
    }
  }
  return W;
}

SVIESolution solve_lattice(const SVIEProblem& p, const Tree& tree) {
  check_problem(p, tree);
  const FwdWeights W = forward_weights(p, tree.N);
  SVIESolution sol;
  sol.method = "lattice";
  sol.X.at.resize(tree.N + 1);
  for (int i = 0; i <= tree.N; ++i) sol.X.at[i] = free_term(p, tree, i) + terms(p, tree, W, sol.X, i, 0, i);
  sol.iterations = 1;
  sol.residual = forward_residual(p, tree, sol.X);
  return sol;
}

double forward_residual(const SVIEProblem& p, const Tree& tree, const AdaptedProcess& X) {
  const FwdWeights W = forward_weights(p, tree.N);
  double r = 0.0;
  for (int i = 0; i <= tree.N; ++i) {
    const NodeField e = X.at[i] - free_term(p, tree, i) - terms(p, tree, W, X, i, 0, i);
    r = std::max(r, e.cwiseAbs().maxCoeff());
  }
  return r;
}

SVIESolution solve_picard(const SVIEProblem& p, const Tree& tree, double tol, const PicardOptions& opt) {
  check_problem(p, tree);
  const int N = tree.N;
  std::set<int> starts{0};
  if (p.drift) {
    PartitionResult k1 = find_budget_partition(p.lipschitz_K1, opt.k1_budget);
    if (!k1.feasible) throw SolveError("solve_picard: no K1 partition within the block budget");
    for (int i : grid_block_starts(k1.partition, N)) starts.insert(i);
  }
  if (p.diffusion) {
    PartitionResult k2 = find_partition(p.lipschitz_K2, opt.k2_eps);
    if (!k2.feasible) throw SolveError("solve_picard: no K2 partition at the contraction threshold");
    for (int i : grid_block_starts(k2.partition, N)) starts.insert(i);
  }
  const FwdWeights W = forward_weights(p, N);
  SVIESolution sol;
  sol.method = "picard";
  sol.block_starts.assign(starts.begin(), starts.end());
  for (int s : sol.block_starts) sol.block_times.push_back(tree.time(s));
  sol.block_times.push_back(p.T);
  sol.X.at.resize(N + 1);
  for (std::size_t b = 0; b < sol.block_starts.size(); ++b) {
    const int I0 = sol.block_starts[b];
    const int I1 = b + 1 < sol.block_starts.size() ? sol.block_starts[b + 1] : N + 1;
    // phi-hat carries the contribution of the earlier blocks.
    std::vector<NodeField> phat(I1 - I0);
    for (int i = I0; i < I1; ++i) phat[i - I0] = free_term(p, tree, i) + terms(p, tree, W, sol.X, i, 0, I0);
    for (int i = I0; i < I1; ++i) sol.X.at[i] = phat[i - I0];
    double prev = -1.0, ratio = 0.0, scale = 0.0;
    for (int i = I0; i < I1; ++i) scale += phat[i - I0].colwise().squaredNorm().mean() * tree.dt();
    scale = std::sqrt(scale);
    int it = 0;
    while (true) {
      if (++it > opt.max_iterations) throw SolveError("solve_picard: iteration cap reached");
      AdaptedProcess next = sol.X;
      for (int i = I0; i < I1; ++i) next.at[i] = phat[i - I0] + terms(p, tree, W, sol.X, i, I0, i);
      const double diff = std::sqrt(l2_norm_sq(tree, next, sol.X, I0, I1));
      sol.X = std::move(next);
      if (prev > 1e-14 * std::max(scale, 1e-300)) {
        const double r = diff / prev;
        ratio = std::max(ratio, r);
        if (r >= 1.0) throw SolveError("solve_picard: non-contraction on block " + std::to_string(b));
      }
      prev = diff;
      if (diff <= tol) break;
    }
    sol.iterations += it;
    sol.contraction_ratios.push_back(ratio);
  }
  sol.residual = forward_residual(p, tree, sol.X);
  return sol;
}

std::vector<Eigen::VectorXd> solve_deterministic(const SVIEProblem& p, int N) {
  if (p.diffusion) throw std::invalid_argument("solve_deterministic: problem has a diffusion");
  if (!p.phi) throw std::invalid_argument("solve_deterministic: needs a deterministic free term");
  const FwdWeights W = forward_weights(p, N);
  std::vector<Eigen::VectorXd> x(N + 1);
  for (int i = 0; i <= N; ++i) {
    Eigen::VectorXd v = p.phi(grid_time(p.T, N, i));
    if (p.drift) {
      for (int j = 0; j < i; ++j) {
        FwdPoint pt{i, j, grid_time(p.T, N, i), grid_time(p.T, N, j), 0};
        v += W.w(i, j) * p.drift(pt, x[j]);
      }
    }
    x[i] = std::move(v);
  }
  return x;
}

PathEnsemble solve_paths(const SVIEProblem& p, int n_paths, int n_steps, std::uint64_t seed, bool keep_paths) {
  if (n_paths < 2 || n_steps < 1) throw std::invalid_argument("solve_paths: need n_paths >= 2 and n_steps >= 1");
  if (!p.phi) throw std::invalid_argument("solve_paths: needs a deterministic free term");
  const FwdWeights W = forward_weights(p, n_steps);
  const double dt = p.T / n_steps;
  PathEnsemble out;
  for (int i = 0; i <= n_steps; ++i) out.times.push_back(grid_time(p.T, n_steps, i));
  // Sums shifted by the first path keep the variance estimates free of cancellation.
  Eigen::ArrayXXd k1, k2, s1 = Eigen::ArrayXXd::Zero(p.d, n_steps + 1), q1 = s1, s2 = s1, q2 = s1;
  for (int k = 0; k < n_paths; ++k) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> g(0.0, std::sqrt(dt));
    Eigen::MatrixXd dW(p.m, n_steps);
    for (int j = 0; j < n_steps; ++j) {
      for (int c = 0; c < p.m; ++c) dW(c, j) = g(rng);
    }
    Eigen::MatrixXd X(p.d, n_steps + 1);
    for (int i = 0; i <= n_steps; ++i) {
      Eigen::VectorXd v = p.phi(out.times[i]);
      for (int j = 0; j < i; ++j) {
        FwdPoint pt{i, j, out.times[i], out.times[j], static_cast<std::size_t>(k)};
        const Eigen::VectorXd xj = X.col(j);
        if (p.drift) v += W.w(i, j) * p.drift(pt, xj);
        if (p.diffusion) v += W.v(i, j) * (p.diffusion(pt, xj) * dW.col(j));
      }
      X.col(i) = v;
    }
    const Eigen::ArrayXXd a = X.array(), sq = a * a;
    if (k == 0) {
      k1 = a;
      k2 = sq;
    }
    s1 += a - k1;
    q1 += (a - k1).square();
    s2 += sq - k2;
    q2 += (sq - k2).square();
    if (keep_paths) out.paths.push_back(X);
  }
  const double n = n_paths;
  out.mean = (k1 + s1 / n).matrix();
  out.second_moment = (k2 + s2 / n).matrix();
  const Eigen::ArrayXXd var = ((q1 - s1.square() / n) / (n - 1)).max(0.0);
  const Eigen::ArrayXXd var2 = ((q2 - s2.square() / n) / (n - 1)).max(0.0);
  out.mean_se = (var / n).sqrt().matrix();
  out.second_se = (var2 / n).sqrt().matrix();
  return out;
}

StabilityReport stability_gap(const SVIEProblem& p, const SVIEProblem& q, const Tree& tree) {
  const SVIESolution X = solve_lattice(p, tree);
  const SVIESolution Xq = solve_lattice(q, tree);
  const FwdWeights Wp = forward_weights(p, tree.N), Wq = forward_weights(q, tree.N);
  StabilityReport r;
  r.lhs = std::sqrt(l2_norm_sq(tree, X.X, Xq.X, 0, tree.N + 1));
  double rhs = 0.0;
  for (int i = 0; i <= tree.N; ++i) {
    const NodeField dphi = free_term(p, tree, i) - free_term(q, tree, i);
    NodeField drift_abs = NodeField::Zero(1, tree.nodes(i));
    NodeField diff_sq = NodeField::Zero(1, tree.nodes(i));
    for (int j = 0; j < i; ++j) {
      FwdPoint pt{i, j, tree.time(i), tree.time(j), 0};
      NodeField a(1, tree.nodes(j)), b(1, tree.nodes(j));
      for (std::size_t n = 0; n < tree.nodes(j); ++n) {
        pt.node = n;
        const Eigen::VectorXd x = Xq.X.at[j].col(n);
        Eigen::VectorXd da = Eigen::VectorXd::Zero(p.d);
        if (p.drift) da += Wp.w(i, j) * p.drift(pt, x);
        if (q.drift) da -= Wq.w(i, j) * q.drift(pt, x);
        Eigen::MatrixXd db = Eigen::MatrixXd::Zero(p.d, p.m);
        if (p.diffusion) db += Wp.v(i, j) * p.diffusion(pt, x);
        if (q.diffusion) db -= Wq.v(i, j) * q.diffusion(pt, x);
        a(0, n) = da.norm();
        b(0, n) = db.squaredNorm() * tree.dt();
      }
      drift_abs += lift(tree, a, j, i);
      diff_sq += lift(tree, b, j, i);
    }
    rhs += (dphi.colwise().squaredNorm() + drift_abs.cwiseProduct(drift_abs) + diff_sq).mean() * tree.dt();
  }
  r.rhs = std::sqrt(rhs);
  if (r.lhs == 0.0 && r.rhs == 0.0) {
    r.exact_zero = true;
    r.ratio = 0.0;
  } else {
    r.ratio = r.rhs == 0.0 ? std::numeric_limits<double>::infinity() : r.lhs / r.rhs;
  }
  return r;
}

std::vector<std::string> validate(const SVIEProblem& p, int probes, std::uint64_t seed) {
  std::vector<std::string> warn;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  auto vec = [&] {
    Eigen::VectorXd x(p.d);
    for (int k = 0; k < p.d; ++k) x(k) = g(rng);
    return x;
  };
  bool zero_bad = false, k1_bad = false, k2_bad = false;
  for (int n = 0; n < probes; ++n) {
    const double t = p.T * (0.05 + 0.95 * u(rng));
    const double s = t * (0.02 + 0.96 * u(rng));
    FwdPoint pt{0, 0, t, s, 0};
    const Eigen::VectorXd x = vec(), y = vec(), z = Eigen::VectorXd::Zero(p.d);
    const double dist = (x - y).norm();
    if (p.drift) {
      const double w = p.drift_kernel ? (*p.drift_kernel)(t, s) : 1.0;
      if (!p.drift(pt, z).allFinite()) zero_bad = true;
      const double lhs = w * (p.drift(pt, x) - p.drift(pt, y)).norm();
      if (lhs > p.lipschitz_K1(t, s) * dist * (1 + 1e-6) + 1e-12) k1_bad = true;
    }
    if (p.diffusion) {
      const double w = p.diffusion_kernel ? (*p.diffusion_kernel)(t, s) : 1.0;
      if (!p.diffusion(pt, z).allFinite()) zero_bad = true;
      const double lhs = w * (p.diffusion(pt, x) - p.diffusion(pt, y)).norm();
      if (lhs > p.lipschitz_K2(t, s) * dist * (1 + 1e-6) + 1e-12) k2_bad = true;
    }
  }
  if (zero_bad) warn.emplace_back("A(t,s,0) or B(t,s,0) is not finite at a probe point");
  if (k1_bad) warn.emplace_back("declared K1 does not dominate the drift difference quotients");
  if (k2_bad) warn.emplace_back("declared K2 does not dominate the diffusion difference quotients");
  return warn;
}

std::vector<double> graded_grid(int N, double T, double r) {
  if (N < 1 || !(T > 0) || !(r >= 1)) throw std::invalid_argument("graded_grid: N >= 1, T > 0, r >= 1");
  std::vector<double> g(N + 1);
  for (int i = 0; i <= N; ++i) g[i] = T * std::pow(static_cast<double>(i) / N, r);
  g[N] = T;
  return g;
}

std::vector<double> resolvent_linear(const Kernel& k, double lambda, const std::vector<double>& grid) {
  if (k.orientation != Orientation::causal) throw std::invalid_argument("resolvent_linear: causal kernel required");
  if (grid.size() < 2 || grid.front() != 0.0) throw std::invalid_argument("resolvent_linear: grid must start at 0");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("resolvent_linear: grid not increasing");
  }
  std::vector<double> x(grid.size());
  x[0] = 1.0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    double rhs = 1.0, diag = 0.0;
    for (std::size_t j = 0; j < i; ++j) {
      const auto [wl, wr] = hat_weights(k, grid[i], grid[j], grid[j + 1]);
      rhs += lambda * wl * x[j];
      if (j + 1 < i) rhs += lambda * wr * x[j + 1];
      else diag = lambda * wr;
    }
    x[i] = rhs / (1.0 - diag);
  }
  return x;
}

SVIEProblem make_fractional_relaxation(double alpha, double lambda, double T) {
  SVIEProblem p;
  p.label = "fractional_relaxation";
  p.T = T;
  p.phi = [](double) { return Eigen::VectorXd::Ones(1); };
  p.drift_kernel = make_fractional(alpha, Orientation::causal, T, 1.0 / gamma_fn(alpha));
  p.drift = [lambda](const FwdPoint&, const Eigen::VectorXd& x) { return Eigen::VectorXd(lambda * x); };
  p.lipschitz_K1 = scaled(*p.drift_kernel, std::abs(lambda));
  p.lipschitz_K2 = make_zero(T, Orientation::causal);
  return p;
}

SVIEProblem make_linear_scalar(const Kernel& k1, double a, const Kernel& k2, double b, double x0) {
  SVIEProblem p;
  p.label = "linear_scalar";
  p.T = k1.T;
  p.phi = [x0](double) { return Eigen::VectorXd::Constant(1, x0); };
  p.drift_kernel = k1;
  p.drift = [a](const FwdPoint&, const Eigen::VectorXd& x) { return Eigen::VectorXd(a * x); };
  p.diffusion_kernel = k2;
  p.diffusion = [b](const FwdPoint&, const Eigen::VectorXd& x) { return Eigen::MatrixXd(b * x); };
  p.lipschitz_K1 = scaled(k1, std::abs(a));
  p.lipschitz_K2 = scaled(k2, std::abs(b));
  return p;
}

SVIEProblem make_evolution_example(const Eigen::MatrixXd& M, const Eigen::VectorXd& x0, EvolutionFn Phi,
                                   EvolutionNoiseFn Psi, int m, double lip_phi, double lip_psi, double T) {
  if (M.rows() != M.cols() || M.rows() != x0.size()) throw std::invalid_argument("make_evolution_example: shapes");
  struct Semigroup {
    Eigen::MatrixXd M;
    std::mutex mu;
    std::map<double, Eigen::MatrixXd> memo;
    Eigen::MatrixXd at(double g) {
      std::lock_guard<std::mutex> lock(mu);
      auto it = memo.find(g);
      if (it != memo.end()) return it->second;
      Eigen::MatrixXd S = (g * M).exp();
      memo.emplace(g, S);
      return S;
    }
  };
  auto S = std::make_shared<Semigroup>();
  S->M = M;
  SVIEProblem p;
  p.label = "evolution";
  p.T = T;
  p.d = static_cast<int>(M.rows());
  p.m = m;
  p.phi = [S, x0](double t) { return Eigen::VectorXd(S->at(t) * x0); };
  if (Phi) {
    p.drift = [S, Phi](const FwdPoint& pt, const Eigen::VectorXd& x) {
      return Eigen::VectorXd(S->at(pt.t - pt.s) * Phi(pt.s, x));
    };
  }
  if (Psi) {
    p.diffusion = [S, Psi](const FwdPoint& pt, const Eigen::VectorXd& x) {
      return Eigen::MatrixXd(S->at(pt.t - pt.s) * Psi(pt.s, x));
    };
  }
  const double bound = std::exp(T * M.operatorNorm());
  p.lipschitz_K1 = make_constant(lip_phi * bound, T, Orientation::causal);
  p.lipschitz_K2 = make_constant(lip_psi * bound, T, Orientation::causal);
  return p;
}

Kernel make_caputo_kernel(double q, double a, double T, Orientation o) {
  if (!(q > 0 && q <= 1)) throw std::invalid_argument("make_caputo_kernel: q in (0, 1]");
  if (std::abs(a) * std::pow(T, q) > MittagLefflerOptions{}.max_abs_z) {
    throw std::invalid_argument("make_caputo_kernel: |a| T^q exceeds the Mittag-Leffler budget");
  }
  Kernel k = make_kernel(
      "caputo", o, T,
      [q, a](double, double g) { return std::pow(g, q - 1) * mittag_leffler(q, q, a * std::pow(g, q)); },
      SingularityHint{q - 1, 0.0});
  k.gap_primitive = [q, a](double g) {
    return g <= 0 ? 0.0 : std::pow(g, q) * mittag_leffler(q, q + 1, a * std::pow(g, q));
  };
  k.gap_only = true;
  return k;
}

SVIEProblem make_caputo_example(double q, double a, std::function<double(double, double)> f,
                                std::function<double(double, double)> g, double x0, double lip_f,
                                double lip_g, double T) {
  if (!(q > 0.5 && q < 1)) throw std::invalid_argument("make_caputo_example: q in (1/2, 1)");
  const Kernel k = make_caputo_kernel(q, a, T);
  SVIEProblem p;
  p.label = "caputo";
  p.T = T;
  p.phi = [q, a, x0](double t) {
    return Eigen::VectorXd::Constant(1, mittag_leffler(q, 1.0, a * std::pow(t, q)) * x0);
  };
  if (f) {
    p.drift_kernel = k;
    p.drift = [f](const FwdPoint& pt, const Eigen::VectorXd& x) {
      return Eigen::VectorXd::Constant(1, f(pt.s, x(0)));
    };
  }
  if (g) {
    p.diffusion_kernel = k;
    p.diffusion = [g](const FwdPoint& pt, const Eigen::VectorXd& x) {
      return Eigen::MatrixXd::Constant(1, 1, g(pt.s, x(0)));
    };
    p.diffusion_weight = DiffusionWeight::l2_matched;
  }
  p.lipschitz_K1 = scaled(k, lip_f);
  p.lipschitz_K2 = scaled(k, lip_g);
  return p;
}

}  // namespace svie
