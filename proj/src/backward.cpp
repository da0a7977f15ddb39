#include "svie/backward.hpp"

#include "svie/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace svie {

namespace {

using Vec = Eigen::VectorXd;

void require_scalar_noise(const Tree& tree, const char* who) {
  if (tree.m != 1) throw std::invalid_argument(std::string(who) + ": scalar noise (m = 1) required");
}

// Weighted generator value at (i, r); `z2` is the field at depth i.
struct Generator {
  const BSVIEProblem& p;
  const Tree& tree;
  std::vector<Eigen::MatrixXd> w;

  Generator(const BSVIEProblem& prob, const Tree& t) : p(prob), tree(t) {
    for (const auto& term : p.terms) w.push_back(generator_weights(term, tree));
  }

  Vec operator()(int i, int r, std::size_t node, const Vec& y, const Vec& z1, const Vec& z2) const {
    Vec out = Vec::Zero(p.d);
    GenPoint pt{i, r, tree.time(i), tree.time(r), node, &tree};
    for (std::size_t k = 0; k < p.terms.size(); ++k) {
      const double wk = w[k](i, r);
      if (wk != 0.0) out += wk * p.terms[k].fn(pt, y, z1, z2);
    }
    return out;
  }
};

// One backward step of the tree: mean and integrand of a depth r+1 field.
void split(const NodeField& next, NodeField& mean, NodeField& z, double sqdt) {
  const Eigen::Index n = next.cols() / 2;
  mean.resize(next.rows(), n);
  z.resize(next.rows(), n);
  for (Eigen::Index c = 0; c < n; ++c) {
    mean.col(c) = 0.5 * (next.col(2 * c) + next.col(2 * c + 1));
    z.col(c) = (next.col(2 * c + 1) - next.col(2 * c)) / (2.0 * sqdt);
  }
}

// Evolves lambda from depth b down to depth a for outer index i. `contrib`
// returns the weighted generator at (r, node, z1). Fills Z(i, r) for r in [a, b)
// and returns the fields lambda(r) for r in [a, b] (index r - a).
template <class Contrib>
std::vector<NodeField> evolve(const Tree& tree, const NodeField& top, int a, int b, std::vector<NodeField>& zrow,
                              const Contrib& contrib) {
  std::vector<NodeField> lam(b - a + 1);
  lam[b - a] = top;
  NodeField mean, z;
  for (int r = b - 1; r >= a; --r) {
    split(lam[r + 1 - a], mean, z, tree.sqdt());
    for (std::size_t n = 0; n < tree.nodes(r); ++n) mean.col(n) += contrib(r, n, z);
    zrow[r] = z;
    lam[r - a] = mean;
  }
  return lam;
}

// Z(t_i, t_j) for j < i from the representation of Y(t_i).
void below_diagonal(const Tree& tree, const NodeField& y, int i, std::vector<NodeField>& zrow) {
  if (i == 0) return;
  auto rep = martingale_representation(tree, y, i, 0);
  for (int j = 0; j < i; ++j) zrow[j] = rep.z[j];
}

double block_norm_sq(const Tree& tree, const MSolution& a, const MSolution& b, int lo, int hi) {
  const double dt = tree.dt();
  double s = 0.0;
  for (int i = lo; i < hi; ++i) {
    s += dt * (a.Y.at[i] - b.Y.at[i]).colwise().squaredNorm().mean();
    for (int j = 0; j < tree.N; ++j) s += dt * dt * (a.Z.z[i][j] - b.Z.z[i][j]).colwise().squaredNorm().mean();
  }
  return s;
}

std::vector<int> block_starts_for(const BSVIEProblem& p, const Tree& tree, const BSVIEOptions& opt) {
  if (!opt.block_starts.empty()) {
    std::set<int> s(opt.block_starts.begin(), opt.block_starts.end());
    s.insert(0);
    if (*s.rbegin() >= tree.N || *s.begin() < 0) throw std::invalid_argument("solve_bsvie: block start out of range");
    return {s.begin(), s.end()};
  }
  std::set<int> s{0};
  if (opt.method == BSVIEMethod::block) {
    PartitionResult y = find_budget_partition(p.lipschitz_y, opt.y_budget);
    if (!y.feasible) throw BackwardError("solve_bsvie: no partition for L_y within the block budget");
    for (int i : grid_block_starts(y.partition, tree.N)) s.insert(i);
    PartitionResult z = find_partition(p.lipschitz_z2, opt.z2_eps);
    if (!z.feasible) throw BackwardError("solve_bsvie: no partition for L_z2 at the block threshold");
    for (int i : grid_block_starts(z.partition, tree.N)) s.insert(i);
  }
  return {s.begin(), s.end()};
}

}  // namespace

Eigen::MatrixXd generator_weights(const GeneratorTerm& term, const Tree& tree) {
  const int N = tree.N;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < N; ++i) {
    for (int r = i; r < N; ++r) {
      w(i, r) = term.kernel ? cell_integral(*term.kernel, tree.time(i), tree.time(r), tree.time(r + 1)) : tree.dt();
      if (!std::isfinite(w(i, r))) {
        throw std::domain_error("generator_weights: kernel cell integral not finite at (" + std::to_string(i) + ", " +
                                std::to_string(r) + ")");
      }
    }
  }
  return w;
}

MSolution solve_bsvie(const BSVIEProblem& p, const Tree& tree, const BSVIEOptions& opt) {
  require_scalar_noise(tree, "solve_bsvie");
  if (!p.psi) throw std::invalid_argument("solve_bsvie: no free term");
  if (std::abs(tree.T - p.T) > 1e-12 * p.T) throw std::invalid_argument("solve_bsvie: horizon differs from the tree");
  const int N = tree.N;
  const Generator gen(p, tree);

  MSolution sol;
  sol.method = opt.method == BSVIEMethod::block ? "block" : "fixed_point";
  sol.block_starts = block_starts_for(p, tree, opt);
  sol.Y = AdaptedProcess::zeros(tree, p.d);
  sol.Z = TwoParameterProcess::zeros(tree, p.d);
  sol.Y.at[N] = p.psi(tree, N);

  // Free term of each outer index, carried down to the start of the current block.
  std::vector<NodeField> carried(N);
  for (int i = 0; i < N; ++i) carried[i] = p.psi(tree, i);

  const int nb = static_cast<int>(sol.block_starts.size());
  for (int bi = nb - 1; bi >= 0; --bi) {
    const int a = sol.block_starts[bi];
    const int b = bi + 1 < nb ? sol.block_starts[bi + 1] : N;

    // Initial guess: conditional expectations of the carried free terms.
    for (int i = a; i < b; ++i) {
      auto rep = martingale_representation(tree, carried[i], b, i);
      sol.Y.at[i] = rep.mean;
      for (int r = i; r < b; ++r) sol.Z.z[i][r] = rep.z[r - i];
      below_diagonal(tree, sol.Y.at[i], i, sol.Z.z[i]);
    }

    double prev = -1.0, ratio = 0.0;
    int rising = 0, sweeps = 0;
    while (true) {
      if (++sweeps > opt.max_sweeps) throw BackwardError("solve_bsvie: sweep cap reached");
      MSolution next = sol;
      for (int i = a; i < b; ++i) {
        auto contrib = [&](int r, std::size_t n, const NodeField& z1) -> Vec {
          const Vec z2 = r == i ? Vec(z1.col(n)) : Vec(sol.Z.z[r][i].col(tree.ancestor(n, r, i)));
          return gen(i, r, n, sol.Y.at[r].col(n), z1.col(n), z2);
        };
        auto lam = evolve(tree, carried[i], i, b, next.Z.z[i], contrib);
        next.Y.at[i] = lam.front();
        below_diagonal(tree, next.Y.at[i], i, next.Z.z[i]);
      }
      const double diff = std::sqrt(block_norm_sq(tree, next, sol, a, b));
      sol = std::move(next);
      if (prev > 0.0) {
        const double r = diff / prev;
        if (sweeps > b - a) ratio = std::max(ratio, r);
        // The sweep map is triangular in time, so updates may grow while they
        // propagate across the block; only count rising ratios after that.
        rising = r >= 1.0 && sweeps > b - a ? rising + 1 : 0;
        if (rising >= 3) throw BackwardError("solve_bsvie: fixed-point divergence on block " + std::to_string(bi));
      }
      prev = diff;
      if (diff <= opt.tol) break;
    }
    sol.iterations += sweeps;
    sol.contraction_ratios.insert(sol.contraction_ratios.begin(), ratio);

    // Fredholm step: earlier outer indices across this block, then the folded free term.
    for (int i = 0; i < a; ++i) {
      auto contrib = [&](int r, std::size_t n, const NodeField& z1) -> Vec {
        return gen(i, r, n, sol.Y.at[r].col(n), z1.col(n), sol.Z.z[r][i].col(tree.ancestor(n, r, i)));
      };
      carried[i] = evolve(tree, carried[i], a, b, sol.Z.z[i], contrib).front();
    }
  }
  sol.m_residual = m_condition_residual(sol, tree);
  sol.residual = equation_residual(sol, p, tree);
  return sol;
}

double m_condition_residual(const MSolution& sol, const Tree& tree) {
  double r = 0.0;
  for (int i = 1; i < tree.N; ++i) {
    const NodeField& y = sol.Y.at[i];
    std::vector<NodeField> z(sol.Z.z[i].begin(), sol.Z.z[i].begin() + i);
    const NodeField mean = y.rowwise().mean();
    const NodeField e = y - lift(tree, mean, 0, i) - stochastic_integral(tree, z, 0, i);
    r = std::max(r, e.cwiseAbs().maxCoeff());
  }
  return r;
}

double equation_residual(const MSolution& sol, const BSVIEProblem& p, const Tree& tree) {
  const Generator gen(p, tree);
  const int N = tree.N;
  double res = 0.0;
  for (int i = 0; i < N; ++i) {
    NodeField e = lift(tree, sol.Y.at[i], i, N) - p.psi(tree, i);
    for (int r = i; r < N; ++r) {
      const NodeField& z1 = sol.Z.z[i][r];
      NodeField g(p.d, tree.nodes(r));
      for (std::size_t n = 0; n < tree.nodes(r); ++n) {
        const Vec z2 = r == i ? Vec(z1.col(n)) : Vec(sol.Z.z[r][i].col(tree.ancestor(n, r, i)));
        g.col(n) = gen(i, r, n, sol.Y.at[r].col(n), z1.col(n), z2);
      }
      const NodeField dw = increment_field(tree, r, N);
      const NodeField zl = lift(tree, z1, r, N);
      e -= lift(tree, g, r, N);
      e += (zl.array().rowwise() * dw.row(0).array()).matrix();
    }
    res = std::max(res, e.cwiseAbs().maxCoeff());
  }
  return res;
}

BSDESolution solve_bsde(const NodeField& xi, const BSDEGenerator& g, const Tree& tree, YInput y_input) {
  require_scalar_noise(tree, "solve_bsde");
  if (static_cast<std::size_t>(xi.cols()) != tree.nodes(tree.N)) {
    throw std::invalid_argument("solve_bsde: terminal value must be a leaf field");
  }
  const int N = tree.N;
  const double dt = tree.dt();
  BSDESolution out;
  out.Y.at.resize(N + 1);
  out.Z.resize(N);
  out.Y.at[N] = xi;
  NodeField mean, z;
  for (int j = N - 1; j >= 0; --j) {
    split(out.Y.at[j + 1], mean, z, tree.sqdt());
    const double s = tree.time(j);
    NodeField y(xi.rows(), mean.cols());
    for (Eigen::Index n = 0; n < mean.cols(); ++n) {
      const Vec m = mean.col(n), zn = z.col(n);
      if (y_input == YInput::next) {
        y.col(n) = m + dt * g(s, m, zn);
        continue;
      }
      Vec cur = m;
      bool done = false;
      for (int it = 0; it < 200 && !done; ++it) {
        const Vec nxt = m + dt * g(s, cur, zn);
        done = (nxt - cur).lpNorm<Eigen::Infinity>() <= 1e-15 * std::max(1.0, nxt.lpNorm<Eigen::Infinity>());
        cur = nxt;
      }
      if (!done) throw BackwardError("solve_bsde: implicit step did not converge at depth " + std::to_string(j));
      y.col(n) = cur;
    }
    out.Y.at[j] = std::move(y);
    out.Z[j] = z;
  }
  return out;
}

ParamFamily solve_param_bsde_family(const TerminalField& psi, const FamilyGenerator& h, const Tree& tree, int R,
                                    int S) {
  require_scalar_noise(tree, "solve_param_bsde_family");
  const int N = tree.N;
  if (R < 0 || S < 0 || R > N || S > N) throw std::out_of_range("solve_param_bsde_family: index out of range");
  if (static_cast<int>(psi.size()) < N) throw std::invalid_argument("solve_param_bsde_family: psi needs N fields");
  ParamFamily fam;
  fam.r_lo = R;
  for (int i = S; i < N; ++i) {
    std::vector<NodeField> zrow(N);
    auto contrib = [&](int r, std::size_t n, const NodeField& z) -> Vec {
      GenPoint pt{i, r, tree.time(i), tree.time(r), n, &tree};
      return Vec(tree.dt() * h(pt, z.col(n)));
    };
    auto lam = evolve(tree, psi[i], R, N, zrow, contrib);
    AdaptedProcess a;
    a.at.resize(N + 1);
    for (int r = R; r <= N; ++r) a.at[r] = std::move(lam[r - R]);
    fam.outer.push_back(i);
    fam.lambda.push_back(std::move(a));
    fam.mu.push_back(std::move(zrow));
  }
  return fam;
}

SFIESolution solve_sfie(const TerminalField& psi, const FamilyGenerator& h, const Tree& tree, int R, int S,
                        const std::optional<Kernel>& kernel) {
  require_scalar_noise(tree, "solve_sfie");
  const int N = tree.N;
  if (R < 0 || R > S || S > N) throw std::out_of_range("solve_sfie: need 0 <= R <= S <= N");
  const Eigen::MatrixXd w = generator_weights(GeneratorTerm{kernel, nullptr}, tree);
  SFIESolution out;
  for (int i = R; i <= S && i < N; ++i) {
    std::vector<NodeField> zrow(N);
    auto contrib = [&](int r, std::size_t n, const NodeField& z) -> Vec {
      GenPoint pt{i, r, tree.time(i), tree.time(r), n, &tree};
      return w(i, r) * h(pt, z.col(n));
    };
    out.outer.push_back(i);
    out.psiS.push_back(evolve(tree, psi[i], S, N, zrow, contrib).front());
    out.Z.push_back(std::move(zrow));
  }
  return out;
}

BSVIEProblem make_caputo_bsde(double alpha, const Eigen::MatrixXd& A, BSDEGenerator f,
                              std::function<NodeField(const Tree&)> xi, double lip_f, double T) {
  if (!(alpha > 0.5 && alpha <= 1)) throw std::invalid_argument("make_caputo_bsde: alpha in (1/2, 1]");
  if (A.rows() != A.cols()) throw std::invalid_argument("make_caputo_bsde: A must be square");
  BSVIEProblem p;
  p.label = "caputo_bsde";
  p.T = T;
  p.d = static_cast<int>(A.rows());
  p.psi = [xi](const Tree& tree, int) { return xi(tree); };
  const double g = gamma_fn(alpha);
  const Kernel k = make_fractional(alpha, Orientation::anticausal, T, 1.0 / g);
  GeneratorTerm term;
  term.kernel = k;
  term.fn = [alpha, A, f](const GenPoint& pt, const Vec& y, const Vec& z1, const Vec&) {
    // Cell-consistent (s-t)^(1-alpha): the cell weight times this factor is the
    // exact cell integral of the product, which is dt.
    const double lo = pt.s - pt.t, hi = lo + pt.tree->dt();
    const double c = alpha * pt.tree->dt() / (std::pow(hi, alpha) - std::pow(lo, alpha));
    Vec out = -(A * y);
    if (f) out += f(pt.s, y, c * z1);
    return out;
  };
  p.terms.push_back(std::move(term));
  p.lipschitz_y = scaled(k, lip_f + A.operatorNorm());
  p.lipschitz_z1 = make_constant(lip_f / g, T);
  p.lipschitz_z2 = make_zero(T);
  return p;
}

BSVIEProblem make_linear_adjoint(MatrixPath M1, MatrixPath M2, MatrixPath S,
                                 std::function<NodeField(const Tree&, int)> psi, int d, double lip_y, double lip_z2,
                                 std::optional<Kernel> k, double T) {
  BSVIEProblem p;
  p.label = "linear_adjoint";
  p.T = T;
  p.d = d;
  p.psi = std::move(psi);
  GeneratorTerm term;
  term.kernel = k;
  term.fn = [M1, M2, S](const GenPoint& pt, const Vec& y, const Vec&, const Vec& z2) {
    const Eigen::MatrixXd St = S(pt.s - pt.t).transpose();
    Vec out = M1(pt.t).transpose() * (St * y);
    if (M2) out += M2(pt.t).transpose() * (St * z2);
    return out;
  };
  p.terms.push_back(std::move(term));
  const Kernel base = k ? *k : make_constant(1.0, T);
  p.lipschitz_y = scaled(base, lip_y);
  p.lipschitz_z1 = make_zero(T);
  p.lipschitz_z2 = scaled(base, lip_z2);
  return p;
}

BackwardStability stability_gap_bsvie(const BSVIEProblem& p, const BSVIEProblem& q, const Tree& tree,
                                      const BSVIEOptions& opt) {
  const MSolution a = solve_bsvie(p, tree, opt);
  const MSolution b = solve_bsvie(q, tree, opt);
  const Generator gp(p, tree), gq(q, tree);
  const int N = tree.N;
  const double dt = tree.dt();
  BackwardStability out;
  out.lhs = std::sqrt(block_norm_sq(tree, a, b, 0, N));
  double rhs = 0.0;
  for (int i = 0; i < N; ++i) {
    rhs += dt * (p.psi(tree, i) - q.psi(tree, i)).colwise().squaredNorm().mean();
    NodeField acc = NodeField::Zero(1, tree.nodes(N));
    for (int r = i; r < N; ++r) {
      const NodeField& z1 = b.Z.z[i][r];
      NodeField g(1, tree.nodes(r));
      for (std::size_t n = 0; n < tree.nodes(r); ++n) {
        const Vec z2 = r == i ? Vec(z1.col(n)) : Vec(b.Z.z[r][i].col(tree.ancestor(n, r, i)));
        const Vec y = b.Y.at[r].col(n), zz = z1.col(n);
        g(0, n) = (gp(i, r, n, y, zz, z2) - gq(i, r, n, y, zz, z2)).norm();
      }
      acc += lift(tree, g, r, N);
    }
    rhs += dt * acc.squaredNorm() / static_cast<double>(acc.cols());
  }
  out.rhs = std::sqrt(rhs);
  if (out.lhs == 0.0 && out.rhs == 0.0) {
    out.exact_zero = true;
  } else {
    out.ratio = out.rhs == 0.0 ? std::numeric_limits<double>::infinity() : out.lhs / out.rhs;
  }
  return out;
}

}  // namespace svie
