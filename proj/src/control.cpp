#include "svie/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace svie {

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// G at depth j times dW_j, returned at depth j + 1.
NodeField times_increment(const Tree& tree, const NodeField& G) {
  NodeField out(G.rows(), G.cols() * 2);
  for (Eigen::Index n = 0; n < G.cols(); ++n) {
    out.col(2 * n) = -tree.sqdt() * G.col(n);
    out.col(2 * n + 1) = tree.sqdt() * G.col(n);
  }
  return out;
}

void require_scalar_noise(const Tree& tree, const char* who) {
  if (tree.m != 1) throw ControlError(std::string(who) + ": scalar noise only (tree.m must be 1)");
}

void check_control(const ControlProblem& cp, const AdaptedProcess& u, const Tree& tree) {
  require_scalar_noise(tree, "control");
  if (std::abs(tree.T - cp.T) > 1e-12 * cp.T) throw ControlError("control: horizon differs from the tree");
  if (static_cast<int>(u.at.size()) < tree.N) throw ControlError("control: needs values at depths 0..N-1");
  for (int j = 0; j < tree.N; ++j) {
    if (u.at[j].rows() != cp.k || static_cast<std::size_t>(u.at[j].cols()) != tree.nodes(j)) {
      throw ControlError("control: control field has the wrong shape at depth " + std::to_string(j));
    }
  }
}

SVIEProblem state_problem(const ControlProblem& cp, const AdaptedProcess& u) {
  SVIEProblem p;
  p.label = cp.label;
  p.T = cp.T;
  p.d = cp.d;
  p.m = 1;
  p.phi = cp.phi;
  p.drift_kernel = cp.drift_kernel;
  p.diffusion_kernel = cp.diffusion_kernel;
  p.diffusion_weight = cp.diffusion_weight;
  auto uu = std::make_shared<const AdaptedProcess>(u);
  p.drift = [b = cp.b, uu](const FwdPoint& pt, const Vec& x) {
    return Vec(b(pt.t, pt.s, x, uu->at[pt.j].col(pt.node)));
  };
  if (cp.sigma) {
    p.diffusion = [s = cp.sigma, uu](const FwdPoint& pt, const Vec& x) {
      return Mat(s(pt.t, pt.s, x, uu->at[pt.j].col(pt.node)));
    };
  }
  return p;
}

// Per-node cost gradient field g_x(t_i, X, u) for i < N; zero at depth N.
AdaptedProcess cost_gradient_x(const ControlProblem& cp, const AdaptedProcess& X, const AdaptedProcess& u,
                               const Tree& tree) {
  AdaptedProcess gx = AdaptedProcess::zeros(tree, cp.d);
  for (int i = 0; i < tree.N; ++i) {
    for (std::size_t n = 0; n < tree.nodes(i); ++n) gx.at[i].col(n) = cp.g_x(tree.time(i), X.at[i].col(n), u.at[i].col(n));
  }
  return gx;
}

struct Linearized {
  SVIESolution state;
  FwdWeights W;
  LinearSVIE sys;
  AdjointSolution adj;
};

Linearized linearize(const ControlProblem& cp, const AdaptedProcess& u, const AdaptedProcess& v,
                     const Tree& tree, const BSVIEOptions& opt) {
  Linearized L;
  L.state = solve_state(cp, u, tree);
  L.W = forward_weights(state_problem(cp, u), tree.N);
  L.sys = variational_system(cp, L.state.X, u, v, tree);
  const AdaptedProcess gx = cost_gradient_x(cp, L.state.X, u, tree);
  const BSVIEProblem bp = transpose_problem(L.sys, tree, [gx](const Tree& t, int i) {
    return lift(t, gx.at[i], i, t.N);
  });
  L.adj.m = solve_bsvie(bp, tree, opt);
  return L;
}

double field_mean_dot(const NodeField& a, const NodeField& b) {
  return (a.array() * b.array()).colwise().sum().mean();
}

}  // namespace

// ---- linear system ----

LinearSVIE LinearSVIE::tabulate(const Tree& tree, int d, const CoefAt& A, const CoefAt& C) {
  LinearSVIE s;
  s.d = d;
  s.A.resize(tree.N + 1);
  s.C.resize(tree.N + 1);
  for (int i = 0; i <= tree.N; ++i) {
    s.A[i].resize(i);
    s.C[i].resize(i);
    for (int j = 0; j < i; ++j) {
      for (std::size_t n = 0; n < tree.nodes(j); ++n) {
        s.A[i][j].push_back(A(i, j, n));
        if (C) s.C[i][j].push_back(C(i, j, n));
      }
    }
  }
  s.phi = AdaptedProcess::zeros(tree, d);
  return s;
}

AdaptedProcess solve_linear_svie(const LinearSVIE& sys, const Tree& tree) {
  require_scalar_noise(tree, "solve_linear_svie");
  if (static_cast<int>(sys.A.size()) != tree.N + 1 || static_cast<int>(sys.phi.at.size()) != tree.N + 1) {
    throw ControlError("solve_linear_svie: system does not match the tree");
  }
  AdaptedProcess X;
  X.at.resize(tree.N + 1);
  for (int i = 0; i <= tree.N; ++i) {
    NodeField acc = sys.phi.at[i];
    for (int j = 0; j < i; ++j) {
      NodeField F(sys.d, tree.nodes(j));
      for (std::size_t n = 0; n < tree.nodes(j); ++n) F.col(n) = sys.A[i][j][n] * X.at[j].col(n);
      acc += lift(tree, F, j, i);
      if (!sys.C[i][j].empty()) {
        NodeField G(sys.d, tree.nodes(j));
        for (std::size_t n = 0; n < tree.nodes(j); ++n) G.col(n) = sys.C[i][j][n] * X.at[j].col(n);
        acc += lift(tree, times_increment(tree, G), j + 1, i);
      }
    }
    X.at[i] = std::move(acc);
  }
  return X;
}

BSVIEProblem transpose_problem(const LinearSVIE& sys, const Tree& tree,
                               std::function<NodeField(const Tree&, int)> psi) {
  auto s = std::make_shared<const LinearSVIE>(sys);
  const double dt = tree.dt();
  double ly = 0.0, lz = 0.0;
  for (int i = 0; i <= tree.N; ++i) {
    for (int j = 0; j < i; ++j) {
      for (const auto& a : sys.A[i][j]) ly = std::max(ly, a.norm() / dt);
      for (const auto& c : sys.C[i][j]) lz = std::max(lz, c.norm());
    }
  }
  BSVIEProblem p;
  p.label = "adjoint";
  p.T = tree.T;
  p.d = sys.d;
  p.psi = std::move(psi);
  p.terms.push_back({std::nullopt, [s, dt](const GenPoint& pt, const Vec& y, const Vec&, const Vec& z2) {
                       if (pt.r == pt.i) return Vec(Vec::Zero(s->d));
                       const std::size_t anc = pt.tree->ancestor(pt.node, pt.r, pt.i);
                       Vec out = s->A[pt.r][pt.i][anc].transpose() * y / dt;
                       if (!s->C[pt.r][pt.i].empty()) out += s->C[pt.r][pt.i][anc].transpose() * z2;
                       return out;
                     }});
  p.lipschitz_y = make_constant(ly, tree.T);
  p.lipschitz_z2 = make_constant(lz, tree.T);
  return p;
}

double pairing(const Tree& tree, const AdaptedProcess& a, const AdaptedProcess& b) {
  const int last = std::min<int>({tree.N, static_cast<int>(a.at.size()), static_cast<int>(b.at.size())});
  double s = 0.0;
  for (int i = 0; i < last; ++i) s += tree.dt() * field_mean_dot(a.at[i], b.at[i]);
  return s;
}

// ---- control sets ----

ControlSet ControlSet::box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
  if (lo.size() != hi.size() || lo.size() == 0) throw ControlError("ControlSet::box: bound sizes differ");
  if ((lo.array() > hi.array()).any()) throw ControlError("ControlSet::box: lo > hi");
  ControlSet s;
  s.kind = Kind::box;
  s.dim = static_cast<int>(lo.size());
  s.lo = std::move(lo);
  s.hi = std::move(hi);
  return s;
}

ControlSet ControlSet::ball(Eigen::VectorXd center, double radius) {
  if (!(radius > 0)) throw ControlError("ControlSet::ball: radius must be positive");
  ControlSet s;
  s.kind = Kind::ball;
  s.dim = static_cast<int>(center.size());
  s.center = std::move(center);
  s.radius = radius;
  return s;
}

ControlSet ControlSet::whole(int dim) {
  ControlSet s;
  s.kind = Kind::whole;
  s.dim = dim;
  return s;
}

Eigen::VectorXd ControlSet::project(const Eigen::VectorXd& u) const {
  switch (kind) {
    case Kind::box:
      return u.cwiseMax(lo).cwiseMin(hi);
    case Kind::ball: {
      const double r = (u - center).norm();
      return r <= radius ? u : Vec(center + (u - center) * (radius / r));
    }
    case Kind::whole:
      break;
  }
  return u;
}

bool ControlSet::contains(const Eigen::VectorXd& u, double tol) const {
  switch (kind) {
    case Kind::box:
      return (u.array() >= lo.array() - tol).all() && (u.array() <= hi.array() + tol).all();
    case Kind::ball:
      return (u - center).norm() <= radius + tol;
    case Kind::whole:
      break;
  }
  return true;
}

std::vector<Eigen::VectorXd> ControlSet::probes(const Eigen::VectorXd& at, int interior,
                                                std::mt19937_64& rng) const {
  std::vector<Vec> out;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  switch (kind) {
    case Kind::box: {
      if (dim > 16) throw ControlError("ControlSet::probes: too many box corners");
      for (std::size_t c = 0; c < (std::size_t{1} << dim); ++c) {
        Vec p(dim);
        for (int k = 0; k < dim; ++k) p(k) = ((c >> k) & 1u) ? hi(k) : lo(k);
        out.push_back(p);
      }
      for (int r = 0; r < interior; ++r) {
        Vec p(dim);
        for (int k = 0; k < dim; ++k) p(k) = lo(k) + (hi(k) - lo(k)) * unif(rng);
        out.push_back(p);
      }
      break;
    }
    case Kind::ball: {
      for (int k = 0; k < dim; ++k) {
        for (double sgn : {-1.0, 1.0}) {
          Vec p = center;
          p(k) += sgn * radius;
          out.push_back(p);
        }
      }
      for (int r = 0; r < interior; ++r) {
        Vec g(dim);
        for (int k = 0; k < dim; ++k) g(k) = gauss(rng);
        const double rad = radius * std::pow(unif(rng), 1.0 / dim);
        out.push_back(center + g.normalized() * rad);
      }
      break;
    }
    case Kind::whole: {
      for (int k = 0; k < dim; ++k) {
        for (double sgn : {-1.0, 1.0}) {
          Vec p = at;
          p(k) += sgn;
          out.push_back(p);
        }
      }
      for (int r = 0; r < interior; ++r) {
        Vec g(dim);
        for (int k = 0; k < dim; ++k) g(k) = gauss(rng);
        out.push_back(at + g);
      }
      break;
    }
  }
  return out;
}

// ---- Problem (C) ----

void check_derivatives(const ControlProblem& cp, int probes, double h, double tol, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  auto draw = [&](int n) {
    Vec v(n);
    for (int k = 0; k < n; ++k) v(k) = gauss(rng);
    return v;
  };
  auto compare = [&](const Mat& fd, const Mat& an, const std::string& what) {
    if (fd.rows() != an.rows() || fd.cols() != an.cols()) {
      throw ControlError("check_derivatives: " + what + " has shape " + std::to_string(an.rows()) + "x" +
                         std::to_string(an.cols()) + ", expected " + std::to_string(fd.rows()) + "x" +
                         std::to_string(fd.cols()));
    }
    const double err = (fd - an).norm() / std::max(1.0, an.norm());
    if (!(err <= tol)) {
      throw ControlError("check_derivatives: " + what + " disagrees with finite differences (relative error " +
                         std::to_string(err) + ")");
    }
  };
  auto jac = [&](const CoefFn& f, double t, double s, const Vec& x, const Vec& u, bool wrt_x) {
    const Vec& base = wrt_x ? x : u;
    Mat J(cp.d, base.size());
    for (Eigen::Index c = 0; c < base.size(); ++c) {
      Vec p = base, m = base;
      p(c) += h;
      m(c) -= h;
      J.col(c) = wrt_x ? Vec((f(t, s, p, u) - f(t, s, m, u)) / (2 * h)) : Vec((f(t, s, x, p) - f(t, s, x, m)) / (2 * h));
    }
    return J;
  };
  for (int r = 0; r < probes; ++r) {
    const double t = cp.T * unif(rng), s = t * unif(rng);
    const Vec x = draw(cp.d), u = cp.U.project(draw(cp.k));
    if (!cp.b || !cp.b_x || !cp.b_u) throw ControlError("check_derivatives: drift and its Jacobians are required");
    compare(jac(cp.b, t, s, x, u, true), cp.b_x(t, s, x, u), "b_x");
    compare(jac(cp.b, t, s, x, u, false), cp.b_u(t, s, x, u), "b_u");
    if (cp.sigma) {
      if (!cp.sigma_x || !cp.sigma_u) throw ControlError("check_derivatives: sigma Jacobians are required");
      compare(jac(cp.sigma, t, s, x, u, true), cp.sigma_x(t, s, x, u), "sigma_x");
      compare(jac(cp.sigma, t, s, x, u, false), cp.sigma_u(t, s, x, u), "sigma_u");
    }
    if (!cp.g || !cp.g_x || !cp.g_u) throw ControlError("check_derivatives: cost and its gradients are required");
    Vec gx(cp.d), gu(cp.k);
    for (int c = 0; c < cp.d; ++c) {
      Vec p = x, m = x;
      p(c) += h;
      m(c) -= h;
      gx(c) = (cp.g(t, p, u) - cp.g(t, m, u)) / (2 * h);
    }
    for (int c = 0; c < cp.k; ++c) {
      Vec p = u, m = u;
      p(c) += h;
      m(c) -= h;
      gu(c) = (cp.g(t, x, p) - cp.g(t, x, m)) / (2 * h);
    }
    compare(gx, cp.g_x(t, x, u), "g_x");
    compare(gu, cp.g_u(t, x, u), "g_u");
  }
}

AdaptedProcess constant_control(const Tree& tree, const Eigen::VectorXd& u) {
  AdaptedProcess c = AdaptedProcess::zeros(tree, static_cast<int>(u.size()), tree.N - 1);
  for (auto& f : c.at) f.colwise() = u;
  return c;
}

AdaptedProcess random_control(const Tree& tree, int k, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, scale);
  AdaptedProcess c = AdaptedProcess::zeros(tree, k, tree.N - 1);
  for (auto& f : c.at) {
    for (Eigen::Index n = 0; n < f.cols(); ++n) {
      for (int r = 0; r < k; ++r) f(r, n) = gauss(rng);
    }
  }
  return c;
}

SVIESolution solve_state(const ControlProblem& cp, const AdaptedProcess& u, const Tree& tree) {
  check_control(cp, u, tree);
  return solve_lattice(state_problem(cp, u), tree);
}

double cost(const ControlProblem& cp, const AdaptedProcess& u, const Tree& tree) {
  const SVIESolution s = solve_state(cp, u, tree);
  double J = 0.0;
  for (int i = 0; i < tree.N; ++i) {
    double e = 0.0;
    for (std::size_t n = 0; n < tree.nodes(i); ++n) e += cp.g(tree.time(i), s.X.at[i].col(n), u.at[i].col(n));
    J += tree.dt() * e / static_cast<double>(tree.nodes(i));
  }
  return J;
}

LinearSVIE variational_system(const ControlProblem& cp, const AdaptedProcess& X, const AdaptedProcess& u,
                              const AdaptedProcess& v, const Tree& tree) {
  check_control(cp, u, tree);
  check_control(cp, v, tree);
  const FwdWeights W = forward_weights(state_problem(cp, u), tree.N);
  auto at = [&](int j, std::size_t n) { return std::pair<Vec, Vec>(X.at[j].col(n), u.at[j].col(n)); };
  LinearSVIE::CoefAt A = [&](int i, int j, std::size_t n) {
    const auto [x, uu] = at(j, n);
    return Mat(W.w(i, j) * cp.b_x(tree.time(i), tree.time(j), x, uu));
  };
  LinearSVIE::CoefAt C;
  if (cp.sigma) {
    C = [&](int i, int j, std::size_t n) {
      const auto [x, uu] = at(j, n);
      return Mat(W.v(i, j) * cp.sigma_x(tree.time(i), tree.time(j), x, uu));
    };
  }
  LinearSVIE sys = LinearSVIE::tabulate(tree, cp.d, A, C);
  for (int i = 1; i <= tree.N; ++i) {
    NodeField acc = NodeField::Zero(cp.d, tree.nodes(i));
    for (int j = 0; j < i; ++j) {
      NodeField F(cp.d, tree.nodes(j)), G(cp.d, tree.nodes(j));
      for (std::size_t n = 0; n < tree.nodes(j); ++n) {
        const auto [x, uu] = at(j, n);
        const Vec du = v.at[j].col(n) - uu;
        F.col(n) = W.w(i, j) * cp.b_u(tree.time(i), tree.time(j), x, uu) * du;
        G.col(n) = cp.sigma ? Vec(W.v(i, j) * cp.sigma_u(tree.time(i), tree.time(j), x, uu) * du)
                            : Vec(Vec::Zero(cp.d));
      }
      acc += lift(tree, F, j, i);
      if (cp.sigma) acc += lift(tree, times_increment(tree, G), j + 1, i);
    }
    sys.phi.at[i] = std::move(acc);
  }
  return sys;
}

AdaptedProcess solve_variational(const ControlProblem& cp, const AdaptedProcess& u, const AdaptedProcess& v,
                                 const Tree& tree) {
  const SVIESolution s = solve_state(cp, u, tree);
  return solve_linear_svie(variational_system(cp, s.X, u, v, tree), tree);
}

AdjointSolution solve_adjoint(const ControlProblem& cp, const AdaptedProcess& X, const AdaptedProcess& u,
                              const Tree& tree, const BSVIEOptions& opt) {
  const LinearSVIE sys = variational_system(cp, X, u, u, tree);
  const AdaptedProcess gx = cost_gradient_x(cp, X, u, tree);
  AdjointSolution adj;
  adj.m = solve_bsvie(transpose_problem(sys, tree, [gx](const Tree& t, int i) { return lift(t, gx.at[i], i, t.N); }),
                      tree, opt);
  return adj;
}

DualityReport duality_gap(const ControlProblem& cp, const AdaptedProcess& u, const AdaptedProcess& v,
                          const Tree& tree, const BSVIEOptions& opt) {
  const Linearized L = linearize(cp, u, v, tree, opt);
  const AdaptedProcess X1 = solve_linear_svie(L.sys, tree);
  const AdaptedProcess gx = cost_gradient_x(cp, L.state.X, u, tree);
  DualityReport r;
  r.forcing_side = pairing(tree, L.sys.phi, L.adj.m.Y);
  r.cost_side = pairing(tree, X1, gx);
  r.gap = std::abs(r.forcing_side - r.cost_side);
  return r;
}

AdaptedProcess mp_gradient(const ControlProblem& cp, const AdaptedProcess& u, const Tree& tree,
                           const BSVIEOptions& opt) {
  const Linearized L = linearize(cp, u, u, tree, opt);
  const AdaptedProcess& X = L.state.X;
  const double dt = tree.dt();
  AdaptedProcess grad = AdaptedProcess::zeros(tree, cp.k, tree.N - 1);
  for (int j = 0; j < tree.N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) grad.at[j].col(n) = cp.g_u(tree.time(j), X.at[j].col(n), u.at[j].col(n));
  }
  for (int i = 1; i < tree.N; ++i) {
    NodeField ey = L.adj.m.Y.at[i];
    for (int j = i - 1; j >= 0; --j) {
      ey = parent_mean(tree, ey);
      const NodeField& z = L.adj.m.Z.z[i][j];
      for (std::size_t n = 0; n < tree.nodes(j); ++n) {
        const Vec x = X.at[j].col(n), uu = u.at[j].col(n);
        const double t = tree.time(i), s = tree.time(j);
        grad.at[j].col(n) += L.W.w(i, j) * cp.b_u(t, s, x, uu).transpose() * ey.col(n);
        if (cp.sigma) grad.at[j].col(n) += dt * L.W.v(i, j) * cp.sigma_u(t, s, x, uu).transpose() * z.col(n);
      }
    }
  }
  return grad;
}

StationarityReport stationarity_from_gradient(const ControlSet& U, const AdaptedProcess& grad,
                                              const AdaptedProcess& u, const Tree& tree, int interior,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  StationarityReport r;
  r.margin = std::numeric_limits<double>::infinity();
  for (int j = 0; j < tree.N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) {
      const Vec at = u.at[j].col(n);
      const Vec g = grad.at[j].col(n);
      for (const Vec& p : U.probes(at, interior, rng)) {
        const double m = g.dot(p - at);
        ++r.probes;
        if (m < r.margin) {
          r.margin = m;
          r.worst_depth = j;
          r.worst_node = n;
        }
      }
    }
  }
  r.gradient_norm = std::sqrt(pairing(tree, grad, grad));
  return r;
}

StationarityReport check_stationarity(const ControlProblem& cp, const AdaptedProcess& u, const Tree& tree,
                                      int interior, std::uint64_t seed) {
  for (int j = 0; j < tree.N; ++j) {
    for (Eigen::Index n = 0; n < u.at[j].cols(); ++n) {
      if (!cp.U.contains(u.at[j].col(n), 1e-10)) throw ControlError("check_stationarity: control leaves U");
    }
  }
  return stationarity_from_gradient(cp.U, mp_gradient(cp, u, tree), u, tree, interior, seed);
}

std::vector<FDRow> fd_cost_derivative(const ControlProblem& cp, const AdaptedProcess& u, const AdaptedProcess& v,
                                      const Tree& tree, const std::vector<double>& eps_list) {
  const double J0 = cost(cp, u, tree);
  const AdaptedProcess grad = mp_gradient(cp, u, tree);
  AdaptedProcess dir = v;
  for (int j = 0; j < tree.N; ++j) dir.at[j] -= u.at[j];
  const double analytic = pairing(tree, grad, dir);
  std::vector<FDRow> rows;
  for (double eps : eps_list) {
    AdaptedProcess ue = u;
    for (int j = 0; j < tree.N; ++j) ue.at[j] += eps * dir.at[j];
    FDRow r;
    r.eps = eps;
    r.fd = (cost(cp, ue, tree) - J0) / eps;
    r.analytic = analytic;
    r.error = std::abs(r.fd - analytic);
    rows.push_back(r);
  }
  return rows;
}

SearchResult projected_gradient(const ControlSet& U, const GradientOracle& oracle, AdaptedProcess u0,
                                const Tree& tree, int steps, double rate, double tol) {
  SearchResult res;
  res.u = std::move(u0);
  for (auto& f : res.u.at) {
    for (Eigen::Index n = 0; n < f.cols(); ++n) f.col(n) = U.project(f.col(n));
  }
  auto step_from = [&](const AdaptedProcess& u, const AdaptedProcess& g, double r) {
    AdaptedProcess next = u;
    for (int j = 0; j < tree.N; ++j) {
      for (Eigen::Index n = 0; n < next.at[j].cols(); ++n) {
        next.at[j].col(n) = U.project(Vec(u.at[j].col(n) - r * g.at[j].col(n)));
      }
    }
    return next;
  };
  auto [J, g] = oracle(res.u);
  for (int s = 0; s < steps; ++s) {
    // Armijo backtracking on the projected step; the slack absorbs rounding near the optimum.
    AdaptedProcess next, diff;
    std::pair<double, AdaptedProcess> trial;
    for (int halvings = 0;; ++halvings) {
      next = step_from(res.u, g, rate);
      diff = next;
      for (int j = 0; j < tree.N; ++j) diff.at[j] -= res.u.at[j];
      trial = oracle(next);
      const double decrease = -pairing(tree, g, diff);
      if (trial.first <= J - 1e-4 * decrease + 1e-14 * std::max(1.0, std::abs(J)) || halvings >= 40) break;
      rate *= 0.5;
    }
    SearchStep st;
    st.step = s;
    st.cost = J;
    st.gradient_norm = std::sqrt(pairing(tree, g, g));
    st.update_norm = std::sqrt(pairing(tree, diff, diff));
    st.rate = rate;
    res.trace.push_back(st);
    res.u = std::move(next);
    J = trial.first;
    g = std::move(trial.second);
    if (st.update_norm <= tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

SearchResult projected_gradient_search(const ControlProblem& cp, const AdaptedProcess& u0, const Tree& tree,
                                       int steps, double rate, double tol) {
  GradientOracle oracle = [&](const AdaptedProcess& u) {
    return std::pair<double, AdaptedProcess>(cost(cp, u, tree), mp_gradient(cp, u, tree));
  };
  return projected_gradient(cp.U, oracle, u0, tree, steps, rate, tol);
}

// ---- examples ----

ControlProblem make_lq_control(double a, double bu, double c, double cu, double rho, double target, double x0,
                               double bound, std::optional<Kernel> k1, std::optional<Kernel> k2, double T) {
  ControlProblem cp;
  cp.label = "lq";
  cp.T = T;
  cp.phi = [x0](double) { return Vec(Vec::Constant(1, x0)); };
  cp.drift_kernel = std::move(k1);
  cp.diffusion_kernel = std::move(k2);
  cp.b = [a, bu](double, double, const Vec& x, const Vec& u) { return Vec(a * x + bu * u); };
  cp.b_x = [a](double, double, const Vec&, const Vec&) { return Mat(Mat::Constant(1, 1, a)); };
  cp.b_u = [bu](double, double, const Vec&, const Vec&) { return Mat(Mat::Constant(1, 1, bu)); };
  cp.sigma = [c, cu](double, double, const Vec& x, const Vec& u) { return Vec(c * x + cu * u); };
  cp.sigma_x = [c](double, double, const Vec&, const Vec&) { return Mat(Mat::Constant(1, 1, c)); };
  cp.sigma_u = [cu](double, double, const Vec&, const Vec&) { return Mat(Mat::Constant(1, 1, cu)); };
  cp.g = [rho, target](double, const Vec& x, const Vec& u) {
    return 0.5 * (x(0) - target) * (x(0) - target) + 0.5 * rho * u.squaredNorm();
  };
  cp.g_x = [target](double, const Vec& x, const Vec&) { return Vec(Vec::Constant(1, x(0) - target)); };
  cp.g_u = [rho](double, const Vec&, const Vec& u) { return Vec(rho * u); };
  cp.U = ControlSet::box(Vec::Constant(1, -bound), Vec::Constant(1, bound));
  check_derivatives(cp);
  return cp;
}

ControlProblem make_random_linear_control(int d, int k, double scale, std::uint64_t seed, std::optional<Kernel> k1,
                                          std::optional<Kernel> k2, double T) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](int r, int c, double sc) {
    Mat m(r, c);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) m(i, j) = sc * gauss(rng);
    }
    return m;
  };
  const Mat Bx = draw(d, d, scale), Bu = draw(d, k, scale), Sx = draw(d, d, scale), Su = draw(d, k, scale);
  const Vec b0 = draw(d, 1, scale), s0 = draw(d, 1, scale), x0 = draw(d, 1, 1.0), x1 = draw(d, 1, 1.0);
  const Mat L = draw(d, d, 1.0);
  const Mat Q = L * L.transpose() / d + 0.5 * Mat::Identity(d, d);
  const Vec qx = draw(d, 1, 1.0), ru = draw(k, 1, 1.0);
  auto mod = [](double t, double s) { return 1.0 + 0.3 * std::cos(t - s); };
  auto mod2 = [](double t, double s) { return 1.0 + 0.2 * std::sin(t + s); };

  ControlProblem cp;
  cp.label = "random_linear";
  cp.T = T;
  cp.d = d;
  cp.k = k;
  cp.phi = [x0, x1](double t) { return Vec(x0 + t * x1); };
  cp.drift_kernel = std::move(k1);
  cp.diffusion_kernel = std::move(k2);
  cp.b = [=](double t, double s, const Vec& x, const Vec& u) { return Vec(mod(t, s) * (Bx * x + Bu * u) + b0); };
  cp.b_x = [=](double t, double s, const Vec&, const Vec&) { return Mat(mod(t, s) * Bx); };
  cp.b_u = [=](double t, double s, const Vec&, const Vec&) { return Mat(mod(t, s) * Bu); };
  cp.sigma = [=](double t, double s, const Vec& x, const Vec& u) { return Vec(mod2(t, s) * (Sx * x + Su * u) + s0); };
  cp.sigma_x = [=](double t, double s, const Vec&, const Vec&) { return Mat(mod2(t, s) * Sx); };
  cp.sigma_u = [=](double t, double s, const Vec&, const Vec&) { return Mat(mod2(t, s) * Su); };
  cp.g = [=](double, const Vec& x, const Vec& u) {
    return 0.5 * x.dot(Q * x) + qx.dot(x) + 0.5 * u.squaredNorm() + ru.dot(u);
  };
  cp.g_x = [=](double, const Vec& x, const Vec&) { return Vec(Q * x + qx); };
  cp.g_u = [=](double, const Vec&, const Vec& u) { return Vec(u + ru); };
  cp.U = ControlSet::box(Vec::Constant(k, -2.0), Vec::Constant(k, 2.0));
  check_derivatives(cp);
  return cp;
}

}  // namespace svie
