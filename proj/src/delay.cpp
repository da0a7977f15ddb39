#include "svie/delay.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <memory>
#include <random>

namespace svie {

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

NodeField times_increment(const Tree& tree, const NodeField& G) {
  NodeField out(G.rows(), G.cols() * 2);
  for (Eigen::Index n = 0; n < G.cols(); ++n) {
    out.col(2 * n) = -tree.sqdt() * G.col(n);
    out.col(2 * n + 1) = tree.sqdt() * G.col(n);
  }
  return out;
}

void check_control(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree) {
  if (tree.m != 1) throw ControlError("delay: scalar noise only (tree.m must be 1)");
  if (std::abs(tree.T - dp.T) > 1e-12 * dp.T) throw ControlError("delay: horizon differs from the tree");
  if (static_cast<int>(u.at.size()) < tree.N) throw ControlError("delay: control needs depths 0..N-1");
  for (int j = 0; j < tree.N; ++j) {
    if (u.at[j].rows() != dp.k || static_cast<std::size_t>(u.at[j].cols()) != tree.nodes(j)) {
      throw ControlError("delay: control field has the wrong shape at depth " + std::to_string(j));
    }
  }
}

// Arguments at node n of depth j; u and mu left empty at j = N.
DelayArgs args_at(const DelayState& s, const AdaptedProcess& u, int j, std::size_t n, int N) {
  DelayArgs a;
  a.x = s.x.at[j].col(n);
  a.y = s.y.at[j].col(n);
  a.z = s.z.at[j].col(n);
  if (j < N) {
    a.u = u.at[j].col(n);
    a.mu = s.mu.at[j].col(n);
  }
  return a;
}

// Node-wise linearization at depth j < N.
struct NodeLin {
  Mat bx, by, bz, bu, bmu;
  Mat sx, sy, sz, su, smu;
};

NodeLin linearize_node(const DelayProblem& dp, double t, const DelayArgs& a) {
  NodeLin L;
  L.bx = dp.b.fx(t, a);
  L.by = dp.b.fy(t, a);
  L.bz = dp.b.fz(t, a);
  L.bu = dp.b.fu(t, a);
  L.bmu = dp.b.fmu(t, a);
  if (dp.sigma.f) {
    L.sx = dp.sigma.fx(t, a);
    L.sy = dp.sigma.fy(t, a);
    L.sz = dp.sigma.fz(t, a);
    L.su = dp.sigma.fu(t, a);
    L.smu = dp.sigma.fmu(t, a);
  }
  return L;
}

struct Lin {
  DelayState state;
  std::vector<std::vector<NodeLin>> at;  // depths 0..N-1
};

Lin linearize(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree) {
  Lin L;
  L.state = solve_delay_state(dp, u, tree);
  L.at.resize(tree.N);
  for (int j = 0; j < tree.N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) {
      L.at[j].push_back(linearize_node(dp, tree.time(j), args_at(L.state, u, j, n, tree.N)));
    }
  }
  return L;
}

// Stacked forcing coefficient [S_{i-j}; 1_{i-j>D} S_{i-j-D}; 0], times w.
Mat forcing_block(const DelayGrid& g, int d, int i, int j, double w) {
  Mat P = Mat::Zero(3 * d, d);
  P.topRows(d) = w * g.S[i - j];
  if (i - j > g.D) P.middleRows(d, d) = w * g.S[i - j - g.D];
  return P;
}

Mat hcat3(const Mat& a, const Mat& b, const Mat& c) {
  Mat out(a.rows(), a.cols() + b.cols() + c.cols());
  out << a, b, c;
  return out;
}

LinearSVIE augmented_system(const DelayProblem& dp, const Lin& L, const DelayGrid& g, const Tree& tree,
                            MovingAverageRow row) {
  const int d = dp.d;
  const double dt = tree.dt();
  const Mat I = Mat::Identity(d, d);
  LinearSVIE::CoefAt A = [&](int i, int j, std::size_t n) {
    const NodeLin& nl = L.at[j][n];
    Mat out = Mat::Zero(3 * d, 3 * d);
    const Mat row0 = hcat3(nl.bx, nl.by, nl.bz);
    out.topRows(d) = dt * g.S[i - j] * row0;
    if (i - j > g.D) out.middleRows(d, d) = dt * g.S[i - j - g.D] * row0;
    if (row == MovingAverageRow::resolved) {
      if (i - j <= g.D) out.block(2 * d, 0, d, d) = g.c[i - j] * I;
    } else {
      out.bottomRows(d) = dt * hcat3(I, -std::exp(-dp.lambda * dp.delta) * I, -dp.lambda * I);
    }
    return out;
  };
  LinearSVIE::CoefAt C;
  if (dp.sigma.f) {
    C = [&](int i, int j, std::size_t n) {
      const NodeLin& nl = L.at[j][n];
      Mat out = Mat::Zero(3 * d, 3 * d);
      const Mat row0 = hcat3(nl.sx, nl.sy, nl.sz);
      out.topRows(d) = g.S[i - j] * row0;
      if (i - j > g.D) out.middleRows(d, d) = g.S[i - j - g.D] * row0;
      return out;
    };
  }
  return LinearSVIE::tabulate(tree, 3 * d, A, C);
}

// Terminal data H = (h_x, h_y, h_z) at depth N and running data L at depths 0..N-1.
NodeField terminal_data(const DelayProblem& dp, const DelayState& s, const AdaptedProcess& u, const Tree& tree) {
  const int d = dp.d;
  NodeField H = NodeField::Zero(3 * d, tree.nodes(tree.N));
  if (!dp.h.f) return H;
  for (std::size_t n = 0; n < tree.nodes(tree.N); ++n) {
    const DelayArgs a = args_at(s, u, tree.N, n, tree.N);
    H.block(0, n, d, 1) = dp.h.fx(dp.T, a).transpose();
    H.block(d, n, d, 1) = dp.h.fy(dp.T, a).transpose();
    H.block(2 * d, n, d, 1) = dp.h.fz(dp.T, a).transpose();
  }
  return H;
}

AdaptedProcess running_data(const DelayProblem& dp, const DelayState& s, const AdaptedProcess& u, const Tree& tree) {
  const int d = dp.d;
  AdaptedProcess Lb = AdaptedProcess::zeros(tree, 3 * d);
  for (int j = 0; j < tree.N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) {
      const DelayArgs a = args_at(s, u, j, n, tree.N);
      const double t = tree.time(j);
      Lb.at[j].block(0, n, d, 1) = dp.l.fx(t, a).transpose();
      Lb.at[j].block(d, n, d, 1) = dp.l.fy(t, a).transpose();
      Lb.at[j].block(2 * d, n, d, 1) = dp.l.fz(t, a).transpose();
    }
  }
  return Lb;
}

double terminal_pairing(const NodeField& H, const NodeField& X) {
  return (H.array() * X.array()).colwise().sum().mean();
}

}  // namespace

void check_derivatives(const DelayProblem& dp, int probes, double h, double tol, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  auto draw = [&](int n) {
    Vec v(n);
    for (int c = 0; c < n; ++c) v(c) = gauss(rng);
    return v;
  };
  auto probe = [&](const DelayMap& m, const std::string& name, double t, const DelayArgs& a, bool controls) {
    if (!m.f) return;
    if (!m.fx || !m.fy || !m.fz || (controls && (!m.fu || !m.fmu))) {
      throw ControlError("check_derivatives: " + name + " is missing a Jacobian");
    }
    const Vec f0 = m.f(t, a);
    auto one = [&](Vec DelayArgs::*field, const Mat& an, const char* wrt) {
      const Vec& base = a.*field;
      Mat fd(f0.size(), base.size());
      for (Eigen::Index c = 0; c < base.size(); ++c) {
        DelayArgs p = a, q = a;
        (p.*field)(c) += h;
        (q.*field)(c) -= h;
        fd.col(c) = (m.f(t, p) - m.f(t, q)) / (2 * h);
      }
      if (fd.rows() != an.rows() || fd.cols() != an.cols()) {
        throw ControlError("check_derivatives: " + name + "_" + wrt + " has the wrong shape");
      }
      const double err = (fd - an).norm() / std::max(1.0, an.norm());
      if (!(err <= tol)) {
        throw ControlError("check_derivatives: " + name + "_" + wrt + " disagrees with finite differences (relative error " +
                           std::to_string(err) + ")");
      }
    };
    one(&DelayArgs::x, m.fx(t, a), "x");
    one(&DelayArgs::y, m.fy(t, a), "y");
    one(&DelayArgs::z, m.fz(t, a), "z");
    if (controls) {
      one(&DelayArgs::u, m.fu(t, a), "u");
      one(&DelayArgs::mu, m.fmu(t, a), "mu");
    }
  };
  if (!dp.b.f || !dp.l.f) throw ControlError("check_derivatives: drift b and running cost l are required");
  for (int r = 0; r < probes; ++r) {
    DelayArgs a{draw(dp.d), draw(dp.d), draw(dp.d), draw(dp.k), draw(dp.k)};
    const double t = dp.T * unif(rng);
    probe(dp.b, "b", t, a, true);
    probe(dp.sigma, "sigma", t, a, true);
    probe(dp.l, "l", t, a, true);
    DelayArgs ah = a;
    ah.u.resize(0);
    ah.mu.resize(0);
    probe(dp.h, "h", dp.T, ah, false);
  }
}

DelayGrid delay_grid(const DelayProblem& dp, const Tree& tree) {
  if (!(dp.delta > 0) || !(dp.delta < dp.T)) throw ControlError("delay: delta must lie in (0, T)");
  const double ratio = dp.delta / tree.dt();
  const int D = static_cast<int>(std::lround(ratio));
  if (std::abs(ratio - D) > 1e-9 * std::max(1.0, ratio)) {
    throw ControlError("delay: delta = " + std::to_string(dp.delta) + " is not a multiple of dt = " +
                       std::to_string(tree.dt()));
  }
  if (D < 1 || D >= tree.N) throw ControlError("delay: need 1 <= delta/dt < N");
  if (dp.M.rows() != dp.d || dp.M.cols() != dp.d) throw ControlError("delay: M must be d x d");
  DelayGrid g;
  g.D = D;
  for (int k = 0; k <= tree.N; ++k) g.S.push_back(Mat(dp.M * (k * tree.dt())).exp());
  g.c.assign(D + 1, 0.0);
  const double dt = tree.dt(), lam = dp.lambda;
  for (int k = 1; k <= D; ++k) {
    g.c[k] = lam == 0.0 ? dt : std::exp(-lam * (k - 1) * dt) * (-std::expm1(-lam * dt)) / lam;
  }
  return g;
}

DelayState solve_delay_state(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree) {
  check_control(dp, u, tree);
  const DelayGrid g = delay_grid(dp, tree);
  const int N = tree.N, d = dp.d, D = g.D;
  const double dt = tree.dt();
  const Vec xi0 = dp.xi(0.0);
  DelayState s;
  s.x = AdaptedProcess::zeros(tree, d);
  s.y = AdaptedProcess::zeros(tree, d);
  s.z = AdaptedProcess::zeros(tree, d);
  s.mu = AdaptedProcess::zeros(tree, dp.k, N - 1);
  auto hist = [&](int q, int j, std::size_t n) -> Vec {
    if (q >= 0) return s.x.at[q].col(tree.ancestor(n, j, q));
    return dp.xi(q * dt);
  };
  std::vector<NodeField> F(N), G(N);  // b dt and sigma at depth j
  for (int i = 0; i <= N; ++i) {
    NodeField xi_field(d, tree.nodes(i));
    xi_field.colwise() = Vec(g.S[i] * xi0);
    for (int j = 0; j < i; ++j) {
      xi_field += lift(tree, NodeField(g.S[i - j] * F[j]), j, i);
      if (dp.sigma.f) xi_field += lift(tree, times_increment(tree, NodeField(g.S[i - j] * G[j])), j + 1, i);
    }
    s.x.at[i] = std::move(xi_field);
    for (std::size_t n = 0; n < tree.nodes(i); ++n) {
      s.y.at[i].col(n) = hist(i - D, i, n);
      Vec z = Vec::Zero(d);
      for (int k = 1; k <= D; ++k) z += g.c[k] * hist(i - k, i, n);
      s.z.at[i].col(n) = z;
      if (i < N) {
        s.mu.at[i].col(n) = i >= D ? Vec(u.at[i - D].col(tree.ancestor(n, i, i - D))) : dp.eta((i - D) * dt);
      }
    }
    if (i == N) break;
    F[i].resize(d, tree.nodes(i));
    G[i].resize(d, tree.nodes(i));
    for (std::size_t n = 0; n < tree.nodes(i); ++n) {
      const DelayArgs a = args_at(s, u, i, n, N);
      F[i].col(n) = dt * dp.b.f(tree.time(i), a);
      if (dp.sigma.f) G[i].col(n) = dp.sigma.f(tree.time(i), a);
    }
  }
  return s;
}

double delay_cost(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree) {
  const DelayState s = solve_delay_state(dp, u, tree);
  double J = 0.0;
  for (int j = 0; j < tree.N; ++j) {
    double e = 0.0;
    for (std::size_t n = 0; n < tree.nodes(j); ++n) e += dp.l.f(tree.time(j), args_at(s, u, j, n, tree.N))(0);
    J += tree.dt() * e / static_cast<double>(tree.nodes(j));
  }
  if (dp.h.f) {
    double e = 0.0;
    for (std::size_t n = 0; n < tree.nodes(tree.N); ++n) e += dp.h.f(dp.T, args_at(s, u, tree.N, n, tree.N))(0);
    J += e / static_cast<double>(tree.nodes(tree.N));
  }
  return J;
}

DelayVariation delay_to_svie(const DelayProblem& dp, const AdaptedProcess& u, const AdaptedProcess& v,
                             const Tree& tree, MovingAverageRow row) {
  check_control(dp, v, tree);
  const Lin L = linearize(dp, u, tree);
  const DelayGrid g = delay_grid(dp, tree);
  const int N = tree.N, d = dp.d;
  DelayVariation out;
  out.sys = augmented_system(dp, L, g, tree, row);
  out.db = AdaptedProcess::zeros(tree, d, N - 1);
  out.dsigma = AdaptedProcess::zeros(tree, d, N - 1);
  for (int j = 0; j < N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) {
      const DelayArgs a = args_at(L.state, u, j, n, N);
      DelayArgs av = a;
      av.u = v.at[j].col(n);
      if (j >= g.D) av.mu = v.at[j - g.D].col(tree.ancestor(n, j, j - g.D));
      const double t = tree.time(j);
      out.db.at[j].col(n) = dp.b.f(t, av) - dp.b.f(t, a);
      if (dp.sigma.f) out.dsigma.at[j].col(n) = dp.sigma.f(t, av) - dp.sigma.f(t, a);
    }
  }
  for (int i = 1; i <= N; ++i) {
    NodeField acc = NodeField::Zero(3 * d, tree.nodes(i));
    for (int j = 0; j < i; ++j) {
      acc += lift(tree, NodeField(forcing_block(g, d, i, j, tree.dt()) * out.db.at[j]), j, i);
      if (dp.sigma.f) {
        acc += lift(tree, times_increment(tree, NodeField(forcing_block(g, d, i, j, 1.0) * out.dsigma.at[j])), j + 1, i);
      }
    }
    out.sys.phi.at[i] = std::move(acc);
  }
  return out;
}

AdaptedProcess delay_variational_direct(const DelayProblem& dp, const AdaptedProcess& u, const AdaptedProcess& v,
                                        const Tree& tree) {
  check_control(dp, v, tree);
  const Lin L = linearize(dp, u, tree);
  const DelayGrid g = delay_grid(dp, tree);
  const int N = tree.N, d = dp.d, D = g.D;
  const double dt = tree.dt();
  const Mat S1 = g.S[1];
  AdaptedProcess x1 = AdaptedProcess::zeros(tree, d);
  auto buffer = [&](int q, int j, std::size_t n) -> Vec {
    return q >= 0 ? Vec(x1.at[q].col(tree.ancestor(n, j, q))) : Vec(Vec::Zero(d));
  };
  for (int j = 0; j < N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) {
      const NodeLin& nl = L.at[j][n];
      const Vec x = x1.at[j].col(n), y = buffer(j - D, j, n);
      Vec z = Vec::Zero(d);
      for (int k = 1; k <= D; ++k) z += g.c[k] * buffer(j - k, j, n);
      const DelayArgs a = args_at(L.state, u, j, n, N);
      DelayArgs av = a;
      av.u = v.at[j].col(n);
      if (j >= D) av.mu = v.at[j - D].col(tree.ancestor(n, j, j - D));
      const double t = tree.time(j);
      const Vec drift = nl.bx * x + nl.by * y + nl.bz * z + dp.b.f(t, av) - dp.b.f(t, a);
      Vec noise = Vec::Zero(d);
      if (dp.sigma.f) noise = nl.sx * x + nl.sy * y + nl.sz * z + dp.sigma.f(t, av) - dp.sigma.f(t, a);
      for (int bit = 0; bit < 2; ++bit) {
        const double dw = bit ? tree.sqdt() : -tree.sqdt();
        x1.at[j + 1].col(2 * n + bit) = S1 * (x + drift * dt + noise * dw);
      }
    }
  }
  return x1;
}

AdjointSolution solve_delay_adjoint(const DelayProblem& dp, const DelayState& state, const AdaptedProcess& u,
                                    const Tree& tree, const BSVIEOptions& opt, MovingAverageRow row) {
  check_control(dp, u, tree);
  const DelayGrid g = delay_grid(dp, tree);
  Lin L;
  L.state = state;
  L.at.resize(tree.N);
  for (int j = 0; j < tree.N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) {
      L.at[j].push_back(linearize_node(dp, tree.time(j), args_at(state, u, j, n, tree.N)));
    }
  }
  const LinearSVIE sys = augmented_system(dp, L, g, tree, row);
  const int N = tree.N;
  AdjointSolution adj;
  adj.H = terminal_data(dp, state, u, tree);
  const auto rep = martingale_representation(tree, adj.H, N, 0);
  adj.zeta = rep.z;
  adj.eta.at.resize(N + 1);
  adj.eta.at[N] = adj.H;
  for (int j = N - 1; j >= 0; --j) adj.eta.at[j] = parent_mean(tree, adj.eta.at[j + 1]);

  const AdaptedProcess Lb = running_data(dp, state, u, tree);
  auto s = std::make_shared<const LinearSVIE>(sys);
  auto H = std::make_shared<const NodeField>(adj.H);
  auto zeta = std::make_shared<const std::vector<NodeField>>(adj.zeta);
  auto psi = [s, H, zeta, Lb](const Tree& t, int i) {
    const int n = t.N;
    if (i == n) return NodeField(NodeField::Zero(s->d, t.nodes(n)));
    NodeField out = lift(t, Lb.at[i], i, n);
    NodeField cz(s->d, t.nodes(i));
    for (std::size_t a = 0; a < t.nodes(i); ++a) {
      cz.col(a) = s->C[n][i].empty() ? Vec(Vec::Zero(s->d)) : Vec(s->C[n][i][a].transpose() * (*zeta)[i].col(a));
    }
    out += lift(t, cz, i, n);
    for (std::size_t leaf = 0; leaf < t.nodes(n); ++leaf) {
      out.col(leaf) += s->A[n][i][t.ancestor(leaf, n, i)].transpose() * H->col(leaf) / t.dt();
    }
    return out;
  };
  adj.m = solve_bsvie(transpose_problem(sys, tree, psi), tree, opt);
  delay_pq(dp, adj, tree);
  return adj;
}

void delay_pq(const DelayProblem& dp, AdjointSolution& adj, const Tree& tree) {
  const DelayGrid g = delay_grid(dp, tree);
  const int N = tree.N, d = dp.d;
  const double dt = tree.dt();
  if (static_cast<int>(adj.eta.at.size()) != N + 1 || static_cast<int>(adj.zeta.size()) != N) {
    throw ControlError("delay_pq: adjoint lacks the terminal representation");
  }
  adj.p = AdaptedProcess::zeros(tree, d, N - 1);
  adj.q = AdaptedProcess::zeros(tree, d, N - 1);
  for (int j = 0; j < N; ++j) {
    adj.p.at[j] = forcing_block(g, d, N, j, 1.0).transpose() * adj.eta.at[j];
    adj.q.at[j] = forcing_block(g, d, N, j, 1.0).transpose() * adj.zeta[j];
  }
  for (int i = 1; i < N; ++i) {
    NodeField ey = adj.m.Y.at[i];
    for (int j = i - 1; j >= 0; --j) {
      ey = parent_mean(tree, ey);
      const Mat P = forcing_block(g, d, i, j, dt).transpose();
      adj.p.at[j] += P * ey;
      adj.q.at[j] += P * adj.m.Z.z[i][j];
    }
  }
}

double hamiltonian_G(const DelayProblem& dp, double t, const DelayArgs& a, const Eigen::VectorXd& p,
                     const Eigen::VectorXd& q) {
  double G = dp.l.f(t, a)(0) + p.dot(dp.b.f(t, a));
  if (dp.sigma.f) G += q.dot(dp.sigma.f(t, a));
  return G;
}

HamiltonianGradient hamiltonian_gradient(const DelayProblem& dp, double t, const DelayArgs& a,
                                         const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  HamiltonianGradient G;
  G.G_u = dp.l.fu(t, a).transpose() + dp.b.fu(t, a).transpose() * p;
  G.G_mu = dp.l.fmu(t, a).transpose() + dp.b.fmu(t, a).transpose() * p;
  if (dp.sigma.f) {
    G.G_u += dp.sigma.fu(t, a).transpose() * q;
    G.G_mu += dp.sigma.fmu(t, a).transpose() * q;
  }
  return G;
}

AdaptedProcess delay_gradient(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree,
                              const BSVIEOptions& opt) {
  const DelayState s = solve_delay_state(dp, u, tree);
  const AdjointSolution adj = solve_delay_adjoint(dp, s, u, tree, opt);
  const DelayGrid g = delay_grid(dp, tree);
  const int N = tree.N;
  AdaptedProcess Gu = AdaptedProcess::zeros(tree, dp.k, N - 1), Gmu = Gu;
  for (int j = 0; j < N; ++j) {
    for (std::size_t n = 0; n < tree.nodes(j); ++n) {
      const HamiltonianGradient G =
          hamiltonian_gradient(dp, tree.time(j), args_at(s, u, j, n, N), adj.p.at[j].col(n), adj.q.at[j].col(n));
      Gu.at[j].col(n) = G.G_u;
      Gmu.at[j].col(n) = G.G_mu;
    }
  }
  for (int j = 0; j + g.D < N; ++j) Gu.at[j] += conditional_expectation(tree, Gmu.at[j + g.D], j + g.D, j);
  return Gu;
}

StationarityReport delay_mp_check(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree, int interior,
                                  std::uint64_t seed) {
  return stationarity_from_gradient(dp.U, delay_gradient(dp, u, tree), u, tree, interior, seed);
}

DelayDuality delay_duality(const DelayProblem& dp, const AdaptedProcess& u, const AdaptedProcess& v,
                           const Tree& tree, const BSVIEOptions& opt, MovingAverageRow row) {
  const DelayVariation var = delay_to_svie(dp, u, v, tree, row);
  const AdaptedProcess X = solve_linear_svie(var.sys, tree);
  const DelayState s = solve_delay_state(dp, u, tree);
  const AdjointSolution adj = solve_delay_adjoint(dp, s, u, tree, opt, row);
  const AdaptedProcess Lb = running_data(dp, s, u, tree);
  DelayDuality r;
  r.state_side = pairing(tree, Lb, X) + terminal_pairing(adj.H, X.at[tree.N]);
  r.adjoint_side = pairing(tree, var.sys.phi, adj.m.Y) + terminal_pairing(adj.H, var.sys.phi.at[tree.N]);
  r.pq_side = pairing(tree, var.db, adj.p) + pairing(tree, var.dsigma, adj.q);
  r.gap = std::max(std::abs(r.state_side - r.adjoint_side), std::abs(r.adjoint_side - r.pq_side));
  return r;
}

std::vector<FDRow> delay_fd_derivative(const DelayProblem& dp, const AdaptedProcess& u, const AdaptedProcess& v,
                                       const Tree& tree, const std::vector<double>& eps_list) {
  const double J0 = delay_cost(dp, u, tree);
  const AdaptedProcess grad = delay_gradient(dp, u, tree);
  AdaptedProcess dir = v;
  for (int j = 0; j < tree.N; ++j) dir.at[j] -= u.at[j];
  const double analytic = pairing(tree, grad, dir);
  std::vector<FDRow> rows;
  for (double eps : eps_list) {
    AdaptedProcess ue = u;
    for (int j = 0; j < tree.N; ++j) ue.at[j] += eps * dir.at[j];
    FDRow r;
    r.eps = eps;
    r.fd = (delay_cost(dp, ue, tree) - J0) / eps;
    r.analytic = analytic;
    r.error = std::abs(r.fd - analytic);
    rows.push_back(r);
  }
  return rows;
}

SearchResult delay_projected_gradient_search(const DelayProblem& dp, const AdaptedProcess& u0, const Tree& tree,
                                             int steps, double rate, double tol) {
  GradientOracle oracle = [&](const AdaptedProcess& u) {
    return std::pair<double, AdaptedProcess>(delay_cost(dp, u, tree), delay_gradient(dp, u, tree));
  };
  return projected_gradient(dp.U, oracle, u0, tree, steps, rate, tol);
}

ControlProblem undelayed_problem(const DelayProblem& dp) {
  ControlProblem cp;
  cp.label = dp.label + "_undelayed";
  cp.T = dp.T;
  cp.d = dp.d;
  cp.k = dp.k;
  const Mat M = dp.M;
  const Vec xi0 = dp.xi(0.0);
  cp.phi = [M, xi0](double t) { return Vec(Mat(M * t).exp() * xi0); };
  const int d = dp.d, k = dp.k;
  auto args = [d, k](const Vec& x, const Vec& u) { return DelayArgs{x, Vec::Zero(d), Vec::Zero(d), u, Vec::Zero(k)}; };
  auto S = [M](double t, double s) { return Mat(Mat(M * (t - s)).exp()); };
  auto wrap = [&](const DelayMap& m, CoefFn& f, JacFn& fx, JacFn& fu) {
    f = [=, f0 = m.f](double t, double s, const Vec& x, const Vec& u) { return Vec(S(t, s) * f0(s, args(x, u))); };
    fx = [=, j = m.fx](double t, double s, const Vec& x, const Vec& u) { return Mat(S(t, s) * j(s, args(x, u))); };
    fu = [=, j = m.fu](double t, double s, const Vec& x, const Vec& u) { return Mat(S(t, s) * j(s, args(x, u))); };
  };
  wrap(dp.b, cp.b, cp.b_x, cp.b_u);
  if (dp.sigma.f) wrap(dp.sigma, cp.sigma, cp.sigma_x, cp.sigma_u);
  cp.g = [=, l = dp.l.f](double t, const Vec& x, const Vec& u) { return l(t, args(x, u))(0); };
  cp.g_x = [=, l = dp.l.fx](double t, const Vec& x, const Vec& u) { return Vec(l(t, args(x, u)).transpose()); };
  cp.g_u = [=, l = dp.l.fu](double t, const Vec& x, const Vec& u) { return Vec(l(t, args(x, u)).transpose()); };
  cp.U = dp.U;
  return cp;
}

DelayProblem make_delay_lq(const DelayLQParams& prm) {
  const int d = 2, k = 1;
  const double zd = prm.zero_delay ? 0.0 : 1.0;
  DelayProblem dp;
  dp.label = prm.zero_delay ? "delay_lq_zero_delay" : "delay_lq";
  dp.T = prm.T;
  dp.d = d;
  dp.k = k;
  dp.M.resize(d, d);
  dp.M << -0.4, 1.0, -1.0, -0.4;
  dp.delta = prm.delta;
  dp.lambda = prm.lambda;
  dp.xi = [](double t) { return Vec((Vec(2) << 1.0 + 0.5 * t, -0.3 + t).finished()); };
  dp.eta = [](double t) { return Vec(Vec::Constant(1, 0.3 * std::cos(3.0 * t))); };

  Mat Bx(d, d), By(d, d), Bz(d, d), Bu(d, k), Bmu(d, k);
  Bx << -0.3, 0.2, 0.1, -0.5;
  By << 0.4, 0.0, -0.2, 0.3;
  Bz << 0.2, -0.1, 0.3, 0.1;
  Bu << 0.8, 0.3;
  Bmu << -0.4, 0.5;
  By *= zd;
  Bz *= zd;
  Bmu *= zd;
  const Vec b0 = (Vec(2) << 0.1, -0.2).finished();
  const double ns = prm.noise;
  const Mat Sx = ns * (Mat(d, d) << 0.5, 0.0, 0.2, 0.4).finished();
  const Mat Sy = zd * ns * (Mat(d, d) << 0.3, -0.2, 0.0, 0.3).finished();
  const Mat Sz = zd * ns * (Mat(d, d) << -0.2, 0.1, 0.2, 0.0).finished();
  const Mat Su = ns * (Mat(d, k) << 0.6, -0.4).finished();
  const Mat Smu = zd * ns * (Mat(d, k) << 0.3, 0.2).finished();
  const Vec s0 = ns * (Vec(2) << 0.2, 0.1).finished();

  auto linear_map = [](Mat Ax, Mat Ay, Mat Az, Mat Au, Mat Amu, Vec c) {
    DelayMap m;
    m.f = [=](double, const DelayArgs& a) { return Vec(Ax * a.x + Ay * a.y + Az * a.z + Au * a.u + Amu * a.mu + c); };
    m.fx = [Ax](double, const DelayArgs&) { return Ax; };
    m.fy = [Ay](double, const DelayArgs&) { return Ay; };
    m.fz = [Az](double, const DelayArgs&) { return Az; };
    m.fu = [Au](double, const DelayArgs&) { return Au; };
    m.fmu = [Amu](double, const DelayArgs&) { return Amu; };
    return m;
  };
  dp.b = linear_map(Bx, By, Bz, Bu, Bmu, b0);
  if (ns != 0.0) dp.sigma = linear_map(Sx, Sy, Sz, Su, Smu, s0);

  const double rho = prm.rho, target = prm.target;
  const double qy = 0.5 * zd, qz = 0.3 * zd, rmu = 0.2 * zd;
  dp.l.f = [=](double, const DelayArgs& a) {
    const double v = 0.5 * (a.x.array() - target).matrix().squaredNorm() + 0.5 * qy * a.y.squaredNorm() +
                     0.5 * qz * a.z.squaredNorm() + 0.5 * rho * a.u.squaredNorm() + rmu * a.mu.dot(a.u);
    return Vec(Vec::Constant(1, v));
  };
  dp.l.fx = [=](double, const DelayArgs& a) { return Mat((a.x.array() - target).matrix().transpose()); };
  dp.l.fy = [=](double, const DelayArgs& a) { return Mat(qy * a.y.transpose()); };
  dp.l.fz = [=](double, const DelayArgs& a) { return Mat(qz * a.z.transpose()); };
  dp.l.fu = [=](double, const DelayArgs& a) { return Mat(rho * a.u.transpose() + rmu * a.mu.transpose()); };
  dp.l.fmu = [=](double, const DelayArgs& a) { return Mat(rmu * a.u.transpose()); };
  if (!prm.zero_delay) {
    dp.h.f = [](double, const DelayArgs& a) {
      return Vec(Vec::Constant(1, 0.5 * a.x.squaredNorm() + 0.4 * a.y.squaredNorm() + 0.3 * a.x.dot(a.z)));
    };
    dp.h.fx = [](double, const DelayArgs& a) { return Mat((a.x + 0.3 * a.z).transpose()); };
    dp.h.fy = [](double, const DelayArgs& a) { return Mat(0.8 * a.y.transpose()); };
    dp.h.fz = [](double, const DelayArgs& a) { return Mat(0.3 * a.x.transpose()); };
  }
  dp.U = ControlSet::whole(k);
  check_derivatives(dp);
  return dp;
}

}  // namespace svie
