#pragma once

#include "svie/control.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace svie {

/// Arguments of the delay coefficients: state x, pointwise delay y = x(t-delta),
/// moving average z = int_{-delta}^0 e^{lambda theta} x(t+theta) dtheta, control u
/// and delayed control mu = u(t-delta).
struct DelayArgs {
  Eigen::VectorXd x, y, z, u, mu;
};

/// A coefficient with its partial Jacobians; scalar maps (l, h) have one row.
struct DelayMap {
  std::function<Eigen::VectorXd(double, const DelayArgs&)> f;
  std::function<Eigen::MatrixXd(double, const DelayArgs&)> fx, fy, fz, fu, fmu;
};

/// dx = M x dt + b dt + sigma dW on [0, T], x = xi and u = eta on [-delta, 0];
/// J = E[int l dt + h(x(T), y(T), z(T))]. Scalar noise; h ignores u and mu.
struct DelayProblem {
  std::string label;
  double T = 1.0;
  int d = 1;
  int k = 1;
  Eigen::MatrixXd M;
  double delta = 0.25;
  double lambda = 0.0;
  std::function<Eigen::VectorXd(double)> xi;
  std::function<Eigen::VectorXd(double)> eta;
  DelayMap b;
  DelayMap sigma;  // sigma.f null: no noise
  DelayMap l;
  DelayMap h;
  ControlSet U = ControlSet::whole(1);
};

/// Central-difference probe of every declared Jacobian; throws ControlError.
void check_derivatives(const DelayProblem& dp, int probes = 8, double h = 1e-5, double tol = 1e-4,
                       std::uint64_t seed = 7);

/// Grid data shared by the delay routines: D = delta / dt, S_k = e^{k dt M}
/// for k in [0, N], and moving-average cell weights c_k = int e^{lambda theta}
/// over [-k dt, -(k-1) dt] for k in [1, D].
struct DelayGrid {
  int D = 0;
  std::vector<Eigen::MatrixXd> S;
  std::vector<double> c;  // c[k], c[0] unused
};

/// Throws ControlError unless delta is a grid multiple with 1 <= D < N.
DelayGrid delay_grid(const DelayProblem& dp, const Tree& tree);

/// x, y, z at depths 0..N; mu at depths 0..N-1.
struct DelayState {
  AdaptedProcess x, y, z, mu;
};

DelayState solve_delay_state(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree);
double delay_cost(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree);

/// Third block row of the augmented system: the moving average in closed
/// form (matches the discrete buffer exactly) or as the differential relation
/// dz = (x - e^{-lambda delta} y - lambda z) dt.
enum class MovingAverageRow { resolved, differential };

/// Augmented linear system for (x1, y1 1_{t > delta}, z1) on the tree. The
/// forcing comes from Delta b = b(.., v, v(t-delta)) - b(.., u, u(t-delta)) and
/// likewise Delta sigma, both kept for the p/q pairing.
struct DelayVariation {
  LinearSVIE sys;
  AdaptedProcess db;      // depths 0..N-1
  AdaptedProcess dsigma;  // depths 0..N-1, zero without noise
};

DelayVariation delay_to_svie(const DelayProblem& dp, const AdaptedProcess& u, const AdaptedProcess& v,
                             const Tree& tree, MovingAverageRow row = MovingAverageRow::resolved);

/// x1 by the step recursion x1(t_{i+1}) = S(dt)[x1 + drift dt + noise dW] with
/// explicit delay buffers for y1 and z1.
AdaptedProcess delay_variational_direct(const DelayProblem& dp, const AdaptedProcess& u, const AdaptedProcess& v,
                                        const Tree& tree);

/// eta and zeta from the martingale representation of the terminal data H,
/// then (Y, Z) from the transposed system with free term L + A(T,t)^T H + C(T,t)^T zeta;
/// p and q are filled by delay_pq.
AdjointSolution solve_delay_adjoint(const DelayProblem& dp, const DelayState& state, const AdaptedProcess& u,
                                    const Tree& tree, const BSVIEOptions& opt = {},
                                    MovingAverageRow row = MovingAverageRow::resolved);

/// p(t_j) = sum_{j<i<N} dt [S_{i-j}^T E[Y0(t_i)|F_j] + 1_{i-j>D} S_{i-j-D}^T E[Y1(t_i)|F_j]]
///          + S_{N-j}^T eta0(t_j) + 1_{N-j>D} S_{N-j-D}^T eta1(t_j),
/// q(t_j) likewise from Z(t_i, t_j) and zeta(t_j).
void delay_pq(const DelayProblem& dp, AdjointSolution& adj, const Tree& tree);

/// l + <p, b> + <q, sigma>.
double hamiltonian_G(const DelayProblem& dp, double t, const DelayArgs& a, const Eigen::VectorXd& p,
                     const Eigen::VectorXd& q);

struct HamiltonianGradient {
  Eigen::VectorXd G_u, G_mu;
};
HamiltonianGradient hamiltonian_gradient(const DelayProblem& dp, double t, const DelayArgs& a,
                                         const Eigen::VectorXd& p, const Eigen::VectorXd& q);

/// Gradient with respect to u(t_j): G_u(t_j) + E[G_mu(t_{j+D}) | F_j] (second term when j + D < N).
AdaptedProcess delay_gradient(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree,
                              const BSVIEOptions& opt = {});

StationarityReport delay_mp_check(const DelayProblem& dp, const AdaptedProcess& u, const Tree& tree,
                                  int interior = 8, std::uint64_t seed = 11);

struct DelayDuality {
  double state_side = 0.0;    // E sum dt <L, X> + E <H, X(T)>
  double adjoint_side = 0.0;  // E sum dt <phi, Y> + E <H, phi(T)>
  double pq_side = 0.0;       // E sum dt [<Delta b, p> + <Delta sigma, q>]
  double gap = 0.0;           // max of the two differences
};

DelayDuality delay_duality(const DelayProblem& dp, const AdaptedProcess& u, const AdaptedProcess& v,
                           const Tree& tree, const BSVIEOptions& opt = {},
                           MovingAverageRow row = MovingAverageRow::resolved);

std::vector<FDRow> delay_fd_derivative(const DelayProblem& dp, const AdaptedProcess& u, const AdaptedProcess& v,
                                       const Tree& tree, const std::vector<double>& eps_list = {1e-2, 1e-3, 1e-4});

SearchResult delay_projected_gradient_search(const DelayProblem& dp, const AdaptedProcess& u0, const Tree& tree,
                                             int steps = 500, double rate = 0.5, double tol = 1e-12);

/// The same data as a Volterra control problem: b(t,s,x,u) = S(t-s) b(s, x, 0, 0, u, 0),
/// likewise sigma, g = l(t, x, 0, 0, u, 0). Meaningful when nothing depends on
/// (y, z, mu); the terminal cost is dropped.
ControlProblem undelayed_problem(const DelayProblem& dp);

struct DelayLQParams {
  double T = 1.0;
  double delta = 0.25;
  double lambda = 0.5;
  bool zero_delay = false;  // drop every y, z, mu dependence and the terminal cost
  double noise = 0.3;
  double rho = 1.0;
  double target = 0.4;
};

/// Two-dimensional linear dynamics with a damped rotation generator, scalar
/// control, quadratic running and terminal costs; U is the whole line.
DelayProblem make_delay_lq(const DelayLQParams& prm = {});

}  // namespace svie
