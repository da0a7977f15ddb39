#pragma once

#include "svie/backward.hpp"
#include "svie/forward.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace svie {

class ControlError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- discrete linear SVIE and its transpose ----

/// X(t_i) = phi(t_i) + sum_{j<i} A_ij X(t_j) + sum_{j<i} C_ij X(t_j) dW_j with
/// quadrature weights already folded into A and C. A[i][j][n] is the matrix at
/// node n of depth j; an empty C[i][j] means no noise term. Scalar noise.
struct LinearSVIE {
  int d = 1;
  std::vector<std::vector<std::vector<Eigen::MatrixXd>>> A;
  std::vector<std::vector<std::vector<Eigen::MatrixXd>>> C;
  AdaptedProcess phi;

  using CoefAt = std::function<Eigen::MatrixXd(int i, int j, std::size_t node)>;
  /// Tabulates A and C (C may be null) on every (i, j, node), i in [0, N].
  static LinearSVIE tabulate(const Tree& tree, int d, const CoefAt& A, const CoefAt& C);
};

AdaptedProcess solve_linear_svie(const LinearSVIE& sys, const Tree& tree);

/// The BSVIE whose generator is the literal transpose of the system:
/// g(t_i, t_r) = A_ri^T y / dt + C_ri^T z2 for r > i, zero on the diagonal,
/// with weight dt. psi(t_i) is supplied as leaf fields.
BSVIEProblem transpose_problem(const LinearSVIE& sys, const Tree& tree,
                               std::function<NodeField(const Tree&, int)> psi);

/// E sum_{i<N} dt <a(t_i), b(t_i)> for adapted a, b of equal shape.
double pairing(const Tree& tree, const AdaptedProcess& a, const AdaptedProcess& b);

// ---- control sets ----

struct ControlSet {
  enum class Kind { box, ball, whole };
  Kind kind = Kind::whole;
  Eigen::VectorXd lo, hi;      // box
  Eigen::VectorXd center;      // ball
  double radius = 0.0;
  int dim = 1;

  static ControlSet box(Eigen::VectorXd lo, Eigen::VectorXd hi);
  static ControlSet ball(Eigen::VectorXd center, double radius);
  static ControlSet whole(int dim);

  Eigen::VectorXd project(const Eigen::VectorXd& u) const;
  bool contains(const Eigen::VectorXd& u, double tol = 1e-12) const;
  /// Box corners, or the 2 dim axis points of the ball's boundary, plus
  /// `interior` random points. For the whole space the probes are at +- e_k
  /// around `at` and Gaussian offsets.
  std::vector<Eigen::VectorXd> probes(const Eigen::VectorXd& at, int interior, std::mt19937_64& rng) const;
};

// ---- Problem (C) ----

using CoefFn = std::function<Eigen::VectorXd(double t, double s, const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;
using JacFn = std::function<Eigen::MatrixXd(double t, double s, const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;
using CostFn = std::function<double(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;
using CostGradFn = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u)>;

/// X(t) = phi(t) + int k1(t,s) b(t,s,X,u) ds + int k2(t,s) sigma(t,s,X,u) dW,
/// J(u) = E int g(t, X, u) dt. The kernels are the singular factors; b and
/// sigma are the smooth parts with their Jacobians. Scalar noise.
struct ControlProblem {
  std::string label;
  double T = 1.0;
  int d = 1;
  int k = 1;
  std::function<Eigen::VectorXd(double)> phi;
  std::optional<Kernel> drift_kernel;
  std::optional<Kernel> diffusion_kernel;
  DiffusionWeight diffusion_weight = DiffusionWeight::left_point;
  CoefFn b;
  JacFn b_x, b_u;
  CoefFn sigma;  // null: no noise
  JacFn sigma_x, sigma_u;
  CostFn g;
  CostGradFn g_x, g_u;
  ControlSet U = ControlSet::whole(1);
};

/// Central differences at step h against the declared Jacobians on random
/// points; throws ControlError when a relative error exceeds tol.
void check_derivatives(const ControlProblem& cp, int probes = 8, double h = 1e-5, double tol = 1e-4,
                       std::uint64_t seed = 7);

/// Controls live at depths 0..N-1.
AdaptedProcess constant_control(const Tree& tree, const Eigen::VectorXd& u);

SVIESolution solve_state(const ControlProblem& cp, const AdaptedProcess& u, const Tree& tree);
/// E sum_{i<N} dt g(t_i, X(t_i), u(t_i)).
double cost(const ControlProblem& cp, const AdaptedProcess& u, const Tree& tree);

/// Variational system at (X, u) in direction v - u: A_ij = w_ij b_x, C_ij = v_ij sigma_x,
/// and phi the b_u, sigma_u forcing.
LinearSVIE variational_system(const ControlProblem& cp, const AdaptedProcess& X, const AdaptedProcess& u,
                              const AdaptedProcess& v, const Tree& tree);
AdaptedProcess solve_variational(const ControlProblem& cp, const AdaptedProcess& u, const AdaptedProcess& v,
                                 const Tree& tree);

struct AdjointSolution {
  MSolution m;                     // (Y, Z)
  // delay problems only
  NodeField H;                     // terminal data at depth N
  AdaptedProcess eta;              // E[H | F_t]
  std::vector<NodeField> zeta;     // zeta(t_j) at depth j
  AdaptedProcess p;                // depths 0..N-1
  AdaptedProcess q;
};

AdjointSolution solve_adjoint(const ControlProblem& cp, const AdaptedProcess& X, const AdaptedProcess& u,
                              const Tree& tree, const BSVIEOptions& opt = {});

struct DualityReport {
  double forcing_side = 0.0;   // E sum dt <phi, Y>
  double cost_side = 0.0;      // E sum dt <X1, g_x>
  double gap = 0.0;
};

DualityReport duality_gap(const ControlProblem& cp, const AdaptedProcess& u, const AdaptedProcess& v,
                          const Tree& tree, const BSVIEOptions& opt = {});

/// g_u(t_j) + sum_{i>j} [w_ij b_u^T E[Y(t_i)|F_j] + dt v_ij sigma_u^T Z(t_i,t_j)], node by node.
AdaptedProcess mp_gradient(const ControlProblem& cp, const AdaptedProcess& u, const Tree& tree,
                           const BSVIEOptions& opt = {});

struct StationarityReport {
  double margin = 0.0;  // min over nodes and probes of <gradient, probe - u>
  int worst_depth = 0;
  std::size_t worst_node = 0;
  int probes = 0;
  double gradient_norm = 0.0;  // sqrt(E sum dt |gradient|^2)
};

/// Checks the inequality at every node against U's probe set.
StationarityReport stationarity_from_gradient(const ControlSet& U, const AdaptedProcess& grad,
                                              const AdaptedProcess& u, const Tree& tree, int interior,
                                              std::uint64_t seed = 11);
StationarityReport check_stationarity(const ControlProblem& cp, const AdaptedProcess& u, const Tree& tree,
                                      int interior = 8, std::uint64_t seed = 11);

struct FDRow {
  double eps = 0.0;
  double fd = 0.0;        // (J(u + eps (v-u)) - J(u)) / eps
  double analytic = 0.0;  // E sum dt <gradient, v - u>
  double error = 0.0;
};

std::vector<FDRow> fd_cost_derivative(const ControlProblem& cp, const AdaptedProcess& u, const AdaptedProcess& v,
                                      const Tree& tree, const std::vector<double>& eps_list = {1e-2, 1e-3, 1e-4});

struct SearchStep {
  int step = 0;
  double cost = 0.0;
  double gradient_norm = 0.0;
  double update_norm = 0.0;
  double rate = 0.0;  // step length after backtracking
};

struct SearchResult {
  AdaptedProcess u;
  std::vector<SearchStep> trace;
  bool converged = false;
};

using GradientOracle = std::function<std::pair<double, AdaptedProcess>(const AdaptedProcess&)>;

/// u <- P_U(u - rate * gradient) with the rate halved until the cost decreases
/// sufficiently; stops when the update norm drops below tol.
SearchResult projected_gradient(const ControlSet& U, const GradientOracle& oracle, AdaptedProcess u0,
                                const Tree& tree, int steps, double rate, double tol);
SearchResult projected_gradient_search(const ControlProblem& cp, const AdaptedProcess& u0, const Tree& tree,
                                       int steps = 500, double rate = 0.5, double tol = 1e-12);

/// N(0, scale^2) control field, reproducible from seed.
AdaptedProcess random_control(const Tree& tree, int k, double scale, std::uint64_t seed);

// ---- examples ----

/// Scalar LQ: X = x0 + int k1 (a X + bu u) ds + int k2 (c X + cu u) dW,
/// g = (X - target)^2 / 2 + rho u^2 / 2, U = [-bound, bound].
ControlProblem make_lq_control(double a, double bu, double c, double cu, double rho, double target, double x0,
                               double bound, std::optional<Kernel> k1, std::optional<Kernel> k2, double T = 1.0);

/// Dimension d x k linear coefficients drawn from N(0, scale^2) with a mild
/// (t, s) modulation, quadratic cost with random weights, box U.
ControlProblem make_random_linear_control(int d, int k, double scale, std::uint64_t seed,
                                          std::optional<Kernel> k1, std::optional<Kernel> k2, double T = 1.0);

}  // namespace svie
