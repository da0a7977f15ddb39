#pragma once

#include "svie/kernels.hpp"
#include "svie/lattice.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace svie {

/// Where a coefficient is evaluated: outer time t_i, inner time t_j < t_i, and
/// the node at depth j (path index for Monte Carlo).
struct FwdPoint {
  int i = 0;
  int j = 0;
  double t = 0.0;
  double s = 0.0;
  std::size_t node = 0;
};

using DriftFn = std::function<Eigen::VectorXd(const FwdPoint&, const Eigen::VectorXd&)>;
using DiffusionFn = std::function<Eigen::MatrixXd(const FwdPoint&, const Eigen::VectorXd&)>;

enum class DiffusionWeight { left_point, l2_matched };

/// X(t) = phi(t) + int_0^t A(t,s,X(s)) ds + int_0^t B(t,s,X(s)) dW(s).
/// With drift_kernel set, A = k1(t,s) * drift(s, x) and the weights are exact
/// cell integrals of k1; otherwise drift returns A itself and the weight is dt.
/// Likewise for diffusion_kernel and B.
struct SVIEProblem {
  std::string label;
  double T = 1.0;
  int d = 1;
  int m = 1;
  std::function<Eigen::VectorXd(double)> phi;
  /// Adapted free term at depth i; overrides phi on the lattice.
  std::function<NodeField(const Tree&, int)> phi_field;
  DriftFn drift;          // null: no drift
  DiffusionFn diffusion;  // null: no diffusion
  std::optional<Kernel> drift_kernel;
  std::optional<Kernel> diffusion_kernel;
  DiffusionWeight diffusion_weight = DiffusionWeight::left_point;
  /// Lipschitz bounds |A(x)-A(y)| <= K1 |x-y|, |B(x)-B(y)| <= K2 |x-y|.
  Kernel lipschitz_K1 = make_zero(1.0, Orientation::causal);
  Kernel lipschitz_K2 = make_zero(1.0, Orientation::causal);
};

/// w(i, j), v(i, j) for 0 <= j < i <= N on the uniform grid.
struct FwdWeights {
  Eigen::MatrixXd w;
  Eigen::MatrixXd v;
};

FwdWeights forward_weights(const SVIEProblem& p, int N);

struct SVIESolution {
  AdaptedProcess X;
  std::string method;
  int iterations = 0;
  std::vector<double> block_times;       // partition actually used (Picard)
  std::vector<int> block_starts;         // first grid index of each block
  std::vector<double> contraction_ratios;  // per block, max measured update ratio
  double residual = 0.0;
};

class SolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Explicit forward recursion over the tree.
SVIESolution solve_lattice(const SVIEProblem& p, const Tree& tree);

struct PicardOptions {
  int max_iterations = 200;
  double k1_budget = 0.125;  // block double integral of K1^2
  double k2_eps = 0.35355339059327373;  // sqrt(1/8), sup of the K2 slice
};

SVIESolution solve_picard(const SVIEProblem& p, const Tree& tree, double tol,
                          const PicardOptions& opt = {});

/// max over nodes of |X(t_i) - phi - sum of drift and diffusion terms|.
double forward_residual(const SVIEProblem& p, const Tree& tree, const AdaptedProcess& X);

/// Single deterministic path; requires no diffusion and a deterministic phi.
std::vector<Eigen::VectorXd> solve_deterministic(const SVIEProblem& p, int N);

struct PathEnsemble {
  std::vector<double> times;
  Eigen::MatrixXd mean;          // d x (N+1)
  Eigen::MatrixXd second_moment;  // d x (N+1), componentwise E X^2
  Eigen::MatrixXd mean_se;       // standard error of the mean
  Eigen::MatrixXd second_se;     // standard error of the second moment
  std::vector<Eigen::MatrixXd> paths;  // kept only on request
};

/// Euler-Maruyama with product-integration drift weights; path k draws its
/// noise from its own stream seeded by (seed, k).
PathEnsemble solve_paths(const SVIEProblem& p, int n_paths, int n_steps, std::uint64_t seed,
                         bool keep_paths = false);

struct StabilityReport {
  double lhs = 0.0;  // ||X - X'||
  double rhs = 0.0;  // data difference, C = 1
  double ratio = 0.0;
  bool exact_zero = false;
};

StabilityReport stability_gap(const SVIEProblem& p, const SVIEProblem& q, const Tree& tree);

/// Soft checks: A(t,s,0), B(t,s,0) finite and the declared Lipschitz kernels
/// dominate sampled difference quotients. Returns warnings.
std::vector<std::string> validate(const SVIEProblem& p, int probes = 64, std::uint64_t seed = 1);

/// t_i = T (i/N)^r.
std::vector<double> graded_grid(int N, double T, double r = 2.0);

/// x(t) = 1 + lambda int_0^t k(t,s) x(s) ds on a causal kernel, by implicit
/// product trapezoid on `grid` (grid.front() == 0).
std::vector<double> resolvent_linear(const Kernel& k, double lambda, const std::vector<double>& grid);

/// phi = 1, A = lambda (t-s)^(alpha-1) x / Gamma(alpha), no diffusion.
SVIEProblem make_fractional_relaxation(double alpha, double lambda, double T = 1.0);

/// Scalar linear problem X = x0 + int k1 a X ds + int k2 b X dW.
SVIEProblem make_linear_scalar(const Kernel& k1, double a, const Kernel& k2, double b, double x0 = 1.0);

using EvolutionFn = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;
using EvolutionNoiseFn = std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)>;

/// X(t) = S(t) x0 + int S(t-s) Phi(s,X) ds + int S(t-s) Psi(s,X) dW, S(t) = e^{tM}.
SVIEProblem make_evolution_example(const Eigen::MatrixXd& M, const Eigen::VectorXd& x0,
                                   EvolutionFn Phi, EvolutionNoiseFn Psi, int m,
                                   double lip_phi, double lip_psi, double T = 1.0);

/// Scalar mild Caputo equation with kernel (t-s)^(q-1) E_{q,q}(a (t-s)^q) and
/// phi(t) = E_q(a t^q) x0.
SVIEProblem make_caputo_example(double q, double a, std::function<double(double, double)> f,
                                std::function<double(double, double)> g, double x0,
                                double lip_f, double lip_g, double T = 1.0);

/// Kernel (t-s)^(q-1) E_{q,q}(a (t-s)^q) with its exact gap primitive.
Kernel make_caputo_kernel(double q, double a, double T = 1.0, Orientation o = Orientation::causal);

}  // namespace svie
