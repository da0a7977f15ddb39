#pragma once

#include "svie/kernels.hpp"
#include "svie/lattice.hpp"

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace svie {

/// Evaluation point of a generator: outer index i, inner index r >= i, and the
/// node at depth r. The tree is available for measurable data that depends on
/// ancestors (tree->ancestor(node, r, j)).
struct GenPoint {
  int i = 0;
  int r = 0;
  double t = 0.0;
  double s = 0.0;
  std::size_t node = 0;
  const Tree* tree = nullptr;
};

using GeneratorFn = std::function<Eigen::VectorXd(const GenPoint&, const Eigen::VectorXd& y,
                                                  const Eigen::VectorXd& z1, const Eigen::VectorXd& z2)>;

/// One separable piece of the generator: weight(i, r) * fn(...), where the
/// weight is the cell integral of `kernel` over [t_r, t_{r+1}] at outer time
/// t_i, or dt when no kernel is given.
struct GeneratorTerm {
  std::optional<Kernel> kernel;
  GeneratorFn fn;
};

/// Y(t) = psi(t) + int_t^T g(t,s,Y(s),Z(t,s),Z(s,t)) ds - int_t^T Z(t,s) dW(s).
/// Discretely, z2 at the diagonal cell r = i is Z(t_i, t_i). Scalar noise only.
struct BSVIEProblem {
  std::string label;
  double T = 1.0;
  int d = 1;
  /// psi(t_i) as a leaf field for i in [0, N].
  std::function<NodeField(const Tree&, int)> psi;
  std::vector<GeneratorTerm> terms;
  Kernel lipschitz_y = make_zero(1.0);
  Kernel lipschitz_z1 = make_zero(1.0);
  Kernel lipschitz_z2 = make_zero(1.0);
};

struct MSolution {
  AdaptedProcess Y;          // depths 0..N, Y(t_N) = psi(t_N)
  TwoParameterProcess Z;     // Z(t_i, t_j), i, j in [0, N)
  std::string method;
  int iterations = 0;        // sweeps, summed over blocks
  std::vector<int> block_starts;
  std::vector<double> contraction_ratios;  // per block, max measured sweep ratio
  double residual = 0.0;
  double m_residual = 0.0;
};

class BackwardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class BSVIEMethod { fixed_point, block };

struct BSVIEOptions {
  BSVIEMethod method = BSVIEMethod::fixed_point;
  double tol = 1e-13;
  int max_sweeps = 500;
  double y_budget = 0.25;   // block double integral of L_y^2
  double z2_eps = 0.5;      // sup of the L_z2 slice on a block
  /// Grid indices where blocks start; overrides the kernel partition when set.
  std::vector<int> block_starts;
};

MSolution solve_bsvie(const BSVIEProblem& p, const Tree& tree, const BSVIEOptions& opt = {});

/// max over i and nodes of |Y(t_i) - E Y(t_i) - sum_{j<i} Z(t_i,t_j) dW_j|.
double m_condition_residual(const MSolution& sol, const Tree& tree);
/// max leaf residual of the discrete equation.
double equation_residual(const MSolution& sol, const BSVIEProblem& p, const Tree& tree);

/// Weight matrix w(i, r) of one generator term, r >= i.
Eigen::MatrixXd generator_weights(const GeneratorTerm& term, const Tree& tree);

// ---- BSDE and the parameterized family ----

using BSDEGenerator = std::function<Eigen::VectorXd(double s, const Eigen::VectorXd& y, const Eigen::VectorXd& z)>;

enum class YInput {
  left_point,  // y = Y(t_j), solved per node
  next         // y = E[Y(t_{j+1}) | F_j]
};

struct BSDESolution {
  AdaptedProcess Y;
  std::vector<NodeField> Z;  // Z_j at depth j, j in [0, N)
};

BSDESolution solve_bsde(const NodeField& xi, const BSDEGenerator& g, const Tree& tree,
                        YInput y_input = YInput::left_point);

/// h(point, z); z is the current-step integrand of the parameterized equation.
using FamilyGenerator = std::function<Eigen::VectorXd(const GenPoint&, const Eigen::VectorXd& z)>;

struct ParamFamily {
  int r_lo = 0;
  std::vector<int> outer;                 // outer indices
  std::vector<AdaptedProcess> lambda;     // lambda[k].at[r] for r in [r_lo, N], empty below
  std::vector<std::vector<NodeField>> mu;  // mu[k][r] for r in [r_lo, N), empty below
};

/// For each outer i in [S, N): lambda(t_i, r) = psi(t_i) + sum_{q>=r} h dt - sum_{q>=r} mu dW
/// on r in [R, N].
ParamFamily solve_param_bsde_family(const TerminalField& psi, const FamilyGenerator& h, const Tree& tree,
                                    int R, int S);

struct SFIESolution {
  std::vector<int> outer;        // i in [R, S]
  std::vector<NodeField> psiS;   // lambda(t_i, S) at depth S
  std::vector<std::vector<NodeField>> Z;  // Z[k][r] for r in [S, N), empty below
};

/// The family on [S, N] for outer i in [R, S] (i < N), evaluated at r = S. Here
/// r >= i, so a kernel weight (cell integral at outer time t_i) may replace dt.
SFIESolution solve_sfie(const TerminalField& psi, const FamilyGenerator& h, const Tree& tree, int R, int S,
                        const std::optional<Kernel>& kernel = std::nullopt);

// ---- examples ----

/// psi = xi, g = (s-t)^(alpha-1) [f(s, y, (s-t)^(1-alpha) z1) - A y] / Gamma(alpha); the
/// scaling inside f uses the cell average that makes the product exact on each cell.
BSVIEProblem make_caputo_bsde(double alpha, const Eigen::MatrixXd& A, BSDEGenerator f,
                              std::function<NodeField(const Tree&)> xi, double lip_f, double T = 1.0);

using MatrixPath = std::function<Eigen::MatrixXd(double)>;

/// g = k(t,s) [M1(t)^T S(s-t)^T y + M2(t)^T S(s-t)^T z2]; k = 1 when not given.
BSVIEProblem make_linear_adjoint(MatrixPath M1, MatrixPath M2, MatrixPath S,
                                 std::function<NodeField(const Tree&, int)> psi, int d, double lip_y,
                                 double lip_z2, std::optional<Kernel> k = std::nullopt, double T = 1.0);

struct BackwardStability {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = 0.0;
  bool exact_zero = false;
};

BackwardStability stability_gap_bsvie(const BSVIEProblem& p, const BSVIEProblem& q, const Tree& tree,
                                      const BSVIEOptions& opt = {});

}  // namespace svie
