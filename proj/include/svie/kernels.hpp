#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace svie {

enum class Orientation { causal, anticausal };

/// Power-law behaviour near the blow-up lines, used to pick exact rules.
struct SingularityHint {
  double diagonal = 0.0;  // k ~ gap^diagonal as the two times merge
  double edge = 0.0;      // k ~ early^edge as the earlier time reaches 0
};

/// k = scale * outer(early) * gap^power. A null outer means outer == 1.
struct PowerForm {
  double scale = 1.0;
  double power = 0.0;
  std::function<double(double)> outer;
};

/// k = sum_i w_i exp(-rate_i * gap).
struct ExpSumForm {
  std::vector<double> weights;
  std::vector<double> rates;
};

/// Nonnegative two-parameter weight on a triangle. Internally every kernel is
/// a function of the earlier time and the gap to the later time, which keeps
/// diagonal singularities free of cancellation. For a causal kernel k(t,s)
/// with s < t the earlier time is s; for an anticausal one it is t.
struct Kernel {
  Orientation orientation = Orientation::anticausal;
  double T = 1.0;
  std::function<double(double early, double gap)> fn;
  std::optional<SingularityHint> singularity_hint;
  std::string label;
  std::optional<PowerForm> power;
  std::optional<ExpSumForm> exp_sum;
  /// For kernels depending on the gap only: P(g) = int_0^g k du.
  std::function<double(double)> gap_primitive;
  /// fn ignores its first argument (convolution type).
  bool gap_only = false;

  /// k(t, s) in the kernel's own argument order; zero off the triangle.
  double operator()(double t, double s) const;
  double at(double early, double late) const { return fn(early, late - early); }
};

Kernel make_kernel(std::string label, Orientation o, double T,
                   std::function<double(double, double)> fn,
                   std::optional<SingularityHint> hint = std::nullopt);
Kernel make_zero(double T = 1.0, Orientation o = Orientation::anticausal);
Kernel make_constant(double c, double T = 1.0, Orientation o = Orientation::anticausal);
/// gap^(alpha-1), scaled.
Kernel make_fractional(double alpha, Orientation o, double T = 1.0, double scale = 1.0);
/// (s-t)^-alpha * t^-beta on the anticausal triangle.
Kernel make_doubly_singular(double alpha, double beta, double T = 1.0);
/// h(gap); `h_in_l2` records the caller's claim that h is square integrable.
Kernel make_convolution(std::function<double(double)> h, bool h_in_l2, double T = 1.0,
                        Orientation o = Orientation::anticausal, std::string label = "convolution");
/// gap^(H-1/2) / Gamma(H+1/2), causal.
Kernel make_fbm_rl(double H, double T = 1.0);
/// c_H gap^(H-1/2) + s^(H-1/2) F(t/s), causal.
Kernel make_fbm_full(double H, double T = 1.0);
Kernel make_exp_sum(std::vector<double> weights, std::vector<double> rates, double T = 1.0,
                    Orientation o = Orientation::causal);
/// sqrt(2/(T-t)), constant in s.
Kernel make_counterexample_sup(double T = 1.0);

/// k^2 with the closed-form structure carried over where it exists.
Kernel kernel_squared(const Kernel& k);
/// c * k for c >= 0, keeping closed forms.
Kernel scaled(const Kernel& k, double c);

double fbm_cH(double H);
/// F(1+v) computed from v = u - 1 without cancellation. `adaptive` switches
/// from the substituted Gauss rule to tanh-sinh on the raw integrand.
double fbm_F(double H, double v, bool adaptive = false);

/// Exact cell integrals of k over [grid_j, grid_{j+1}] in the non-fixed
/// argument; `t` is the later time for causal kernels, the earlier otherwise.
std::vector<double> product_weights(const Kernel& k, double t, const std::vector<double>& grid);
double cell_integral(const Kernel& k, double t, double lo, double hi);

// ---- classification ----

struct Measured {
  double value = 0.0;
  bool finite = true;
  std::vector<std::pair<double, double>> trace;  // (truncation or level, value)
};

/// (int_early^b k(early, late)^2 dlate)^(1/2); +inf when divergent.
double slice_l2(const Kernel& k, double early, double b);
Measured triangle_l2_norm(const Kernel& k);
/// int int_{a < early < late < b} k^2; +inf when divergent.
double block_l2_sq(const Kernel& k, double a, double b);

/// Explicit breakpoints, or the uniform form U_k = k * step with the last
/// block ending at T (used for convolution kernels, whose greedy partition is
/// uniform and may need millions of blocks).
struct Partition {
  std::vector<double> breakpoints;
  double step = 0.0;
  double T = 0.0;

  bool uniform() const { return step > 0.0; }
  std::size_t blocks() const;
  std::pair<double, double> block(std::size_t i) const;
  std::vector<double> points() const;
};

struct PartitionResult {
  bool feasible = false;
  bool budget_exceeded = false;
  Partition partition;
  double witness = 0.0;
  double local_sup = 0.0;  // worst measured sup of slice_l2 on a block
};

struct PartitionOptions {
  int max_breakpoints = 4096;  // explicit breakpoints only
  double bisection_rel = 1e-6;  // relative to the block length (log scale for convolutions)
  double min_block_rel = 1e-12;  // shortest block tried, relative to T
  double min_block_gap_only_rel = 1e-200;  // same, for convolution kernels
  double tail_rel = 1e-6;  // an unclosable tail shorter than this * T is infeasible
  int grid_density = 4;  // points per decade of the clustered grid
};

struct SupResult {
  double value = 0.0;  // sup of slice_l2 (not squared)
  double argmax = 0.0;
  bool finite = true;
};

/// Max of slice_l2(t, b) over a t grid on (lo, b) clustered at both ends;
/// flagged infinite when refining the clustering grows the squared value by > 1.5.
SupResult local_sup(const Kernel& k, double lo, double b, int grid_density = 4);

PartitionResult find_partition(const Kernel& k, double eps, const PartitionOptions& opt = {});
/// True when every block of `p` has measured local sup < eps at `grid_density`.
bool verify_partition(const Kernel& k, const Partition& p, double eps, int grid_density);

/// Greedy blocks [U_k, U_{k+1}] with block_l2_sq(k, U_k, U_{k+1}) <= budget.
PartitionResult find_budget_partition(const Kernel& k, double budget, const PartitionOptions& opt = {});

/// First grid index of each block on the uniform N-step grid: t_i belongs to
/// the block containing it, so a grid point on a boundary starts the later block.
std::vector<int> grid_block_starts(const Partition& p, int N);

struct K0Report {
  bool member = false;
  double sup_l1_slice = 0.0;
  bool sup_finite = true;
  std::vector<std::pair<double, double>> sliding;  // (eps, sup_t sliding integral)
};

K0Report k0_membership(const Kernel& k);

struct KernelClassReport {
  Measured l2_triangle_norm;
  Measured script_norm;
  std::map<double, PartitionResult> partition_results;
  bool in_L2 = false;
  bool in_scriptL2 = false;
  bool in_K0 = false;
  K0Report k0;
  std::map<std::string, double> diagnostics;
};

std::vector<double> default_eps_grid();
KernelClassReport classify(const Kernel& k, const std::vector<double>& eps_grid = default_eps_grid());

}  // namespace svie
