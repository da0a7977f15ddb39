#pragma once

namespace svie {

/// Lanczos approximation (g = 7, 9 terms) with reflection below 1/2.
double gamma_fn(double x);

struct MittagLefflerOptions {
  double max_abs_z = 30.0;
  int max_terms = 5000;
};

/// E_{alpha,beta}(z) by its power series. Falls back to quad precision when the
/// double sum suffers cancellation. Throws std::domain_error past the budget.
double mittag_leffler(double alpha, double beta, double z,
                      const MittagLefflerOptions& opt = {});

}  // namespace svie
