#pragma once

#include <functional>
#include <vector>

namespace svie {

struct Integral {
  double value = 0.0;
  double error = 0.0;
  bool finite = true;
};

/// Integrand that also receives the exact gaps s - a and b - s, so power
/// singularities at the endpoints can be evaluated without cancellation.
using GapIntegrand = std::function<double(double s, double gap_a, double gap_b)>;

Integral integrate(const GapIntegrand& f, double a, double b, double rel_tol = 1e-12);
Integral integrate(const std::function<double(double)>& f, double a, double b,
                   double rel_tol = 1e-12);

/// Composite Gauss-Legendre on `panels` equal panels; 10 nodes per panel when
/// n <= 10, otherwise 20.
double gauss_legendre(const std::function<double(double)>& f, double a, double b,
                      int panels, int n = 20);

}  // namespace svie
