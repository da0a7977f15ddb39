#include "svie/quadrature.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace svie {

namespace {

boost::math::quadrature::tanh_sinh<double>& ts_engine() {
  thread_local boost::math::quadrature::tanh_sinh<double> engine(15);
  return engine;
}

}  // namespace

Integral integrate(const GapIntegrand& f, double a, double b, double rel_tol) {
  if (!(b > a)) throw std::invalid_argument("integrate: need a < b");
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  auto g = [&](double x, double xc) {
    const double s = c + h * x;
    // Boost passes xc = -1 - x for x < 0 and 1 - x for x > 0.
    const double gap_a = x < 0 ? -h * xc : h * (1.0 + x);
    const double gap_b = x > 0 ? h * xc : h * (1.0 - x);
    return f(s, gap_a, gap_b);
  };
  Integral out;
  try {
    double err = 0.0, l1 = 0.0;
    std::size_t levels = 0;
    out.value = h * ts_engine().integrate(g, -1.0, 1.0, rel_tol, &err, &l1, &levels);
    out.error = h * err;
    out.finite = std::isfinite(out.value);
  } catch (const std::exception&) {
    out.value = std::numeric_limits<double>::infinity();
    out.error = std::numeric_limits<double>::infinity();
    out.finite = false;
  }
  return out;
}

Integral integrate(const std::function<double(double)>& f, double a, double b, double rel_tol) {
  return integrate([&](double s, double, double) { return f(s); }, a, b, rel_tol);
}

double gauss_legendre(const std::function<double(double)>& f, double a, double b, int panels,
                      int n) {
  if (panels < 1) throw std::invalid_argument("gauss_legendre: panels < 1");
  const double w = (b - a) / panels;
  double sum = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double lo = a + p * w;
    const double hi = p + 1 == panels ? b : lo + w;
    if (n <= 10) {
      sum += boost::math::quadrature::gauss<double, 10>::integrate(f, lo, hi);
    } else {
      sum += boost::math::quadrature::gauss<double, 20>::integrate(f, lo, hi);
    }
  }
  return sum;
}

}  // namespace svie
