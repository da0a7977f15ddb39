#include "svie/special.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace svie {

namespace {

constexpr std::array<double, 9> kLanczos = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

// Neumaier compensated accumulator.
template <class T>
struct Sum {
  T s = 0, c = 0;
  void add(T x) {
    T t = s + x;
    using std::abs;
    if (abs(s) >= abs(x)) c += (s - t) + x;
    else c += (x - t) + s;
    s = t;
  }
  T value() const { return s + c; }
};

template <class T>
T series(double alpha, double beta, double z, int max_terms, double* abs_sum) {
  using std::abs;
  using std::exp;
  using std::log;
  Sum<T> acc;
  T absacc = 0;
  const T tz = T(z);
  const T logz = z == 0 ? T(0) : T(log(abs(tz)));
  T prev = std::numeric_limits<double>::infinity();
  for (int k = 0; k < max_terms; ++k) {
    T term;
    if (k == 0) {
      term = 1 / boost::math::tgamma(T(beta));
    } else if (z == 0) {
      break;
    } else {
      term = exp(T(k) * logz - boost::math::lgamma(T(alpha) * k + T(beta)));
      if (z < 0 && (k % 2)) term = -term;
    }
    acc.add(term);
    absacc += abs(term);
    const T mag = abs(term);
    if (k > 0 && mag < prev && mag <= T(1e-17) * abs(acc.value())) break;
    if (k > 0 && mag == 0) break;
    prev = mag;
    if (k + 1 == max_terms) throw std::domain_error("mittag_leffler: term cap reached");
  }
  if (abs_sum) *abs_sum = static_cast<double>(absacc);
  return acc.value();
}

}  // namespace

double gamma_fn(double x) {
  if (x <= 0 && x == std::floor(x)) throw std::domain_error("gamma_fn: pole");
  if (x < 0.5) {
    return std::numbers::pi / (std::sin(std::numbers::pi * x) * gamma_fn(1.0 - x));
  }
  x -= 1.0;
  double a = kLanczos[0];
  const double t = x + 7.5;
  for (int i = 1; i < 9; ++i) a += kLanczos[i] / (x + i);
  return std::sqrt(2.0 * std::numbers::pi) * std::pow(t, x + 0.5) * std::exp(-t) * a;
}

double mittag_leffler(double alpha, double beta, double z, const MittagLefflerOptions& opt) {
  if (!(alpha > 0) || !(beta > 0)) throw std::invalid_argument("mittag_leffler: alpha, beta > 0");
  if (std::abs(z) > opt.max_abs_z) {
    throw std::domain_error("mittag_leffler: |z| exceeds the series budget");
  }
  double abs_sum = 0.0;
  const double v = series<double>(alpha, beta, z, opt.max_terms, &abs_sum);
  // Each term carries ~1e-15 relative error; cancellation amplifies it by abs_sum/|v|.
  if (abs_sum <= 20.0 * std::abs(v)) return v;
  using Quad = boost::multiprecision::cpp_bin_float_quad;
  return static_cast<double>(series<Quad>(alpha, beta, z, opt.max_terms, nullptr));
}

}  // namespace svie
