#pragma once

#include "svie/backward.hpp"
#include "svie/forward.hpp"

#include <map>
#include <string>
#include <vector>

namespace svie {

/// Named numeric parameters of a registry example; missing keys take defaults.
class Params {
 public:
  Params() = default;
  Params(std::map<std::string, double> v) : values_(std::move(v)) {}
  double get(const std::string& key, double fallback) const;
  void set(const std::string& key, double v) { values_[key] = v; }
  const std::map<std::string, double>& values() const { return values_; }

 private:
  std::map<std::string, double> values_;
};

std::vector<std::string> forward_examples();
std::vector<std::string> backward_examples();

/// fractional_relaxation (alpha, lambda), linear_scalar (a, b, x0, alpha1, alpha2),
/// caputo (q, a, b, g, x0), evolution (noise).
SVIEProblem make_forward_example(const std::string& name, const Params& prm = {});

/// fractional_generator (alpha), fbm_rl_generator (H), caputo_bsde (alpha), linear (c);
/// shared coefficients a (y), b (z1), c (z2), e (sin y).
BSVIEProblem make_backward_example(const std::string& name, const Params& prm = {});

/// cos(W(T)) + t W(T), the default free term of the backward examples.
NodeField default_free_term(const Tree& tree, int i);

}  // namespace svie
