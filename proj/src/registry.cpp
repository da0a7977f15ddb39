#include "svie/registry.hpp"

#include "svie/special.hpp"

#include <cmath>
#include <stdexcept>

namespace svie {

double Params::get(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::vector<std::string> forward_examples() { return {"fractional_relaxation", "linear_scalar", "caputo", "evolution"}; }

std::vector<std::string> backward_examples() {
  return {"fractional_generator", "fbm_rl_generator", "caputo_bsde", "linear"};
}

NodeField default_free_term(const Tree& tree, int i) {
  const NodeField w = brownian(tree, tree.N);
  return (w.array().cos() + tree.time(i) * w.array()).matrix();
}

SVIEProblem make_forward_example(const std::string& name, const Params& prm) {
  const double T = prm.get("T", 1.0);
  if (name == "fractional_relaxation") {
    return make_fractional_relaxation(prm.get("alpha", 0.75), prm.get("lambda", -1.0), T);
  }
  if (name == "linear_scalar") {
    const Kernel k1 = make_fractional(prm.get("alpha1", 0.7), Orientation::causal, T);
    const Kernel k2 = make_fractional(prm.get("alpha2", 0.8), Orientation::causal, T);
    SVIEProblem p = make_linear_scalar(k1, prm.get("a", -1.0), k2, prm.get("b", 0.5), prm.get("x0", 1.0));
    p.diffusion_weight = DiffusionWeight::l2_matched;
    return p;
  }
  if (name == "caputo") {
    const double b = prm.get("b", -0.7), g = prm.get("g", 0.3);
    return make_caputo_example(
        prm.get("q", 0.75), prm.get("a", -0.5), [b](double, double x) { return b * x; },
        [g](double, double x) { return g * std::sin(x); }, prm.get("x0", 1.0), std::abs(b), std::abs(g), T);
  }
  if (name == "evolution") {
    Eigen::MatrixXd M(2, 2);
    M << -0.5, 1.0, -1.0, -0.5;
    Eigen::VectorXd x0(2);
    x0 << 1.0, 0.0;
    const double noise = prm.get("noise", 0.4);
    return make_evolution_example(
        M, x0, [](double, const Eigen::VectorXd& x) { return Eigen::VectorXd(x.array().sin() * -0.5); },
        [noise](double, const Eigen::VectorXd& x) { return Eigen::MatrixXd(noise * x); }, 1, 0.5,
        std::abs(noise), T);
  }
  throw std::invalid_argument("unknown forward example '" + name + "'");
}

BSVIEProblem make_backward_example(const std::string& name, const Params& prm) {
  const double T = prm.get("T", 1.0);
  const double a = prm.get("a", -0.8), b = prm.get("b", 0.5), c = prm.get("c", 0.4), e = prm.get("e", 0.3);
  using Vec = Eigen::VectorXd;
  auto fractional_like = [&](double power_plus_one, const std::string& label) {
    const Kernel k = make_fractional(power_plus_one, Orientation::anticausal, T, 1.0 / gamma_fn(power_plus_one));
    BSVIEProblem p;
    p.label = label;
    p.T = T;
    p.psi = default_free_term;
    p.terms.push_back({k, [a, c, e](const GenPoint&, const Vec& y, const Vec&, const Vec& z2) {
                         return Vec(a * y + e * y.array().sin().matrix() + c * z2);
                       }});
    p.terms.push_back({std::nullopt, [b](const GenPoint&, const Vec&, const Vec& z1, const Vec&) {
                         return Vec(b * z1.array().tanh().matrix());
                       }});
    p.lipschitz_y = scaled(k, std::abs(a) + std::abs(e));
    p.lipschitz_z1 = make_constant(std::abs(b), T);
    p.lipschitz_z2 = scaled(k, std::abs(c));
    return p;
  };
  if (name == "fractional_generator") return fractional_like(prm.get("alpha", 0.7), name);
  if (name == "fbm_rl_generator") return fractional_like(prm.get("H", 0.7) + 0.5, name);
  if (name == "caputo_bsde") {
    Eigen::MatrixXd A = Eigen::MatrixXd::Constant(1, 1, prm.get("A", 0.5));
    return make_caputo_bsde(
        prm.get("alpha", 0.75), A,
        [b, e](double, const Vec& y, const Vec& z) { return Vec(e * y.array().sin().matrix() + b * z); },
        [](const Tree& tree) { return default_free_term(tree, tree.N); }, std::abs(b) + std::abs(e), T);
  }
  if (name == "linear") {
    BSVIEProblem p;
    p.label = name;
    p.T = T;
    p.psi = [](const Tree& tree, int) { return NodeField::Ones(1, tree.nodes(tree.N)); };
    const double cc = prm.get("c", 0.5);
    p.terms.push_back({std::nullopt, [cc](const GenPoint&, const Vec& y, const Vec&, const Vec&) {
                         return Vec(-cc * y);
                       }});
    p.lipschitz_y = make_constant(std::abs(cc), T);
    return p;
  }
  throw std::invalid_argument("unknown backward example '" + name + "'");
}

}  // namespace svie
