#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace svie {

/// Non-recombining binary scenario tree. A node at depth i is a path code in
/// [0, 2^(m i)); the child through branch bits b is code * 2^m + b, and bit k
/// set means the k-th noise coordinate moved by +sqrt(dt).
struct Tree {
  int N = 0;
  double T = 1.0;
  int m = 1;
  int d = 1;

  double dt() const { return T / N; }
  double sqdt() const { return std::sqrt(dt()); }
  double time(int i) const { return T * static_cast<double>(i) / N; }
  std::size_t nodes(int depth) const { return std::size_t{1} << (m * depth); }
  std::size_t branches() const { return std::size_t{1} << m; }
  std::size_t ancestor(std::size_t node, int depth, int to) const {
    return node >> (m * (depth - to));
  }
  /// Branch bits taken at step `step` (from depth step to step+1) by a node at `depth`.
  std::size_t bits(std::size_t node, int depth, int step) const {
    return (node >> (m * (depth - step - 1))) & (branches() - 1);
  }
  double increment(std::size_t node, int depth, int step, int coord) const {
    return ((bits(node, depth, step) >> coord) & 1u) ? sqdt() : -sqdt();
  }
};

inline Tree make_tree(int N, double T, int m = 1, int d = 1, int budget = 22) {
  if (N < 1 || m < 1 || d < 1) throw std::invalid_argument("make_tree: N, m, d must be >= 1");
  if (!(T > 0)) throw std::invalid_argument("make_tree: T must be positive");
  if (N * m > budget) throw std::invalid_argument("make_tree: N*m exceeds the storage budget");
  return Tree{N, T, m, d};
}

/// Values of one random variable per node: rows are components, columns nodes.
template <class Scalar = double>
using NodeFieldT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using NodeField = NodeFieldT<double>;

/// X(t_i) stored at depth i for i in [0, N].
template <class Scalar = double>
struct AdaptedProcessT {
  std::vector<NodeFieldT<Scalar>> at;

  static AdaptedProcessT zeros(const Tree& tree, int rows, int last_depth = -1) {
    AdaptedProcessT p;
    const int last = last_depth < 0 ? tree.N : last_depth;
    for (int i = 0; i <= last; ++i) p.at.push_back(NodeFieldT<Scalar>::Zero(rows, tree.nodes(i)));
    return p;
  }
  int rows() const { return at.empty() ? 0 : static_cast<int>(at.front().rows()); }
};
using AdaptedProcess = AdaptedProcessT<double>;

/// Z(t_i, t_j) for i, j in [0, N): z[i][j] lives at depth j with rows d*m
/// holding the d x m matrix column-major. j >= i is the region above the
/// diagonal, j < i below.
template <class Scalar = double>
struct TwoParameterProcessT {
  std::vector<std::vector<NodeFieldT<Scalar>>> z;

  static TwoParameterProcessT zeros(const Tree& tree, int rows) {
    TwoParameterProcessT p;
    p.z.resize(tree.N);
    for (int i = 0; i < tree.N; ++i) {
      for (int j = 0; j < tree.N; ++j) p.z[i].push_back(NodeFieldT<Scalar>::Zero(rows, tree.nodes(j)));
    }
    return p;
  }
};
using TwoParameterProcess = TwoParameterProcessT<double>;

/// psi(t_i) as leaf fields, one per outer index.
template <class Scalar = double>
using TerminalFieldT = std::vector<NodeFieldT<Scalar>>;
using TerminalField = TerminalFieldT<double>;

namespace detail {
inline void check_depths(const Tree& tree, int a, int b) {
  if (a < 0 || b > tree.N || a > b) throw std::out_of_range("lattice: depth out of range");
}
template <class Scalar>
void check_cols(const Tree& tree, const NodeFieldT<Scalar>& x, int depth) {
  if (static_cast<std::size_t>(x.cols()) != tree.nodes(depth)) {
    throw std::invalid_argument("lattice: field size does not match its depth");
  }
}
}  // namespace detail

/// One-step conditional expectation from depth b to b-1. Dividing by 2^m is
/// exact, so composing steps gives the tower property bit for bit.
template <class Scalar>
NodeFieldT<Scalar> parent_mean(const Tree& tree, const NodeFieldT<Scalar>& x) {
  const auto B = static_cast<Eigen::Index>(tree.branches());
  NodeFieldT<Scalar> out(x.rows(), x.cols() / B);
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    out.col(c) = x.middleCols(c * B, B).rowwise().sum() / Scalar(B);
  }
  return out;
}

template <class Scalar>
NodeFieldT<Scalar> conditional_expectation(const Tree& tree, const NodeFieldT<Scalar>& x, int b,
                                           int a) {
  detail::check_depths(tree, a, b);
  detail::check_cols(tree, x, b);
  NodeFieldT<Scalar> cur = x;
  for (int i = b; i > a; --i) cur = parent_mean(tree, cur);
  return cur;
}

/// Replicates a depth-a field onto the descendants at depth b.
template <class Scalar>
NodeFieldT<Scalar> lift(const Tree& tree, const NodeFieldT<Scalar>& x, int a, int b) {
  detail::check_depths(tree, a, b);
  detail::check_cols(tree, x, a);
  const auto span = static_cast<Eigen::Index>(tree.nodes(b - a));
  NodeFieldT<Scalar> out(x.rows(), x.cols() * span);
  for (Eigen::Index c = 0; c < x.cols(); ++c) out.middleCols(c * span, span).colwise() = x.col(c);
  return out;
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> expectation(const NodeFieldT<Scalar>& x) {
  return x.rowwise().mean();
}

template <class Scalar = double>
struct Representation {
  NodeFieldT<Scalar> mean;             // E[x | F_{t_a}] at depth a
  std::vector<NodeFieldT<Scalar>> z;   // z[j - a] at depth j, rows = rows(x) * m
};

/// x = E[x|F_a] + sum_{j=a}^{b-1} z_j dW_j. Exact for m = 1; for m > 1 the z_j
/// are the projections E[x dW_j^k | F_j] / dt and the cross terms are dropped.
template <class Scalar>
Representation<Scalar> martingale_representation(const Tree& tree, const NodeFieldT<Scalar>& x,
                                                 int b, int a) {
  detail::check_depths(tree, a, b);
  detail::check_cols(tree, x, b);
  Representation<Scalar> rep;
  rep.z.resize(b - a);
  const auto B = static_cast<Eigen::Index>(tree.branches());
  const auto rows = x.rows();
  const Scalar scale = Scalar(1) / (Scalar(B) * Scalar(tree.sqdt()));
  NodeFieldT<Scalar> cur = x;
  for (int j = b - 1; j >= a; --j) {
    const auto n = cur.cols() / B;
    NodeFieldT<Scalar> z = NodeFieldT<Scalar>::Zero(rows * tree.m, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      for (Eigen::Index bit = 0; bit < B; ++bit) {
        const auto col = cur.col(c * B + bit);
        for (int k = 0; k < tree.m; ++k) {
          if ((bit >> k) & 1) z.block(k * rows, c, rows, 1) += col;
          else z.block(k * rows, c, rows, 1) -= col;
        }
      }
    }
    rep.z[j - a] = z * scale;
    cur = parent_mean(tree, cur);
  }
  rep.mean = cur;
  return rep;
}

/// sum_{j=a}^{b-1} z_j dW_j along each path, returned at depth b.
template <class Scalar>
NodeFieldT<Scalar> stochastic_integral(const Tree& tree, const std::vector<NodeFieldT<Scalar>>& z,
                                       int a, int b) {
  detail::check_depths(tree, a, b);
  if (static_cast<int>(z.size()) != b - a) throw std::invalid_argument("stochastic_integral: step count");
  if (b == a) return NodeFieldT<Scalar>::Zero(0, tree.nodes(a));
  const auto rows = z.front().rows() / tree.m;
  const auto B = static_cast<Eigen::Index>(tree.branches());
  const Scalar h = Scalar(tree.sqdt());
  NodeFieldT<Scalar> acc = NodeFieldT<Scalar>::Zero(rows, tree.nodes(a));
  for (int j = a; j < b; ++j) {
    const auto& zj = z[j - a];
    detail::check_cols(tree, zj, j);
    NodeFieldT<Scalar> next(rows, acc.cols() * B);
    for (Eigen::Index c = 0; c < acc.cols(); ++c) {
      for (Eigen::Index bit = 0; bit < B; ++bit) {
        auto col = next.col(c * B + bit);
        col = acc.col(c);
        for (int k = 0; k < tree.m; ++k) {
          const Scalar dw = ((bit >> k) & 1) ? h : -h;
          col += zj.block(k * rows, c, rows, 1) * dw;
        }
      }
    }
    acc = std::move(next);
  }
  return acc;
}

/// |E|int z dW|^2 - E sum_j |z_j|^2 dt|.
template <class Scalar>
Scalar ito_isometry_check(const Tree& tree, const std::vector<NodeFieldT<Scalar>>& z, int a, int b) {
  const NodeFieldT<Scalar> I = stochastic_integral(tree, z, a, b);
  const Scalar lhs = I.colwise().squaredNorm().mean();
  Scalar rhs = 0;
  for (const auto& zj : z) rhs += zj.colwise().squaredNorm().mean() * Scalar(tree.dt());
  using std::abs;
  return abs(lhs - rhs);
}

/// W(t_depth) per noise coordinate.
inline NodeField brownian(const Tree& tree, int depth) {
  NodeField w = NodeField::Zero(tree.m, tree.nodes(depth));
  for (std::size_t n = 0; n < tree.nodes(depth); ++n) {
    for (int j = 0; j < depth; ++j) {
      for (int k = 0; k < tree.m; ++k) w(k, n) += tree.increment(n, depth, j, k);
    }
  }
  return w;
}

/// dW_step seen at depth `depth` > step.
inline NodeField increment_field(const Tree& tree, int step, int depth) {
  NodeField w(tree.m, tree.nodes(depth));
  for (std::size_t n = 0; n < tree.nodes(depth); ++n) {
    for (int k = 0; k < tree.m; ++k) w(k, n) = tree.increment(n, depth, step, k);
  }
  return w;
}

/// CSV rows: depth,node,component,value.
template <class Scalar>
void write_csv(std::ostream& os, const AdaptedProcessT<Scalar>& p, bool header = true) {
  if (header) os << "depth,node,component,value\n";
  for (std::size_t i = 0; i < p.at.size(); ++i) {
    for (Eigen::Index n = 0; n < p.at[i].cols(); ++n) {
      for (Eigen::Index r = 0; r < p.at[i].rows(); ++r) {
        os << i << ',' << n << ',' << r << ',' << static_cast<double>(p.at[i](r, n)) << '\n';
      }
    }
  }
}

}  // namespace svie
