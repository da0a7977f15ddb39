#pragma once

#include "svie/backward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace svie::oracle {

using Vec = Eigen::VectorXd;

// Linear scalar generator a y + b z1 + c z2 with weight matrix w(i, r). The
// oracle assembles every leaf equation
//   Y(t_i) - sum_r w [a Y(t_r) + b Z(t_i,t_r) + c Z(t_r,t_i)] + sum_r Z(t_i,t_r) dW_r = psi(t_i)
// over the unknowns Y(t_i) and Z(t_i, t_r), r >= i, with Z(t_r, t_i), r > i,
// written as the linear up/down difference of Y(t_r) and Z(t_i, t_i) used at r = i.
struct DenseOracle {
  const Tree& tree;
  Eigen::MatrixXd w;
  double a, b, c;

  std::vector<Eigen::VectorXd> solve(const std::vector<NodeField>& psi, std::vector<std::vector<Vec>>& zabove) const {
    const int N = tree.N;
    std::vector<int> yoff(N), zoff(N * N, -1);
    int n = 0;
    for (int i = 0; i < N; ++i) {
      yoff[i] = n;
      n += static_cast<int>(tree.nodes(i));
    }
    for (int i = 0; i < N; ++i) {
      for (int r = i; r < N; ++r) {
        zoff[i * N + r] = n;
        n += static_cast<int>(tree.nodes(r));
      }
    }
    const int leaves = static_cast<int>(tree.nodes(N));
    if (n != N * leaves) throw std::logic_error("DenseOracle: unknown count mismatch");
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs(n);
    const double h = tree.sqdt();
    for (int i = 0; i < N; ++i) {
      for (int leaf = 0; leaf < leaves; ++leaf) {
        const int row = i * leaves + leaf;
        rhs(row) = psi[i](0, leaf);
        M(row, yoff[i] + (leaf >> (N - i))) += 1.0;
        for (int r = i; r < N; ++r) {
          const int nr = leaf >> (N - r);
          const double dw = ((leaf >> (N - 1 - r)) & 1) ? h : -h;
          const int zcol = zoff[i * N + r] + nr;
          M(row, zcol) += dw - w(i, r) * b;
          M(row, yoff[r] + nr) -= w(i, r) * a;
          if (r == i) {
            M(row, zcol) -= w(i, r) * c;
            continue;
          }
          // Z(t_r, t_i) at the depth-i ancestor: (up - down) / (2h), each an average of Y(t_r).
          const int ni = leaf >> (N - i);
          const int span = 1 << (r - i - 1);
          for (int side = 0; side < 2; ++side) {
            const int child = 2 * ni + side;
            for (int k = 0; k < span; ++k) {
              const double coef = (side ? 1.0 : -1.0) / (2.0 * h * span);
              M(row, yoff[r] + child * span + k) -= w(i, r) * c * coef;
            }
          }
        }
      }
    }
    const Eigen::VectorXd x = M.fullPivLu().solve(rhs);
    std::vector<Eigen::VectorXd> y(N);
    zabove.assign(N, std::vector<Vec>(N));
    for (int i = 0; i < N; ++i) {
      y[i] = x.segment(yoff[i], tree.nodes(i));
      for (int r = i; r < N; ++r) zabove[i][r] = x.segment(zoff[i * N + r], tree.nodes(r));
    }
    return y;
  }
};

inline BSVIEProblem linear_problem(const Kernel& k, double a, double b, double c, std::vector<NodeField> psi) {
  BSVIEProblem p;
  p.label = "dense";
  p.psi = [psi](const Tree&, int i) { return psi[std::min<std::size_t>(i, psi.size() - 1)]; };
  p.terms.push_back({k, [a, b, c](const GenPoint&, const Vec& y, const Vec& z1, const Vec& z2) {
                       return Vec(a * y + b * z1 + c * z2);
                     }});
  p.lipschitz_y = scaled(k, std::abs(a));
  p.lipschitz_z1 = scaled(k, std::abs(b));
  p.lipschitz_z2 = scaled(k, std::abs(c));
  return p;
}

}  // namespace svie::oracle
