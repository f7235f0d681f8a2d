#pragma once

#include <Eigen/Dense>

namespace rotsync {

// Block Gram matrix iterate: nd x nd with d x d blocks, G_ij ~ R_i^T R_j.
struct GramMatrix {
  int n = 0;
  int d = 0;
  Eigen::MatrixXd m;

  GramMatrix() = default;
  GramMatrix(int n_, int d_) : n(n_), d(d_) {
    m = Eigen::MatrixXd::Identity(Eigen::Index(n_) * d_, Eigen::Index(n_) * d_);
  }

  Eigen::Block<Eigen::MatrixXd> block(int i, int j) {
    return m.block(Eigen::Index(i) * d, Eigen::Index(j) * d, d, d);
  }
  Eigen::Block<const Eigen::MatrixXd> block(int i, int j) const {
    return m.block(Eigen::Index(i) * d, Eigen::Index(j) * d, d, d);
  }
};

}  // namespace rotsync
