#pragma once

#include <Eigen/Dense>
#include <string>

#include "rotsync/gram.hpp"
#include "rotsync/random.hpp"

namespace rotsync {

struct RotationEstimate {
  int n = 0;
  int d = 0;
  Eigen::MatrixXd rotations;  // d x n*d, estimate for node i at columns [i*d, (i+1)*d)
  std::string source;         // "eig", "sdp", or "lud"
  std::string rounding;       // "deterministic" or "random"
  int degenerate_blocks = 0;  // per-block projection ties
  bool eigengap_degenerate = false;

  Eigen::Block<const Eigen::MatrixXd> rotation(int i) const {
    return rotations.block(0, Eigen::Index(i) * d, d, d);
  }
};

struct EvalResult {
  double mse = 0.0;
  Eigen::MatrixXd registration;  // the aligning rotation O-hat
};

// Top-d eigenvectors of G, each d x d block projected to the nearest
// rotation. Flags a near-degenerate gap between the d-th and (d+1)-th
// eigenvalues (< 1e-8 relative).
RotationEstimate round_deterministic(const GramMatrix& G);

// Cholesky factor times a Haar-random nd x d frame, blocks projected.
// Near-PSD inputs are diagonally shifted once by 1e-10 trace/n.
RotationEstimate round_random(const GramMatrix& G, RandomStream& rng);

// Mean squared Frobenius error after registering the estimate to the truth
// by the optimal single rotation O-hat (SVD of the block average, J-corrected
// so O-hat stays in SO(d)).
EvalResult mse(const RotationEstimate& est,
               const Eigen::Ref<const Eigen::MatrixXd>& truth);

// ||G_hat - G||_F / ||G||_F.
double relative_error(const Eigen::MatrixXd& g_hat, const Eigen::MatrixXd& g);

// nd x nd Gram matrix of a d x n*d rotation stack.
Eigen::MatrixXd gram_from_rotations(const Eigen::Ref<const Eigen::MatrixXd>& stacked);

}  // namespace rotsync
