#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "rotsync/evaluate.hpp"
#include "rotsync/measurements.hpp"

namespace rotsync {

// L1 = D1 - W1 with rotation blocks on edges and degree * I_d diagonal
// blocks; PSD, and its kernel holds the stacked true rotations when the
// measurements are noiseless.
struct ConnectionLaplacian {
  int n = 0;
  int d = 0;
  Eigen::VectorXi degrees;
  Eigen::MatrixXd L1;
};

ConnectionLaplacian build_connection_laplacian(const MeasurementGraph& g);

struct EigOptions {
  // Full decomposition below this dimension; the iterative path is used
  // above it (or when forced by setting this to 0).
  int dense_threshold = 2000;
  double tol = 1e-8;    // per-pair residual target relative to spectral scale
  int block_size = 0;   // 0 = auto
  int max_basis = 0;    // 0 = auto
  std::uint64_t seed = 0x243f6a8885a308d3ull;  // start-block generator
};

struct EigResult {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // orthonormal columns, matching order
  bool converged = true;
  double residual = 0.0;    // worst achieved ||A v - lambda v||
  bool dense_path = true;
  int matvecs = 0;
};

// k extreme eigenpairs of a symmetric matrix: block Krylov with full
// reorthogonalization; one growing basis approximates both spectral ends.
EigResult smallest_eigenvectors(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                int k, const EigOptions& opts = {});
EigResult largest_eigenvectors(const Eigen::Ref<const Eigen::MatrixXd>& A,
                               int k, const EigOptions& opts = {});

// One certified spectral side of a symmetric H, for splitting H into its
// positive and negative parts. The factors hold every eigenpair past the
// side's threshold (negative side: values < neg_threshold; positive side:
// values > pos_threshold); certification requires converged members plus a
// converged boundary witness inside the gap. Falls back to a full
// decomposition when neither side certifies (dense = true, factors hold the
// negative side).
struct PsdSplitResult {
  bool negative_side = true;
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  bool dense = false;
  int negative_count = -1;  // exact count below neg_threshold when known
  int matvecs = 0;
};

struct SplitOptions {
  int dense_threshold = 128;
  double tol = 1e-8;
  int max_factor_cols = 64;  // give up on a side that grows past this
  int block_size = 0;
  int max_basis = 0;
  std::uint64_t seed = 0x452821e638d01377ull;
};

PsdSplitResult split_spectrum(const Eigen::Ref<const Eigen::MatrixXd>& H,
                              double neg_threshold, double pos_threshold,
                              const Eigen::MatrixXd* warm_start = nullptr,
                              const SplitOptions& opts = {});

// Spectral synchronization: d smallest eigenvectors of L1, blocks projected
// to rotations (transposed into absolute-rotation estimates, with a global
// orientation fix so every block lands in SO(d) consistently). Errors on a
// disconnected graph.
RotationEstimate solve_eig(const MeasurementGraph& g, const EigOptions& opts = {});

}  // namespace rotsync
