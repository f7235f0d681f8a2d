#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>

#include "rotsync/random.hpp"

namespace rotsync {

struct RotationProjection {
  Eigen::MatrixXd rotation;
  // Set when the Frobenius-nearest rotation is not unique: the determinant
  // correction is active while the two smallest singular values tie, or the
  // input has rank <= d-2 (includes the zero matrix, which maps to I).
  bool degenerate = false;
};

// Nearest rotation to M in Frobenius norm: M = U S V^T -> U J V^T with
// J = diag(1, ..., 1, det(U V^T)).
template <typename Derived>
RotationProjection project_to_rotation(const Eigen::MatrixBase<Derived>& M) {
  if (M.rows() != M.cols())
    throw std::invalid_argument("project_to_rotation: matrix must be square");
  if (!M.allFinite())
    throw std::invalid_argument("project_to_rotation: non-finite input");
  const Eigen::Index d = M.rows();
  if (d == 1) {
    RotationProjection out;
    out.rotation = Eigen::MatrixXd::Ones(1, 1);
    out.degenerate = M(0, 0) <= 0.0;
    return out;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M.eval(),
                                        Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::MatrixXd U = svd.matrixU();
  Eigen::MatrixXd V = svd.matrixV();
  const Eigen::VectorXd& s = svd.singularValues();
  const bool flip = (U * V.transpose()).determinant() < 0.0;
  RotationProjection out;
  if (flip) U.col(d - 1) *= -1.0;
  out.rotation = U * V.transpose();
  const double scale = std::max(1.0, s(0));
  const double tie_tol = 1e-12 * scale;
  out.degenerate = (s(d - 2) + s(d - 1) <= tie_tol) ||
                   (flip && s(d - 2) - s(d - 1) <= tie_tol);
  return out;
}

template <typename Derived>
bool is_rotation(const Eigen::MatrixBase<Derived>& R, double tol = 1e-10) {
  if (R.rows() != R.cols()) return false;
  const Eigen::Index d = R.rows();
  const Eigen::MatrixXd E =
      R.transpose() * R - Eigen::MatrixXd::Identity(d, d);
  return E.cwiseAbs().maxCoeff() <= tol &&
         std::abs(R.determinant() - 1.0) <= tol * double(d);
}

// Haar-uniform rotation: QR of a Gaussian matrix with the R-diagonal sign
// fix (Mezzadri), then a final column flip into SO(d) if needed.
Eigen::MatrixXd sample_haar(int d, RandomStream& rng);

// von Mises-Fisher on SO(d), density proportional to exp(kappa Tr(mean^T R)).
// Supported for d = 2 and d = 3.
Eigen::MatrixXd sample_vmf(const Eigen::Ref<const Eigen::MatrixXd>& mean,
                           double kappa, RandomStream& rng);

// Circular von Mises with mean 0 on (-pi, pi], Best-Fisher rejection.
double sample_von_mises(double kappa, RandomStream& rng);

struct TheoryConstants {
  int d = 0;
  double c = 0.0;   // c(d) = (1/d) E[Tr((I - R)/||I - R||)] under Haar
  double c1 = 0.0;  // sqrt((1 - c^2 d)/2)
  bool monte_carlo = false;
  std::int64_t mc_samples = 0;
  double mc_stderr = 0.0;
};

double c_lower_bound(int d);  // 1/(2 sqrt(2 floor(d/2)))
double c_upper_bound(int d);  // 1/sqrt(2 d)

// Closed forms for d = 2, 3; throws for d >= 4 (use the Monte Carlo overload).
TheoryConstants c_of_d(int d);
// Monte Carlo estimate for any d >= 2 (closed form still used when available).
TheoryConstants c_of_d(int d, RandomStream& rng, std::int64_t mc_samples);

// Critical good-edge probability bound; p1 is the edge-observation rate.
double critical_probability(const TheoryConstants& tc, double p1 = 1.0);

}  // namespace rotsync
