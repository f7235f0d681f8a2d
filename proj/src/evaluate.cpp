#include "rotsync/evaluate.hpp"

#include <cmath>
#include <stdexcept>

#include "rotsync/so_group.hpp"
#include "rotsync/spectral.hpp"

namespace rotsync {

RotationEstimate round_deterministic(const GramMatrix& G) {
  const int n = G.n, d = G.d;
  if (n < 1 || d < 1 || G.m.rows() != Eigen::Index(n) * d)
    throw std::invalid_argument("round_deterministic: malformed Gram matrix");
  EigOptions opts;
  opts.dense_threshold = 128;
  const EigResult top = largest_eigenvectors(G.m, std::min(d + 1, n * d), opts);
  const int k = int(top.values.size());
  // values are ascending; the top d are the last d entries.
  Eigen::MatrixXd U = top.vectors.rightCols(d);
  RotationEstimate est;
  est.n = n;
  est.d = d;
  est.rounding = "deterministic";
  if (k > d) {
    const double lead = std::abs(top.values[k - d]);
    const double gap = top.values[k - d] - top.values[k - d - 1];
    est.eigengap_degenerate = gap < 1e-8 * std::max(lead, 1e-30);
  }
  // Scale columns by sqrt(eigenvalue): blocks become ~R_i^T O with a common
  // right factor; the SVD projection is scale-invariant but well conditioned
  // this way when eigenvalues differ.
  for (int c = 0; c < d; ++c) {
    const double lam = std::max(top.values[k - d + c], 0.0);
    U.col(c) *= std::sqrt(lam);
  }
  for (int i = 0; i < n; ++i) {
    const double det = U.block(Eigen::Index(i) * d, 0, d, d).determinant();
    if (std::abs(det) > 1e-6 * U.block(Eigen::Index(i) * d, 0, d, d).norm()) {
      if (det < 0.0) U.col(d - 1) *= -1.0;
      break;
    }
  }
  est.rotations.resize(d, Eigen::Index(n) * d);
  for (int i = 0; i < n; ++i) {
    const RotationProjection pr =
        project_to_rotation(U.block(Eigen::Index(i) * d, 0, d, d).transpose());
    est.rotations.block(0, Eigen::Index(i) * d, d, d) = pr.rotation;
    if (pr.degenerate) ++est.degenerate_blocks;
  }
  return est;
}

RotationEstimate round_random(const GramMatrix& G, RandomStream& rng) {
  const int n = G.n, d = G.d;
  const Eigen::Index nd = Eigen::Index(n) * d;
  if (G.m.rows() != nd)
    throw std::invalid_argument("round_random: malformed Gram matrix");
  Eigen::LLT<Eigen::MatrixXd> llt(G.m);
  Eigen::MatrixXd L;
  if (llt.info() == Eigen::Success) {
    L = llt.matrixL();
  } else {
    // ADM iterates can carry -1e-9-scale eigenvalues; shift once and retry.
    const double shift = 1e-10 * G.m.trace() / double(n);
    Eigen::MatrixXd shifted = G.m;
    shifted.diagonal().array() += shift;
    Eigen::LLT<Eigen::MatrixXd> llt2(shifted);
    if (llt2.info() != Eigen::Success)
      throw std::runtime_error("round_random: input is not close to PSD");
    L = llt2.matrixL();
  }
  // Haar-random nd x d frame: QR of a Gaussian block with sign correction.
  Eigen::MatrixXd Z(nd, d);
  for (Eigen::Index i = 0; i < nd; ++i)
    for (int j = 0; j < d; ++j) Z(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Z);
  Eigen::MatrixXd Q =
      qr.householderQ() * Eigen::MatrixXd::Identity(nd, d);
  for (int j = 0; j < d; ++j)
    if (qr.matrixQR()(j, j) < 0.0) Q.col(j) *= -1.0;
  Eigen::MatrixXd LQ = L * Q;  // block i estimates R_i^T up to a common factor
  RotationEstimate est;
  est.n = n;
  est.d = d;
  est.rounding = "random";
  for (int i = 0; i < n; ++i) {
    const double det = LQ.block(Eigen::Index(i) * d, 0, d, d).determinant();
    if (std::abs(det) > 1e-6 * LQ.block(Eigen::Index(i) * d, 0, d, d).norm()) {
      if (det < 0.0) LQ.col(d - 1) *= -1.0;
      break;
    }
  }
  est.rotations.resize(d, nd);
  for (int i = 0; i < n; ++i) {
    const RotationProjection pr =
        project_to_rotation(LQ.block(Eigen::Index(i) * d, 0, d, d).transpose());
    est.rotations.block(0, Eigen::Index(i) * d, d, d) = pr.rotation;
    if (pr.degenerate) ++est.degenerate_blocks;
  }
  return est;
}

EvalResult mse(const RotationEstimate& est,
               const Eigen::Ref<const Eigen::MatrixXd>& truth) {
  const int n = est.n, d = est.d;
  if (truth.rows() != d || truth.cols() != Eigen::Index(n) * d)
    throw std::invalid_argument("mse: truth shape mismatch");
  // O-hat maximizes Tr(O sum_i est_i truth_i^T): the J-corrected projection
  // of the transposed block average keeps the registration in SO(d).
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < n; ++i)
    S += est.rotation(i) * truth.block(0, Eigen::Index(i) * d, d, d).transpose();
  S /= double(n);
  EvalResult out;
  out.registration = project_to_rotation(S.transpose()).rotation;
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    acc += (truth.block(0, Eigen::Index(i) * d, d, d) -
            out.registration * est.rotation(i))
               .squaredNorm();
  out.mse = acc / double(n);
  return out;
}

double relative_error(const Eigen::MatrixXd& g_hat, const Eigen::MatrixXd& g) {
  if (g_hat.rows() != g.rows() || g_hat.cols() != g.cols())
    throw std::invalid_argument("relative_error: shape mismatch");
  const double denom = g.norm();
  if (denom == 0.0)
    throw std::invalid_argument("relative_error: zero reference norm");
  return (g_hat - g).norm() / denom;
}

Eigen::MatrixXd gram_from_rotations(
    const Eigen::Ref<const Eigen::MatrixXd>& stacked) {
  const int d = int(stacked.rows());
  if (stacked.cols() % d != 0)
    throw std::invalid_argument("gram_from_rotations: bad stack shape");
  const int n = int(stacked.cols() / d);
  Eigen::MatrixXd T(Eigen::Index(n) * d, d);
  for (int i = 0; i < n; ++i)
    T.block(Eigen::Index(i) * d, 0, d, d) =
        stacked.block(0, Eigen::Index(i) * d, d, d).transpose();
  return T * T.transpose();
}

}  // namespace rotsync
