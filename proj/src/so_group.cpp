#include "rotsync/so_group.hpp"

#include <cmath>

namespace rotsync {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Eigen::MatrixXd sample_haar(int d, RandomStream& rng) {
  if (d < 1) throw std::invalid_argument("sample_haar: d must be >= 1");
  Eigen::MatrixXd Z(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) Z(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(Z);
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd& R = qr.matrixQR();
  for (int j = 0; j < d; ++j)
    if (R(j, j) < 0.0) Q.col(j) *= -1.0;
  if (Q.determinant() < 0.0) Q.col(d - 1) *= -1.0;
  return Q;
}

double sample_von_mises(double kappa, RandomStream& rng) {
  if (kappa < 1e-12) return rng.uniform(-kPi, kPi);
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  for (;;) {
    const double z = std::cos(kPi * rng.uniform());
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    const double u2 = rng.uniform();
    if (c * (2.0 - c) - u2 > 0.0 ||
        (u2 > 0.0 && c > 0.0 && std::log(c / u2) + 1.0 - c >= 0.0)) {
      const double th = std::acos(std::clamp(f, -1.0, 1.0));
      return rng.uniform() < 0.5 ? -th : th;
    }
  }
}

namespace {

// Rotation by alpha about a unit axis (Rodrigues).
Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double alpha) {
  Eigen::Matrix3d K;
  K << 0, -axis.z(), axis.y(), axis.z(), 0, -axis.x(), -axis.y(), axis.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(alpha) * K +
         (1.0 - std::cos(alpha)) * K * K;
}

// Rotation angle theta in [0, pi] with density proportional to
// exp(kappa(1 + 2 cos theta)) (1 - cos theta), the angle marginal of
// vMF on SO(3) around the identity.
double sample_vmf_angle_so3(double kappa, RandomStream& rng) {
  if (kappa < 1.0) {
    // Envelope 2 exp(kappa(1 + 2cos theta)): propose |von Mises(2 kappa)|,
    // accept with probability (1 - cos theta)/2. Fine for small kappa.
    for (;;) {
      const double theta = std::abs(sample_von_mises(2.0 * kappa, rng));
      if (rng.uniform() < 0.5 * (1.0 - std::cos(theta))) return theta;
    }
  }
  // Large kappa: in the half angle phi = theta/2 in [0, pi/2] the density is
  // proportional to exp(-4 kappa sin^2 phi) sin^2 phi. Jordan's inequality
  // sin phi >= 2 phi / pi gives the envelope phi^2 exp(-a phi^2) with
  // a = 16 kappa / pi^2, i.e. phi^2 ~ Gamma(3/2, a). Acceptance stays ~0.25
  // for all kappa >= 1.
  const double a = 16.0 * kappa / (kPi * kPi);
  for (;;) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    const double z = rng.normal();
    const double g = -std::log(u) + 0.5 * z * z;  // Gamma(3/2, 1)
    const double phi = std::sqrt(g / a);
    if (phi > 0.5 * kPi) continue;
    const double s = std::sin(phi);
    double log_ratio;
    if (phi < 1e-8) {
      log_ratio = 0.0;  // sin(phi)/phi -> 1 and both exponents vanish
    } else {
      log_ratio = 2.0 * std::log(s / phi) + a * phi * phi - 4.0 * kappa * s * s;
    }
    if (std::log(std::max(rng.uniform(), 1e-300)) < log_ratio)
      return 2.0 * phi;
  }
}

}  // namespace

Eigen::MatrixXd sample_vmf(const Eigen::Ref<const Eigen::MatrixXd>& mean,
                           double kappa, RandomStream& rng) {
  const int d = int(mean.rows());
  if (mean.cols() != d) throw std::invalid_argument("sample_vmf: mean not square");
  if (!(kappa > 0.0)) throw std::invalid_argument("sample_vmf: kappa must be > 0");
  if (!is_rotation(mean, 1e-8))
    throw std::invalid_argument("sample_vmf: mean must be a rotation");
  if (d == 2) {
    // Tr(mean^T R_alpha) = 2 cos alpha, so alpha ~ von Mises(2 kappa).
    const double alpha = sample_von_mises(2.0 * kappa, rng);
    Eigen::Matrix2d S;
    S << std::cos(alpha), -std::sin(alpha), std::sin(alpha), std::cos(alpha);
    return mean * S;
  }
  if (d == 3) {
    const double theta = sample_vmf_angle_so3(kappa, rng);
    Eigen::Vector3d axis;
    double nrm = 0.0;
    do {
      axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
      nrm = axis.norm();
    } while (nrm < 1e-12);
    axis /= nrm;
    return mean * axis_angle(axis, theta);
  }
  throw std::invalid_argument("sample_vmf: only d = 2 and d = 3 are supported");
}

double c_lower_bound(int d) {
  return 1.0 / (2.0 * std::sqrt(2.0 * double(d / 2)));
}

double c_upper_bound(int d) { return 1.0 / std::sqrt(2.0 * double(d)); }

namespace {

TheoryConstants finish(int d, double c) {
  TheoryConstants tc;
  tc.d = d;
  tc.c = c;
  tc.c1 = std::sqrt(std::max(0.0, (1.0 - c * c * double(d)) / 2.0));
  return tc;
}

}  // namespace

TheoryConstants c_of_d(int d) {
  if (d == 2) return finish(2, std::sqrt(2.0) / kPi);
  if (d == 3) return finish(3, 8.0 * std::sqrt(2.0) / (9.0 * kPi));
  throw std::invalid_argument(
      "c_of_d: closed form only for d = 2, 3; pass an rng for Monte Carlo");
}

TheoryConstants c_of_d(int d, RandomStream& rng, std::int64_t mc_samples) {
  if (d < 2) throw std::invalid_argument("c_of_d: d must be >= 2");
  if (d <= 3) return c_of_d(d);
  if (mc_samples < 1) throw std::invalid_argument("c_of_d: mc_samples >= 1");
  // c(d) = (1/d) E[Tr((I-R)/||I-R||)] = E[sqrt(Tr(I-R))] / (sqrt(2) d),
  // since ||I-R||_F = sqrt(2 Tr(I-R)).
  double mean = 0.0, m2 = 0.0;
  for (std::int64_t k = 0; k < mc_samples; ++k) {
    const Eigen::MatrixXd R = sample_haar(d, rng);
    const double x = std::sqrt(std::max(0.0, double(d) - R.trace()));
    const double delta = x - mean;
    mean += delta / double(k + 1);
    m2 += delta * (x - mean);
  }
  const double denom = std::sqrt(2.0) * double(d);
  TheoryConstants tc = finish(d, mean / denom);
  tc.monte_carlo = true;
  tc.mc_samples = mc_samples;
  const double var = mc_samples > 1 ? m2 / double(mc_samples - 1) : 0.0;
  tc.mc_stderr = std::sqrt(var / double(mc_samples)) / denom;
  return tc;
}

double critical_probability(const TheoryConstants& tc, double p1) {
  if (!(p1 > 0.0 && p1 <= 1.0))
    throw std::invalid_argument("critical_probability: p1 must be in (0, 1]");
  const double sd = std::sqrt(double(tc.d));
  const double s = tc.c + 2.0 / sd;
  const double disc = tc.c1 * tc.c1 + 8.0 * p1 * s / sd;
  const double ratio = (-tc.c1 + std::sqrt(disc)) / (2.0 * std::sqrt(p1) * s);
  return 1.0 - ratio * ratio;
}

}  // namespace rotsync
