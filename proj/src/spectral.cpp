#include "rotsync/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rotsync/so_group.hpp"

namespace rotsync {

ConnectionLaplacian build_connection_laplacian(const MeasurementGraph& g) {
  if (g.edge_count() == 0)
    throw std::invalid_argument("build_connection_laplacian: graph has no edges");
  ConnectionLaplacian lap;
  lap.n = g.n;
  lap.d = g.d;
  lap.degrees = Eigen::VectorXi::Zero(g.n);
  const int d = g.d;
  const Eigen::Index nd = Eigen::Index(g.n) * d;
  lap.L1 = Eigen::MatrixXd::Zero(nd, nd);
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto [i, j] = g.edges[e];
    lap.L1.block(Eigen::Index(i) * d, Eigen::Index(j) * d, d, d) = -g.ratio(e);
    lap.L1.block(Eigen::Index(j) * d, Eigen::Index(i) * d, d, d) =
        -g.ratio(e).transpose();
    lap.degrees[i] += 1;
    lap.degrees[j] += 1;
  }
  for (int i = 0; i < g.n; ++i)
    lap.L1.block(Eigen::Index(i) * d, Eigen::Index(i) * d, d, d) =
        double(lap.degrees[i]) * Eigen::MatrixXd::Identity(d, d);
  return lap;
}

namespace {

// Growing block-Krylov basis with full reorthogonalization. V holds the
// orthonormal basis, AV the raw products A*V, and T = V^T A V is maintained
// incrementally so Rayleigh-Ritz stays cheap.
class KrylovBasis {
 public:
  KrylovBasis(const Eigen::Ref<const Eigen::MatrixXd>& A, int max_cols,
              std::uint64_t seed)
      : A_(A), n_(int(A.rows())), mmax_(std::min<int>(max_cols, n_)), rng_(seed) {
    V_.resize(n_, mmax_);
    AV_.resize(n_, mmax_);
    T_.setZero(mmax_, mmax_);
  }

  int cols() const { return cols_; }
  int matvecs() const { return matvecs_; }
  bool full() const { return cols_ >= mmax_; }
  bool exact() const { return cols_ >= n_; }

  // Append up to `want` orthonormal columns from candidate C (empty or
  // rank-deficient directions are refilled with random vectors).
  int append(const Eigen::MatrixXd& C, int want) {
    want = std::min(want, mmax_ - cols_);
    if (want <= 0) return 0;
    const int start = cols_;
    for (int c = 0; c < want; ++c) {
      Eigen::VectorXd v;
      if (c < C.cols())
        v = C.col(c);
      else
        v = random_vector();
      for (int attempt = 0;; ++attempt) {
        orthogonalize(v);
        const double nrm = v.norm();
        if (nrm > 1e-8) {
          v /= nrm;
          break;
        }
        if (attempt >= 3) return cols_ - start;  // basis numerically complete
        v = random_vector();
      }
      V_.col(cols_) = v;
      ++cols_;
    }
    const int added = cols_ - start;
    AV_.middleCols(start, added).noalias() = A_ * V_.middleCols(start, added);
    matvecs_ += added;
    Eigen::MatrixXd tcol(cols_, added);
    tcol.noalias() =
        V_.leftCols(cols_).transpose() * AV_.middleCols(start, added);
    T_.block(0, start, cols_, added) = tcol;
    T_.block(start, 0, added, start) = tcol.topRows(start).transpose();
    T_.block(start, start, added, added) =
        0.5 * (tcol.bottomRows(added) + tcol.bottomRows(added).transpose());
    last_start_ = start;
    last_width_ = added;
    return added;
  }

  // Next Krylov block: A applied to the newest basis block.
  int grow(int want) {
    if (last_width_ == 0) return append(Eigen::MatrixXd(), want);
    const Eigen::MatrixXd C = AV_.middleCols(last_start_, last_width_);
    return append(C, want);
  }

  void rayleigh_ritz(Eigen::VectorXd& vals, Eigen::MatrixXd& Y) const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        T_.topLeftCorner(cols_, cols_));
    vals = es.eigenvalues();
    Y = es.eigenvectors();
  }

  // ||A v - lambda v|| for the selected Ritz pairs.
  Eigen::VectorXd residuals(const Eigen::VectorXd& vals, const Eigen::MatrixXd& Y,
                            const std::vector<int>& sel) const {
    if (sel.empty()) return Eigen::VectorXd();
    Eigen::MatrixXd Ys(cols_, sel.size());
    for (std::size_t k = 0; k < sel.size(); ++k) Ys.col(k) = Y.col(sel[k]);
    Eigen::MatrixXd R(n_, sel.size());
    R.noalias() = AV_.leftCols(cols_) * Ys;
    Eigen::MatrixXd VY(n_, sel.size());
    VY.noalias() = V_.leftCols(cols_) * Ys;
    for (std::size_t k = 0; k < sel.size(); ++k) R.col(k) -= vals[sel[k]] * VY.col(k);
    Eigen::VectorXd out(sel.size());
    for (std::size_t k = 0; k < sel.size(); ++k) out[k] = R.col(k).norm();
    return out;
  }

  Eigen::MatrixXd ritz_vectors(const Eigen::MatrixXd& Y,
                               const std::vector<int>& sel) const {
    Eigen::MatrixXd Ys(cols_, sel.size());
    for (std::size_t k = 0; k < sel.size(); ++k) Ys.col(k) = Y.col(sel[k]);
    return V_.leftCols(cols_) * Ys;
  }

 private:
  Eigen::VectorXd random_vector() {
    Eigen::VectorXd v(n_);
    for (int i = 0; i < n_; ++i) v[i] = rng_.normal();
    return v;
  }

  // Two-pass classical Gram-Schmidt against the stored basis.
  void orthogonalize(Eigen::VectorXd& v) const {
    for (int pass = 0; pass < 2; ++pass) {
      if (cols_ == 0) break;
      v.noalias() -= V_.leftCols(cols_) * (V_.leftCols(cols_).transpose() * v);
    }
  }

  Eigen::Ref<const Eigen::MatrixXd> A_;
  int n_ = 0;
  int mmax_ = 0;
  int cols_ = 0;
  int last_start_ = 0;
  int last_width_ = 0;
  int matvecs_ = 0;
  RandomStream rng_;
  Eigen::MatrixXd V_, AV_, T_;
};

EigResult dense_extreme(const Eigen::Ref<const Eigen::MatrixXd>& A, int k,
                        bool smallest) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  EigResult out;
  const int n = int(A.rows());
  out.values.resize(k);
  out.vectors.resize(n, k);
  for (int i = 0; i < k; ++i) {
    const int src = smallest ? i : n - k + i;
    out.values[i] = es.eigenvalues()[src];
    out.vectors.col(i) = es.eigenvectors().col(src);
  }
  out.converged = true;
  out.dense_path = true;
  return out;
}

EigResult extreme_eigenpairs(const Eigen::Ref<const Eigen::MatrixXd>& A, int k,
                             bool smallest, const EigOptions& opts) {
  const int n = int(A.rows());
  if (A.cols() != n) throw std::invalid_argument("eigensolver: non-square input");
  if (k < 1 || k > n)
    throw std::invalid_argument("eigensolver: k out of range");
  if (n <= opts.dense_threshold || 3 * k >= n) return dense_extreme(A, k, smallest);

  const int b = opts.block_size > 0 ? opts.block_size : std::clamp(k, 2, 8);
  const int mmax =
      opts.max_basis > 0 ? opts.max_basis : std::min(n, std::max(8 * k + 40, 96));
  KrylovBasis basis(A, mmax, opts.seed);
  basis.append(Eigen::MatrixXd(), b);

  EigResult out;
  out.dense_path = false;
  Eigen::VectorXd vals;
  Eigen::MatrixXd Y;
  std::vector<int> wanted(k + 1);
  while (true) {
    if (basis.cols() >= k + 2 || basis.full()) {
      basis.rayleigh_ritz(vals, Y);
      const int cols = basis.cols();
      const int avail = std::min(k + 1, cols);
      wanted.resize(avail);
      for (int i = 0; i < avail; ++i)
        wanted[i] = smallest ? i : cols - avail + i;
      const Eigen::VectorXd res = basis.residuals(vals, Y, wanted);
      const double scale =
          std::max({std::abs(vals[0]), std::abs(vals[cols - 1]), 1e-30});
      const double rtol = opts.tol * scale;
      // The k wanted pairs plus one buffer pair past them must converge; the
      // buffer guards the ordering of the k-th pair.
      bool ok = avail >= std::min(k + 1, n);
      double worst = 0.0;
      const int kw = std::min(k, avail);
      for (int i = 0; i < avail; ++i) {
        const bool is_wanted = smallest ? i < kw : i >= avail - kw;
        const double lim = is_wanted ? rtol : 3.0 * rtol;
        if (res[i] > lim) ok = false;
      }
      for (int i = 0; i < avail; ++i) {
        const bool is_wanted = smallest ? i < kw : i >= avail - kw;
        if (is_wanted) worst = std::max(worst, res[i]);
      }
      if (ok || basis.full() || basis.exact()) {
        std::vector<int> take(kw);
        for (int i = 0; i < kw; ++i)
          take[i] = smallest ? i : cols - kw + i;
        out.values.resize(kw);
        for (int i = 0; i < kw; ++i) out.values[i] = vals[take[i]];
        out.vectors = basis.ritz_vectors(Y, take);
        out.converged = ok || basis.exact();
        out.residual = worst;
        out.matvecs = basis.matvecs();
        return out;
      }
    }
    if (basis.grow(b) == 0) {
      // Basis numerically complete; final Rayleigh-Ritz is exact.
      basis.rayleigh_ritz(vals, Y);
      const int cols = basis.cols();
      const int kw = std::min(k, cols);
      std::vector<int> take(kw);
      for (int i = 0; i < kw; ++i) take[i] = smallest ? i : cols - kw + i;
      out.values.resize(kw);
      for (int i = 0; i < kw; ++i) out.values[i] = vals[take[i]];
      out.vectors = basis.ritz_vectors(Y, take);
      const Eigen::VectorXd res = basis.residuals(vals, Y, take);
      out.residual = res.size() ? res.maxCoeff() : 0.0;
      out.converged = true;
      out.matvecs = basis.matvecs();
      return out;
    }
  }
}

}  // namespace

EigResult smallest_eigenvectors(const Eigen::Ref<const Eigen::MatrixXd>& A,
                                int k, const EigOptions& opts) {
  return extreme_eigenpairs(A, k, true, opts);
}

EigResult largest_eigenvectors(const Eigen::Ref<const Eigen::MatrixXd>& A,
                               int k, const EigOptions& opts) {
  return extreme_eigenpairs(A, k, false, opts);
}

namespace {

PsdSplitResult dense_split(const Eigen::Ref<const Eigen::MatrixXd>& H,
                           double neg_threshold, double pos_threshold) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  const Eigen::VectorXd& vals = es.eigenvalues();
  const int n = int(H.rows());
  int neg = 0, pos = 0;
  while (neg < n && vals[neg] < neg_threshold) ++neg;
  while (pos < n && vals[n - 1 - pos] > pos_threshold) ++pos;
  PsdSplitResult out;
  out.dense = true;
  out.negative_count = neg;
  out.negative_side = neg <= pos;
  const int count = out.negative_side ? neg : pos;
  out.values.resize(count);
  out.vectors.resize(n, count);
  for (int i = 0; i < count; ++i) {
    const int src = out.negative_side ? i : n - count + i;
    out.values[i] = vals[src];
    out.vectors.col(i) = es.eigenvectors().col(src);
  }
  return out;
}

}  // namespace

PsdSplitResult split_spectrum(const Eigen::Ref<const Eigen::MatrixXd>& H,
                              double neg_threshold, double pos_threshold,
                              const Eigen::MatrixXd* warm_start,
                              const SplitOptions& opts) {
  const int n = int(H.rows());
  if (H.cols() != n) throw std::invalid_argument("split_spectrum: non-square input");
  if (!(neg_threshold <= pos_threshold))
    throw std::invalid_argument("split_spectrum: thresholds out of order");
  if (n <= opts.dense_threshold)
    return dense_split(H, neg_threshold, pos_threshold);

  const int warm_cols =
      warm_start ? int(std::min<Eigen::Index>(warm_start->cols(), n / 2)) : 0;
  const int b = opts.block_size > 0
                    ? opts.block_size
                    : std::clamp(warm_cols > 0 ? warm_cols + 1 : 5, 3, 8);
  const int mmax = opts.max_basis > 0
                       ? opts.max_basis
                       : std::min(n, std::max(160, warm_cols + 120));
  KrylovBasis basis(H, mmax, opts.seed);
  if (warm_cols > 0) basis.append(warm_start->leftCols(warm_cols), warm_cols);
  basis.grow(b);

  Eigen::VectorXd vals;
  Eigen::MatrixXd Y;
  int prev_neg = -1, prev_pos = -1;
  int stable_neg = 0, stable_pos = 0;

  while (true) {
    if (basis.cols() >= 2 * b || basis.full()) {
      basis.rayleigh_ritz(vals, Y);
      const int cols = basis.cols();
      const double scale =
          std::max({std::abs(vals[0]), std::abs(vals[cols - 1]), 1e-30});
      const double rtol = std::max(opts.tol * scale, 1e-15);

      int neg = 0, pos = 0;
      while (neg < cols && vals[neg] < neg_threshold) ++neg;
      while (pos < cols && vals[cols - 1 - pos] > pos_threshold) ++pos;
      stable_neg = (neg == prev_neg) ? stable_neg + 1 : 0;
      stable_pos = (pos == prev_pos) ? stable_pos + 1 : 0;
      prev_neg = neg;
      prev_pos = pos;

      // Both ends look bulk-sized: a partial factorization cannot win.
      if (std::min(neg, pos) > opts.max_factor_cols && cols >= 48) break;

      struct Side {
        bool negative;
        int count;
        int stable;
      };
      Side sides[2] = {{true, neg, stable_neg}, {false, pos, stable_pos}};
      if (pos < neg) std::swap(sides[0], sides[1]);
      for (const Side& side : sides) {
        if (side.count > opts.max_factor_cols) continue;
        if (side.count >= cols) continue;          // no witness room
        if (side.stable < 1 && !basis.exact()) continue;
        std::vector<int> sel(side.count + 1);
        if (side.negative) {
          for (int i = 0; i <= side.count; ++i) sel[i] = i;
        } else {
          for (int i = 0; i <= side.count; ++i) sel[i] = cols - 1 - side.count + i;
        }
        const Eigen::VectorXd res = basis.residuals(vals, Y, sel);
        bool ok = true;
        for (int i = 0; i < side.count + 1; ++i) {
          const int idx = sel[i];
          const bool is_witness =
              side.negative ? (i == side.count) : (i == 0);
          if (is_witness) {
            // The witness pins the boundary: a converged Ritz value that
            // provably sits on the kept side of the threshold.
            const double margin = side.negative ? vals[idx] - neg_threshold
                                                : pos_threshold - vals[idx];
            if (res[i] > std::max(rtol, 0.3 * margin) || margin <= res[i]) {
              ok = false;
              break;
            }
          } else if (res[i] > rtol) {
            ok = false;
            break;
          }
        }
        if (!ok) continue;
        PsdSplitResult out;
        out.negative_side = side.negative;
        out.negative_count = side.negative ? side.count : -1;
        std::vector<int> take(sel.begin(), sel.end());
        take.resize(side.count);
        if (!side.negative) {
          take.assign(side.count, 0);
          for (int i = 0; i < side.count; ++i) take[i] = cols - side.count + i;
        }
        out.values.resize(side.count);
        for (int i = 0; i < side.count; ++i) out.values[i] = vals[take[i]];
        out.vectors = basis.ritz_vectors(Y, take);
        out.matvecs = basis.matvecs();
        return out;
      }
      if (basis.full() || basis.exact()) break;
    }
    if (basis.grow(b) == 0) break;
  }

  PsdSplitResult out = dense_split(H, neg_threshold, pos_threshold);
  out.matvecs = basis.matvecs();
  return out;
}

RotationEstimate solve_eig(const MeasurementGraph& g, const EigOptions& opts) {
  if (!is_connected(g))
    throw std::runtime_error("solve_eig: graph is disconnected");
  const ConnectionLaplacian lap = build_connection_laplacian(g);
  const int d = g.d;
  EigResult eig = smallest_eigenvectors(lap.L1, d, opts);
  if (!eig.converged)
    throw std::runtime_error("solve_eig: eigensolver did not converge, residual " +
                             std::to_string(eig.residual));
  Eigen::MatrixXd U = eig.vectors;

  // The block rows approximate R_i^T Z for one mixing matrix Z in O(d); if
  // det(Z) < 0 every block projection would be an orientation-reversing tie.
  // Flip one basis column using the first well-conditioned block as witness.
  for (int i = 0; i < g.n; ++i) {
    const double det = U.block(Eigen::Index(i) * d, 0, d, d).determinant();
    if (std::abs(det) > 1e-6) {
      if (det < 0.0) U.col(d - 1) *= -1.0;
      break;
    }
  }

  RotationEstimate est;
  est.n = g.n;
  est.d = d;
  est.source = "eig";
  est.rounding = "deterministic";
  est.rotations.resize(d, Eigen::Index(g.n) * d);
  for (int i = 0; i < g.n; ++i) {
    const RotationProjection pr =
        project_to_rotation(U.block(Eigen::Index(i) * d, 0, d, d).transpose());
    est.rotations.block(0, Eigen::Index(i) * d, d, d) = pr.rotation;
    if (pr.degenerate) ++est.degenerate_blocks;
  }
  return est;
}

}  // namespace rotsync
