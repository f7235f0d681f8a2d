#include "rotsync/lud_admm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace rotsync {

Eigen::VectorXd operator_A(const Eigen::MatrixXd& G, int n, int d) {
  if (G.rows() != Eigen::Index(n) * d || G.cols() != G.rows())
    throw std::invalid_argument("operator_A: shape mismatch");
  Eigen::VectorXd y(Eigen::Index(n) * d * d);
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q)
        y[Eigen::Index(i) * d * d + p * d + q] =
            G(Eigen::Index(i) * d + p, Eigen::Index(i) * d + q);
  return y;
}

Eigen::MatrixXd operator_A_adjoint(const Eigen::VectorXd& y, int n, int d) {
  if (y.size() != Eigen::Index(n) * d * d)
    throw std::invalid_argument("operator_A_adjoint: length mismatch");
  Eigen::MatrixXd M =
      Eigen::MatrixXd::Zero(Eigen::Index(n) * d, Eigen::Index(n) * d);
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q)
        M(Eigen::Index(i) * d + p, Eigen::Index(i) * d + q) =
            y[Eigen::Index(i) * d * d + p * d + q];
  return M;
}

Eigen::VectorXd constraint_rhs(int n, int d) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(Eigen::Index(n) * d * d);
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < d; ++p) b[Eigen::Index(i) * d * d + p * d + p] = 1.0;
  return b;
}

Eigen::MatrixXd assemble_Q(const Eigen::MatrixXd& theta,
                           const std::vector<std::pair<int, int>>& edges, int n,
                           int d) {
  Eigen::MatrixXd Q =
      Eigen::MatrixXd::Zero(Eigen::Index(n) * d, Eigen::Index(n) * d);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    Q.block(Eigen::Index(i) * d, Eigen::Index(j) * d, d, d) =
        0.5 * theta.block(0, Eigen::Index(e) * d, d, d);
    Q.block(Eigen::Index(j) * d, Eigen::Index(i) * d, d, d) =
        0.5 * theta.block(0, Eigen::Index(e) * d, d, d).transpose();
  }
  return Q;
}

Eigen::VectorXd update_y(const AdmState& s,
                         const std::vector<std::pair<int, int>>& edges) {
  const int n = s.G.n, d = s.G.d;
  // y = -A(Q(theta) + W) - (A(G) - b)/mu; Q has zero diagonal blocks so only
  // W and G contribute.
  (void)edges;
  Eigen::VectorXd y(Eigen::Index(n) * d * d);
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q) {
        const Eigen::Index r = Eigen::Index(i) * d + p;
        const Eigen::Index c = Eigen::Index(i) * d + q;
        const double gres = s.G.m(r, c) - (p == q ? 1.0 : 0.0);
        y[Eigen::Index(i) * d * d + p * d + q] = -s.W(r, c) - gres / s.mu;
      }
  return y;
}

Eigen::MatrixXd update_theta_block(const Eigen::Ref<const Eigen::MatrixXd>& R,
                                   const Eigen::Ref<const Eigen::MatrixXd>& Phi,
                                   double mu) {
  Eigen::MatrixXd T = R - mu * Phi;
  const double nrm = T.norm();
  if (nrm == 0.0) return Eigen::MatrixXd::Zero(R.rows(), R.cols());
  if (2.0 * nrm <= mu) return (2.0 / mu) * T;
  return T / nrm;
}

namespace {

Eigen::MatrixXd materialize_W(const Eigen::MatrixXd& H,
                              const PsdSplitResult& split) {
  Eigen::MatrixXd W;
  if (split.negative_side) {
    W = H;
    if (split.values.size() > 0)
      W.noalias() -=
          split.vectors * split.values.asDiagonal() * split.vectors.transpose();
  } else {
    if (split.values.size() > 0) {
      W.noalias() =
          split.vectors * split.values.asDiagonal() * split.vectors.transpose();
    } else {
      W = Eigen::MatrixXd::Zero(H.rows(), H.cols());
    }
  }
  W = 0.5 * (W + W.transpose()).eval();
  return W;
}

int rank_estimate_of(const PsdSplitResult& split, Eigen::Index n) {
  if (split.negative_count >= 0) return split.negative_count;
  return int(n) - int(split.values.size());
}

}  // namespace

WStepResult update_W(const Eigen::MatrixXd& H, const Eigen::MatrixXd* warm,
                     const SplitOptions& opts) {
  const PsdSplitResult split = split_spectrum(H, -1e-9, 1e-12, warm, opts);
  WStepResult out;
  out.W = materialize_W(H, split);
  out.rank_estimate = rank_estimate_of(split, H.rows());
  out.dense = split.dense;
  out.matvecs = split.matvecs;
  return out;
}

Eigen::MatrixXd update_G(const GramMatrix& G, const Eigen::MatrixXd& W_new,
                         const Eigen::MatrixXd& H, double gamma, double mu) {
  return (1.0 - gamma) * G.m + gamma * mu * (W_new - H);
}

struct AdmSolver::Impl {
  int n = 0, d = 0;
  Eigen::Index nd = 0;
  std::vector<std::pair<int, int>> edges;
  Eigen::MatrixXd R;  // measurement blocks, d x m*d
  SdpObjective obj = SdpObjective::Lud;
  SolverOptions opts;

  AdmState st;
  Eigen::MatrixXd H;
  Eigen::MatrixXd warm;   // eigenvector factors from the previous W step
  double c_norm = 0.0;    // ||C||_F = sqrt(2 m d), dual-residual normalizer
  double b_norm = 0.0;

  GramMatrix best_G;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<double> dinf_hist;
  int last_adapt = 0;
  int last_psd_check = -1000;
  double last_psd_viol = 0.0;
  int rank_est = 0;
  bool stopped = false;
  ConvergenceReport rep;
  std::ofstream trace;

  Impl(const MeasurementGraph& g, SdpObjective objective,
       const SolverOptions& o)
      : n(g.n), d(g.d), nd(Eigen::Index(g.n) * g.d), edges(g.edges),
        R(g.ratios), obj(objective), opts(o) {
    if (g.edge_count() == 0)
      throw std::invalid_argument("AdmSolver: graph has no edges");
    if (!(opts.gamma > 0.0 && opts.gamma < 0.5 * (1.0 + std::sqrt(5.0))))
      throw std::invalid_argument("AdmSolver: gamma outside (0, (1+sqrt(5))/2)");
    if (!(opts.tol > 0.0)) throw std::invalid_argument("AdmSolver: tol <= 0");
    if (!(opts.mu > 0.0)) throw std::invalid_argument("AdmSolver: mu <= 0");
    st.G = GramMatrix(n, d);
    st.W = Eigen::MatrixXd::Zero(nd, nd);
    st.y = Eigen::VectorXd::Zero(nd * d);
    st.theta = Eigen::MatrixXd::Zero(d, Eigen::Index(edges.size()) * d);
    st.mu = opts.mu;
    st.gamma = opts.gamma;
    H.resize(nd, nd);
    c_norm = std::sqrt(2.0 * double(edges.size()) * d);
    b_norm = std::sqrt(double(nd));
    best_G = st.G;
    if (!opts.trace_path.empty()) {
      trace.open(opts.trace_path);
      if (trace) trace << "iter,objective,primal_infeas,dual_infeas,mu,rank_estimate\n";
    }
  }

  // theta blocks and their -theta/2 contribution to H, fixed-size fast path.
  template <int D>
  void edge_sweep_lud() {
    const double mu = st.mu;
    const Eigen::Index m = Eigen::Index(edges.size());
    for (Eigen::Index e = 0; e < m; ++e) {
      const auto [i, j] = edges[e];
      const Eigen::Index ri = Eigen::Index(i) * d, rj = Eigen::Index(j) * d;
      Eigen::Matrix<double, D, D> T =
          R.block<D, D>(0, e * D) - mu * st.W.block<D, D>(ri, rj) -
          st.G.m.block<D, D>(ri, rj);
      const double nrm = T.norm();
      Eigen::Matrix<double, D, D> th;
      if (nrm == 0.0)
        th.setZero();
      else if (2.0 * nrm <= mu)
        th = (2.0 / mu) * T;
      else
        th = T / nrm;
      st.theta.block<D, D>(0, e * D) = th;
      H.block<D, D>(ri, rj) -= 0.5 * th;
      H.block<D, D>(rj, ri) -= 0.5 * th.transpose();
    }
  }

  void edge_sweep_lud_dyn() {
    const double mu = st.mu;
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [i, j] = edges[e];
      const Eigen::Index ri = Eigen::Index(i) * d, rj = Eigen::Index(j) * d;
      const Eigen::MatrixXd th = update_theta_block(
          R.block(0, Eigen::Index(e) * d, d, d),
          st.W.block(ri, rj, d, d) + st.G.m.block(ri, rj, d, d) / mu, mu);
      st.theta.block(0, Eigen::Index(e) * d, d, d) = th;
      H.block(ri, rj, d, d) -= 0.5 * th;
      H.block(rj, ri, d, d) -= 0.5 * th.transpose();
    }
  }

  template <int D>
  void edge_sweep_sdp() {
    const Eigen::Index m = Eigen::Index(edges.size());
    for (Eigen::Index e = 0; e < m; ++e) {
      const auto [i, j] = edges[e];
      const Eigen::Index ri = Eigen::Index(i) * d, rj = Eigen::Index(j) * d;
      H.block<D, D>(ri, rj) -= R.block<D, D>(0, e * D);
      H.block<D, D>(rj, ri) -= R.block<D, D>(0, e * D).transpose();
    }
  }

  void edge_sweep_sdp_dyn() {
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [i, j] = edges[e];
      const Eigen::Index ri = Eigen::Index(i) * d, rj = Eigen::Index(j) * d;
      H.block(ri, rj, d, d) -= R.block(0, Eigen::Index(e) * d, d, d);
      H.block(rj, ri, d, d) -= R.block(0, Eigen::Index(e) * d, d, d).transpose();
    }
  }

  double objective_of(const Eigen::MatrixXd& G) const {
    double acc = 0.0;
    if (obj == SdpObjective::Lud) {
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto [i, j] = edges[e];
        acc += (G.block(Eigen::Index(i) * d, Eigen::Index(j) * d, d, d) -
                R.block(0, Eigen::Index(e) * d, d, d))
                   .norm();
      }
    } else {
      for (std::size_t e = 0; e < edges.size(); ++e) {
        const auto [i, j] = edges[e];
        acc += 2.0 * (G.block(Eigen::Index(i) * d, Eigen::Index(j) * d, d, d)
                          .cwiseProduct(R.block(0, Eigen::Index(e) * d, d, d)))
                         .sum();
      }
    }
    return acc;
  }

  double primal_infeas_of(const Eigen::MatrixXd& G) const {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      Eigen::MatrixXd B = G.block(Eigen::Index(i) * d, Eigen::Index(i) * d, d, d);
      B.diagonal().array() -= 1.0;
      acc += B.squaredNorm();
    }
    return std::sqrt(acc) / (1.0 + b_norm);
  }

  double psd_violation_of(const Eigen::MatrixXd& G) {
    double lmin;
    if (nd <= 2048) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G,
                                                        Eigen::EigenvaluesOnly);
      lmin = es.eigenvalues()[0];
    } else {
      EigOptions eo;
      eo.dense_threshold = 0;
      eo.max_basis = 96;
      const EigResult r = smallest_eigenvectors(G, 1, eo);
      lmin = r.values[0] - r.residual;  // conservative lower bound
    }
    return std::max(0.0, -lmin) / (1.0 + b_norm);
  }

  void maybe_adapt_mu() {
    if (!opts.mu_adapt) return;
    if (st.primal_infeas > 10.0 * st.dual_infeas)
      st.mu = std::max(st.mu / 2.0, 1e-4);
    else if (st.dual_infeas > 10.0 * st.primal_infeas)
      st.mu = std::min(st.mu * 2.0, 1e4);
    last_adapt = st.iter;
  }

  bool step() {
    const double mu = st.mu;
    const double gamma = st.gamma;

    // y update: y = -A(Q(theta)+W) - (A(G)-b)/mu, blockwise (A(Q) = 0).
    for (int i = 0; i < n; ++i) {
      const Eigen::Index r = Eigen::Index(i) * d;
      for (int p = 0; p < d; ++p)
        for (int q = 0; q < d; ++q) {
          const double gres = st.G.m(r + p, r + q) - (p == q ? 1.0 : 0.0);
          st.y[Eigen::Index(i) * d * d + p * d + q] =
              -st.W(r + p, r + q) - gres / mu;
        }
    }

    // H = -Q(theta_new) - A*(y_new) - G/mu (LUD) or -C - A*(y_new) - G/mu.
    H = st.G.m * (-1.0 / mu);
    for (int i = 0; i < n; ++i) {
      const Eigen::Index r = Eigen::Index(i) * d;
      for (int p = 0; p < d; ++p)
        for (int q = 0; q < d; ++q)
          H(r + p, r + q) -= st.y[Eigen::Index(i) * d * d + p * d + q];
    }
    if (obj == SdpObjective::Lud) {
      if (d == 2)
        edge_sweep_lud<2>();
      else if (d == 3)
        edge_sweep_lud<3>();
      else
        edge_sweep_lud_dyn();
    } else {
      if (d == 2)
        edge_sweep_sdp<2>();
      else if (d == 3)
        edge_sweep_sdp<3>();
      else
        edge_sweep_sdp_dyn();
    }

    // W step: PSD projection of H through one certified spectral side.
    SplitOptions sopts;
    sopts.dense_threshold = opts.w_dense_dim;
    sopts.tol = opts.w_tol;
    sopts.seed = hash_combine(0x77737465ull, std::uint64_t(st.iter));
    const bool have_warm = warm.cols() > 0;
    PsdSplitResult split =
        split_spectrum(H, -1e-9, 1e-12, have_warm ? &warm : nullptr, sopts);
    Eigen::MatrixXd W_new = materialize_W(H, split);
    rank_est = rank_estimate_of(split, nd);

    // Periodic dense cross-check of the partial path.
    if (opts.verify_every > 0 && !split.dense && nd <= 2048 &&
        (st.iter + 1) % opts.verify_every == 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
      Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
      Eigen::MatrixXd Wd =
          es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
      if ((Wd - W_new).norm() > 1e-7 * std::max(1.0, H.norm())) {
        W_new = 0.5 * (Wd + Wd.transpose());
        int neg = 0;
        while (neg < nd && es.eigenvalues()[neg] < -1e-9) ++neg;
        rank_est = neg;
        warm.resize(0, 0);
      }
    }
    {
      const int cap = std::max(opts.eig_rank_hint > 0 ? opts.eig_rank_hint : d,
                               d) + 6;
      const int keep = int(std::min<Eigen::Index>(split.vectors.cols(), cap));
      if (keep > 0)
        warm = split.vectors.rightCols(keep);
      else
        warm.resize(0, 0);
    }

    // Fused pass: dual residual ||W - H - G/mu||, and the G update
    // G <- (1-gamma) G + gamma mu (W - H).
    double dual_sq = 0.0;
    {
      const double* w = W_new.data();
      const double* h = H.data();
      double* g = st.G.m.data();
      const Eigen::Index sz = nd * nd;
      const double om = 1.0 - gamma, gm = gamma * mu, inv_mu = 1.0 / mu;
      for (Eigen::Index k = 0; k < sz; ++k) {
        const double diff = w[k] - h[k];
        const double dres = diff - g[k] * inv_mu;
        dual_sq += dres * dres;
        g[k] = om * g[k] + gm * diff;
      }
    }
    st.W.swap(W_new);
    st.dual_infeas = std::sqrt(dual_sq) / (1.0 + c_norm);
    st.primal_infeas = primal_infeas_of(st.G.m);
    st.iter += 1;

    if (st.iter % 64 == 0)
      st.G.m = 0.5 * (st.G.m + st.G.m.transpose()).eval();

    if (trace.is_open()) {
      trace << st.iter << ',' << objective_of(st.G.m) << ','
            << st.primal_infeas << ',' << st.dual_infeas << ',' << st.mu << ','
            << rank_est << '\n';
    }

    // Track the best iterate by the cheap infeasibility score.
    const double score = std::max(st.primal_infeas, st.dual_infeas);
    if (score < 0.97 * best_score) {
      best_score = score;
      best_G = st.G;
    }

    // mu adaptation: residual balancing on a 50-iteration cadence, plus the
    // dual-trend monitor (mean of the last 50 vs the 50 before).
    dinf_hist.push_back(st.dual_infeas);
    if (opts.mu_adapt) {
      if (st.iter - last_adapt >= 50) {
        if (st.primal_infeas > 10.0 * st.dual_infeas ||
            st.dual_infeas > 10.0 * st.primal_infeas)
          maybe_adapt_mu();
      }
      const std::size_t hn = dinf_hist.size();
      if (st.iter - last_adapt >= 50 && hn >= 100 && st.iter % 25 == 0) {
        double recent = 0.0, before = 0.0;
        for (std::size_t k = hn - 50; k < hn; ++k) recent += dinf_hist[k];
        for (std::size_t k = hn - 100; k < hn - 50; ++k) before += dinf_hist[k];
        if (recent > 1.02 * before) maybe_adapt_mu();
      }
    }

    // Stopping: cheap measures first, then the PSD distance of G.
    if (std::max(st.primal_infeas, st.dual_infeas) < opts.tol) {
      if (st.iter - last_psd_check >= 25) {
        last_psd_check = st.iter;
        last_psd_viol = psd_violation_of(st.G.m);
      }
      if (st.primal_infeas + last_psd_viol < opts.tol &&
          std::max(st.primal_infeas + last_psd_viol, st.dual_infeas) <
              opts.tol) {
        stopped = true;
        return true;
      }
    }
    return false;
  }

  ConvergenceReport finish(bool converged) {
    rep.converged = converged;
    rep.iterations = st.iter;
    rep.primal_infeas = st.primal_infeas;
    rep.dual_infeas = st.dual_infeas;
    rep.psd_violation = last_psd_viol;
    rep.mu_final = st.mu;
    rep.rank_estimate = rank_est;
    rep.objective = objective_of(st.G.m);
    return rep;
  }
};

AdmSolver::AdmSolver(const MeasurementGraph& g, SdpObjective objective,
                     const SolverOptions& opts)
    : impl_(std::make_unique<Impl>(g, objective, opts)) {}

AdmSolver::~AdmSolver() = default;

bool AdmSolver::step() { return impl_->step(); }

ConvergenceReport AdmSolver::run() {
  bool converged = false;
  while (impl_->st.iter < impl_->opts.max_iter) {
    if (impl_->step()) {
      converged = true;
      break;
    }
  }
  return impl_->finish(converged);
}

const AdmState& AdmSolver::state() const { return impl_->st; }

const GramMatrix& AdmSolver::gram() const { return impl_->st.G; }

GramMatrix AdmSolver::best_gram() const {
  const double cur = std::max(impl_->st.primal_infeas, impl_->st.dual_infeas);
  return cur <= impl_->best_score ? impl_->st.G : impl_->best_G;
}

double AdmSolver::objective_value() const {
  return impl_->objective_of(impl_->st.G.m);
}

namespace {

std::pair<GramMatrix, ConvergenceReport> solve_impl(const MeasurementGraph& g,
                                                    SdpObjective obj,
                                                    const SolverOptions& opts) {
  AdmSolver solver(g, obj, opts);
  ConvergenceReport rep = solver.run();
  GramMatrix G = rep.converged ? solver.gram() : solver.best_gram();
  return {std::move(G), rep};
}

}  // namespace

std::pair<GramMatrix, ConvergenceReport> solve_lud(const MeasurementGraph& g,
                                                   const SolverOptions& opts) {
  return solve_impl(g, SdpObjective::Lud, opts);
}

std::pair<GramMatrix, ConvergenceReport> solve_sdp_ls(
    const MeasurementGraph& g, const SolverOptions& opts) {
  return solve_impl(g, SdpObjective::LeastSquares, opts);
}

}  // namespace rotsync
