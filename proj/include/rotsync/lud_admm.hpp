#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rotsync/gram.hpp"
#include "rotsync/measurements.hpp"
#include "rotsync/spectral.hpp"

namespace rotsync {

// Which objective the ADM solves over {G PSD, G_ii = I}:
// Lud:          min sum_{(i,j) in E} ||G_ij - R_ij||_F
// LeastSquares: max Tr(G C) with C carrying the measurement blocks.
enum class SdpObjective { Lud, LeastSquares };

struct SolverOptions {
  double mu = 1.0;
  double gamma = 1.6;       // step length, must lie in (0, (1+sqrt(5))/2)
  double tol = 1e-5;        // stopping tolerance on both infeasibility measures
  int max_iter = 5000;
  bool mu_adapt = true;     // residual-balancing x2 / /2 every 50 iterations
  int eig_rank_hint = 0;    // warm-start width for the W step; 0 = d
  // Engineering knobs for the W-step eigensolver.
  int w_dense_dim = 128;    // full decomposition below this dimension
  double w_tol = 1e-8;      // residual tolerance of the partial path
  int verify_every = 300;   // dense cross-check cadence (0 = off)
  std::string trace_path;   // per-iteration CSV when non-empty
};

struct AdmState {
  Eigen::VectorXd y;        // length n d^2, multiplier of A(G) = b
  Eigen::MatrixXd theta;    // d x m*d dual edge blocks, ||theta_ij|| <= 1
  Eigen::MatrixXd W;        // nd x nd PSD dual slack
  GramMatrix G;
  double mu = 1.0;
  double gamma = 1.6;
  int iter = 0;
  double primal_infeas = 0.0;
  double dual_infeas = 0.0;
};

struct ConvergenceReport {
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  double primal_infeas = 0.0;
  double dual_infeas = 0.0;
  double psd_violation = 0.0;
  double mu_final = 0.0;
  int rank_estimate = 0;
};

// A extracts the n diagonal blocks of G, entries ordered (i, p, q); its
// adjoint embeds n d x d blocks back on the diagonal. A A* = I.
Eigen::VectorXd operator_A(const Eigen::MatrixXd& G, int n, int d);
Eigen::MatrixXd operator_A_adjoint(const Eigen::VectorXd& y, int n, int d);
Eigen::VectorXd constraint_rhs(int n, int d);  // b = n copies of vec(I_d)

// Q(theta): zero diagonal blocks, off-diagonal blocks theta_ij / 2.
Eigen::MatrixXd assemble_Q(const Eigen::MatrixXd& theta,
                           const std::vector<std::pair<int, int>>& edges, int n,
                           int d);

// Closed-form subproblem solutions, exposed for the oracle tests.
Eigen::VectorXd update_y(const AdmState& s,
                         const std::vector<std::pair<int, int>>& edges);
// Per-edge theta block given Phi_ij = (W + A*(y_new) + G/mu)_ij. The theta
// subproblem is min <theta, G + mu M - R> + (mu/4)||theta||^2 over the unit
// ball (the 1/2 in Q makes the quadratic coefficient mu/4), so the interior
// solution is 2(R/mu - Phi); the ball projection is (R - mu Phi)/||R - mu Phi||.
Eigen::MatrixXd update_theta_block(const Eigen::Ref<const Eigen::MatrixXd>& R,
                                   const Eigen::Ref<const Eigen::MatrixXd>& Phi,
                                   double mu);

struct WStepResult {
  Eigen::MatrixXd W;
  int rank_estimate = 0;  // negative eigenvalues of H (estimated when partial)
  bool dense = false;
  int matvecs = 0;
};
// PSD projection W = H_+, via one certified spectral side of H.
WStepResult update_W(const Eigen::MatrixXd& H,
                     const Eigen::MatrixXd* warm = nullptr,
                     const SplitOptions& opts = {});

Eigen::MatrixXd update_G(const GramMatrix& G, const Eigen::MatrixXd& W_new,
                         const Eigen::MatrixXd& H, double gamma, double mu);

// One ADM instance owns its state; step() runs one y -> theta -> W -> G
// sweep and reports whether the stopping test passed.
class AdmSolver {
 public:
  AdmSolver(const MeasurementGraph& g, SdpObjective objective,
            const SolverOptions& opts = {});
  ~AdmSolver();
  AdmSolver(const AdmSolver&) = delete;
  AdmSolver& operator=(const AdmSolver&) = delete;

  bool step();
  ConvergenceReport run();

  const AdmState& state() const;
  const GramMatrix& gram() const;        // current iterate
  GramMatrix best_gram() const;          // lowest-infeasibility iterate seen
  double objective_value() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::pair<GramMatrix, ConvergenceReport> solve_lud(const MeasurementGraph& g,
                                                   const SolverOptions& opts = {});
std::pair<GramMatrix, ConvergenceReport> solve_sdp_ls(
    const MeasurementGraph& g, const SolverOptions& opts = {});

}  // namespace rotsync
