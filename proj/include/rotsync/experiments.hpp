#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rotsync/lud_admm.hpp"
#include "rotsync/measurements.hpp"
#include "rotsync/so_group.hpp"

namespace rotsync {

struct ExperimentConfig {
  std::string experiment;  // e1, e2, e3, e4, semicircle, constants
  int d = 2;
  int n = 500;
  std::vector<double> p_list{0.5};
  std::vector<double> p1_list{1.0};
  std::vector<double> kappa_list;  // empty = exact good edges
  std::vector<std::string> methods{"eig", "sdp", "lud"};
  int trials = 10;
  std::uint64_t seed = 42;
  SolverOptions solver;
  std::string out_path = "results.csv";
  int threads = 0;  // 0 = hardware concurrency
  std::int64_t mc_samples = 1000000;
};

struct ExperimentRecord {
  std::string experiment;
  int d = 0;
  int n = 0;
  double p = 1.0;
  double p1 = 1.0;
  double kappa = 0.0;
  bool has_kappa = false;
  std::string method;
  std::string rounding = "deterministic";
  int trial = 0;
  std::uint64_t seed = 0;
  double re = 0.0;
  double mse = 0.0;
  int iterations = 0;
  double runtime_ms = 0.0;
  bool converged = true;  // in-memory only, drives the CLI exit code
};

// Per-cell seed so any single trial is replayable in isolation. Folds the
// master seed with n, the parameter bits, the method name, and the trial.
std::uint64_t trial_seed(std::uint64_t master, int n, double p, double p1,
                         double kappa, bool has_kappa, const std::string& method,
                         int trial);

std::vector<ExperimentRecord> run_e1(const ExperimentConfig& cfg);
std::vector<ExperimentRecord> run_e2(const ExperimentConfig& cfg);

struct HeatmapRow {
  double p1 = 0.0, p = 0.0, mean_log10_mse = 0.0;
};
struct CurveRow {
  double p1 = 0.0, p_c = 0.0;
};
struct E3Output {
  std::vector<ExperimentRecord> records;
  std::vector<HeatmapRow> heatmap;  // E3 only
  std::vector<CurveRow> curve;
};
E3Output run_e3_e4(const ExperimentConfig& cfg);

struct SemicircleReport {
  int n = 0;
  int d = 0;
  double p = 1.0;
  double p1 = 1.0;
  double sigma_theory = 0.0;
  double edge_max = 0.0;     // largest |eigenvalue| of D/sqrt(n-1)
  double ks_distance = 0.0;  // empirical spectral CDF vs semicircle CDF
  double dplus_sq = 0.0;     // sum of squared positive eigenvalues of D
  double dminus_sq = 0.0;
  double theory_sq = 0.0;    // (1/2)(1-p) n (n-1) (1 - c(d)^2 d)
};
SemicircleReport run_semicircle(const ExperimentConfig& cfg);

struct ConstantsRow {
  int d = 0;
  double c = 0.0, c1 = 0.0;
  double lower = 0.0, upper = 0.0;
  double p_c = 0.0;
  std::vector<double> p_c_at;  // per cfg.p1_list entry
  bool monte_carlo = false;
  std::int64_t mc_samples = 0;
  double mc_stderr = 0.0;
};
std::vector<ConstantsRow> run_constants(const ExperimentConfig& cfg);

void sort_records(std::vector<ExperimentRecord>& records);
void write_records_csv(const std::vector<ExperimentRecord>& records,
                       const std::string& path);
void write_heatmap_csv(const std::vector<HeatmapRow>& rows,
                       const std::string& path);
void write_curve_csv(const std::vector<CurveRow>& rows, const std::string& path);
void write_semicircle_csv(const SemicircleReport& rep, const std::string& path);
void write_constants_csv(const std::vector<ConstantsRow>& rows,
                         const std::vector<double>& p1_list,
                         const std::string& path);
bool any_nonconverged(const std::vector<ExperimentRecord>& records);

// Inclusive range with fixed step, used for the default E3/E4 grids.
std::vector<double> grid_range(double lo, double hi, double step);

}  // namespace rotsync
