#include "rotsync/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>
#include <thread>

#include "rotsync/evaluate.hpp"
#include "rotsync/spectral.hpp"

namespace rotsync {

namespace {

std::uint64_t double_bits(double x) { return std::bit_cast<std::uint64_t>(x); }

std::uint64_t hash_string(std::uint64_t h, const std::string& s) {
  for (unsigned char c : s) h = hash_combine(h, c);
  return h;
}

std::string fmt_double(double x) {
  char buf[40];
  snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string fmt_short(double x) {
  char buf[40];
  snprintf(buf, sizeof(buf), "%g", x);
  return buf;
}

int method_rank(const std::string& m) {
  if (m == "eig") return 0;
  if (m == "sdp") return 1;
  if (m == "lud") return 2;
  return 3;
}

void validate_methods(const std::vector<std::string>& methods) {
  if (methods.empty())
    throw std::invalid_argument("config: methods list is empty");
  for (const auto& m : methods)
    if (m != "eig" && m != "sdp" && m != "lud")
      throw std::invalid_argument("config: unknown method '" + m + "'");
}

struct Cell {
  std::string experiment;
  int d = 0, n = 0;
  double p = 1.0, p1 = 1.0, kappa = 0.0;
  bool has_kappa = false;
  std::string method;
  int trial = 0;
};

ExperimentRecord run_cell(const Cell& cell, const SolverOptions& sopts,
                          std::uint64_t master) {
  ExperimentRecord rec;
  rec.experiment = cell.experiment;
  rec.d = cell.d;
  rec.n = cell.n;
  rec.p = cell.p;
  rec.p1 = cell.p1;
  rec.kappa = cell.kappa;
  rec.has_kappa = cell.has_kappa;
  rec.method = cell.method;
  rec.trial = cell.trial;
  rec.seed = trial_seed(master, cell.n, cell.p, cell.p1, cell.kappa,
                        cell.has_kappa, cell.method, cell.trial);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const MeasurementGraph g =
        generate(cell.n, cell.d, cell.p1, cell.p,
                 cell.has_kappa ? cell.kappa : 0.0, rec.seed);
    const Eigen::MatrixXd gram_true = true_gram(g);
    RotationEstimate est;
    if (cell.method == "eig") {
      est = solve_eig(g);
      rec.iterations = 0;
      rec.re = relative_error(gram_from_rotations(est.rotations), gram_true);
    } else {
      const auto [G, rep] = cell.method == "lud" ? solve_lud(g, sopts)
                                                 : solve_sdp_ls(g, sopts);
      rec.iterations = rep.iterations;
      rec.converged = rep.converged;
      rec.re = relative_error(G.m, gram_true);
      est = round_deterministic(G);
      est.source = cell.method;
    }
    rec.mse = mse(est, g.truth).mse;
  } catch (const std::exception& ex) {
    std::cerr << "cell failed (" << cell.experiment << " n=" << cell.n
              << " p=" << cell.p << " method=" << cell.method
              << " trial=" << cell.trial << "): " << ex.what() << "\n";
    rec.re = std::nan("");
    rec.mse = std::nan("");
    rec.converged = false;
  }
  rec.runtime_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - t0)
                       .count();
  return rec;
}

std::vector<ExperimentRecord> run_cells(const std::vector<Cell>& cells,
                                        const ExperimentConfig& cfg) {
  std::vector<ExperimentRecord> records(cells.size());
  SolverOptions sopts = cfg.solver;
  if (cells.size() > 1) sopts.trace_path.clear();  // avoid clobbering
  unsigned nthreads = cfg.threads > 0 ? unsigned(cfg.threads)
                                      : std::thread::hardware_concurrency();
  nthreads = std::clamp<unsigned>(nthreads, 1u, unsigned(cells.size()));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      records[i] = run_cell(cells[i], sopts, cfg.seed);
    }
  };
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::vector<ExperimentRecord> out = records;
  sort_records(out);
  return out;
}

TheoryConstants constants_for(int d, std::uint64_t seed,
                              std::int64_t mc_samples) {
  if (d <= 3) return c_of_d(d);
  RandomStream rng(hash_combine(seed, 0x63646d63ull + d));
  return c_of_d(d, rng, mc_samples);
}

}  // namespace

std::uint64_t trial_seed(std::uint64_t master, int n, double p, double p1,
                         double kappa, bool has_kappa,
                         const std::string& method, int trial) {
  std::uint64_t h = hash_combine(master, std::uint64_t(n));
  h = hash_combine(h, double_bits(p));
  h = hash_combine(h, double_bits(p1));
  h = hash_combine(h, has_kappa ? double_bits(kappa) : 0x6e6f6e65ull);
  h = hash_string(h, method);
  return hash_combine(h, std::uint64_t(trial));
}

std::vector<double> grid_range(double lo, double hi, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grid_range: step <= 0");
  std::vector<double> out;
  for (double x = lo; x <= hi + 1e-12; x += step) out.push_back(x);
  return out;
}

std::vector<ExperimentRecord> run_e1(const ExperimentConfig& cfg) {
  if (!cfg.kappa_list.empty())
    throw std::invalid_argument("e1: kappa_list must be empty");
  if (cfg.p1_list.size() != 1 || cfg.p1_list[0] != 1.0)
    throw std::invalid_argument("e1: p1_list must be {1}");
  if (cfg.p_list.empty()) throw std::invalid_argument("e1: p_list is empty");
  if (cfg.trials < 1) throw std::invalid_argument("e1: trials must be >= 1");
  validate_methods(cfg.methods);
  std::vector<Cell> cells;
  for (double p : cfg.p_list)
    for (const auto& m : cfg.methods)
      for (int t = 0; t < cfg.trials; ++t)
        cells.push_back({"e1", cfg.d, cfg.n, p, 1.0, 0.0, false, m, t});
  return run_cells(cells, cfg);
}

std::vector<ExperimentRecord> run_e2(const ExperimentConfig& cfg) {
  if (cfg.kappa_list.empty())
    throw std::invalid_argument("e2: kappa_list must be non-empty");
  if (cfg.p_list.empty()) throw std::invalid_argument("e2: p_list is empty");
  if (cfg.trials < 1) throw std::invalid_argument("e2: trials must be >= 1");
  validate_methods(cfg.methods);
  for (double k : cfg.kappa_list)
    if (!(k > 0.0)) throw std::invalid_argument("e2: kappa must be > 0");
  std::vector<Cell> cells;
  for (double p : cfg.p_list)
    for (double kappa : cfg.kappa_list)
      for (const auto& m : cfg.methods)
        for (int t = 0; t < cfg.trials; ++t)
          cells.push_back({"e2", cfg.d, cfg.n, p, 1.0, kappa, true, m, t});
  return run_cells(cells, cfg);
}

E3Output run_e3_e4(const ExperimentConfig& cfg) {
  const bool e4 = cfg.experiment == "e4";
  if (e4 && cfg.kappa_list.empty())
    throw std::invalid_argument("e4: kappa_list must be non-empty");
  if (!e4 && !cfg.kappa_list.empty())
    throw std::invalid_argument("e3: kappa_list must be empty");
  if (cfg.p_list.empty() || cfg.p1_list.empty())
    throw std::invalid_argument("e3/e4: p_list and p1_list must be non-empty");
  for (double p1 : cfg.p1_list)
    if (!(p1 > 0.0 && p1 <= 1.0))
      throw std::invalid_argument("e3/e4: p1 values must lie in (0, 1]");
  if (cfg.trials < 1) throw std::invalid_argument("e3/e4: trials must be >= 1");
  validate_methods(cfg.methods);

  const std::string name = e4 ? "e4" : "e3";
  std::vector<Cell> cells;
  for (double p1 : cfg.p1_list)
    for (double p : cfg.p_list) {
      if (e4) {
        for (double kappa : cfg.kappa_list)
          for (const auto& m : cfg.methods)
            for (int t = 0; t < cfg.trials; ++t)
              cells.push_back({name, cfg.d, cfg.n, p, p1, kappa, true, m, t});
      } else {
        for (const auto& m : cfg.methods)
          for (int t = 0; t < cfg.trials; ++t)
            cells.push_back({name, cfg.d, cfg.n, p, p1, 0.0, false, m, t});
      }
    }

  E3Output out;
  out.records = run_cells(cells, cfg);

  const TheoryConstants tc = constants_for(cfg.d, cfg.seed, cfg.mc_samples);
  for (double p1 : cfg.p1_list) out.curve.push_back({p1, critical_probability(tc, p1)});

  if (!e4) {
    std::string hm_method = cfg.methods[0];
    for (const auto& m : cfg.methods)
      if (m == "lud") hm_method = "lud";
    std::map<std::pair<double, double>, std::pair<double, int>> agg;
    for (const auto& r : out.records) {
      if (r.method != hm_method || std::isnan(r.mse)) continue;
      auto& slot = agg[{r.p1, r.p}];
      slot.first += std::log10(std::max(r.mse, 1e-300));
      slot.second += 1;
    }
    for (const auto& [key, val] : agg)
      out.heatmap.push_back({key.first, key.second, val.first / val.second});
  }
  return out;
}

SemicircleReport run_semicircle(const ExperimentConfig& cfg) {
  if (cfg.p_list.size() != 1)
    throw std::invalid_argument("semicircle: exactly one p required");
  const double p = cfg.p_list[0];
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("semicircle: p must be in [0, 1]");
  if (cfg.n < 200) throw std::invalid_argument("semicircle: n must be >= 200");

  SemicircleReport rep;
  rep.n = cfg.n;
  rep.d = cfg.d;
  rep.p = p;
  rep.p1 = 1.0;
  const TheoryConstants tc = constants_for(cfg.d, cfg.seed, cfg.mc_samples);
  rep.theory_sq = 0.5 * (1.0 - p) * double(cfg.n) * double(cfg.n - 1) *
                  (1.0 - tc.c * tc.c * cfg.d);
  rep.sigma_theory =
      std::sqrt(std::max(0.0, (1.0 - p) * (1.0 / cfg.d - tc.c * tc.c)));
  if (p >= 1.0) return rep;  // D = 0, all statistics stay zero

  const std::uint64_t seed =
      trial_seed(cfg.seed, cfg.n, p, 1.0, 0.0, false, "semicircle", 0);
  const MeasurementGraph g = generate(cfg.n, cfg.d, 1.0, p, 0.0, seed);
  const int d = cfg.d;
  const Eigen::Index nd = Eigen::Index(cfg.n) * d;
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(nd, nd);
  for (int e = 0; e < g.edge_count(); ++e) {
    if (g.good[e]) continue;
    const auto [i, j] = g.edges[e];
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(d, d) - g.ratio(e);
    const double nrm = B.norm();
    if (nrm > 0.0) B /= nrm;
    B -= tc.c * Eigen::MatrixXd::Identity(d, d);
    D.block(Eigen::Index(i) * d, Eigen::Index(j) * d, d, d) = B;
    D.block(Eigen::Index(j) * d, Eigen::Index(i) * d, d, d) = B.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd lam = es.eigenvalues() / std::sqrt(double(cfg.n - 1));
  rep.edge_max = std::max(std::abs(lam[0]), std::abs(lam[nd - 1]));
  for (Eigen::Index k = 0; k < nd; ++k) {
    const double unscaled = lam[k] * lam[k] * double(cfg.n - 1);
    if (lam[k] > 0.0)
      rep.dplus_sq += unscaled;
    else
      rep.dminus_sq += unscaled;
  }
  // KS distance of the empirical spectral CDF against the semicircle CDF.
  const double sigma = rep.sigma_theory;
  auto cdf = [sigma](double x) {
    const double r = 2.0 * sigma;
    if (x <= -r) return 0.0;
    if (x >= r) return 1.0;
    return 0.5 + x * std::sqrt(r * r - x * x) / (4.0 * M_PI * sigma * sigma) +
           std::asin(x / r) / M_PI;
  };
  double ks = 0.0;
  for (Eigen::Index k = 0; k < nd; ++k) {
    const double F = cdf(lam[k]);
    ks = std::max(ks, std::max(F - double(k) / double(nd),
                               double(k + 1) / double(nd) - F));
  }
  rep.ks_distance = ks;
  return rep;
}

std::vector<ConstantsRow> run_constants(const ExperimentConfig& cfg) {
  if (cfg.d < 2) throw std::invalid_argument("constants: d must be >= 2");
  std::vector<ConstantsRow> rows;
  for (int d = 2; d <= cfg.d; ++d) {
    const TheoryConstants tc = constants_for(d, cfg.seed, cfg.mc_samples);
    ConstantsRow row;
    row.d = d;
    row.c = tc.c;
    row.c1 = tc.c1;
    row.lower = c_lower_bound(d);
    row.upper = c_upper_bound(d);
    row.p_c = critical_probability(tc);
    for (double p1 : cfg.p1_list) row.p_c_at.push_back(critical_probability(tc, p1));
    row.monte_carlo = tc.monte_carlo;
    row.mc_samples = tc.mc_samples;
    row.mc_stderr = tc.mc_stderr;
    rows.push_back(std::move(row));
  }
  return rows;
}

void sort_records(std::vector<ExperimentRecord>& records) {
  std::sort(records.begin(), records.end(),
            [](const ExperimentRecord& a, const ExperimentRecord& b) {
              const auto key = [](const ExperimentRecord& r) {
                return std::make_tuple(r.experiment, r.d, r.n, r.p1, r.p,
                                       r.kappa, method_rank(r.method),
                                       r.trial);
              };
              return key(a) < key(b);
            });
}

void write_records_csv(const std::vector<ExperimentRecord>& records,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "experiment,d,n,p,p1,kappa,method,rounding,trial,seed,re,mse,"
       "iterations,runtime_ms\n";
  for (const auto& r : records) {
    f << r.experiment << ',' << r.d << ',' << r.n << ',' << fmt_double(r.p)
      << ',' << fmt_double(r.p1) << ','
      << (r.has_kappa ? fmt_double(r.kappa) : std::string()) << ',' << r.method
      << ',' << r.rounding << ',' << r.trial << ',' << r.seed << ','
      << fmt_double(r.re) << ',' << fmt_double(r.mse) << ',' << r.iterations
      << ',';
    char buf[32];
    snprintf(buf, sizeof(buf), "%.3f", r.runtime_ms);
    f << buf << '\n';
  }
}

void write_heatmap_csv(const std::vector<HeatmapRow>& rows,
                       const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "p1,p,mean_log10_mse\n";
  for (const auto& r : rows)
    f << fmt_double(r.p1) << ',' << fmt_double(r.p) << ','
      << fmt_double(r.mean_log10_mse) << '\n';
}

void write_curve_csv(const std::vector<CurveRow>& rows,
                     const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "p1,p_c\n";
  for (const auto& r : rows)
    f << fmt_double(r.p1) << ',' << fmt_double(r.p_c) << '\n';
}

void write_semicircle_csv(const SemicircleReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "n,d,p,p1,sigma_theory,edge_max,ks_distance,dplus_sq,dminus_sq,"
       "theory_sq\n";
  f << rep.n << ',' << rep.d << ',' << fmt_double(rep.p) << ','
    << fmt_double(rep.p1) << ',' << fmt_double(rep.sigma_theory) << ','
    << fmt_double(rep.edge_max) << ',' << fmt_double(rep.ks_distance) << ','
    << fmt_double(rep.dplus_sq) << ',' << fmt_double(rep.dminus_sq) << ','
    << fmt_double(rep.theory_sq) << '\n';
}

void write_constants_csv(const std::vector<ConstantsRow>& rows,
                         const std::vector<double>& p1_list,
                         const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "d,c,c1,lower_bound,upper_bound,p_c";
  for (double p1 : p1_list) f << ",p_c_at_" << fmt_short(p1);
  f << ",method,mc_samples,mc_stderr\n";
  for (const auto& r : rows) {
    f << r.d << ',' << fmt_double(r.c) << ',' << fmt_double(r.c1) << ','
      << fmt_double(r.lower) << ',' << fmt_double(r.upper) << ','
      << fmt_double(r.p_c);
    for (double v : r.p_c_at) f << ',' << fmt_double(v);
    f << ',' << (r.monte_carlo ? "monte_carlo" : "closed_form") << ','
      << r.mc_samples << ',' << fmt_double(r.mc_stderr) << '\n';
  }
}

bool any_nonconverged(const std::vector<ExperimentRecord>& records) {
  for (const auto& r : records)
    if (!r.converged) return true;
  return false;
}

}  // namespace rotsync
