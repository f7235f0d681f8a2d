#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "doctest.h"
#include "rotsync/experiments.hpp"
#include "rotsync/so_group.hpp"

using namespace rotsync;

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) lines.push_back(line);
  return lines;
}

bool equal_mod_runtime(const ExperimentRecord& a, const ExperimentRecord& b) {
  const auto key = [](const ExperimentRecord& r) {
    return std::make_tuple(r.experiment, r.d, r.n, r.p, r.p1, r.kappa,
                           r.has_kappa, r.method, r.rounding, r.trial, r.seed,
                           r.iterations, r.converged);
  };
  if (key(a) != key(b)) return false;
  const bool re_same =
      (std::isnan(a.re) && std::isnan(b.re)) || a.re == b.re;
  const bool mse_same =
      (std::isnan(a.mse) && std::isnan(b.mse)) || a.mse == b.mse;
  return re_same && mse_same;
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(ROTSYNC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

const char* kRecordsHeader =
    "experiment,d,n,p,p1,kappa,method,rounding,trial,seed,re,mse,"
    "iterations,runtime_ms";

}  // namespace

TEST_CASE("e1 runs are deterministic and sorted, whatever the thread count") {
  ExperimentConfig cfg;
  cfg.experiment = "e1";
  cfg.n = 12;
  cfg.p_list = {0.7, 0.5};
  cfg.methods = {"lud", "eig"};
  cfg.trials = 2;
  cfg.seed = 99;
  cfg.threads = 1;
  const auto a = run_e1(cfg);
  cfg.threads = 4;
  const auto b = run_e1(cfg);
  REQUIRE(a.size() == 8);
  REQUIRE(b.size() == 8);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(equal_mod_runtime(a[k], b[k]));

  // Sorted: p ascending, eig before lud within a p, trials in order.
  for (const auto& r : a) {
    CHECK(r.experiment == "e1");
    CHECK(r.p1 == 1.0);
    CHECK(!r.has_kappa);
    CHECK(r.rounding == "deterministic");
    CHECK(r.seed == trial_seed(99, 12, r.p, 1.0, 0.0, false, r.method, r.trial));
  }
  CHECK(a[0].p == 0.5);
  CHECK(a[0].method == "eig");
  CHECK(a[1].trial == 1);
  CHECK(a[2].method == "lud");
  CHECK(a[4].p == 0.7);

  // Noiseless p has no place here, but exactness at p = 0.7 on a tiny n is
  // not guaranteed; just require finite errors.
  for (const auto& r : a) {
    CHECK(std::isfinite(r.re));
    CHECK(std::isfinite(r.mse));
  }
}

TEST_CASE("e1 rejects malformed configs") {
  ExperimentConfig cfg;
  cfg.experiment = "e1";
  cfg.n = 10;
  cfg.trials = 1;
  ExperimentConfig bad = cfg;
  bad.kappa_list = {5.0};
  CHECK_THROWS_AS(run_e1(bad), std::invalid_argument);
  bad = cfg;
  bad.p1_list = {0.9};
  CHECK_THROWS_AS(run_e1(bad), std::invalid_argument);
  bad = cfg;
  bad.p1_list = {1.0, 0.5};
  CHECK_THROWS_AS(run_e1(bad), std::invalid_argument);
  bad = cfg;
  bad.trials = 0;
  CHECK_THROWS_AS(run_e1(bad), std::invalid_argument);
  bad = cfg;
  bad.methods = {"bogus"};
  CHECK_THROWS_AS(run_e1(bad), std::invalid_argument);
  bad = cfg;
  bad.methods.clear();
  CHECK_THROWS_AS(run_e1(bad), std::invalid_argument);
  bad = cfg;
  bad.p_list.clear();
  CHECK_THROWS_AS(run_e1(bad), std::invalid_argument);
}

TEST_CASE("e2 handles concentrated noise and validates kappa") {
  ExperimentConfig cfg;
  cfg.experiment = "e2";
  cfg.n = 30;
  cfg.p_list = {1.0};
  cfg.kappa_list = {1e8};
  cfg.methods = {"eig"};
  cfg.trials = 1;
  cfg.seed = 7;
  const auto recs = run_e2(cfg);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].has_kappa);
  CHECK(recs[0].kappa == 1e8);
  CHECK(recs[0].mse <= 1e-6);
  CHECK(recs[0].iterations == 0);  // spectral method reports no iterations

  cfg.kappa_list.clear();
  CHECK_THROWS_AS(run_e2(cfg), std::invalid_argument);
  cfg.kappa_list = {-1.0};
  CHECK_THROWS_AS(run_e2(cfg), std::invalid_argument);
}

TEST_CASE("e3 produces records, a heatmap, and a threshold curve") {
  ExperimentConfig cfg;
  cfg.experiment = "e3";
  cfg.n = 14;
  cfg.p_list = {0.4, 0.6};
  cfg.p1_list = {0.6, 1.0};
  cfg.methods = {"eig", "lud"};
  cfg.trials = 2;
  cfg.seed = 11;
  const E3Output out = run_e3_e4(cfg);
  CHECK(out.records.size() == 16);
  REQUIRE(out.heatmap.size() == 4);
  for (const auto& h : out.heatmap) CHECK(std::isfinite(h.mean_log10_mse));
  REQUIRE(out.curve.size() == 2);
  const TheoryConstants tc = c_of_d(2);
  CHECK(out.curve[0].p1 == 0.6);
  CHECK(out.curve[0].p_c ==
        doctest::Approx(critical_probability(tc, 0.6)).epsilon(1e-12));
  CHECK(out.curve[1].p_c ==
        doctest::Approx(critical_probability(tc)).epsilon(1e-12));

  // The heatmap aggregates the lud records: mean log10 mse recomputed here.
  double acc = 0.0;
  int cnt = 0;
  for (const auto& r : out.records) {
    if (r.method != "lud" || r.p1 != 0.6 || r.p != 0.4) continue;
    acc += std::log10(std::max(r.mse, 1e-300));
    ++cnt;
  }
  REQUIRE(cnt == 2);
  bool found = false;
  for (const auto& h : out.heatmap)
    if (h.p1 == 0.6 && h.p == 0.4) {
      found = true;
      CHECK(h.mean_log10_mse == doctest::Approx(acc / cnt).epsilon(1e-12));
    }
  CHECK(found);

  ExperimentConfig bad = cfg;
  bad.kappa_list = {10.0};
  CHECK_THROWS_AS(run_e3_e4(bad), std::invalid_argument);
  bad = cfg;
  bad.p1_list = {0.0, 0.5};
  CHECK_THROWS_AS(run_e3_e4(bad), std::invalid_argument);
  bad = cfg;
  bad.experiment = "e4";
  CHECK_THROWS_AS(run_e3_e4(bad), std::invalid_argument);
}

TEST_CASE("e4 is the noisy variant without a heatmap") {
  ExperimentConfig cfg;
  cfg.experiment = "e4";
  cfg.n = 12;
  cfg.p_list = {0.8};
  cfg.p1_list = {1.0};
  cfg.kappa_list = {50.0};
  cfg.methods = {"eig"};
  cfg.trials = 1;
  const E3Output out = run_e3_e4(cfg);
  REQUIRE(out.records.size() == 1);
  CHECK(out.records[0].has_kappa);
  CHECK(out.heatmap.empty());
  CHECK(out.curve.size() == 1);
}

TEST_CASE("semicircle statistics match the theory on a mid-size instance") {
  ExperimentConfig cfg;
  cfg.experiment = "semicircle";
  cfg.n = 200;
  cfg.d = 2;
  cfg.p_list = {0.7};
  cfg.seed = 4;
  const SemicircleReport rep = run_semicircle(cfg);
  CHECK(rep.sigma_theory ==
        doctest::Approx(std::sqrt(0.3 * (0.5 - c_of_d(2).c * c_of_d(2).c)))
            .epsilon(1e-12));
  // theory_sq predicts each half of the symmetric spectrum separately.
  CHECK(std::abs(rep.dplus_sq - rep.theory_sq) <= 0.10 * rep.theory_sq);
  CHECK(std::abs(rep.dminus_sq - rep.theory_sq) <= 0.10 * rep.theory_sq);
  CHECK(rep.edge_max >= 1.6 * rep.sigma_theory);
  CHECK(rep.edge_max <= 2.4 * rep.sigma_theory);
  CHECK(rep.ks_distance <= 0.05);
}

TEST_CASE("semicircle handles the no-outlier edge case and rejects bad input") {
  ExperimentConfig cfg;
  cfg.experiment = "semicircle";
  cfg.n = 200;
  cfg.p_list = {1.0};
  const SemicircleReport rep = run_semicircle(cfg);
  CHECK(rep.sigma_theory == 0.0);
  CHECK(rep.edge_max == 0.0);
  CHECK(rep.ks_distance == 0.0);
  CHECK(rep.dplus_sq == 0.0);
  CHECK(rep.dminus_sq == 0.0);
  CHECK(rep.theory_sq == 0.0);

  cfg.n = 150;
  CHECK_THROWS_AS(run_semicircle(cfg), std::invalid_argument);
  cfg.n = 200;
  cfg.p_list = {0.4, 0.5};
  CHECK_THROWS_AS(run_semicircle(cfg), std::invalid_argument);
  cfg.p_list = {-0.1};
  CHECK_THROWS_AS(run_semicircle(cfg), std::invalid_argument);
}

TEST_CASE("constants rows cover d = 2..d and the requested p1 values") {
  ExperimentConfig cfg;
  cfg.experiment = "constants";
  cfg.d = 4;
  cfg.p1_list = {0.3, 1.0};
  cfg.mc_samples = 200000;
  cfg.seed = 21;
  const auto rows = run_constants(cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].d == 2);
  CHECK(rows[0].c == doctest::Approx(0.45015815807855303).epsilon(1e-12));
  CHECK(rows[0].p_c == doctest::Approx(0.456985).epsilon(1e-5));
  REQUIRE(rows[0].p_c_at.size() == 2);
  CHECK(rows[0].p_c_at[0] == doctest::Approx(0.585327).epsilon(1e-5));
  CHECK(rows[0].p_c_at[1] == doctest::Approx(rows[0].p_c).epsilon(1e-12));
  CHECK(!rows[0].monte_carlo);
  CHECK(rows[1].d == 3);
  CHECK(rows[1].c == doctest::Approx(8.0 * std::sqrt(2.0) / (9.0 * M_PI)).epsilon(1e-12));
  CHECK(rows[2].d == 4);
  CHECK(rows[2].monte_carlo);
  CHECK(rows[2].mc_samples == 200000);
  CHECK(rows[2].mc_stderr > 0.0);
  CHECK(rows[2].c == doctest::Approx(0.3506).epsilon(0.01));

  cfg.d = 1;
  CHECK_THROWS_AS(run_constants(cfg), std::invalid_argument);
}

TEST_CASE("records CSV round-trips the exact format") {
  ExperimentConfig cfg;
  cfg.experiment = "e1";
  cfg.n = 10;
  cfg.p_list = {1.0};
  cfg.methods = {"eig"};
  cfg.trials = 2;
  cfg.seed = 31;
  const auto recs = run_e1(cfg);
  const std::string path = "records_tmp.csv";
  write_records_csv(recs, path);
  const auto lines = read_lines(path);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == kRecordsHeader);
  const auto f = split_csv(lines[1]);
  REQUIRE(f.size() == 14);
  CHECK(f[0] == "e1");
  CHECK(f[1] == "2");
  CHECK(f[2] == "10");
  CHECK(f[3] == "1");
  CHECK(f[4] == "1");
  CHECK(f[5] == "");  // kappa stays blank without noise
  CHECK(f[6] == "eig");
  CHECK(f[7] == "deterministic");
  CHECK(f[8] == "0");
  CHECK(f[9] == std::to_string(recs[0].seed));
  CHECK(std::stod(f[10]) == doctest::Approx(recs[0].re).epsilon(1e-15));
  CHECK(f[13].find('.') != std::string::npos);  // runtime with decimals
  std::remove(path.c_str());
}

TEST_CASE("side-file writers emit their headers") {
  write_heatmap_csv({{0.5, 0.4, -3.25}}, "hm_tmp.csv");
  auto lines = read_lines("hm_tmp.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "p1,p,mean_log10_mse");
  const auto hf = split_csv(lines[1]);
  REQUIRE(hf.size() == 3);
  CHECK(std::stod(hf[0]) == 0.5);
  CHECK(std::stod(hf[1]) == 0.4);
  CHECK(std::stod(hf[2]) == -3.25);
  std::remove("hm_tmp.csv");

  write_curve_csv({{0.5, 0.52618}}, "cv_tmp.csv");
  lines = read_lines("cv_tmp.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "p1,p_c");
  std::remove("cv_tmp.csv");

  SemicircleReport rep;
  rep.n = 500;
  rep.d = 2;
  rep.p = 0.5;
  rep.p1 = 1.0;
  write_semicircle_csv(rep, "sc_tmp.csv");
  lines = read_lines("sc_tmp.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] ==
        "n,d,p,p1,sigma_theory,edge_max,ks_distance,dplus_sq,dminus_sq,"
        "theory_sq");
  CHECK(split_csv(lines[1]).size() == 10);
  std::remove("sc_tmp.csv");

  ExperimentConfig cfg;
  cfg.experiment = "constants";
  cfg.d = 2;
  cfg.p1_list = {0.3, 1.0};
  write_constants_csv(run_constants(cfg), cfg.p1_list, "ct_tmp.csv");
  lines = read_lines("ct_tmp.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] ==
        "d,c,c1,lower_bound,upper_bound,p_c,p_c_at_0.3,p_c_at_1,method,"
        "mc_samples,mc_stderr");
  const auto cf = split_csv(lines[1]);
  REQUIRE(cf.size() == 11);
  CHECK(cf[8] == "closed_form");
  std::remove("ct_tmp.csv");
}

TEST_CASE("trial seeds separate every cell and replay identically") {
  std::vector<std::uint64_t> seeds;
  for (int n : {10, 20})
    for (double p : {0.4, 0.5})
      for (const char* m : {"eig", "lud"})
        for (int t : {0, 1}) {
          seeds.push_back(trial_seed(42, n, p, 1.0, 0.0, false, m, t));
          seeds.push_back(trial_seed(42, n, p, 1.0, 0.0, true, m, t));
          seeds.push_back(trial_seed(43, n, p, 1.0, 0.0, false, m, t));
        }
  std::sort(seeds.begin(), seeds.end());
  CHECK(std::adjacent_find(seeds.begin(), seeds.end()) == seeds.end());
  CHECK(trial_seed(42, 10, 0.4, 1.0, 0.0, false, "eig", 0) ==
        trial_seed(42, 10, 0.4, 1.0, 0.0, false, "eig", 0));
}

TEST_CASE("grid_range is inclusive and validates its step") {
  const auto g = grid_range(0.05, 0.95, 0.05);
  REQUIRE(g.size() == 19);
  CHECK(g.front() == 0.05);
  CHECK(std::abs(g.back() - 0.95) <= 1e-12);
  CHECK(grid_range(0.5, 0.5, 0.1).size() == 1);
  CHECK_THROWS_AS(grid_range(0.0, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("any_nonconverged scans the flag") {
  std::vector<ExperimentRecord> recs(2);
  CHECK(!any_nonconverged(recs));
  recs[1].converged = false;
  CHECK(any_nonconverged(recs));
}

TEST_CASE("per-iteration trace only applies to single-cell runs") {
  ExperimentConfig cfg;
  cfg.experiment = "e1";
  cfg.n = 10;
  cfg.p_list = {1.0};
  cfg.methods = {"lud"};
  cfg.trials = 1;
  cfg.solver.trace_path = "exp_trace_tmp.csv";
  run_e1(cfg);
  CHECK(std::ifstream("exp_trace_tmp.csv").good());
  std::remove("exp_trace_tmp.csv");

  cfg.trials = 2;
  run_e1(cfg);
  CHECK(!std::ifstream("exp_trace_tmp.csv").good());
}

TEST_CASE("command line drives the full pipeline") {
  CHECK(run_cli("e1 --n 10 --d 2 --methods eig --p 0.7 --trials 1 --seed 5 "
                "--out cli_e1_tmp.csv") == 0);
  auto lines = read_lines("cli_e1_tmp.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == kRecordsHeader);
  const auto f = split_csv(lines[1]);
  REQUIRE(f.size() == 14);
  CHECK(std::stoull(f[9]) == trial_seed(5, 10, 0.7, 1.0, 0.0, false, "eig", 0));
  std::remove("cli_e1_tmp.csv");

  // Flat config file; flags override file values.
  {
    std::ofstream conf("cli_cfg_tmp.conf");
    conf << "# tiny smoke config\n"
         << "n = 10\n"
         << "methods = eig\n"
         << "trials = 1\n"
         << "p = 0.7\n"
         << "seed = 5\n"
         << "out = cli_cfg_tmp.csv\n";
  }
  CHECK(run_cli("e1 --config cli_cfg_tmp.conf") == 0);
  lines = read_lines("cli_cfg_tmp.csv");
  REQUIRE(lines.size() == 2);
  CHECK(std::stoull(split_csv(lines[1])[9]) ==
        trial_seed(5, 10, 0.7, 1.0, 0.0, false, "eig", 0));

  CHECK(run_cli("e1 --config cli_cfg_tmp.conf --n 12") == 0);
  lines = read_lines("cli_cfg_tmp.csv");
  REQUIRE(lines.size() == 2);
  CHECK(std::stoull(split_csv(lines[1])[9]) ==
        trial_seed(5, 12, 0.7, 1.0, 0.0, false, "eig", 0));
  std::remove("cli_cfg_tmp.conf");
  std::remove("cli_cfg_tmp.csv");

  // Config errors exit 2: unknown method, missing config file, bad kappa.
  CHECK(run_cli("e1 --n 10 --methods bogus --trials 1 --out cli_x_tmp.csv") ==
        2);
  CHECK(run_cli("e1 --config no_such_file.conf") == 2);
  CHECK(run_cli("e2 --n 10 --methods eig --trials 1 --out cli_x_tmp.csv") == 2);

  // Unconverged solver cells exit 3 but still write rows.
  CHECK(run_cli("e1 --n 12 --methods lud --p 0.5 --trials 1 --seed 5 "
                "--max-iter 3 --out cli_mi_tmp.csv") == 3);
  lines = read_lines("cli_mi_tmp.csv");
  REQUIRE(lines.size() == 2);
  std::remove("cli_mi_tmp.csv");

  // E3 writes its two side files next to the records.
  CHECK(run_cli("e3 --n 10 --methods lud --p 0.8 --p 0.9 --p1 1.0 --trials 1 "
                "--seed 3 --out cli_e3_tmp.csv") == 0);
  CHECK(read_lines("cli_e3_tmp.csv").size() == 3);
  lines = read_lines("cli_e3_tmp.heatmap.csv");
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "p1,p,mean_log10_mse");
  lines = read_lines("cli_e3_tmp.pc_curve.csv");
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "p1,p_c");
  std::remove("cli_e3_tmp.csv");
  std::remove("cli_e3_tmp.heatmap.csv");
  std::remove("cli_e3_tmp.pc_curve.csv");
}
