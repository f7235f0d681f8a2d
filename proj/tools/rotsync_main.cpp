#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rotsync/experiments.hpp"

namespace {

struct CliOptions {
  rotsync::ExperimentConfig cfg;
  double grid_step = 0.05;
  std::string config_path;
  CLI::Option* p_opt = nullptr;
  CLI::Option* p1_opt = nullptr;
};

void add_common_options(CLI::App* sub, CliOptions& o) {
  sub->add_option("--config", o.config_path,
                  "flat key=value file mirroring the flags (flags win)");
  sub->add_option("--d", o.cfg.d, "rotation dimension")->capture_default_str();
  sub->add_option("--n", o.cfg.n, "number of nodes")->capture_default_str();
  o.p_opt = sub->add_option("--p", o.cfg.p_list, "good-edge probabilities")
                ->delimiter(',');
  o.p1_opt = sub->add_option("--p1", o.cfg.p1_list, "edge observation probabilities")
                 ->delimiter(',');
  sub->add_option("--kappa", o.cfg.kappa_list, "vMF concentrations (empty = exact)")
      ->delimiter(',');
  sub->add_option("--methods", o.cfg.methods, "subset of eig,sdp,lud")
      ->delimiter(',')
      ->capture_default_str();
  sub->add_option("--trials", o.cfg.trials, "trials per cell")
      ->capture_default_str();
  sub->add_option("--seed", o.cfg.seed, "master seed")->capture_default_str();
  sub->add_option("--out", o.cfg.out_path, "output CSV path")
      ->capture_default_str();
  sub->add_option("--solver-tol", o.cfg.solver.tol, "ADM stopping tolerance")
      ->capture_default_str();
  sub->add_option("--max-iter", o.cfg.solver.max_iter, "ADM iteration cap")
      ->capture_default_str();
  sub->add_option("--gamma", o.cfg.solver.gamma, "ADM step length")
      ->capture_default_str();
  sub->add_option("--mu", o.cfg.solver.mu, "initial penalty parameter")
      ->capture_default_str();
  sub->add_flag("--mu-adapt,!--no-mu-adapt", o.cfg.solver.mu_adapt,
                "residual-balancing penalty updates");
  sub->add_option("--threads", o.cfg.threads, "worker threads (0 = auto)")
      ->capture_default_str();
  sub->add_option("--trace", o.cfg.solver.trace_path,
                  "per-iteration solver CSV (single-cell runs only)");
  sub->add_option("--grid-step", o.grid_step,
                  "step of the default e3/e4 p and p1 grids")
      ->capture_default_str();
  sub->add_option("--mc-samples", o.cfg.mc_samples,
                  "Monte Carlo samples for c(d), d >= 4")
      ->capture_default_str();
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// key = value lines, # or ; comments, blank lines allowed.
std::vector<std::pair<std::string, std::string>> read_flat_config(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (val.size() >= 2 && (val.front() == '"' || val.front() == '\'') &&
        val.back() == val.front())
      val = val.substr(1, val.size() - 2);
    if (key.empty())
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": empty key");
    kv.emplace_back(std::move(key), std::move(val));
  }
  return kv;
}

std::string side_path(const std::string& out, const std::string& suffix) {
  std::string stem = out;
  if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".csv")
    stem.resize(stem.size() - 4);
  return stem + suffix;
}

int run(const CliOptions& o) {
  using namespace rotsync;
  const ExperimentConfig& cfg = o.cfg;
  if (cfg.experiment == "e1" || cfg.experiment == "e2") {
    const auto records = cfg.experiment == "e1" ? run_e1(cfg) : run_e2(cfg);
    write_records_csv(records, cfg.out_path);
    std::cout << "wrote " << records.size() << " records to " << cfg.out_path
              << "\n";
    return any_nonconverged(records) ? 3 : 0;
  }
  if (cfg.experiment == "e3" || cfg.experiment == "e4") {
    const E3Output out = run_e3_e4(cfg);
    write_records_csv(out.records, cfg.out_path);
    std::cout << "wrote " << out.records.size() << " records to "
              << cfg.out_path << "\n";
    if (cfg.experiment == "e3") {
      const std::string hm = side_path(cfg.out_path, ".heatmap.csv");
      const std::string pc = side_path(cfg.out_path, ".pc_curve.csv");
      write_heatmap_csv(out.heatmap, hm);
      write_curve_csv(out.curve, pc);
      std::cout << "wrote heatmap to " << hm << " and theory curve to " << pc
                << "\n";
    }
    return any_nonconverged(out.records) ? 3 : 0;
  }
  if (cfg.experiment == "semicircle") {
    const SemicircleReport rep = run_semicircle(cfg);
    write_semicircle_csv(rep, cfg.out_path);
    printf("n=%d d=%d p=%g\n", rep.n, rep.d, rep.p);
    printf("  support edge: 2 sigma = %.6f, observed max = %.6f\n",
           2.0 * rep.sigma_theory, rep.edge_max);
    printf("  KS distance to semicircle: %.6f\n", rep.ks_distance);
    printf("  ||D+||^2 = %.4g, ||D-||^2 = %.4g, theory %.4g\n", rep.dplus_sq,
           rep.dminus_sq, rep.theory_sq);
    return 0;
  }
  // constants
  const auto rows = run_constants(cfg);
  write_constants_csv(rows, cfg.p1_list, cfg.out_path);
  printf("%3s %10s %10s %10s %10s %10s\n", "d", "c", "c1", "lower", "upper",
         "p_c");
  for (const auto& r : rows)
    printf("%3d %10.6f %10.6f %10.6f %10.6f %10.6f%s\n", r.d, r.c, r.c1,
           r.lower, r.upper, r.p_c, r.monte_carlo ? "  (MC)" : "");
  std::cout << "wrote table to " << cfg.out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rotation synchronization experiments"};
  app.require_subcommand(1);

  const std::vector<std::string> names = {"e1",        "e2",         "e3", "e4",
                                          "semicircle", "constants"};
  const std::vector<std::string> descs = {
      "exact recovery sweep over p",
      "stability sweep over p and kappa",
      "phase transition grid over (p1, p)",
      "noisy phase transition grid over (p1, p, kappa)",
      "spectral diagnostic of the outlier matrix",
      "theory constants table"};
  std::vector<CliOptions> opts(names.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < names.size(); ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descs[i]);
    opts[i].cfg.experiment = names[i];
    add_common_options(sub, opts[i]);
    subs.push_back(sub);
  }

  const std::vector<std::string> args(argv + 1, argv + argc);
  auto parse = [&](const std::vector<std::string>& a) {
    std::vector<std::string> reversed(a.rbegin(), a.rend());
    app.parse(std::move(reversed));
  };
  try {
    parse(args);
    std::size_t idx = names.size();
    for (std::size_t i = 0; i < subs.size(); ++i)
      if (subs[i]->parsed()) idx = i;
    if (idx == names.size()) return 2;

    if (!opts[idx].config_path.empty()) {
      // Values from the file fill in only what the command line left unset;
      // injecting them before the original flags and reparsing keeps all of
      // CLI11's conversion and validation in one place.
      std::vector<std::string> merged{names[idx]};
      for (const auto& [key, val] : read_flat_config(opts[idx].config_path)) {
        CLI::Option* op = subs[idx]->get_option_no_throw("--" + key);
        if (op == nullptr)
          throw std::invalid_argument("unknown config key '" + key + "'");
        if (op->count() > 0) continue;
        merged.push_back("--" + key + "=" + val);
      }
      for (std::size_t k = 1; k < args.size(); ++k) merged.push_back(args[k]);
      parse(merged);
    }

    CliOptions& o = opts[idx];
    const bool grid = names[idx] == "e3" || names[idx] == "e4";
    if (grid && o.p_opt->count() == 0)
      o.cfg.p_list = rotsync::grid_range(0.05, 0.95, o.grid_step);
    if (grid && o.p1_opt->count() == 0)
      o.cfg.p1_list = rotsync::grid_range(0.05, 1.0, o.grid_step);
    return run(o);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
