#include "rotsync/measurements.hpp"

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "rotsync/so_group.hpp"

namespace rotsync {

namespace {

constexpr std::uint64_t kNodeDomain = 0x6e6f6465ull;  // "node"
constexpr std::uint64_t kEdgeDomain = 0x65646765ull;  // "edge"

// Linear index of the pair (i, j), i < j, in row-major upper-triangle order.
inline std::uint64_t pair_index(int n, int i, int j) {
  return std::uint64_t(i) * n - std::uint64_t(i) * (i + 1) / 2 +
         std::uint64_t(j - i - 1);
}

void append_fmt(std::string& s, const char* fmt, ...) {
  char buf[64];
  va_list ap;
  va_start(ap, fmt);
  vsnprintf(buf, sizeof(buf), fmt, ap);
  va_end(ap);
  s += buf;
}

}  // namespace

MeasurementGraph generate(int n, int d, double p1, double p, double kappa,
                          std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("generate: n must be >= 2");
  if (d < 2) throw std::invalid_argument("generate: d must be >= 2");
  if (!(p1 > 0.0 && p1 <= 1.0))
    throw std::invalid_argument("generate: p1 must be in (0, 1]");
  if (!(p >= 0.0 && p <= 1.0))
    throw std::invalid_argument("generate: p must be in [0, 1]");
  if (kappa < 0.0) throw std::invalid_argument("generate: kappa must be >= 0");

  MeasurementGraph g;
  g.n = n;
  g.d = d;
  g.p1 = p1;
  g.p = p;
  g.kappa = kappa;
  g.seed = seed;
  if (p1 < 2.0 * std::log(double(n)) / double(n)) {
    g.warnings.push_back(
        "p1 below 2 ln(n)/n: the graph is likely disconnected");
  }

  RandomStream root(seed);
  g.truth.resize(d, n * d);
  for (int i = 0; i < n; ++i) {
    RandomStream node = root.split(kNodeDomain, i);
    g.truth.block(0, i * d, d, d) = sample_haar(d, node);
  }

  // Pass 1 counts included edges; pass 2 re-derives the identical per-edge
  // stream (split is keyed off the base seed, not stream state) and fills.
  std::uint64_t m = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      RandomStream e = root.split(kEdgeDomain, pair_index(n, i, j));
      if (e.bernoulli(p1)) ++m;
    }

  g.edges.reserve(m);
  g.good.reserve(m);
  g.ratios.resize(d, Eigen::Index(m) * d);
  Eigen::Index col = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      RandomStream e = root.split(kEdgeDomain, pair_index(n, i, j));
      if (!e.bernoulli(p1)) continue;
      const bool good = e.bernoulli(p);
      g.edges.emplace_back(i, j);
      g.good.push_back(good ? 1 : 0);
      if (good) {
        const Eigen::MatrixXd ratio = g.truth.block(0, i * d, d, d).transpose() *
                                      g.truth.block(0, j * d, d, d);
        g.ratios.block(0, col, d, d) =
            kappa > 0.0 ? sample_vmf(ratio, kappa, e) : ratio;
      } else {
        g.ratios.block(0, col, d, d) = sample_haar(d, e);
      }
      col += d;
    }
  return g;
}

MeasurementGraph canonicalize_to_identity(const MeasurementGraph& g) {
  if (!g.has_truth())
    throw std::invalid_argument("canonicalize_to_identity: truth unknown");
  MeasurementGraph out = g;
  const int d = g.d;
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto [i, j] = g.edges[e];
    out.ratios.block(0, e * d, d, d) = g.truth_rotation(i) * g.ratio(e) *
                                       g.truth_rotation(j).transpose();
  }
  for (int i = 0; i < g.n; ++i)
    out.truth.block(0, i * d, d, d) = Eigen::MatrixXd::Identity(d, d);
  return out;
}

MeasurementGraph conjugate(const MeasurementGraph& g,
                           const Eigen::Ref<const Eigen::MatrixXd>& stacked_s) {
  const int d = g.d;
  if (stacked_s.rows() != d || stacked_s.cols() != Eigen::Index(g.n) * d)
    throw std::invalid_argument("conjugate: expected a d x n*d rotation stack");
  MeasurementGraph out = g;
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto [i, j] = g.edges[e];
    out.ratios.block(0, e * d, d, d) =
        stacked_s.block(0, i * d, d, d).transpose() * g.ratio(e) *
        stacked_s.block(0, j * d, d, d);
  }
  if (g.has_truth()) {
    for (int i = 0; i < g.n; ++i)
      out.truth.block(0, i * d, d, d) =
          g.truth_rotation(i) * stacked_s.block(0, i * d, d, d);
  }
  return out;
}

void write_graph(const MeasurementGraph& g, std::ostream& out) {
  std::string buf;
  buf.reserve(64 + std::size_t(g.edge_count()) * (16 + 20 * g.d * g.d));
  append_fmt(buf, "%d %d ", g.n, g.d);
  append_fmt(buf, "%.17g %.17g %.17g ", g.p1, g.p, g.kappa);
  append_fmt(buf, "%llu\n", static_cast<unsigned long long>(g.seed));
  const int d = g.d;
  for (int e = 0; e < g.edge_count(); ++e) {
    append_fmt(buf, "%d %d", g.edges[e].first, g.edges[e].second);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) append_fmt(buf, " %.17g", g.ratios(r, e * d + c));
    buf += '\n';
  }
  if (g.has_truth()) {
    buf += "#truth\n";
    for (int i = 0; i < g.n; ++i) {
      append_fmt(buf, "%d", i);
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) append_fmt(buf, " %.17g", g.truth(r, i * d + c));
      buf += '\n';
    }
  }
  out << buf;
}

MeasurementGraph read_graph(std::istream& in) {
  MeasurementGraph g;
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("read_graph: empty input");
  {
    std::istringstream h(line);
    unsigned long long seed = 0;
    if (!(h >> g.n >> g.d >> g.p1 >> g.p >> g.kappa >> seed))
      throw std::runtime_error("read_graph: malformed header");
    g.seed = seed;
  }
  if (g.n < 1 || g.d < 1) throw std::runtime_error("read_graph: bad dimensions");
  const int d = g.d;
  std::vector<double> edge_vals;
  bool in_truth = false;
  std::vector<int> truth_seen;
  g.truth.resize(0, 0);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "#truth") {
      in_truth = true;
      g.truth = Eigen::MatrixXd::Zero(d, Eigen::Index(g.n) * d);
      truth_seen.assign(g.n, 0);
      continue;
    }
    std::istringstream ls(line);
    if (!in_truth) {
      int i = 0, j = 0;
      if (!(ls >> i >> j)) throw std::runtime_error("read_graph: bad edge line");
      if (i < 0 || j <= i || j >= g.n)
        throw std::runtime_error("read_graph: edge endpoints out of range");
      g.edges.emplace_back(i, j);
      for (int k = 0; k < d * d; ++k) {
        double v = 0;
        if (!(ls >> v)) throw std::runtime_error("read_graph: short edge block");
        edge_vals.push_back(v);
      }
    } else {
      int i = 0;
      if (!(ls >> i)) throw std::runtime_error("read_graph: bad truth line");
      if (i < 0 || i >= g.n)
        throw std::runtime_error("read_graph: truth index out of range");
      truth_seen[i] = 1;
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) {
          double v = 0;
          if (!(ls >> v)) throw std::runtime_error("read_graph: short truth block");
          g.truth(r, Eigen::Index(i) * d + c) = v;
        }
    }
  }
  if (in_truth)
    for (int i = 0; i < g.n; ++i)
      if (!truth_seen[i]) throw std::runtime_error("read_graph: missing truth row");
  const Eigen::Index m = Eigen::Index(g.edges.size());
  g.ratios.resize(d, m * d);
  std::size_t k = 0;
  for (Eigen::Index e = 0; e < m; ++e)
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) g.ratios(r, e * d + c) = edge_vals[k++];
  return g;
}

void write_graph_file(const MeasurementGraph& g, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_graph_file: cannot open " + path);
  write_graph(g, f);
}

MeasurementGraph read_graph_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_graph_file: cannot open " + path);
  return read_graph(f);
}

Eigen::MatrixXd true_gram(const MeasurementGraph& g) {
  if (!g.has_truth()) throw std::invalid_argument("true_gram: truth unknown");
  const int d = g.d;
  Eigen::MatrixXd T(Eigen::Index(g.n) * d, d);  // stacked R_i^T
  for (int i = 0; i < g.n; ++i)
    T.block(Eigen::Index(i) * d, 0, d, d) = g.truth_rotation(i).transpose();
  return T * T.transpose();
}

bool is_connected(const MeasurementGraph& g) {
  if (g.n <= 1) return true;
  std::vector<std::vector<int>> adj(g.n);
  for (const auto& [i, j] : g.edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  std::vector<std::uint8_t> seen(g.n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
  }
  return count == g.n;
}

}  // namespace rotsync
