#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "rotsync/random.hpp"

namespace rotsync {

// Pairwise ratio measurements on an Erdos-Renyi graph. Edge e = (i, j) with
// i < j carries a d x d block: the true ratio R_i^T R_j (possibly perturbed
// by vMF noise with concentration kappa) with probability p, and a Haar
// outlier otherwise. Blocks are stored side by side in `ratios`
// (d x m*d, block e at columns [e*d, (e+1)*d)). `truth` stores the absolute
// rotations the same way when known.
struct MeasurementGraph {
  int n = 0;
  int d = 0;
  double p1 = 1.0;
  double p = 1.0;
  double kappa = 0.0;  // 0 means good edges are exact
  std::uint64_t seed = 0;
  std::vector<std::pair<int, int>> edges;
  Eigen::MatrixXd ratios;
  std::vector<std::uint8_t> good;  // generation labels; empty when unknown
  Eigen::MatrixXd truth;           // d x n*d; empty when unknown
  std::vector<std::string> warnings;

  int edge_count() const { return int(edges.size()); }
  bool has_truth() const { return truth.size() > 0; }

  Eigen::Block<const Eigen::MatrixXd> ratio(int e) const {
    return ratios.block(0, e * d, d, d);
  }
  Eigen::Block<const Eigen::MatrixXd> truth_rotation(int i) const {
    return truth.block(0, i * d, d, d);
  }
};

// Samples truth, the edge set, and the measurement blocks, all from
// per-node / per-edge streams split off `seed` so results are independent
// of traversal order. kappa = 0 leaves good edges exact. Warns (does not
// fail) when p1 < 2 ln(n)/n, below the connectivity regime.
MeasurementGraph generate(int n, int d, double p1, double p, double kappa,
                          std::uint64_t seed);

// Gauge change sending the truth to the identity: each block becomes
// R_i * R_ij * R_j^T, so good edges turn into (noisy) identities.
MeasurementGraph canonicalize_to_identity(const MeasurementGraph& g);

// Conjugates blocks by an arbitrary rotation list: block (i,j) becomes
// S_i^T * R_ij * S_j, truth R_i -> R_i S_i. Inverse of the above when
// called with the original truth.
MeasurementGraph conjugate(const MeasurementGraph& g,
                           const Eigen::Ref<const Eigen::MatrixXd>& stacked_s);

// Plain-text format: one header line `n d p1 p kappa seed`, one line per
// edge `i j <d*d row-major entries>`, then an optional `#truth` sentinel
// followed by `i <d*d entries>` per node. Values are printed with 17
// significant digits so write -> read -> write is byte-identical. The
// generation labels (`good`) are not part of the format and do not survive
// a round trip.
void write_graph(const MeasurementGraph& g, std::ostream& out);
MeasurementGraph read_graph(std::istream& in);
void write_graph_file(const MeasurementGraph& g, const std::string& path);
MeasurementGraph read_graph_file(const std::string& path);

// nd x nd Gram matrix of the truth, blocks R_i^T R_j.
Eigen::MatrixXd true_gram(const MeasurementGraph& g);

bool is_connected(const MeasurementGraph& g);

}  // namespace rotsync
