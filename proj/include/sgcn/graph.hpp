#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "sgcn/tensor.hpp"

// Spatial graphs: node features, node positions and a neighbor structure.
// Graphs are immutable after construction and cheap to copy (features,
// positions and the adjacency are shared).

namespace sgcn {

using AdjacencyList = std::vector<std::vector<std::int32_t>>;

/// Flat adjacency: edges of node i live in indices[offsets[i]..offsets[i+1]).
struct Csr {
  std::vector<std::int64_t> offsets;
  std::vector<std::int32_t> indices;
  std::int64_t num_nodes() const { return static_cast<std::int64_t>(offsets.size()) - 1; }
  std::int64_t num_edges() const { return static_cast<std::int64_t>(indices.size()); }
};

struct SpatialGraph {
  Tensor features;   // n x d
  Tensor positions;  // n x t, t in {2, 3}
  std::shared_ptr<const AdjacencyList> adjacency;
  std::optional<double> label;
  bool undirected = true;
  // False when the source data carried no coordinates; positions are then a
  // zero matrix and only position-blind modes are meaningful.
  bool has_positions = true;

  std::int64_t num_nodes() const { return features.shape()[0]; }
  std::int64_t feature_dim() const { return features.shape()[1]; }
  std::int64_t position_dim() const { return positions.shape()[1]; }
  std::int64_t num_edges() const;

  /// Enforces the structural invariants; throws on violation.
  void validate() const;
};

/// Graphs packed block-diagonally: node rows concatenated, neighbor indices
/// shifted, plus a segment map from node row to graph id. A reverse
/// adjacency (incoming edge sources grouped by target) is prebuilt for
/// backward passes. Adjacency is shared, so copies are cheap.
///
/// Summation orders are canonicalized by node position (lexicographic), not
/// node index: neighbor lists iterate position-sorted and the readout
/// reduces each graph's rows through `reduce_order`. Relabeling the nodes of
/// a graph therefore reproduces every sum bit for bit, which is what makes
/// permutation invariance exact rather than approximate.
struct GraphBatch {
  Tensor features;   // N x d
  Tensor positions;  // N x t
  std::shared_ptr<const Csr> adjacency;
  std::shared_ptr<const Csr> reverse;
  std::vector<std::int32_t> segments;       // node row -> graph id, non-decreasing
  std::vector<std::int64_t> graph_offsets;  // G+1, first node row per graph
  std::vector<std::int32_t> reduce_order;   // rows grouped by graph, position-sorted
  std::vector<double> labels;               // per graph, NaN when absent
  bool has_positions = true;

  std::int64_t num_nodes() const { return features.shape()[0]; }
  std::int64_t num_graphs() const {
    return static_cast<std::int64_t>(graph_offsets.size()) - 1;
  }
  std::int64_t num_edges() const { return adjacency->num_edges(); }
};

/// One node per pixel with intensity as its single feature and (row, col) as
/// its position; neighbors are all in-bounds pixels within Chebyshev distance
/// `radius`, the pixel itself included. Adjacency and position templates are
/// memoized per image size, so repeated builds share them.
SpatialGraph build_grid_graph(const Tensor& image, int radius);

/// Connects each point to its k nearest neighbors by Euclidean distance
/// (self excluded, ties broken toward the lower index), then symmetrizes by
/// edge union.
SpatialGraph knn_graph(const Tensor& points, const Tensor& features, int k);

GraphBatch make_batch(const std::vector<SpatialGraph>& graphs);

/// Inverse of make_batch.
std::vector<SpatialGraph> split_batch(const GraphBatch& batch);

/// In-edge sources grouped by target node.
Csr reverse_csr(const Csr& adjacency);

}  // namespace sgcn
