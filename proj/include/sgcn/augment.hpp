#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "sgcn/graph.hpp"
#include "sgcn/layer.hpp"
#include "sgcn/tensor.hpp"

// Geometric data augmentation: random rotations, whole-graph translations and
// sampling from a pool of alternative geometries (conformers) that share the
// graph's topology. Augmentation only ever touches positions.

namespace sgcn {

struct AugmentPolicy {
  bool rotate = false;
  int rotation_dim = 2;          // must match the graph's t
  double translate_sigma = 0.0;  // whole-graph Gaussian shift; model-neutral
  int conformer_pool_size = 0;   // 0 = keep the stored geometry
  int test_time_samples = 1;

  bool active() const { return rotate || translate_sigma > 0.0 || conformer_pool_size > 0; }
};

/// Alternative position matrices (n x t each) for one graph.
struct ConformerPool {
  std::vector<Tensor> conformers;
};

/// Positions are snapped to multiples of 2^-20 at ingestion and translation
/// offsets are snapped the same way, which keeps whole-graph translation an
/// exact no-op for the relative-position gates (sums and differences of the
/// snapped grid never round). ~1e-6 resolution, far below any coordinate
/// precision in play.
double snap_coordinate(double x);
Tensor snap_positions(const Tensor& positions);

/// Positions replaced by positions * R^T; features and adjacency untouched.
/// R must be orthonormal with det +1 (checked to 1e-10).
SpatialGraph rotate(const SpatialGraph& graph, const Tensor& rotation);

/// 2-D: uniform angle. 3-D: uniform over rotations via a normalized
/// quaternion of four standard normals.
Tensor sample_rotation(int dim, std::mt19937_64& rng);

/// Per graph independently: pick one of the first C pool conformers, apply a
/// sampled rotation, then a sampled whole-graph translation — each step only
/// if the policy enables it. `pools` may be null when no pool sampling is on.
GraphBatch augment_batch(const GraphBatch& batch, const AugmentPolicy& policy,
                         const std::vector<ConformerPool>* pools, std::mt19937_64& rng);

/// Mean of the model's raw outputs over `samples` independently augmented
/// copies of the graph.
Tensor test_time_predict(const Model& model, const SpatialGraph& graph,
                         const AugmentPolicy& policy, int samples, std::mt19937_64& rng,
                         const ConformerPool* pool = nullptr);

// Conformer pool file: per molecule a header line `id n C` followed by C
// blocks of n whitespace-separated x y z lines.
struct ConformerRecord {
  std::string id;
  ConformerPool pool;
};
std::vector<ConformerRecord> read_conformer_pools(const std::string& path);
void write_conformer_pools(const std::string& path, const std::vector<ConformerRecord>& records);

}  // namespace sgcn
