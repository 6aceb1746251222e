#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "sgcn/graph.hpp"
#include "sgcn/tensor.hpp"

// The position-gated graph convolution layer. One filter aggregates each
// node's neighborhood with a gate that is a learned ReLU-affine function of
// the relative position p_j - p_i; k filters are concatenated and pushed
// through a one-affine ReLU transform. Zeroing the positions collapses the
// gate to ReLU(b), which recovers a plain graph convolution.

namespace sgcn {

enum class LayerMode { Spatial, Vanilla, PosConcat };

std::string to_string(LayerMode mode);
LayerMode layer_mode_from_string(const std::string& s);

struct SgcnLayerParams {
  /// k pairs of (U: t x d_in, b: d_in) position gates.
  std::vector<std::pair<Tensor, Tensor>> filters;
  Tensor mlp_weight;  // (k * d_in) x d_out
  Tensor mlp_bias;    // d_out

  std::int64_t num_filters() const { return static_cast<std::int64_t>(filters.size()); }
  std::int64_t position_dim() const { return filters.at(0).first.shape()[0]; }
  std::int64_t input_dim() const { return filters.at(0).first.shape()[1]; }
  std::int64_t output_dim() const { return mlp_weight.shape()[1]; }
  void validate() const;

  /// Gates start open: U, W uniform scaled by 1/sqrt(fan-in), per-filter b
  /// at +0.5, transform bias zero.
  static SgcnLayerParams init(int t, int d_in, int d_out, int k, std::mt19937_64& rng);
};

/// Row i of the result is sum_{j in N_i} ReLU(U^T (p_j - p_i) + b) (.) h_j.
/// Differentiable in h, U and b; nodes with no neighbors yield zero rows.
Tensor spatial_aggregate(const GraphBatch& batch, const Tensor& h, const Tensor& u,
                         const Tensor& b);
Tensor spatial_aggregate(const SpatialGraph& graph, const Tensor& h, const Tensor& u,
                         const Tensor& b);

/// One full layer: per-filter aggregation (positions zeroed outside Spatial
/// mode), concatenation over filters, then ReLU(W^T . + bias).
Tensor layer_forward(const GraphBatch& batch, const Tensor& h, const SgcnLayerParams& params,
                     LayerMode mode);

/// Per-graph mean of that graph's node rows.
Tensor segment_mean(const GraphBatch& batch, const Tensor& h);

/// Stacked layers followed by the mean readout; positions pass through the
/// stack unchanged. PosConcat batches must already carry the coordinates in
/// their feature columns.
Tensor model_forward(const GraphBatch& batch, const std::vector<SgcnLayerParams>& layers,
                     LayerMode mode);

/// Layer stack plus a linear head applied after the readout; emits raw
/// scores (logits or regression values).
struct Model {
  std::vector<SgcnLayerParams> layers;
  LayerMode mode = LayerMode::Spatial;
  Tensor head_weight;  // d_last x d_out
  Tensor head_bias;    // d_out

  Tensor forward(const GraphBatch& batch) const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  Model clone() const;
  std::int64_t position_dim() const { return layers.at(0).position_dim(); }
  std::int64_t input_dim() const { return layers.at(0).input_dim(); }
  std::int64_t output_dim() const { return head_weight.shape()[1]; }
};

struct LayerSpec {
  int filters = 1;
  int d_out = 1;
};

Model make_model(int t, int d_in, const std::vector<LayerSpec>& specs, int head_out,
                 LayerMode mode, std::mt19937_64& rng);

// Checkpoint file: one JSON header line (dims, mode, filter counts, t)
// followed by raw little-endian 64-bit parameter blocks in declaration
// order.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace sgcn
