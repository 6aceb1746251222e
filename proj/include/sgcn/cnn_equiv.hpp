#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sgcn/tensor.hpp"

// Constructive equivalence between 2-D image convolution and the gated
// neighborhood aggregation on a pixel-grid graph: any odd-sized filter can be
// reproduced exactly as a weighted combination of aggregations that share one
// direction vector u and sweep a bias over the ordered filter offsets.

namespace sgcn {

struct Conv2dFilter {
  Tensor coefficients;  // (2r+1) x (2r+1), offset (i', j') at [i'+r, j'+r]

  int radius() const;
  static Conv2dFilter from_data(int radius, std::vector<double> coeffs);
};

/// g[i,j] = sum over in-bounds offsets of f[i',j'] * h[i+i', j+j'];
/// out-of-bounds taps are dropped, so the output matches the image extent.
Tensor conv2d_oracle(const Conv2dFilter& filter, const Tensor& image);

struct CnnEquivalenceParams {
  Tensor u;  // length 2
  std::vector<std::array<std::int64_t, 2>> offsets;  // sorted by decreasing u.p
  std::vector<double> biases;
  std::vector<double> weights;
};

/// u = (1, 2r+1): u.p = i' + (2r+1) j' is injective over the offset square,
/// so it orders the offsets strictly.
Tensor choose_u(int radius);

/// Offsets sorted by decreasing u.p, biases at the midpoints between
/// consecutive u.p values (last one past the end), and combination weights
/// from the triangular system that matches the filter coefficients.
CnnEquivalenceParams equivalence_params(const Conv2dFilter& filter);

/// Runs the aggregation once per bias on the grid graph of the image and
/// combines with the recovered weights; equals conv2d_oracle to ~1e-12.
Tensor sgcn_emulate_conv(const Conv2dFilter& filter, const Tensor& image);

struct EquivalenceReport {
  int trials = 0;
  double worst_deviation = 0.0;
  bool pass = false;
};

/// Random (image, filter) pairs with sides in [5, 28] and radius in
/// [0, max_radius], each checked against the oracle at `tol`.
EquivalenceReport verify_equivalence(int trials, int max_radius, std::uint64_t seed,
                                     double tol = 1e-9);

}  // namespace sgcn
