#include "sgcn/cnn_equiv.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "sgcn/graph.hpp"
#include "sgcn/kernels.hpp"
#include "sgcn/layer.hpp"

namespace sgcn {

int Conv2dFilter::radius() const {
  const std::int64_t side = coefficients.shape()[0];
  return static_cast<int>((side - 1) / 2);
}

Conv2dFilter Conv2dFilter::from_data(int radius, std::vector<double> coeffs) {
  const std::int64_t side = 2 * static_cast<std::int64_t>(radius) + 1;
  return {Tensor::from_data({side, side}, std::move(coeffs))};
}

Tensor conv2d_oracle(const Conv2dFilter& filter, const Tensor& image) {
  if (filter.coefficients.rank() != 2 ||
      filter.coefficients.shape()[0] != filter.coefficients.shape()[1] ||
      filter.coefficients.shape()[0] % 2 == 0)
    throw std::invalid_argument("conv2d_oracle: filter must be an odd square");
  if (image.rank() != 2) throw std::invalid_argument("conv2d_oracle: image must be 2-D");
  const std::int64_t rows = image.shape()[0], cols = image.shape()[1];
  Tensor out = Tensor::zeros({rows, cols});
  kernels::conv2d(image.data().data(), rows, cols, filter.coefficients.data().data(),
                  filter.radius(), out.mutable_data().data());
  return out;
}

Tensor choose_u(int radius) {
  if (radius < 0) throw std::invalid_argument("choose_u: radius must be >= 0");
  return Tensor::from_data({2}, {1.0, static_cast<double>(2 * radius + 1)});
}

CnnEquivalenceParams equivalence_params(const Conv2dFilter& filter) {
  const int r = filter.radius();
  CnnEquivalenceParams p;
  p.u = choose_u(r);
  const double u0 = p.u(0), u1 = p.u(1);

  for (std::int64_t i = -r; i <= r; ++i)
    for (std::int64_t j = -r; j <= r; ++j) p.offsets.push_back({i, j});
  auto dot = [&](const std::array<std::int64_t, 2>& q) {
    return u0 * static_cast<double>(q[0]) + u1 * static_cast<double>(q[1]);
  };
  std::sort(p.offsets.begin(), p.offsets.end(),
            [&](const auto& a, const auto& b) { return dot(a) > dot(b); });

  const std::size_t n = p.offsets.size();
  p.biases.resize(n);
  for (std::size_t i = 0; i + 1 < n; ++i)
    p.biases[i] = -(dot(p.offsets[i]) + dot(p.offsets[i + 1])) / 2.0;
  p.biases[n - 1] = -dot(p.offsets[n - 1]) + 1.0;

  // Filter coefficients in the same ordering.
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& q = p.offsets[i];
    f[i] = filter.coefficients(q[0] + r, q[1] + r);
  }

  // The m-th aggregation realizes sum_{i<=m} (u.p_i + b_m) F_i, all
  // coefficients strictly positive; recover w by back-substitution on the
  // upper-triangular system sum_{m>=i} (u.p_i + b_m) w_m = f_i.
  p.weights.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = f[i];
    for (std::size_t m = i + 1; m < n; ++m) acc -= (dot(p.offsets[i]) + p.biases[m]) * p.weights[m];
    const double diag = dot(p.offsets[i]) + p.biases[i];
    if (!(diag > 0.0))
      throw std::logic_error("equivalence_params: non-positive diagonal in triangular solve");
    p.weights[i] = acc / diag;
  }
  return p;
}

Tensor sgcn_emulate_conv(const Conv2dFilter& filter, const Tensor& image) {
  const int r = filter.radius();
  const std::int64_t rows = image.shape()[0], cols = image.shape()[1];
  const CnnEquivalenceParams p = equivalence_params(filter);

  SpatialGraph grid = build_grid_graph(image, r);
  GraphBatch batch = make_batch({grid});
  // Single shared gate direction as a t x 1 filter on the 1-d pixel feature.
  Tensor u_mat = Tensor::from_data({2, 1}, {p.u(0), p.u(1)});

  std::vector<double> acc(rows * cols, 0.0);
  for (std::size_t m = 0; m < p.biases.size(); ++m) {
    Tensor agg = spatial_aggregate(batch, grid.features, u_mat,
                                   Tensor::from_data({1}, {p.biases[m]}));
    const double w = p.weights[m];
    for (std::int64_t i = 0; i < rows * cols; ++i) acc[i] += w * agg.data()[i];
  }
  return Tensor::from_data({rows, cols}, std::move(acc));
}

EquivalenceReport verify_equivalence(int trials, int max_radius, std::uint64_t seed,
                                     double tol) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int64_t> side(5, 28);
  std::uniform_int_distribution<int> rad(0, max_radius);
  std::uniform_real_distribution<double> val(-1.0, 1.0);

  EquivalenceReport rep;
  rep.trials = trials;
  for (int trial = 0; trial < trials; ++trial) {
    const std::int64_t rows = side(rng), cols = side(rng);
    const int r = rad(rng);
    std::vector<double> img(rows * cols), f((2 * r + 1) * (2 * r + 1));
    for (auto& v : img) v = val(rng);
    for (auto& v : f) v = val(rng);
    Tensor image = Tensor::from_data({rows, cols}, std::move(img));
    Conv2dFilter filter = Conv2dFilter::from_data(r, std::move(f));

    Tensor expect = conv2d_oracle(filter, image);
    Tensor got = sgcn_emulate_conv(filter, image);
    for (std::int64_t i = 0; i < expect.numel(); ++i)
      rep.worst_deviation =
          std::max(rep.worst_deviation, std::abs(expect.data()[i] - got.data()[i]));
  }
  rep.pass = rep.worst_deviation <= tol;
  return rep;
}

}  // namespace sgcn
