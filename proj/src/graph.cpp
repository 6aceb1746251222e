#include "sgcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <stdexcept>

namespace sgcn {

std::int64_t SpatialGraph::num_edges() const {
  std::int64_t e = 0;
  for (const auto& n : *adjacency) e += static_cast<std::int64_t>(n.size());
  return e;
}

void SpatialGraph::validate() const {
  const std::int64_t n = num_nodes();
  if (positions.shape()[0] != n)
    throw std::invalid_argument("graph: positions row count does not match node count");
  if (static_cast<std::int64_t>(adjacency->size()) != n)
    throw std::invalid_argument("graph: adjacency size does not match node count");
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& nb = (*adjacency)[i];
    for (std::size_t k = 0; k < nb.size(); ++k) {
      if (nb[k] < 0 || nb[k] >= n)
        throw std::invalid_argument("graph: neighbor index out of range");
      if (k > 0 && nb[k] <= nb[k - 1])
        throw std::invalid_argument("graph: neighbor list not sorted/unique at node " +
                                    std::to_string(i));
    }
  }
  if (undirected) {
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int32_t j : (*adjacency)[i]) {
        const auto& back = (*adjacency)[j];
        if (!std::binary_search(back.begin(), back.end(), static_cast<std::int32_t>(i)))
          throw std::invalid_argument("graph: flagged undirected but edge " +
                                      std::to_string(i) + "->" + std::to_string(j) +
                                      " has no reverse");
      }
  }
}

namespace {

struct GridKey {
  std::int64_t rows, cols;
  int radius;
  auto operator<=>(const GridKey&) const = default;
};

// Shared adjacency/position templates keyed by grid size. All 28x28 graphs of
// an image dataset reuse one instance.
std::shared_ptr<const AdjacencyList> grid_adjacency(std::int64_t rows, std::int64_t cols,
                                                    int radius) {
  static std::mutex mu;
  static std::map<GridKey, std::shared_ptr<const AdjacencyList>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{rows, cols, radius}];
  if (!slot) {
    auto adj = std::make_shared<AdjacencyList>(rows * cols);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) {
        auto& nb = (*adj)[r * cols + c];
        for (std::int64_t dr = -radius; dr <= radius; ++dr) {
          const std::int64_t rr = r + dr;
          if (rr < 0 || rr >= rows) continue;
          for (std::int64_t dc = -radius; dc <= radius; ++dc) {
            const std::int64_t cc = c + dc;
            if (cc < 0 || cc >= cols) continue;
            nb.push_back(static_cast<std::int32_t>(rr * cols + cc));
          }
        }
        // row-major enumeration is already sorted
      }
    slot = std::move(adj);
  }
  return slot;
}

Tensor grid_positions(std::int64_t rows, std::int64_t cols) {
  static std::mutex mu;
  static std::map<std::pair<std::int64_t, std::int64_t>, Tensor> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{rows, cols}];
  if (!slot.defined()) {
    std::vector<double> p(rows * cols * 2);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) {
        p[(r * cols + c) * 2 + 0] = static_cast<double>(r);
        p[(r * cols + c) * 2 + 1] = static_cast<double>(c);
      }
    slot = Tensor::from_data({rows * cols, 2}, std::move(p));
  }
  return slot;
}

}  // namespace

SpatialGraph build_grid_graph(const Tensor& image, int radius) {
  if (image.rank() != 2) throw std::invalid_argument("build_grid_graph: image must be 2-D");
  if (radius < 0) throw std::invalid_argument("build_grid_graph: radius must be >= 0");
  const std::int64_t rows = image.shape()[0], cols = image.shape()[1];

  SpatialGraph g;
  g.features = Tensor::from_data({rows * cols, 1},
                                 std::vector<double>(image.data().begin(), image.data().end()));
  g.positions = grid_positions(rows, cols);
  g.adjacency = grid_adjacency(rows, cols, radius);
  return g;
}

SpatialGraph knn_graph(const Tensor& points, const Tensor& features, int k) {
  if (points.rank() != 2 || features.rank() != 2)
    throw std::invalid_argument("knn_graph: points and features must be 2-D");
  const std::int64_t n = points.shape()[0];
  const std::int64_t t = points.shape()[1];
  if (features.shape()[0] != n)
    throw std::invalid_argument("knn_graph: feature rows do not match point count");
  if (k < 1 || k >= n)
    throw std::invalid_argument("knn_graph: need 1 <= k < n, got k=" + std::to_string(k) +
                                ", n=" + std::to_string(n));

  auto adj = std::make_shared<AdjacencyList>(n);
  std::vector<std::pair<double, std::int32_t>> cand;
  std::vector<std::set<std::int32_t>> edges(n);
  for (std::int64_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (std::int64_t s = 0; s < t; ++s) {
        const double diff = points.data()[i * t + s] - points.data()[j * t + s];
        d2 += diff * diff;
      }
      cand.emplace_back(d2, static_cast<std::int32_t>(j));
    }
    // ties broken by lower node index
    std::sort(cand.begin(), cand.end());
    for (int m = 0; m < k; ++m) {
      edges[i].insert(cand[m].second);
      edges[cand[m].second].insert(static_cast<std::int32_t>(i));  // symmetrize by union
    }
  }
  for (std::int64_t i = 0; i < n; ++i) (*adj)[i].assign(edges[i].begin(), edges[i].end());

  SpatialGraph g;
  g.features = features;
  g.positions = points;
  g.adjacency = std::move(adj);
  return g;
}

Csr reverse_csr(const Csr& adjacency) {
  const std::int64_t n = adjacency.num_nodes();
  Csr r;
  r.offsets.assign(n + 1, 0);
  for (std::int32_t j : adjacency.indices) ++r.offsets[j + 1];
  for (std::int64_t i = 0; i < n; ++i) r.offsets[i + 1] += r.offsets[i];
  r.indices.resize(adjacency.indices.size());
  std::vector<std::int64_t> cursor(r.offsets.begin(), r.offsets.end() - 1);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t e = adjacency.offsets[i]; e < adjacency.offsets[i + 1]; ++e)
      r.indices[cursor[adjacency.indices[e]]++] = static_cast<std::int32_t>(i);
  return r;
}

GraphBatch make_batch(const std::vector<SpatialGraph>& graphs) {
  if (graphs.empty()) throw std::invalid_argument("make_batch: empty graph list");
  const std::int64_t d = graphs[0].feature_dim();
  const std::int64_t t = graphs[0].position_dim();
  std::int64_t total_nodes = 0, total_edges = 0;
  for (const auto& g : graphs) {
    if (g.feature_dim() != d || g.position_dim() != t)
      throw std::invalid_argument("make_batch: graphs disagree on feature/position dims");
    total_nodes += g.num_nodes();
    total_edges += g.num_edges();
  }

  GraphBatch b;
  std::vector<double> feat(total_nodes * d), pos(total_nodes * t);
  auto adj = std::make_shared<Csr>();
  adj->offsets.assign(total_nodes + 1, 0);
  adj->indices.reserve(total_edges);
  b.segments.resize(total_nodes);
  b.graph_offsets.assign(graphs.size() + 1, 0);
  b.labels.reserve(graphs.size());
  b.has_positions = true;

  std::int64_t row = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = graphs[gi];
    b.graph_offsets[gi] = row;
    b.has_positions = b.has_positions && g.has_positions;
    const std::int64_t n = g.num_nodes();
    std::copy(g.features.data().begin(), g.features.data().end(), feat.begin() + row * d);
    std::copy(g.positions.data().begin(), g.positions.data().end(), pos.begin() + row * t);
    for (std::int64_t i = 0; i < n; ++i) {
      b.segments[row + i] = static_cast<std::int32_t>(gi);
      for (std::int32_t j : (*g.adjacency)[i])
        adj->indices.push_back(static_cast<std::int32_t>(row + j));
      adj->offsets[row + i + 1] = static_cast<std::int64_t>(adj->indices.size());
    }
    b.labels.push_back(g.label.value_or(std::numeric_limits<double>::quiet_NaN()));
    row += n;
  }
  b.graph_offsets.back() = row;

  // Canonical orders keyed to positions, so sums do not depend on labels.
  auto pos_less = [&pos, t](std::int32_t a, std::int32_t b2) {
    for (std::int64_t s = 0; s < t; ++s) {
      if (pos[a * t + s] != pos[b2 * t + s]) return pos[a * t + s] < pos[b2 * t + s];
    }
    return a < b2;
  };
  for (std::int64_t i = 0; i < total_nodes; ++i)
    std::sort(adj->indices.begin() + adj->offsets[i], adj->indices.begin() + adj->offsets[i + 1],
              pos_less);
  b.reduce_order.resize(total_nodes);
  for (std::int64_t i = 0; i < total_nodes; ++i)
    b.reduce_order[i] = static_cast<std::int32_t>(i);
  for (std::size_t gi = 0; gi < graphs.size(); ++gi)
    std::sort(b.reduce_order.begin() + b.graph_offsets[gi],
              b.reduce_order.begin() + b.graph_offsets[gi + 1], pos_less);

  b.features = Tensor::from_data({total_nodes, d}, std::move(feat));
  b.positions = Tensor::from_data({total_nodes, t}, std::move(pos));
  b.reverse = std::make_shared<Csr>(reverse_csr(*adj));
  b.adjacency = std::move(adj);
  return b;
}

std::vector<SpatialGraph> split_batch(const GraphBatch& batch) {
  std::vector<SpatialGraph> out;
  const std::int64_t d = batch.features.shape()[1];
  const std::int64_t t = batch.positions.shape()[1];
  for (std::int64_t gi = 0; gi < batch.num_graphs(); ++gi) {
    const std::int64_t lo = batch.graph_offsets[gi], hi = batch.graph_offsets[gi + 1];
    const std::int64_t n = hi - lo;
    SpatialGraph g;
    g.features = Tensor::from_data(
        {n, d}, std::vector<double>(batch.features.data().begin() + lo * d,
                                    batch.features.data().begin() + hi * d));
    g.positions = Tensor::from_data(
        {n, t}, std::vector<double>(batch.positions.data().begin() + lo * t,
                                    batch.positions.data().begin() + hi * t));
    auto adj = std::make_shared<AdjacencyList>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t e = batch.adjacency->offsets[lo + i];
           e < batch.adjacency->offsets[lo + i + 1]; ++e)
        (*adj)[i].push_back(batch.adjacency->indices[e] - static_cast<std::int32_t>(lo));
      std::sort((*adj)[i].begin(), (*adj)[i].end());  // batch order is position-keyed
    }
    g.adjacency = std::move(adj);
    g.has_positions = batch.has_positions;
    if (!std::isnan(batch.labels[gi])) g.label = batch.labels[gi];
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace sgcn
