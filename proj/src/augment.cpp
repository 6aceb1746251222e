#include "sgcn/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "sgcn/data.hpp"

namespace sgcn {

namespace {
constexpr double kSnapScale = 1048576.0;  // 2^20
constexpr double kSnapRange = 4096.0;     // 2^12; keeps snapped sums exact
}  // namespace

double snap_coordinate(double x) {
  if (!(std::abs(x) < kSnapRange))
    throw std::invalid_argument("coordinate " + std::to_string(x) +
                                " outside the supported range (|x| < 4096)");
  return std::round(x * kSnapScale) / kSnapScale;
}

Tensor snap_positions(const Tensor& positions) {
  std::vector<double> d(positions.data().begin(), positions.data().end());
  for (auto& v : d) v = snap_coordinate(v);
  return Tensor::from_data(positions.shape(), std::move(d));
}

namespace {

void check_rotation(const Tensor& r, std::int64_t t) {
  if (r.rank() != 2 || r.shape()[0] != t || r.shape()[1] != t)
    throw std::invalid_argument("rotation matrix must be " + std::to_string(t) + "x" +
                                std::to_string(t));
  const auto d = r.data();
  for (std::int64_t i = 0; i < t; ++i)
    for (std::int64_t j = 0; j < t; ++j) {
      double dot = 0.0;
      for (std::int64_t s = 0; s < t; ++s) dot += d[i * t + s] * d[j * t + s];
      const double expect = i == j ? 1.0 : 0.0;
      if (std::abs(dot - expect) > 1e-10)
        throw std::invalid_argument("rotation matrix is not orthonormal");
    }
  double det;
  if (t == 2) {
    det = d[0] * d[3] - d[1] * d[2];
  } else {
    det = d[0] * (d[4] * d[8] - d[5] * d[7]) - d[1] * (d[3] * d[8] - d[5] * d[6]) +
          d[2] * (d[3] * d[7] - d[4] * d[6]);
  }
  if (std::abs(det - 1.0) > 1e-10)
    throw std::invalid_argument("rotation matrix determinant is not +1");
}

// rows x t positions times R^T, written into out.
void apply_rotation(const double* pos, std::int64_t rows, std::int64_t t, const double* r,
                    double* out) {
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t a = 0; a < t; ++a) {
      double acc = 0.0;
      for (std::int64_t s = 0; s < t; ++s) acc += pos[i * t + s] * r[a * t + s];
      out[i * t + a] = acc;
    }
}

}  // namespace

SpatialGraph rotate(const SpatialGraph& graph, const Tensor& rotation) {
  const std::int64_t t = graph.position_dim();
  check_rotation(rotation, t);
  std::vector<double> out(graph.num_nodes() * t);
  apply_rotation(graph.positions.data().data(), graph.num_nodes(), t,
                 rotation.data().data(), out.data());
  SpatialGraph g = graph;
  g.positions = Tensor::from_data(graph.positions.shape(), std::move(out));
  return g;
}

Tensor sample_rotation(int dim, std::mt19937_64& rng) {
  if (dim == 2) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    const double a = angle(rng);
    const double c = std::cos(a), s = std::sin(a);
    return Tensor::from_data({2, 2}, {c, -s, s, c});
  }
  if (dim == 3) {
    std::normal_distribution<double> normal(0.0, 1.0);
    double w = normal(rng), x = normal(rng), y = normal(rng), z = normal(rng);
    const double norm = std::sqrt(w * w + x * x + y * y + z * z);
    w /= norm; x /= norm; y /= norm; z /= norm;
    return Tensor::from_data(
        {3, 3},
        {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)});
  }
  throw std::invalid_argument("sample_rotation: dim must be 2 or 3");
}

GraphBatch augment_batch(const GraphBatch& batch, const AugmentPolicy& policy,
                         const std::vector<ConformerPool>* pools, std::mt19937_64& rng) {
  if (!policy.active()) return batch;
  const std::int64_t t = batch.positions.shape()[1];
  if (policy.rotate && policy.rotation_dim != t)
    throw std::invalid_argument("augment: rotation_dim " + std::to_string(policy.rotation_dim) +
                                " does not match position dim " + std::to_string(t));
  if (policy.conformer_pool_size > 0) {
    if (!pools)
      throw std::invalid_argument("augment: conformer sampling requested without pools");
    if (static_cast<std::int64_t>(pools->size()) != batch.num_graphs())
      throw std::invalid_argument("augment: pool list does not match batch graphs");
  }

  std::vector<double> pos(batch.positions.data().begin(), batch.positions.data().end());
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (std::int64_t g = 0; g < batch.num_graphs(); ++g) {
    const std::int64_t lo = batch.graph_offsets[g], hi = batch.graph_offsets[g + 1];
    const std::int64_t n = hi - lo;

    if (policy.conformer_pool_size > 0) {
      const ConformerPool& pool = (*pools)[g];
      if (pool.conformers.empty())
        throw std::invalid_argument("augment: empty conformer pool for graph " +
                                    std::to_string(g));
      const int avail = std::min<int>(policy.conformer_pool_size,
                                      static_cast<int>(pool.conformers.size()));
      std::uniform_int_distribution<int> pick(0, avail - 1);
      const Tensor& conf = pool.conformers[pick(rng)];
      if (conf.shape()[0] != n || conf.shape()[1] != t)
        throw std::invalid_argument("augment: conformer does not match graph topology");
      std::copy(conf.data().begin(), conf.data().end(), pos.begin() + lo * t);
    }

    if (policy.rotate) {
      Tensor r = sample_rotation(static_cast<int>(t), rng);
      std::vector<double> rotated(n * t);
      apply_rotation(pos.data() + lo * t, n, t, r.data().data(), rotated.data());
      std::copy(rotated.begin(), rotated.end(), pos.begin() + lo * t);
    }

    if (policy.translate_sigma > 0.0) {
      // Snapped offsets keep the shift exactly invisible to the gates.
      double shift[3] = {0, 0, 0};
      for (std::int64_t s = 0; s < t; ++s)
        shift[s] = snap_coordinate(gauss(rng) * policy.translate_sigma);
      for (std::int64_t i = lo; i < hi; ++i)
        for (std::int64_t s = 0; s < t; ++s) pos[i * t + s] += shift[s];
    }
  }

  GraphBatch out = batch;
  out.positions = Tensor::from_data(batch.positions.shape(), std::move(pos));
  return out;
}

Tensor test_time_predict(const Model& model, const SpatialGraph& graph,
                         const AugmentPolicy& policy, int samples, std::mt19937_64& rng,
                         const ConformerPool* pool) {
  if (samples < 1) throw std::invalid_argument("test_time_predict: need at least one sample");
  GraphBatch base = make_batch({graph});
  std::vector<ConformerPool> pools;
  if (pool) pools.push_back(*pool);

  std::vector<long double> acc;
  for (int s = 0; s < samples; ++s) {
    GraphBatch aug = augment_batch(base, policy, pool ? &pools : nullptr, rng);
    if (model.mode == LayerMode::PosConcat) aug = append_position_features(aug);
    Tensor pred = model.forward(aug);
    if (acc.empty()) acc.assign(pred.numel(), 0.0L);
    for (std::int64_t i = 0; i < pred.numel(); ++i) acc[i] += pred.data()[i];
  }
  const std::int64_t width = static_cast<std::int64_t>(acc.size());
  std::vector<double> mean(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i)
    mean[i] = static_cast<double>(acc[i] / static_cast<long double>(samples));
  return Tensor::from_data({width}, std::move(mean));
}

// ---------------------------------------------------------------------------
// Pool files

std::vector<ConformerRecord> read_conformer_pools(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open conformer pool file: " + path);
  std::vector<ConformerRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream head(line);
    ConformerRecord rec;
    std::int64_t n = 0;
    int c = 0;
    if (!(head >> rec.id >> n >> c) || n <= 0 || c <= 0)
      throw std::runtime_error("conformer pool: bad record header '" + line + "'");
    for (int ci = 0; ci < c; ++ci) {
      std::vector<double> coords;
      coords.reserve(n * 3);
      for (std::int64_t i = 0; i < n; ++i) {
        double x, y, z;
        if (!(in >> x >> y >> z))
          throw std::runtime_error("conformer pool: truncated block for id " + rec.id);
        coords.push_back(snap_coordinate(x));
        coords.push_back(snap_coordinate(y));
        coords.push_back(snap_coordinate(z));
      }
      rec.pool.conformers.push_back(Tensor::from_data({n, 3}, std::move(coords)));
    }
    in >> std::ws;
    out.push_back(std::move(rec));
  }
  return out;
}

void write_conformer_pools(const std::string& path,
                           const std::vector<ConformerRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open conformer pool file for writing: " + path);
  // enough digits that reading + grid-snapping reproduces snapped inputs
  out.precision(10);
  out << std::fixed;
  for (const auto& rec : records) {
    const std::int64_t n = rec.pool.conformers.at(0).shape()[0];
    out << rec.id << ' ' << n << ' ' << rec.pool.conformers.size() << '\n';
    for (const Tensor& conf : rec.pool.conformers) {
      for (std::int64_t i = 0; i < n; ++i)
        out << conf(i, 0) << ' ' << conf(i, 1) << ' ' << conf(i, 2) << '\n';
    }
  }
  if (!out) throw std::runtime_error("short write to conformer pool file: " + path);
}

}  // namespace sgcn
