#include "sgcn/layer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "sgcn/kernels.hpp"

namespace sgcn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint block layout assumes a little-endian host");

std::string to_string(LayerMode mode) {
  switch (mode) {
    case LayerMode::Spatial: return "spatial";
    case LayerMode::Vanilla: return "vanilla";
    case LayerMode::PosConcat: return "pos_concat";
  }
  throw std::invalid_argument("unknown layer mode");
}

LayerMode layer_mode_from_string(const std::string& s) {
  if (s == "spatial") return LayerMode::Spatial;
  if (s == "vanilla") return LayerMode::Vanilla;
  if (s == "pos_concat") return LayerMode::PosConcat;
  throw std::invalid_argument("unknown layer mode '" + s + "'");
}

void SgcnLayerParams::validate() const {
  if (filters.empty()) throw std::invalid_argument("layer: needs at least one filter");
  const std::int64_t t = position_dim(), d = input_dim();
  for (const auto& [u, b] : filters) {
    if (u.rank() != 2 || u.shape()[0] != t || u.shape()[1] != d)
      throw std::invalid_argument("layer: filter U shape mismatch");
    if (b.rank() != 1 || b.shape()[0] != d)
      throw std::invalid_argument("layer: filter b shape mismatch");
  }
  if (mlp_weight.shape()[0] != num_filters() * d)
    throw std::invalid_argument("layer: transform expects " +
                                std::to_string(num_filters() * d) + " inputs, has " +
                                std::to_string(mlp_weight.shape()[0]));
  if (mlp_bias.shape()[0] != mlp_weight.shape()[1])
    throw std::invalid_argument("layer: transform bias length mismatch");
}

SgcnLayerParams SgcnLayerParams::init(int t, int d_in, int d_out, int k,
                                      std::mt19937_64& rng) {
  SgcnLayerParams p;
  const double us = 1.0 / std::sqrt(static_cast<double>(t));
  for (int m = 0; m < k; ++m) {
    Tensor u = Tensor::uniform({t, d_in}, -us, us, rng, /*requires_grad=*/true);
    Tensor b = Tensor::full({d_in}, 0.5, /*requires_grad=*/true);
    p.filters.emplace_back(std::move(u), std::move(b));
  }
  const double ws = 1.0 / std::sqrt(static_cast<double>(k) * d_in);
  p.mlp_weight = Tensor::uniform({static_cast<std::int64_t>(k) * d_in, d_out}, -ws, ws, rng,
                                 /*requires_grad=*/true);
  p.mlp_bias = Tensor::zeros({d_out}, /*requires_grad=*/true);
  return p;
}

namespace {

Tensor aggregate_csr(std::shared_ptr<const Csr> adjacency, std::shared_ptr<const Csr> reverse,
                     const Tensor& positions, const Tensor& h, const Tensor& u,
                     const Tensor& b, bool use_positions) {
  const std::int64_t n = h.shape()[0];
  const std::int64_t d = h.shape()[1];
  const std::int64_t t = positions.shape()[1];
  if (adjacency->num_nodes() != n)
    throw std::invalid_argument("spatial_aggregate: h rows do not match node count");
  if (u.rank() != 2 || u.shape()[0] != t || u.shape()[1] != d)
    throw std::invalid_argument("spatial_aggregate: U must be " + std::to_string(t) + "x" +
                                std::to_string(d) + ", got " +
                                detail::shape_str(u.shape()));
  if (b.rank() != 1 || b.shape()[0] != d)
    throw std::invalid_argument("spatial_aggregate: b must have length " + std::to_string(d));

  Tensor out = Tensor::zeros({n, d});
  const double* pos = use_positions ? positions.data().data() : nullptr;
  kernels::spatial_gather(adjacency->offsets.data(), adjacency->indices.data(), pos,
                          h.data().data(), u.data().data(), b.data().data(),
                          out.mutable_data().data(), n, t, d);

  bool rg = h.requires_grad() || u.requires_grad() || b.requires_grad();
  if (rg) {
    out.impl()->requires_grad = true;
    if (Tape* tape = Tape::active()) {
      auto hi = h.impl(), ui = u.impl(), bi = b.impl(), pi = positions.impl(),
           oi = out.impl();
      tape->record({h, u, b}, out,
                   [adjacency, reverse, hi, ui, bi, pi, oi, use_positions, n, t,
                    d](GradStore& gs) {
                     const auto* go = gs.find(oi.get());
                     if (!go) return;
                     double* dh = hi->requires_grad ? gs.accumulate(hi).data() : nullptr;
                     double* du = ui->requires_grad ? gs.accumulate(ui).data() : nullptr;
                     double* db = bi->requires_grad ? gs.accumulate(bi).data() : nullptr;
                     kernels::spatial_gather_backward(
                         adjacency->offsets.data(), adjacency->indices.data(),
                         reverse->offsets.data(), reverse->indices.data(),
                         use_positions ? pi->data.data() : nullptr, hi->data.data(),
                         ui->data.data(), bi->data.data(), go->data(), dh, du, db, n, t, d);
                   });
    }
  }
  return out;
}

}  // namespace

Tensor spatial_aggregate(const GraphBatch& batch, const Tensor& h, const Tensor& u,
                         const Tensor& b) {
  return aggregate_csr(batch.adjacency, batch.reverse, batch.positions, h, u, b,
                       /*use_positions=*/true);
}

Tensor spatial_aggregate(const SpatialGraph& graph, const Tensor& h, const Tensor& u,
                         const Tensor& b) {
  GraphBatch batch = make_batch({graph});
  return aggregate_csr(batch.adjacency, batch.reverse, batch.positions, h, u, b,
                       /*use_positions=*/true);
}

Tensor layer_forward(const GraphBatch& batch, const Tensor& h, const SgcnLayerParams& params,
                     LayerMode mode) {
  params.validate();
  const bool use_positions = mode == LayerMode::Spatial;
  std::vector<Tensor> parts;
  parts.reserve(params.filters.size());
  for (const auto& [u, b] : params.filters)
    parts.push_back(aggregate_csr(batch.adjacency, batch.reverse, batch.positions, h, u, b,
                                  use_positions));
  Tensor stacked = parts.size() == 1 ? parts[0] : concat(parts, 1);
  return relu(add_bias(matmul(stacked, params.mlp_weight), params.mlp_bias));
}

Tensor segment_mean(const GraphBatch& batch, const Tensor& h) {
  const std::int64_t n = h.shape()[0], d = h.shape()[1];
  if (n != batch.num_nodes())
    throw std::invalid_argument("segment_mean: rows do not match batch nodes");
  const std::int64_t g = batch.num_graphs();
  Tensor out = Tensor::zeros({g, d});
  {
    // Rows are reduced in the batch's position-keyed order so the result
    // does not depend on node labels.
    auto od = out.mutable_data();
    for (std::int64_t k = 0; k < n; ++k) {
      const std::int32_t i = batch.reduce_order[k];
      const std::int32_t s = batch.segments[i];
      for (std::int64_t c = 0; c < d; ++c) od[s * d + c] += h.data()[i * d + c];
    }
    for (std::int64_t s = 0; s < g; ++s) {
      const double cnt =
          static_cast<double>(batch.graph_offsets[s + 1] - batch.graph_offsets[s]);
      for (std::int64_t c = 0; c < d; ++c) od[s * d + c] /= cnt;
    }
  }
  if (h.requires_grad()) {
    out.impl()->requires_grad = true;
    if (Tape* tape = Tape::active()) {
      auto hi = h.impl(), oi = out.impl();
      std::vector<std::int32_t> segments = batch.segments;
      std::vector<std::int64_t> offsets = batch.graph_offsets;
      tape->record({h}, out, [hi, oi, segments, offsets, n, d](GradStore& gs) {
        const auto* go = gs.find(oi.get());
        if (!go) return;
        auto& gh = gs.accumulate(hi);
        for (std::int64_t i = 0; i < n; ++i) {
          const std::int32_t s = segments[i];
          const double cnt = static_cast<double>(offsets[s + 1] - offsets[s]);
          for (std::int64_t c = 0; c < d; ++c) gh[i * d + c] += (*go)[s * d + c] / cnt;
        }
      });
    }
  }
  return out;
}

Tensor model_forward(const GraphBatch& batch, const std::vector<SgcnLayerParams>& layers,
                     LayerMode mode) {
  Tensor h = batch.features;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].input_dim() != h.shape()[1])
      throw std::invalid_argument("model_forward: layer " + std::to_string(l) + " expects " +
                                  std::to_string(layers[l].input_dim()) + " inputs, got " +
                                  std::to_string(h.shape()[1]));
    h = layer_forward(batch, h, layers[l], mode);
  }
  return segment_mean(batch, h);
}

Tensor Model::forward(const GraphBatch& batch) const {
  Tensor readout = model_forward(batch, layers, mode);
  return add_bias(matmul(readout, head_weight), head_bias);
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (std::size_t m = 0; m < layers[l].filters.size(); ++m) {
      out.emplace_back(prefix + "filter" + std::to_string(m) + ".U", layers[l].filters[m].first);
      out.emplace_back(prefix + "filter" + std::to_string(m) + ".b", layers[l].filters[m].second);
    }
    out.emplace_back(prefix + "W", layers[l].mlp_weight);
    out.emplace_back(prefix + "bias", layers[l].mlp_bias);
  }
  out.emplace_back("head.W", head_weight);
  out.emplace_back("head.b", head_bias);
  return out;
}

Model Model::clone() const {
  Model m;
  m.mode = mode;
  for (const auto& layer : layers) {
    SgcnLayerParams p;
    for (const auto& [u, b] : layer.filters)
      p.filters.emplace_back(u.clone(true), b.clone(true));
    p.mlp_weight = layer.mlp_weight.clone(true);
    p.mlp_bias = layer.mlp_bias.clone(true);
    m.layers.push_back(std::move(p));
  }
  m.head_weight = head_weight.clone(true);
  m.head_bias = head_bias.clone(true);
  return m;
}

Model make_model(int t, int d_in, const std::vector<LayerSpec>& specs, int head_out,
                 LayerMode mode, std::mt19937_64& rng) {
  if (specs.empty()) throw std::invalid_argument("make_model: needs at least one layer");
  Model m;
  m.mode = mode;
  int d = d_in;
  for (const LayerSpec& s : specs) {
    m.layers.push_back(SgcnLayerParams::init(t, d, s.d_out, s.filters, rng));
    d = s.d_out;
  }
  const double hs = 1.0 / std::sqrt(static_cast<double>(d));
  m.head_weight = Tensor::uniform({d, head_out}, -hs, hs, rng, /*requires_grad=*/true);
  m.head_bias = Tensor::zeros({head_out}, /*requires_grad=*/true);
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const Model& model, const std::string& path) {
  nlohmann::json header;
  header["format"] = "sgcn-checkpoint";
  header["version"] = 1;
  header["mode"] = to_string(model.mode);
  header["t"] = model.position_dim();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers) {
    layers.push_back({{"filters", l.num_filters()},
                      {"d_in", l.input_dim()},
                      {"d_out", l.output_dim()}});
  }
  header["layers"] = layers;
  header["head"] = {{"in", model.head_weight.shape()[0]}, {"out", model.head_weight.shape()[1]}};

  std::int64_t total = 0;
  auto params = model.named_parameters();
  for (const auto& [name, p] : params) total += p.numel();
  header["doubles"] = total;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint file for writing: " + path);
  out << header.dump() << '\n';
  for (const auto& [name, p] : params) {
    out.write(reinterpret_cast<const char*>(p.data().data()),
              static_cast<std::streamsize>(p.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("short write to checkpoint file: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint missing header: " + path);
  nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("format", "") != "sgcn-checkpoint")
    throw std::runtime_error("not a checkpoint file: " + path);
  if (header.value("version", 0) != 1)
    throw std::runtime_error("unsupported checkpoint version in " + path);

  Model m;
  m.mode = layer_mode_from_string(header.at("mode").get<std::string>());
  const int t = header.at("t").get<int>();
  for (const auto& l : header.at("layers")) {
    const int k = l.at("filters").get<int>();
    const int d_in = l.at("d_in").get<int>();
    const int d_out = l.at("d_out").get<int>();
    SgcnLayerParams p;
    for (int i = 0; i < k; ++i)
      p.filters.emplace_back(Tensor::zeros({t, d_in}, true), Tensor::zeros({d_in}, true));
    p.mlp_weight = Tensor::zeros({static_cast<std::int64_t>(k) * d_in, d_out}, true);
    p.mlp_bias = Tensor::zeros({d_out}, true);
    m.layers.push_back(std::move(p));
  }
  m.head_weight = Tensor::zeros({header.at("head").at("in").get<std::int64_t>(),
                                 header.at("head").at("out").get<std::int64_t>()},
                                true);
  m.head_bias = Tensor::zeros({header.at("head").at("out").get<std::int64_t>()}, true);

  std::int64_t total = 0;
  for (auto& [name, p] : m.named_parameters()) {
    in.read(reinterpret_cast<char*>(p.mutable_data().data()),
            static_cast<std::streamsize>(p.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated at block '" + name + "': " + path);
    total += p.numel();
  }
  if (total != header.at("doubles").get<std::int64_t>())
    throw std::runtime_error("checkpoint block count mismatch in " + path);
  return m;
}

}  // namespace sgcn
