#include "sgcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace sgcn {

std::string to_string(Metric m) {
  switch (m) {
    case Metric::Accuracy: return "accuracy";
    case Metric::RocAuc: return "roc_auc";
    case Metric::Rmse: return "rmse";
  }
  throw std::invalid_argument("unknown metric");
}

namespace {

Metric metric_from_string(const std::string& s) {
  if (s == "accuracy") return Metric::Accuracy;
  if (s == "roc_auc") return Metric::RocAuc;
  if (s == "rmse") return Metric::Rmse;
  throw std::invalid_argument("unknown metric '" + s + "'");
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: boolean expected for " + key + ", got '" + v + "'");
}

std::vector<LayerSpec> parse_layers(const std::string& v) {
  // "8x32,2x24" = two layers: 8 filters into 32 dims, then 2 filters into 24.
  std::vector<LayerSpec> out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos)
      throw std::invalid_argument("config: layer spec '" + item + "' is not <filters>x<dims>");
    out.push_back({std::stoi(item.substr(0, x)), std::stoi(item.substr(x + 1))});
  }
  if (out.empty()) throw std::invalid_argument("config: empty layer spec");
  return out;
}

std::string join_path(const std::string& dir, const std::string& name) {
  if (name.empty() || dir.empty() || name.front() == '/') return name;
  return dir + "/" + name;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr < 0 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 || eps <= 0)
    throw std::invalid_argument("config: optimizer rates out of range");
  if (batch_size < 1 || epochs < 0 || patience < 1)
    throw std::invalid_argument("config: batch_size/epochs/patience out of range");
  if (layers.empty()) throw std::invalid_argument("config: no layers");
  for (const auto& l : layers)
    if (l.filters < 1 || l.d_out < 1)
      throw std::invalid_argument("config: layer dims must be positive");
  if (data_kind != "idx" && data_kind != "sdf")
    throw std::invalid_argument("config: data.kind must be idx or sdf");
  if (valid_fraction < 0 || test_fraction < 0 || valid_fraction + test_fraction >= 1)
    throw std::invalid_argument("config: split fractions out of range");
  if (augment.test_time_samples < 1)
    throw std::invalid_argument("config: augment.tta must be >= 1");
}

TrainConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  TrainConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key = value");
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = strip(line.substr(0, eq));
    const std::string val = strip(line.substr(eq + 1));

    if (key == "task") {
      if (val == "classify") c.task = Task::Classify;
      else if (val == "regress") c.task = Task::Regress;
      else throw std::runtime_error("config: unknown task '" + val + "'");
    } else if (key == "mode") {
      c.mode = layer_mode_from_string(val);
    } else if (key == "metric") {
      c.metric = metric_from_string(val);
    } else if (key == "layers") {
      c.layers = parse_layers(val);
    } else if (key == "optimizer") {
      if (val == "adam") c.optimizer = OptimizerKind::Adam;
      else if (val == "sgd") c.optimizer = OptimizerKind::Sgd;
      else throw std::runtime_error("config: unknown optimizer '" + val + "'");
    } else if (key == "lr") {
      c.lr = std::stod(val);
    } else if (key == "beta1") {
      c.beta1 = std::stod(val);
    } else if (key == "beta2") {
      c.beta2 = std::stod(val);
    } else if (key == "eps") {
      c.eps = std::stod(val);
    } else if (key == "batch_size") {
      c.batch_size = std::stoi(val);
    } else if (key == "epochs") {
      c.epochs = std::stoi(val);
    } else if (key == "seed") {
      c.seed = std::stoull(val);
    } else if (key == "patience") {
      c.patience = std::stoi(val);
    } else if (key == "augment.rotate") {
      c.augment.rotate = parse_bool(val, key);
    } else if (key == "augment.rotation_dim") {
      c.augment.rotation_dim = std::stoi(val);
    } else if (key == "augment.translate_sigma") {
      c.augment.translate_sigma = std::stod(val);
    } else if (key == "augment.conformers") {
      c.augment.conformer_pool_size = std::stoi(val);
    } else if (key == "augment.tta") {
      c.augment.test_time_samples = std::stoi(val);
    } else if (key == "data.kind") {
      c.data_kind = val;
    } else if (key == "data.dir") {
      c.data_dir = val;
    } else if (key == "data.train_images") {
      c.train_images = val;
    } else if (key == "data.train_labels") {
      c.train_labels = val;
    } else if (key == "data.test_images") {
      c.test_images = val;
    } else if (key == "data.test_labels") {
      c.test_labels = val;
    } else if (key == "data.sdf") {
      c.sdf_file = val;
    } else if (key == "data.labels") {
      c.labels_csv = val;
    } else if (key == "data.conformers") {
      c.conformers_file = val;
    } else if (key == "data.split") {
      c.split_file = val;
    } else if (key == "data.id_column") {
      c.id_column = val;
    } else if (key == "data.target_column") {
      c.target_column = val;
    } else if (key == "grid_radius") {
      c.grid_radius = std::stoi(val);
    } else if (key == "self_loops") {
      c.self_loops = parse_bool(val, key);
    } else if (key == "split.valid_fraction") {
      c.valid_fraction = std::stod(val);
    } else if (key == "split.test_fraction") {
      c.test_fraction = std::stod(val);
    } else if (key == "split.seed") {
      c.split_seed = std::stoull(val);
    } else if (key == "out.metrics") {
      c.metrics_out = val;
    } else if (key == "out.checkpoint") {
      c.checkpoint_out = val;
    } else {
      throw std::runtime_error("config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Losses

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("cross_entropy: logits must be rows x classes");
  const std::int64_t m = logits.shape()[0], c = logits.shape()[1];
  if (static_cast<std::int64_t>(labels.size()) != m)
    throw std::invalid_argument("cross_entropy: label count does not match rows");
  for (int y : labels)
    if (y < 0 || y >= c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(c) + ")");

  auto softmax = std::make_shared<std::vector<double>>(m * c);
  double loss = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = logits.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::int64_t j = 0; j < c; ++j) (*softmax)[i * c + j] = std::exp(row[j] - mx) / z;
    loss += std::log(z) - (row[labels[i]] - mx);
  }
  loss /= static_cast<double>(m);

  Tensor out = Tensor::scalar(loss);
  if (logits.requires_grad()) {
    out.impl()->requires_grad = true;
    if (Tape* tape = Tape::active()) {
      auto li = logits.impl(), oi = out.impl();
      std::vector<int> lab = labels;
      tape->record({logits}, out, [li, oi, softmax, lab, m, c](GradStore& gs) {
        const auto* go = gs.find(oi.get());
        if (!go) return;
        auto& gl = gs.accumulate(li);
        const double up = (*go)[0] / static_cast<double>(m);
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t j = 0; j < c; ++j)
            gl[i * c + j] += up * ((*softmax)[i * c + j] - (j == lab[i] ? 1.0 : 0.0));
      });
    }
  }
  return out;
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("mse: shape mismatch " + detail::shape_str(pred.shape()) +
                                " vs " + detail::shape_str(target.shape()));
  const std::int64_t n = pred.numel();
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = pred.data()[i] - target.data()[i];
    loss += d * d;
  }
  loss /= static_cast<double>(n);
  Tensor out = Tensor::scalar(loss);
  if (pred.requires_grad() || target.requires_grad()) {
    out.impl()->requires_grad = true;
    if (Tape* tape = Tape::active()) {
      auto pi = pred.impl(), ti = target.impl(), oi = out.impl();
      tape->record({pred, target}, out, [pi, ti, oi, n](GradStore& gs) {
        const auto* go = gs.find(oi.get());
        if (!go) return;
        const double up = (*go)[0] * 2.0 / static_cast<double>(n);
        if (pi->requires_grad) {
          auto& gp = gs.accumulate(pi);
          for (std::int64_t i = 0; i < n; ++i) gp[i] += up * (pi->data[i] - ti->data[i]);
        }
        if (ti->requires_grad) {
          auto& gt = gs.accumulate(ti);
          for (std::int64_t i = 0; i < n; ++i) gt[i] -= up * (pi->data[i] - ti->data[i]);
        }
      });
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("roc_auc: scores and labels differ in length");
  std::int64_t pos = 0, neg = 0;
  for (int y : labels) (y ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("roc_auc: undefined for single-class input");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Integer pair counting (ties count half) so the value matches a brute
  // force double loop bit for bit.
  std::int64_t wins2 = 0, negs_below = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::int64_t gpos = 0, gneg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? gpos : gneg)++;
      ++j;
    }
    wins2 += gpos * (2 * negs_below + gneg);
    negs_below += gneg;
    i = j;
  }
  return static_cast<double>(wins2) /
         (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double accuracy(const std::vector<std::vector<double>>& outputs, const std::vector<int>& labels) {
  if (outputs.size() != labels.size())
    throw std::invalid_argument("accuracy: outputs and labels differ in length");
  if (outputs.empty()) throw std::invalid_argument("accuracy: empty input");
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    int best = 0;
    for (std::size_t j = 1; j < outputs[i].size(); ++j)
      if (outputs[i][j] > outputs[i][best]) best = static_cast<int>(j);
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(std::vector<std::pair<std::string, Tensor>> params, OptimizerKind kind,
                     double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  slots_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    slots_[i].m.assign(params_[i].second.numel(), 0.0);
    slots_[i].v.assign(params_[i].second.numel(), 0.0);
  }
}

void Optimizer::step() {
  ++t_;
  const double corr1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double corr2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto& [name, param] = params_[p];
    if (!param.has_grad()) continue;  // never touched by the loss
    const auto g = param.grad();
    auto w = param.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("non-finite gradient for parameter '" + name + "'");
      if (kind_ == OptimizerKind::Sgd) {
        w[i] -= lr_ * g[i];
      } else {
        auto& m = slots_[p].m[i];
        auto& v = slots_[p].v[i];
        m = beta1_ * m + (1.0 - beta1_) * g[i];
        v = beta2_ * v + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr_ * (m / corr1) / (std::sqrt(v / corr2) + eps_);
      }
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& [name, param] : params_) param.zero_grad();
}

// ---------------------------------------------------------------------------
// Datasets

DataBundle DataBundle::subset(const std::vector<int>& indices) const {
  DataBundle out;
  out.graphs.reserve(indices.size());
  for (int i : indices) {
    out.graphs.push_back(graphs.at(i));
    if (!pools.empty()) out.pools.push_back(pools.at(i));
  }
  return out;
}

DataBundle load_sdf_dataset(const std::string& sdf_path, const std::string& labels_csv,
                            const std::string& id_column, const std::string& target_column,
                            const std::string& conformers_path, const FeaturizeOptions& options,
                            int* dropped) {
  const std::vector<MolRecord> records = read_sdf(sdf_path);
  const LabelTable table = load_labels(labels_csv, id_column, target_column);

  std::unordered_map<std::string, ConformerPool> pools;
  if (!conformers_path.empty()) {
    for (auto& rec : read_conformer_pools(conformers_path)) pools[rec.id] = std::move(rec.pool);
  }

  DataBundle out;
  int missing = 0;
  for (const MolRecord& rec : records) {
    auto it = table.by_id.find(rec.name);
    if (it == table.by_id.end()) {
      ++missing;
      continue;
    }
    SpatialGraph g = featurize(rec, options);
    g.label = it->second;
    if (!pools.empty()) {
      auto pit = pools.find(rec.name);
      if (pit != pools.end())
        out.pools.push_back(pit->second);
      else
        out.pools.push_back(ConformerPool{{g.positions}});
    }
    out.graphs.push_back(std::move(g));
  }
  if (dropped) *dropped = missing + table.dropped;
  if (out.graphs.empty()) throw std::runtime_error("no labeled molecules in " + sdf_path);
  return out;
}

DataBundle load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                            int grid_radius) {
  const Tensor images = read_idx_images(images_path);
  const std::vector<int> labels = read_idx_labels(labels_path);
  const std::int64_t count = images.shape()[0];
  if (count != static_cast<std::int64_t>(labels.size()))
    throw std::runtime_error("idx: image and label counts disagree (" + std::to_string(count) +
                             " vs " + std::to_string(labels.size()) + ")");
  const std::int64_t rows = images.shape()[1], cols = images.shape()[2];

  DataBundle out;
  out.graphs.reserve(count);
  for (std::int64_t i = 0; i < count; ++i) {
    Tensor img = Tensor::from_data(
        {rows, cols}, std::vector<double>(images.data().begin() + i * rows * cols,
                                          images.data().begin() + (i + 1) * rows * cols));
    SpatialGraph g = build_grid_graph(img, grid_radius);
    g.label = static_cast<double>(labels[i]);
    out.graphs.push_back(std::move(g));
  }
  return out;
}

LoadedDatasets load_datasets(const TrainConfig& config) {
  const std::uint64_t split_seed = config.split_seed ? config.split_seed : config.seed;
  LoadedDatasets out;
  if (config.data_kind == "idx") {
    DataBundle all = load_idx_dataset(join_path(config.data_dir, config.train_images),
                                      join_path(config.data_dir, config.train_labels),
                                      config.grid_radius);
    const DatasetSplit split =
        make_split(static_cast<int>(all.size()), SplitKind::Random, split_seed,
                   {1.0 - config.valid_fraction, config.valid_fraction, 0.0});
    out.train = all.subset(split.train);
    out.valid = all.subset(split.valid);
    out.test = load_idx_dataset(join_path(config.data_dir, config.test_images),
                                join_path(config.data_dir, config.test_labels),
                                config.grid_radius);
  } else {
    FeaturizeOptions fo;
    fo.add_self_loops = config.self_loops;
    DataBundle all = load_sdf_dataset(
        join_path(config.data_dir, config.sdf_file), join_path(config.data_dir, config.labels_csv),
        config.id_column, config.target_column,
        config.conformers_file.empty() ? "" : join_path(config.data_dir, config.conformers_file),
        fo);
    DatasetSplit split;
    if (!config.split_file.empty()) {
      split = make_split(static_cast<int>(all.size()), SplitKind::FromFile, split_seed, {},
                         join_path(config.data_dir, config.split_file));
    } else {
      split = make_split(static_cast<int>(all.size()), SplitKind::Random, split_seed,
                         {1.0 - config.valid_fraction - config.test_fraction,
                          config.valid_fraction, config.test_fraction});
    }
    out.train = all.subset(split.train);
    out.valid = all.subset(split.valid);
    out.test = all.subset(split.test);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

namespace {

std::vector<double> bundle_labels(const DataBundle& data) {
  std::vector<double> out;
  out.reserve(data.graphs.size());
  for (const auto& g : data.graphs) {
    if (!g.label) throw std::runtime_error("graph without a label in a labeled evaluation");
    out.push_back(*g.label);
  }
  return out;
}

std::vector<int> int_labels(const std::vector<double>& labels) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = labels[i];
    if (v != std::floor(v) || v < 0)
      throw std::runtime_error("classification label " + std::to_string(v) +
                               " is not a class index");
    out[i] = static_cast<int>(v);
  }
  return out;
}

}  // namespace

std::vector<std::vector<double>> predict_all(const Model& model, const DataBundle& data,
                                             const AugmentPolicy& policy, int samples,
                                             std::uint64_t seed, int batch_size) {
  std::vector<std::vector<double>> out;
  out.reserve(data.graphs.size());
  if (!policy.active() && samples <= 1) {
    for (std::size_t at = 0; at < data.graphs.size(); at += batch_size) {
      const std::size_t hi = std::min(data.graphs.size(), at + batch_size);
      std::vector<SpatialGraph> chunk(data.graphs.begin() + at, data.graphs.begin() + hi);
      GraphBatch batch = make_batch(chunk);
      if (model.mode == LayerMode::PosConcat) batch = append_position_features(batch);
      Tensor pred = model.forward(batch);
      const std::int64_t c = pred.shape()[1];
      for (std::int64_t g = 0; g < pred.shape()[0]; ++g)
        out.emplace_back(pred.data().begin() + g * c, pred.data().begin() + (g + 1) * c);
    }
    return out;
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < data.graphs.size(); ++i) {
    const ConformerPool* pool =
        (!data.pools.empty() && policy.conformer_pool_size > 0) ? &data.pools[i] : nullptr;
    Tensor pred =
        test_time_predict(model, data.graphs[i], policy, samples, rng, pool);
    out.emplace_back(pred.data().begin(), pred.data().end());
  }
  return out;
}

double metric_value(Metric metric, const std::vector<std::vector<double>>& outputs,
                    const std::vector<double>& labels) {
  switch (metric) {
    case Metric::Accuracy:
      return accuracy(outputs, int_labels(labels));
    case Metric::RocAuc: {
      std::vector<double> scores(outputs.size());
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (outputs[i].size() == 1)
          scores[i] = outputs[i][0];
        else if (outputs[i].size() == 2)
          scores[i] = outputs[i][1] - outputs[i][0];
        else
          throw std::invalid_argument("roc_auc needs binary outputs");
      }
      return roc_auc(scores, int_labels(labels));
    }
    case Metric::Rmse: {
      double acc = 0.0;
      for (std::size_t i = 0; i < outputs.size(); ++i) {
        const double d = outputs[i].at(0) - labels[i];
        acc += d * d;
      }
      return std::sqrt(acc / static_cast<double>(outputs.size()));
    }
  }
  throw std::invalid_argument("unknown metric");
}

// ---------------------------------------------------------------------------
// Fit

namespace {

bool improved(Metric metric, double value, double best) {
  if (std::isnan(best)) return true;
  return metric == Metric::Rmse ? value < best : value > best;
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

FitResult fit(const TrainConfig& config, const DataBundle& train, const DataBundle& valid,
              const DataBundle& test) {
  config.validate();
  if (train.graphs.empty()) throw std::invalid_argument("fit: empty training set");

  const std::int64_t t = train.graphs[0].position_dim();
  const std::int64_t d_raw = train.graphs[0].feature_dim();

  // Fall back to the position-blind mode when the data has no usable
  // geometry at all.
  LayerMode mode = config.mode;
  bool any_positions = !train.pools.empty();
  for (const auto& g : train.graphs) any_positions = any_positions || g.has_positions;
  if (mode != LayerMode::Vanilla && !any_positions) {
    std::cerr << "fit: dataset has no coordinates and no conformer pools; "
                 "falling back to vanilla mode\n";
    mode = LayerMode::Vanilla;
  }
  const std::int64_t d_in = d_raw + (mode == LayerMode::PosConcat ? t : 0);

  const std::vector<double> train_labels = bundle_labels(train);
  int head_out = 1;
  std::vector<int> class_labels;
  if (config.task == Task::Classify) {
    class_labels = int_labels(train_labels);
    int max_label = 0;
    for (int y : class_labels) max_label = std::max(max_label, y);
    for (const DataBundle* bundle : {&valid, &test})
      for (const auto& g : bundle->graphs)
        if (g.label) max_label = std::max(max_label, static_cast<int>(*g.label));
    head_out = std::max(2, max_label + 1);
  }

  // Regression targets are standardized by the train statistics; the
  // inverse transform is folded into the head before reporting.
  double y_mean = 0.0, y_std = 1.0;
  if (config.task == Task::Regress) {
    for (double y : train_labels) y_mean += y;
    y_mean /= static_cast<double>(train_labels.size());
    double var = 0.0;
    for (double y : train_labels) var += (y - y_mean) * (y - y_mean);
    y_std = std::sqrt(var / static_cast<double>(train_labels.size()));
    if (y_std < 1e-12) y_std = 1.0;
  }

  std::mt19937_64 init_rng(config.seed);
  Model model = make_model(static_cast<int>(t), static_cast<int>(d_in), config.layers, head_out,
                           mode, init_rng);
  Optimizer opt(model.named_parameters(), config.optimizer, config.lr, config.beta1,
                config.beta2, config.eps);

  std::mt19937_64 shuffle_rng(config.seed ^ 0x51ed2701a5c3d9b7ULL);
  std::mt19937_64 aug_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  const bool use_pools = config.augment.conformer_pool_size > 0 && !train.pools.empty();
  if (config.augment.conformer_pool_size > 0 && train.pools.empty())
    throw std::invalid_argument("fit: conformer augmentation requested but no pools loaded");

  MetricReport report;
  report.metric = config.metric;
  Model best = model.clone();
  double best_value = std::numeric_limits<double>::quiet_NaN();
  int since_best = 0;

  std::vector<int> order(train.graphs.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<std::string> csv_rows;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      const std::size_t hi = std::min(order.size(), at + config.batch_size);
      std::vector<SpatialGraph> chunk;
      std::vector<ConformerPool> chunk_pools;
      chunk.reserve(hi - at);
      for (std::size_t i = at; i < hi; ++i) {
        chunk.push_back(train.graphs[order[i]]);
        if (use_pools) chunk_pools.push_back(train.pools[order[i]]);
      }
      GraphBatch batch = make_batch(chunk);
      if (config.augment.active())
        batch = augment_batch(batch, config.augment, use_pools ? &chunk_pools : nullptr, aug_rng);
      if (mode == LayerMode::PosConcat) batch = append_position_features(batch);

      Tape tape;
      Tensor logits = model.forward(batch);
      Tensor loss;
      if (config.task == Task::Classify) {
        std::vector<int> lab;
        lab.reserve(hi - at);
        for (std::size_t i = at; i < hi; ++i) lab.push_back(class_labels[order[i]]);
        loss = cross_entropy(logits, lab);
      } else {
        std::vector<double> target(hi - at);
        for (std::size_t i = at; i < hi; ++i)
          target[i - at] = (train_labels[order[i]] - y_mean) / y_std;
        loss = mse(logits, Tensor::from_data({static_cast<std::int64_t>(hi - at), 1},
                                             std::move(target)));
      }
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      loss_sum += lv * static_cast<double>(hi - at);
      backward(loss);
      opt.step();
      opt.zero_grad();
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    report.train_loss.push_back(train_loss);
    csv_rows.push_back(std::to_string(epoch) + ",train,loss," + format_value(train_loss));

    if (!valid.graphs.empty()) {
      // Validation on plain forward passes; predictions destandardized for
      // regression so the metric stays in target units.
      auto outputs = predict_all(model, valid, AugmentPolicy{}, 1, 0);
      if (config.task == Task::Regress)
        for (auto& o : outputs) o[0] = o[0] * y_std + y_mean;
      const double value = metric_value(config.metric, outputs, bundle_labels(valid));
      report.valid_value.push_back(value);
      csv_rows.push_back(std::to_string(epoch) + ",valid," + to_string(config.metric) + "," +
                         format_value(value));
      if (improved(config.metric, value, best_value)) {
        best_value = value;
        best = model.clone();
        report.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        report.epochs_run = epoch + 1;
        break;
      }
    } else {
      best = model.clone();
      report.best_epoch = epoch;
    }
    report.epochs_run = epoch + 1;
  }
  if (config.epochs == 0) {
    best = model.clone();
    report.best_epoch = 0;
  }

  // Fold the target standardization into the head so the checkpoint predicts
  // in original units.
  if (config.task == Task::Regress) {
    auto w = best.head_weight.mutable_data();
    for (auto& v : w) v *= y_std;
    auto b = best.head_bias.mutable_data();
    for (auto& v : b) v = v * y_std + y_mean;
  }

  if (!test.graphs.empty()) {
    auto outputs = predict_all(best, test, config.augment, config.augment.test_time_samples,
                               config.seed ^ 0xc2b2ae3d27d4eb4fULL);
    report.final_test = metric_value(config.metric, outputs, bundle_labels(test));
    csv_rows.push_back(std::to_string(std::max(report.best_epoch, 0)) + ",test," +
                       to_string(config.metric) + "," + format_value(report.final_test));
  }

  if (!config.metrics_out.empty()) {
    std::ofstream out(config.metrics_out);
    if (!out) throw std::runtime_error("cannot write metrics file: " + config.metrics_out);
    out << "epoch,split,metric,value\n";
    for (const auto& row : csv_rows) out << row << '\n';
  }
  if (!config.checkpoint_out.empty()) save_checkpoint(best, config.checkpoint_out);

  return {std::move(report), std::move(best)};
}

}  // namespace sgcn
