#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sgcn/augment.hpp"
#include "sgcn/data.hpp"
#include "sgcn/graph.hpp"
#include "sgcn/layer.hpp"
#include "sgcn/tensor.hpp"

// Training and evaluation: losses, metrics, the Adam/SGD step, the epoch
// loop with validation-based early stopping, and dataset assembly from
// config files. Runs are deterministic in the config seed.

namespace sgcn {

enum class Task { Classify, Regress };
enum class Metric { Accuracy, RocAuc, Rmse };
enum class OptimizerKind { Adam, Sgd };

std::string to_string(Metric m);

struct TrainConfig {
  Task task = Task::Classify;
  LayerMode mode = LayerMode::Spatial;
  Metric metric = Metric::Accuracy;
  std::vector<LayerSpec> layers = {{4, 16}};
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 1;
  int patience = 20;
  AugmentPolicy augment;

  // data
  std::string data_kind = "sdf";  // "idx" | "sdf"
  std::string data_dir;
  std::string train_images = "train-images.idx", train_labels = "train-labels.idx";
  std::string test_images = "test-images.idx", test_labels = "test-labels.idx";
  std::string sdf_file = "molecules.sdf", labels_csv = "labels.csv";
  std::string conformers_file, split_file;
  std::string id_column = "id", target_column = "target";
  int grid_radius = 1;
  bool self_loops = false;
  double valid_fraction = 0.1, test_fraction = 0.1;
  std::uint64_t split_seed = 0;  // 0 = use `seed`

  // outputs ("" = skip)
  std::string metrics_out, checkpoint_out;

  void validate() const;
};

/// Flat `key = value` file; '#' starts a comment. Unknown keys are errors.
TrainConfig parse_config(const std::string& path);

struct MetricReport {
  Metric metric = Metric::Accuracy;
  std::vector<double> train_loss;    // per epoch
  std::vector<double> valid_value;   // per epoch (empty when no validation split)
  double final_test = std::numeric_limits<double>::quiet_NaN();
  int best_epoch = -1;
  int epochs_run = 0;
};

// --- Losses and metrics ------------------------------------------------------

/// Mean negative log-softmax of the true class, max-shifted for stability.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor mse(const Tensor& pred, const Tensor& target);

/// Exact pairwise estimator P(score+ > score-) + 0.5 P(tie); throws when a
/// class is missing.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Argmax comparison; ties resolve to the lowest class index.
double accuracy(const std::vector<std::vector<double>>& outputs, const std::vector<int>& labels);

// --- Optimizer ---------------------------------------------------------------

class Optimizer {
 public:
  Optimizer(std::vector<std::pair<std::string, Tensor>> params, OptimizerKind kind, double lr,
            double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update from the accumulated gradients. Throws on non-finite
  /// gradients, naming the parameter.
  void step();
  void zero_grad();
  std::int64_t step_count() const { return t_; }

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<Slot> slots_;
  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

// --- Datasets ----------------------------------------------------------------

struct DataBundle {
  std::vector<SpatialGraph> graphs;
  std::vector<ConformerPool> pools;  // empty, or aligned with graphs

  std::int64_t size() const { return static_cast<std::int64_t>(graphs.size()); }
  DataBundle subset(const std::vector<int>& indices) const;
};

/// Molecules featurized and joined to labels by record name; molecules with
/// no label row are dropped (the count is reported via `dropped`).
DataBundle load_sdf_dataset(const std::string& sdf_path, const std::string& labels_csv,
                            const std::string& id_column, const std::string& target_column,
                            const std::string& conformers_path, const FeaturizeOptions& options,
                            int* dropped = nullptr);

/// One grid graph per image, label from the companion file.
DataBundle load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                            int grid_radius);

struct LoadedDatasets {
  DataBundle train, valid, test;
};

/// Assembles train/valid/test bundles according to the config's data section.
LoadedDatasets load_datasets(const TrainConfig& config);

// --- Prediction and fitting ---------------------------------------------------

/// Raw model outputs per graph. With an active policy and samples > 1 this is
/// test-time augmentation (mean of raw outputs over augmented copies);
/// otherwise plain batched forward passes.
std::vector<std::vector<double>> predict_all(const Model& model, const DataBundle& data,
                                             const AugmentPolicy& policy, int samples,
                                             std::uint64_t seed, int batch_size = 64);

double metric_value(Metric metric, const std::vector<std::vector<double>>& outputs,
                    const std::vector<double>& labels);

struct FitResult {
  MetricReport report;
  Model model;  // best-validation parameters (standardization folded in for
                // regression)
};

/// The epoch loop: augment -> batch -> forward -> loss -> backward -> step,
/// validation each epoch, early stopping on the validation metric, final
/// test evaluation with test-time augmentation. Writes the metrics CSV and
/// checkpoint when the config names them.
FitResult fit(const TrainConfig& config, const DataBundle& train, const DataBundle& valid,
              const DataBundle& test);

}  // namespace sgcn
