// Command-line front end: training, evaluation, the convolution-equivalence
// verifier, augmentation sanity probes and synthetic dataset generation.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "sgcn/augment.hpp"
#include "sgcn/cnn_equiv.hpp"
#include "sgcn/data.hpp"
#include "sgcn/layer.hpp"
#include "sgcn/synth.hpp"
#include "sgcn/train.hpp"

namespace fs = std::filesystem;
using namespace sgcn;

namespace {

int run_train(const std::string& config_path) {
  TrainConfig config = parse_config(config_path);
  LoadedDatasets data = load_datasets(config);
  std::printf("loaded %lld train / %lld valid / %lld test graphs\n",
              static_cast<long long>(data.train.size()), static_cast<long long>(data.valid.size()),
              static_cast<long long>(data.test.size()));
  FitResult result = fit(config, data.train, data.valid, data.test);
  std::printf("ran %d epochs (best %d)\n", result.report.epochs_run, result.report.best_epoch);
  if (!result.report.valid_value.empty())
    std::printf("best valid %s: %.6g\n", to_string(result.report.metric).c_str(),
                result.report.valid_value[result.report.best_epoch]);
  if (!std::isnan(result.report.final_test))
    std::printf("test %s: %.6g\n", to_string(result.report.metric).c_str(),
                result.report.final_test);
  return 0;
}

// A data directory is either a molecule set (molecules.sdf + labels.csv
// [+ conformers.txt]) or an image set (test-images.idx + test-labels.idx).
DataBundle load_dir(const std::string& dir, int grid_radius) {
  if (fs::exists(dir + "/molecules.sdf")) {
    const std::string conf =
        fs::exists(dir + "/conformers.txt") ? dir + "/conformers.txt" : std::string();
    return load_sdf_dataset(dir + "/molecules.sdf", dir + "/labels.csv", "id", "target", conf,
                            FeaturizeOptions{});
  }
  if (fs::exists(dir + "/test-images.idx"))
    return load_idx_dataset(dir + "/test-images.idx", dir + "/test-labels.idx", grid_radius);
  throw std::runtime_error("no recognizable dataset under " + dir);
}

int run_eval(const std::string& checkpoint, const std::string& dir, int tta,
             std::string metric_name, std::uint64_t seed) {
  Model model = load_checkpoint(checkpoint);
  DataBundle data = load_dir(dir, 1);

  Metric metric;
  if (!metric_name.empty()) {
    if (metric_name == "accuracy") metric = Metric::Accuracy;
    else if (metric_name == "roc_auc") metric = Metric::RocAuc;
    else if (metric_name == "rmse") metric = Metric::Rmse;
    else throw std::runtime_error("unknown metric '" + metric_name + "'");
  } else {
    metric = model.output_dim() == 1    ? Metric::Rmse
             : model.output_dim() == 2  ? Metric::RocAuc
                                        : Metric::Accuracy;
  }

  AugmentPolicy policy;
  if (tta > 1) {
    policy.rotate = true;
    policy.rotation_dim = static_cast<int>(model.position_dim());
    policy.conformer_pool_size = data.pools.empty() ? 0 : 5;
    policy.test_time_samples = tta;
  }
  auto outputs = predict_all(model, data, policy, tta, seed);
  std::vector<double> labels;
  for (const auto& g : data.graphs) labels.push_back(g.label.value_or(NAN));
  const double value = metric_value(metric, outputs, labels);
  std::printf("%s on %zu graphs: %.6g\n", to_string(metric).c_str(), outputs.size(), value);
  return 0;
}

int run_verify_cnn_equiv(int trials, int max_k, std::uint64_t seed) {
  EquivalenceReport rep = verify_equivalence(trials, max_k, seed);
  std::printf("%s: %d trials, worst deviation %.3e (tolerance 1e-9)\n",
              rep.pass ? "PASS" : "FAIL", rep.trials, rep.worst_deviation);
  return rep.pass ? 0 : 1;
}

int run_augment_check(const std::string& dir, std::uint64_t seed) {
  DataBundle data = load_dir(dir, 1);
  std::mt19937_64 rng(seed);
  const std::int64_t t = data.graphs[0].position_dim();
  int failures = 0;
  auto report = [&](const char* name, bool ok) {
    std::printf("%s: %s\n", ok ? "PASS" : "FAIL", name);
    if (!ok) ++failures;
  };

  // Rotations preserve pairwise distances.
  {
    bool ok = true;
    for (int trial = 0; trial < 10 && ok; ++trial) {
      const SpatialGraph& g = data.graphs[trial % data.graphs.size()];
      SpatialGraph r = rotate(g, sample_rotation(static_cast<int>(t), rng));
      for (std::int64_t a = 0; a < g.num_nodes() && ok; ++a)
        for (std::int64_t b = a + 1; b < g.num_nodes(); ++b) {
          double d0 = 0, d1 = 0;
          for (std::int64_t s = 0; s < t; ++s) {
            const double u = g.positions(a, s) - g.positions(b, s);
            const double v = r.positions(a, s) - r.positions(b, s);
            d0 += u * u;
            d1 += v * v;
          }
          if (std::abs(std::sqrt(d0) - std::sqrt(d1)) > 1e-10) {
            ok = false;
            break;
          }
        }
    }
    report("rotation preserves pairwise distances (1e-10)", ok);
  }

  // Whole-graph translation changes no model output bit.
  {
    std::mt19937_64 model_rng(7);
    Model model = make_model(static_cast<int>(t), static_cast<int>(data.graphs[0].feature_dim()),
                             {{4, 8}, {2, 8}}, 2, LayerMode::Spatial, model_rng);
    const std::size_t probe = std::min<std::size_t>(data.graphs.size(), 16);
    std::vector<SpatialGraph> subset(data.graphs.begin(), data.graphs.begin() + probe);
    GraphBatch batch = make_batch(subset);
    Tensor before = model.forward(batch);
    AugmentPolicy policy;
    policy.translate_sigma = 2.5;
    GraphBatch shifted = augment_batch(batch, policy, nullptr, rng);
    Tensor after = model.forward(shifted);
    bool ok = true;
    for (std::int64_t i = 0; i < before.numel(); ++i)
      ok = ok && before.data()[i] == after.data()[i];
    report("translation-only augmentation leaves outputs bit-identical", ok);
  }

  // Conformer sampling is reproducible under the same seed.
  if (!data.pools.empty()) {
    AugmentPolicy policy;
    policy.conformer_pool_size = 5;
    GraphBatch batch = make_batch(data.graphs);
    std::mt19937_64 rng_a(seed + 1), rng_b(seed + 1);
    GraphBatch a = augment_batch(batch, policy, &data.pools, rng_a);
    GraphBatch b = augment_batch(batch, policy, &data.pools, rng_b);
    bool ok = true;
    for (std::int64_t i = 0; i < a.positions.numel(); ++i)
      ok = ok && a.positions.data()[i] == b.positions.data()[i];
    report("conformer sampling reproducible under a fixed seed", ok);
  }

  // Rotation changes the gated aggregation (this is what augmentation uses).
  {
    bool ok = false;
    for (int trial = 0; trial < 10 && !ok; ++trial) {
      const SpatialGraph& g = data.graphs[trial % data.graphs.size()];
      Tensor u = Tensor::uniform({t, g.feature_dim()}, -1, 1, rng);
      Tensor b = Tensor::uniform({g.feature_dim()}, 0, 1, rng);
      Tensor base = spatial_aggregate(g, g.features, u, b);
      Tensor rot = spatial_aggregate(rotate(g, sample_rotation(static_cast<int>(t), rng)),
                                     g.features, u, b);
      for (std::int64_t i = 0; i < base.numel(); ++i)
        if (std::abs(base.data()[i] - rot.data()[i]) > 1e-6) {
          ok = true;
          break;
        }
    }
    report("rotation perturbs the gated aggregation", ok);
  }

  return failures == 0 ? 0 : 1;
}

int run_gen_digits(const std::string& out, int train_count, int test_count, std::uint64_t seed) {
  fs::create_directories(out);
  generate_digit_dataset(out, train_count, test_count, seed);
  std::printf("wrote %d train / %d test digit images under %s\n", train_count, test_count,
              out.c_str());
  return 0;
}

int run_gen_chem(const std::string& out, int pairs, int conformers, std::uint64_t seed) {
  fs::create_directories(out);
  SynthChemOptions options;
  options.pairs = pairs;
  options.conformers = conformers;
  options.seed = seed;
  SynthChemCorpus corpus = generate_chem_corpus(options);
  write_chem_dataset(out, corpus);
  std::printf("wrote %zu molecules (%d conformers each) under %s\n", corpus.molecules.size(),
              conformers, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial graph convolution toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "key = value config file")->required();

  std::string checkpoint, eval_dir, eval_metric;
  int tta = 1;
  std::uint64_t eval_seed = 1;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset directory");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--data", eval_dir)->required();
  eval_cmd->add_option("--tta", tta, "test-time augmentation samples");
  eval_cmd->add_option("--metric", eval_metric, "accuracy | roc_auc | rmse");
  eval_cmd->add_option("--seed", eval_seed);

  int trials = 100, max_k = 2;
  std::uint64_t verify_seed = 1;
  auto* verify_cmd =
      app.add_subcommand("verify-cnn-equiv", "check convolution emulation against the oracle");
  verify_cmd->add_option("--trials", trials);
  verify_cmd->add_option("--max-k", max_k);
  verify_cmd->add_option("--seed", verify_seed);

  std::string aug_dir;
  std::uint64_t aug_seed = 1;
  auto* aug_cmd = app.add_subcommand("augment-check", "augmentation sanity probes on a dataset");
  aug_cmd->add_option("--data", aug_dir)->required();
  aug_cmd->add_option("--seed", aug_seed);

  std::string digits_out = "data/digits";
  int digits_train = 5000, digits_test = 1000;
  std::uint64_t digits_seed = 1;
  auto* digits_cmd = app.add_subcommand("gen-digits", "write a synthetic digit dataset (IDX)");
  digits_cmd->add_option("--out", digits_out);
  digits_cmd->add_option("--train", digits_train);
  digits_cmd->add_option("--test", digits_test);
  digits_cmd->add_option("--seed", digits_seed);

  std::string chem_out = "data/chem";
  int chem_pairs = 200, chem_conformers = 5;
  std::uint64_t chem_seed = 1;
  auto* chem_cmd =
      app.add_subcommand("gen-chem", "write a synthetic molecule dataset (SDF + labels + pools)");
  chem_cmd->add_option("--out", chem_out);
  chem_cmd->add_option("--pairs", chem_pairs);
  chem_cmd->add_option("--conformers", chem_conformers);
  chem_cmd->add_option("--seed", chem_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return run_train(config_path);
    if (eval_cmd->parsed()) return run_eval(checkpoint, eval_dir, tta, eval_metric, eval_seed);
    if (verify_cmd->parsed()) return run_verify_cnn_equiv(trials, max_k, verify_seed);
    if (aug_cmd->parsed()) return run_augment_check(aug_dir, aug_seed);
    if (digits_cmd->parsed())
      return run_gen_digits(digits_out, digits_train, digits_test, digits_seed);
    if (chem_cmd->parsed()) return run_gen_chem(chem_out, chem_pairs, chem_conformers, chem_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
