#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgcn/augment.hpp"
#include "sgcn/data.hpp"
#include "sgcn/tensor.hpp"

// Deterministic synthetic corpora. The sandboxed test environment has no
// public datasets, so the image and chemistry pipelines are exercised on
// generated data that passes through the same file formats (IDX, SDF, label
// CSV, conformer pools) as real datasets would.

namespace sgcn {

/// Renders `count` 28x28 digit images (classes 0..9) with random affine
/// jitter, stroke-width and intensity variation, and speckle noise.
Tensor render_digits(int count, std::uint64_t seed, std::vector<int>& labels_out);

/// Writes images/labels pairs for a train and a test set under `dir` as
/// train-images.idx / train-labels.idx / test-images.idx / test-labels.idx.
void generate_digit_dataset(const std::string& dir, int train_count, int test_count,
                            std::uint64_t seed);

struct SynthChemOptions {
  int pairs = 200;        // molecules come in folded/extended pairs
  int conformers = 5;     // pool entries per molecule (first one = stored geometry)
  double jitter_sigma = 0.12;  // conformer coordinate jitter, Angstrom
  std::uint64_t seed = 1;
};

struct SynthChemCorpus {
  std::vector<MolRecord> molecules;
  std::vector<double> labels;               // aligned with molecules
  std::vector<ConformerRecord> conformers;  // aligned with molecules
};

/// Paired corpus: each random topology is embedded twice, once folded
/// (compact random coil, label 0) and once extended (near-linear chain,
/// label 1), each in a random orientation. Topology alone cannot separate
/// the classes; geometry separates them cleanly.
SynthChemCorpus generate_chem_corpus(const SynthChemOptions& options);

/// Writes molecules.sdf, labels.csv (id,target) and conformers.txt under
/// `dir`.
void write_chem_dataset(const std::string& dir, const SynthChemCorpus& corpus);

}  // namespace sgcn
