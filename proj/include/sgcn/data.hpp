#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgcn/graph.hpp"
#include "sgcn/tensor.hpp"

// Dataset ingestion: IDX image containers, SDF V2000 molecule files, label
// tables and split handling.

namespace sgcn {

// --- IDX (big-endian, magic 2051 for images / 2049 for labels) -------------

/// count x rows x cols with pixel bytes scaled to [0, 1].
Tensor read_idx_images(const std::string& path);
std::vector<int> read_idx_labels(const std::string& path);
void write_idx_images(const std::string& path, const Tensor& images);
void write_idx_labels(const std::string& path, const std::vector<int>& labels);

// --- SDF V2000 --------------------------------------------------------------

struct SdfAtom {
  std::string symbol;
  double x = 0, y = 0, z = 0;
  int formal_charge = 0;
};

struct SdfBond {
  int a1 = 0, a2 = 0;  // 0-based
  int order = 1;       // 1..3 covalent, 4 aromatic
};

struct MolRecord {
  std::string name;
  std::vector<SdfAtom> atoms;
  std::vector<SdfBond> bonds;

  bool operator==(const MolRecord&) const = default;
};

inline bool operator==(const SdfAtom& a, const SdfAtom& b) {
  return a.symbol == b.symbol && a.x == b.x && a.y == b.y && a.z == b.z &&
         a.formal_charge == b.formal_charge;
}
inline bool operator==(const SdfBond& a, const SdfBond& b) {
  return a.a1 == b.a1 && a.a2 == b.a2 && a.order == b.order;
}

/// Parses fixed-column V2000 connection tables separated by `$$$$`. Formal
/// charges come from `M  CHG` property lines.
std::vector<MolRecord> read_sdf(const std::string& path);
void write_sdf(const std::string& path, const std::vector<MolRecord>& records);

// --- Featurization ----------------------------------------------------------

/// Per-node features, in column order: one-hot atom type over
/// (C, N, O, S, F, Cl, Br, I, P, other), formal charge, heavy-neighbor
/// count, attached explicit hydrogens, in-ring flag, aromatic flag.
inline constexpr int kAtomTypeVocab = 10;
inline constexpr int kAtomFeatureDim = kAtomTypeVocab + 5;

struct FeaturizeOptions {
  bool add_self_loops = false;
  /// Cycles longer than this do not set the ring flag.
  int max_ring_size = 12;
};

/// Molecular graph with the feature matrix above, undirected adjacency from
/// the bond list and positions from the file coordinates (snapped to the
/// translation-exact grid). A record whose coordinates are all zero is
/// flagged as having no positions.
SpatialGraph featurize(const MolRecord& record, const FeaturizeOptions& options = {});

// --- Label tables -----------------------------------------------------------

struct LabelTable {
  std::unordered_map<std::string, double> by_id;
  std::vector<std::string> order;  // first-seen id order
  int dropped = 0;                 // non-numeric targets
  int duplicates = 0;              // repeated ids (last wins)
};

LabelTable load_labels(const std::string& path_csv, const std::string& id_column,
                       const std::string& target_column);

// --- Splits -----------------------------------------------------------------

struct DatasetSplit {
  std::vector<int> train, valid, test;
  void validate(int n) const;  // disjoint and covering
};

enum class SplitKind { Random, FromFile };

/// Random: deterministic shuffle by seed, contiguous partition with sizes
/// floor(f0*n), floor(f1*n) and the remainder. FromFile: indices read from
/// `path` pass through unchanged.
DatasetSplit make_split(int n, SplitKind kind, std::uint64_t seed,
                        const std::array<double, 3>& fractions, const std::string& path = "");

DatasetSplit read_split_file(const std::string& path);
void write_split_file(const std::string& path, const DatasetSplit& split);

// --- Position-enriched features (pos-GCN input) ------------------------------

/// Copies the batch with the position columns appended to the features, for
/// the mode that feeds coordinates through the features instead of the gates.
GraphBatch append_position_features(const GraphBatch& batch);

}  // namespace sgcn
