#include "sgcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "sgcn/augment.hpp"

namespace sgcn {

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("idx: truncated header in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<unsigned char> read_payload(std::istream& in, std::int64_t expected,
                                        const std::string& path) {
  std::vector<unsigned char> bytes(expected);
  in.read(reinterpret_cast<char*>(bytes.data()), expected);
  if (in.gcount() != expected)
    throw std::runtime_error("idx: truncated payload in " + path + " (expected " +
                             std::to_string(expected) + " bytes, got " +
                             std::to_string(in.gcount()) + ")");
  if (in.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("idx: trailing bytes after payload in " + path);
  return bytes;
}

}  // namespace

Tensor read_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open idx file: " + path);
  const std::uint32_t magic = read_u32_be(in, path);
  if (magic != kImageMagic)
    throw std::runtime_error("idx: bad image magic " + std::to_string(magic) + " in " + path +
                             " (expected " + std::to_string(kImageMagic) + ")");
  const std::int64_t count = read_u32_be(in, path);
  const std::int64_t rows = read_u32_be(in, path);
  const std::int64_t cols = read_u32_be(in, path);
  auto bytes = read_payload(in, count * rows * cols, path);
  std::vector<double> d(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) d[i] = bytes[i] / 255.0;
  return Tensor::from_data({count, rows, cols}, std::move(d));
}

std::vector<int> read_idx_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open idx file: " + path);
  const std::uint32_t magic = read_u32_be(in, path);
  if (magic != kLabelMagic)
    throw std::runtime_error("idx: bad label magic " + std::to_string(magic) + " in " + path +
                             " (expected " + std::to_string(kLabelMagic) + ")");
  const std::int64_t count = read_u32_be(in, path);
  auto bytes = read_payload(in, count, path);
  return std::vector<int>(bytes.begin(), bytes.end());
}

void write_idx_images(const std::string& path, const Tensor& images) {
  if (images.rank() != 3) throw std::invalid_argument("write_idx_images: need count x rows x cols");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open idx file for writing: " + path);
  write_u32_be(out, kImageMagic);
  write_u32_be(out, static_cast<std::uint32_t>(images.shape()[0]));
  write_u32_be(out, static_cast<std::uint32_t>(images.shape()[1]));
  write_u32_be(out, static_cast<std::uint32_t>(images.shape()[2]));
  std::vector<unsigned char> bytes(images.numel());
  for (std::int64_t i = 0; i < images.numel(); ++i) {
    const double v = std::clamp(images.data()[i], 0.0, 1.0);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

void write_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open idx file for writing: " + path);
  write_u32_be(out, kLabelMagic);
  write_u32_be(out, static_cast<std::uint32_t>(labels.size()));
  for (int v : labels) {
    if (v < 0 || v > 255) throw std::invalid_argument("write_idx_labels: label out of byte range");
    const unsigned char b = static_cast<unsigned char>(v);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

// ---------------------------------------------------------------------------
// SDF V2000

namespace {

// Fixed-column integer field; V2000 right-justifies these.
int parse_ctab_int(const std::string& line, std::size_t pos, std::size_t len,
                   const std::string& what) {
  if (line.size() < pos + len) throw std::runtime_error("sdf: short " + what + " line: " + line);
  const std::string field = line.substr(pos, len);
  try {
    return std::stoi(field);
  } catch (const std::exception&) {
    throw std::runtime_error("sdf: bad integer field '" + field + "' in " + what + " line");
  }
}

double parse_ctab_double(const std::string& line, std::size_t pos, std::size_t len) {
  if (line.size() < pos + len) throw std::runtime_error("sdf: short atom line: " + line);
  return std::stod(line.substr(pos, len));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string next_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("sdf: unexpected end of file in " + what);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::vector<MolRecord> read_sdf(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open sdf file: " + path);
  std::vector<MolRecord> records;

  std::string line;
  while (true) {
    // Header block: name, program, comment. EOF before a new record is fine.
    if (!std::getline(in, line)) break;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    MolRecord rec;
    rec.name = trim(line);
    next_line(in, "header");
    next_line(in, "header");

    const std::string counts = next_line(in, "counts");
    if (counts.size() < 6 || counts.find("V2000") == std::string::npos)
      throw std::runtime_error("sdf: malformed counts line: '" + counts + "'");
    const int natoms = parse_ctab_int(counts, 0, 3, "counts");
    const int nbonds = parse_ctab_int(counts, 3, 3, "counts");
    if (natoms <= 0) throw std::runtime_error("sdf: record with no atoms");

    for (int i = 0; i < natoms; ++i) {
      const std::string al = next_line(in, "atom block");
      SdfAtom atom;
      atom.x = parse_ctab_double(al, 0, 10);
      atom.y = parse_ctab_double(al, 10, 10);
      atom.z = parse_ctab_double(al, 20, 10);
      if (al.size() < 34) throw std::runtime_error("sdf: short atom line: " + al);
      atom.symbol = trim(al.substr(31, 3));
      if (atom.symbol.empty()) throw std::runtime_error("sdf: atom with empty symbol");
      rec.atoms.push_back(std::move(atom));
    }

    for (int i = 0; i < nbonds; ++i) {
      const std::string bl = next_line(in, "bond block");
      SdfBond bond;
      bond.a1 = parse_ctab_int(bl, 0, 3, "bond") - 1;
      bond.a2 = parse_ctab_int(bl, 3, 3, "bond") - 1;
      bond.order = parse_ctab_int(bl, 6, 3, "bond");
      if (bond.a1 < 0 || bond.a1 >= natoms || bond.a2 < 0 || bond.a2 >= natoms)
        throw std::runtime_error("sdf: bond atom index out of range in '" + bl + "'");
      rec.bonds.push_back(bond);
    }

    // Property block until M  END; only charge overrides are interpreted.
    while (true) {
      const std::string pl = next_line(in, "property block");
      if (pl.rfind("M  END", 0) == 0) break;
      if (pl.rfind("M  CHG", 0) == 0) {
        std::istringstream ps(pl.substr(6));
        int n = 0;
        if (!(ps >> n)) throw std::runtime_error("sdf: malformed charge line: " + pl);
        for (int i = 0; i < n; ++i) {
          int idx, chg;
          if (!(ps >> idx >> chg))
            throw std::runtime_error("sdf: malformed charge line: " + pl);
          if (idx < 1 || idx > natoms)
            throw std::runtime_error("sdf: charge atom index out of range in: " + pl);
          rec.atoms[idx - 1].formal_charge = chg;
        }
      }
    }

    // Data items until the record terminator (or EOF for the last record).
    bool saw_terminator = false;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.rfind("$$$$", 0) == 0) {
        saw_terminator = true;
        break;
      }
    }
    records.push_back(std::move(rec));
    if (!saw_terminator) break;
  }
  return records;
}

void write_sdf(const std::string& path, const std::vector<MolRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open sdf file for writing: " + path);
  char buf[96];
  for (const MolRecord& rec : records) {
    out << rec.name << "\n  sgcn\n\n";
    std::snprintf(buf, sizeof(buf), "%3d%3d  0  0  0  0  0  0  0  0999 V2000\n",
                  static_cast<int>(rec.atoms.size()), static_cast<int>(rec.bonds.size()));
    out << buf;
    for (const SdfAtom& a : rec.atoms) {
      std::snprintf(buf, sizeof(buf), "%10.4f%10.4f%10.4f %-3s 0  0  0  0  0  0  0  0  0  0  0  0\n",
                    a.x, a.y, a.z, a.symbol.c_str());
      out << buf;
    }
    for (const SdfBond& b : rec.bonds) {
      std::snprintf(buf, sizeof(buf), "%3d%3d%3d  0\n", b.a1 + 1, b.a2 + 1, b.order);
      out << buf;
    }
    std::vector<std::pair<int, int>> charges;
    for (std::size_t i = 0; i < rec.atoms.size(); ++i)
      if (rec.atoms[i].formal_charge != 0)
        charges.emplace_back(static_cast<int>(i) + 1, rec.atoms[i].formal_charge);
    // M  CHG lines carry at most 8 pairs each
    for (std::size_t at = 0; at < charges.size(); at += 8) {
      const std::size_t hi = std::min(charges.size(), at + 8);
      out << "M  CHG" << std::setw(3) << (hi - at);
      for (std::size_t i = at; i < hi; ++i)
        out << std::setw(4) << charges[i].first << std::setw(4) << charges[i].second;
      out << '\n';
    }
    out << "M  END\n$$$$\n";
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

// ---------------------------------------------------------------------------
// Featurization

namespace {

int atom_type_slot(const std::string& symbol) {
  static const std::vector<std::string> vocab = {"C", "N", "O",  "S", "F",
                                                 "Cl", "Br", "I", "P"};
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (symbol == vocab[i]) return static_cast<int>(i);
  return kAtomTypeVocab - 1;  // "other"
}

// Shortest cycle through edge (u, v): BFS from u to v with the edge removed.
// Returns 0 when none within the cap.
int shortest_cycle_through(const std::vector<std::vector<std::int32_t>>& adj, int u, int v,
                           int max_len) {
  std::vector<int> dist(adj.size(), -1);
  std::deque<int> queue;
  dist[u] = 0;
  queue.push_back(u);
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    if (dist[cur] >= max_len - 1) continue;
    for (int nb : adj[cur]) {
      if ((cur == u && nb == v) || (cur == v && nb == u)) continue;  // skip the edge itself
      if (dist[nb] < 0) {
        dist[nb] = dist[cur] + 1;
        if (nb == v) return dist[nb] + 1;
        queue.push_back(nb);
      }
    }
  }
  return 0;
}

}  // namespace

SpatialGraph featurize(const MolRecord& record, const FeaturizeOptions& options) {
  const int n = static_cast<int>(record.atoms.size());
  auto adj = std::make_shared<AdjacencyList>(n);
  std::vector<int> aromatic(n, 0);
  for (const SdfBond& b : record.bonds) {
    (*adj)[b.a1].push_back(b.a2);
    (*adj)[b.a2].push_back(b.a1);
    if (b.order == 4) aromatic[b.a1] = aromatic[b.a2] = 1;
  }
  for (int i = 0; i < n; ++i) {
    auto& nb = (*adj)[i];
    if (options.add_self_loops) nb.push_back(i);
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }

  // Ring membership via shortest cycles per bond. Self-loops are not part of
  // the bond topology, so use the raw bond adjacency.
  std::vector<int> in_ring(n, 0);
  {
    AdjacencyList bond_adj(n);
    for (const SdfBond& b : record.bonds) {
      bond_adj[b.a1].push_back(b.a2);
      bond_adj[b.a2].push_back(b.a1);
    }
    for (const SdfBond& b : record.bonds) {
      if (in_ring[b.a1] && in_ring[b.a2]) continue;
      const int cyc = shortest_cycle_through(bond_adj, b.a1, b.a2, options.max_ring_size);
      if (cyc > 0 && cyc <= options.max_ring_size) in_ring[b.a1] = in_ring[b.a2] = 1;
    }
  }

  std::vector<double> feat(static_cast<std::size_t>(n) * kAtomFeatureDim, 0.0);
  std::vector<double> pos(static_cast<std::size_t>(n) * 3, 0.0);
  bool any_coordinate = false;
  for (int i = 0; i < n; ++i) {
    const SdfAtom& a = record.atoms[i];
    double* f = feat.data() + static_cast<std::size_t>(i) * kAtomFeatureDim;
    f[atom_type_slot(a.symbol)] = 1.0;
    f[kAtomTypeVocab + 0] = static_cast<double>(a.formal_charge);
    int heavy = 0, hydro = 0;
    for (std::int32_t j : (*adj)[i]) {
      if (j == i) continue;
      if (record.atoms[j].symbol == "H")
        ++hydro;
      else
        ++heavy;
    }
    f[kAtomTypeVocab + 1] = heavy;
    f[kAtomTypeVocab + 2] = hydro;
    f[kAtomTypeVocab + 3] = in_ring[i];
    f[kAtomTypeVocab + 4] = aromatic[i];
    pos[i * 3 + 0] = snap_coordinate(a.x);
    pos[i * 3 + 1] = snap_coordinate(a.y);
    pos[i * 3 + 2] = snap_coordinate(a.z);
    any_coordinate = any_coordinate || a.x != 0.0 || a.y != 0.0 || a.z != 0.0;
  }

  SpatialGraph g;
  g.features = Tensor::from_data({n, kAtomFeatureDim}, std::move(feat));
  g.positions = Tensor::from_data({n, 3}, std::move(pos));
  g.adjacency = std::move(adj);
  g.has_positions = any_coordinate;
  return g;
}

// ---------------------------------------------------------------------------
// Labels

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

LabelTable load_labels(const std::string& path_csv, const std::string& id_column,
                       const std::string& target_column) {
  std::ifstream in(path_csv);
  if (!in) throw std::runtime_error("cannot open label file: " + path_csv);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("label file is empty: " + path_csv);
  const auto header = split_csv_line(line);
  int id_idx = -1, target_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) == id_column) id_idx = static_cast<int>(i);
    if (trim(header[i]) == target_column) target_idx = static_cast<int>(i);
  }
  if (id_idx < 0)
    throw std::runtime_error("label file missing id column '" + id_column + "'");
  if (target_idx < 0)
    throw std::runtime_error("label file missing target column '" + target_column + "'");

  LabelTable table;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) <= std::max(id_idx, target_idx)) {
      ++table.dropped;
      continue;
    }
    const std::string id = trim(cells[id_idx]);
    const std::string raw = trim(cells[target_idx]);
    char* end = nullptr;
    const double value = std::strtod(raw.c_str(), &end);
    if (raw.empty() || end != raw.c_str() + raw.size()) {
      ++table.dropped;
      continue;
    }
    if (table.by_id.count(id))
      ++table.duplicates;  // last wins
    else
      table.order.push_back(id);
    table.by_id[id] = value;
  }
  return table;
}

// ---------------------------------------------------------------------------
// Splits

void DatasetSplit::validate(int n) const {
  std::vector<char> seen(n, 0);
  auto mark = [&](const std::vector<int>& idx) {
    for (int i : idx) {
      if (i < 0 || i >= n) throw std::invalid_argument("split: index out of range");
      if (seen[i]) throw std::invalid_argument("split: sections are not disjoint");
      seen[i] = 1;
    }
  };
  mark(train);
  mark(valid);
  mark(test);
  if (std::count(seen.begin(), seen.end(), char(1)) != n)
    throw std::invalid_argument("split: sections do not cover the dataset");
}

DatasetSplit make_split(int n, SplitKind kind, std::uint64_t seed,
                        const std::array<double, 3>& fractions, const std::string& path) {
  if (kind == SplitKind::FromFile) {
    DatasetSplit s = read_split_file(path);
    s.validate(n);
    return s;
  }
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions sum to " + std::to_string(sum) + ", not 1");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const int n_train = static_cast<int>(std::floor(fractions[0] * n));
  const int n_valid = static_cast<int>(std::floor(fractions[1] * n));
  DatasetSplit s;
  s.train.assign(idx.begin(), idx.begin() + n_train);
  s.valid.assign(idx.begin() + n_train, idx.begin() + n_train + n_valid);
  s.test.assign(idx.begin() + n_train + n_valid, idx.end());
  return s;
}

DatasetSplit read_split_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file: " + path);
  DatasetSplit s;
  std::vector<int>* section = nullptr;
  std::string line;
  while (std::getline(in, line)) {
    const std::string word = trim(line);
    if (word.empty()) continue;
    if (word == "train")
      section = &s.train;
    else if (word == "valid")
      section = &s.valid;
    else if (word == "test")
      section = &s.test;
    else if (section)
      section->push_back(std::stoi(word));
    else
      throw std::runtime_error("split file: index before any section header");
  }
  return s;
}

void write_split_file(const std::string& path, const DatasetSplit& split) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open split file for writing: " + path);
  auto section = [&](const char* name, const std::vector<int>& idx) {
    out << name << '\n';
    for (int i : idx) out << i << '\n';
  };
  section("train", split.train);
  section("valid", split.valid);
  section("test", split.test);
  if (!out) throw std::runtime_error("short write to " + path);
}

// ---------------------------------------------------------------------------

GraphBatch append_position_features(const GraphBatch& batch) {
  const std::int64_t n = batch.num_nodes();
  const std::int64_t d = batch.features.shape()[1];
  const std::int64_t t = batch.positions.shape()[1];
  std::vector<double> f(n * (d + t));
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy(batch.features.data().begin() + i * d, batch.features.data().begin() + (i + 1) * d,
              f.begin() + i * (d + t));
    std::copy(batch.positions.data().begin() + i * t,
              batch.positions.data().begin() + (i + 1) * t, f.begin() + i * (d + t) + d);
  }
  GraphBatch out = batch;
  out.features = Tensor::from_data({n, d + t}, std::move(f));
  return out;
}

}  // namespace sgcn
