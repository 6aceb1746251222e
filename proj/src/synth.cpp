#include "sgcn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

namespace sgcn {

// ---------------------------------------------------------------------------
// Digit rendering

namespace {

struct Pt {
  double x, y;
};

using Polyline = std::vector<Pt>;

// Arc sampled into a polyline; angles in radians, y grows downward.
Polyline arc(double cx, double cy, double rx, double ry, double a0, double a1, int steps = 24) {
  Polyline p;
  for (int i = 0; i <= steps; ++i) {
    const double a = a0 + (a1 - a0) * i / steps;
    p.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return p;
}

Polyline seg(Pt a, Pt b) { return {a, b}; }

constexpr double kPi = std::numbers::pi;

// Glyph strokes in a unit box, x right, y down.
std::vector<Polyline> digit_strokes(int digit) {
  switch (digit) {
    case 0:
      return {arc(0.50, 0.50, 0.26, 0.36, 0.0, 2.0 * kPi, 40)};
    case 1:
      return {seg({0.36, 0.26}, {0.54, 0.14}), seg({0.54, 0.14}, {0.54, 0.86}),
              seg({0.38, 0.86}, {0.68, 0.86})};
    case 2:
      return {arc(0.50, 0.32, 0.22, 0.19, -kPi, 0.35 * kPi, 24),
              seg({0.66, 0.51}, {0.30, 0.86}), seg({0.30, 0.86}, {0.72, 0.86})};
    case 3:
      return {arc(0.46, 0.31, 0.20, 0.17, -0.75 * kPi, 0.5 * kPi, 24),
              arc(0.46, 0.67, 0.22, 0.19, -0.5 * kPi, 0.75 * kPi, 24)};
    case 4:
      return {seg({0.62, 0.14}, {0.26, 0.60}), seg({0.26, 0.60}, {0.78, 0.60}),
              seg({0.62, 0.14}, {0.62, 0.86})};
    case 5:
      return {seg({0.68, 0.14}, {0.33, 0.14}), seg({0.33, 0.14}, {0.31, 0.45}),
              arc(0.48, 0.64, 0.21, 0.21, -0.55 * kPi, 0.7 * kPi, 24)};
    case 6:
      return {arc(0.54, 0.47, 0.25, 0.35, -0.95 * kPi, -0.35 * kPi, 20),
              arc(0.47, 0.66, 0.19, 0.20, 0.0, 2.0 * kPi, 32)};
    case 7:
      return {seg({0.28, 0.14}, {0.72, 0.14}), seg({0.72, 0.14}, {0.42, 0.86})};
    case 8:
      return {arc(0.50, 0.31, 0.17, 0.16, 0.0, 2.0 * kPi, 32),
              arc(0.50, 0.66, 0.21, 0.20, 0.0, 2.0 * kPi, 32)};
    case 9:
      return {arc(0.51, 0.35, 0.19, 0.20, 0.0, 2.0 * kPi, 32),
              seg({0.70, 0.35}, {0.66, 0.62}), seg({0.66, 0.62}, {0.52, 0.86})};
    default:
      throw std::invalid_argument("digit must be 0..9");
  }
}

double dist_to_segment(Pt p, Pt a, Pt b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

Tensor render_digits(int count, std::uint64_t seed, std::vector<int>& labels_out) {
  constexpr int kSide = 28;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> digit_dist(0, 9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> out(static_cast<std::size_t>(count) * kSide * kSide, 0.0);
  labels_out.resize(count);

  for (int img = 0; img < count; ++img) {
    const int digit = digit_dist(rng);
    labels_out[img] = digit;

    // Random affine: rotation, anisotropic scale, shear, translation.
    const double rot = (unit(rng) - 0.5) * 0.36;
    const double sx = 17.0 * (0.82 + 0.32 * unit(rng));
    const double sy = 17.0 * (0.82 + 0.32 * unit(rng));
    const double shear = (unit(rng) - 0.5) * 0.30;
    const double tx = 13.5 + (unit(rng) - 0.5) * 4.5;
    const double ty = 13.5 + (unit(rng) - 0.5) * 4.5;
    const double cr = std::cos(rot), sr = std::sin(rot);
    const double width = 1.1 + 1.1 * unit(rng);
    const double ink = 0.82 + 0.18 * unit(rng);

    auto map = [&](Pt p) -> Pt {
      double x = p.x - 0.5, y = p.y - 0.5;
      x += shear * y;
      x *= sx;
      y *= sy;
      return {cr * x - sr * y + tx, sr * x + cr * y + ty};
    };

    std::vector<Polyline> strokes;
    for (const Polyline& raw : digit_strokes(digit)) {
      Polyline m;
      m.reserve(raw.size());
      for (Pt p : raw) m.push_back(map(p));
      strokes.push_back(std::move(m));
    }

    double* px = out.data() + static_cast<std::size_t>(img) * kSide * kSide;
    for (int r = 0; r < kSide; ++r)
      for (int c = 0; c < kSide; ++c) {
        const Pt p{static_cast<double>(c), static_cast<double>(r)};
        double best = 1e9;
        for (const Polyline& s : strokes)
          for (std::size_t i = 0; i + 1 < s.size(); ++i)
            best = std::min(best, dist_to_segment(p, s[i], s[i + 1]));
        const double cover = std::clamp(width / 2.0 + 0.55 - best, 0.0, 1.0);
        double v = ink * cover + 0.03 * gauss(rng);
        px[r * kSide + c] = std::clamp(v, 0.0, 1.0);
      }
  }
  return Tensor::from_data({count, kSide, kSide}, std::move(out));
}

void generate_digit_dataset(const std::string& dir, int train_count, int test_count,
                            std::uint64_t seed) {
  std::vector<int> labels;
  Tensor train = render_digits(train_count, seed, labels);
  write_idx_images(dir + "/train-images.idx", train);
  write_idx_labels(dir + "/train-labels.idx", labels);
  Tensor test = render_digits(test_count, seed + 1, labels);
  write_idx_images(dir + "/test-images.idx", test);
  write_idx_labels(dir + "/test-labels.idx", labels);
}

// ---------------------------------------------------------------------------
// Chemistry corpus

namespace {

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double norm(Vec3 a) { return std::sqrt(a.x * a.x + a.y * a.y + a.z * a.z); }
Vec3 normalized(Vec3 a) {
  const double n = norm(a);
  return n > 1e-12 ? (1.0 / n) * a : Vec3{1, 0, 0};
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  return normalized({g(rng), g(rng), g(rng)});
}

std::string random_element(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  if (r < 0.70) return "C";
  if (r < 0.82) return "N";
  if (r < 0.94) return "O";
  if (r < 0.97) return "S";
  return "F";
}

struct Topology {
  int n = 0;
  std::vector<std::string> elements;
  std::vector<SdfBond> bonds;
  std::vector<int> parent;  // tree parent, -1 for roots/ring atoms
  int ring_size = 0;        // leading ring atoms, 0 if none
};

Topology random_topology(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> natoms_dist(11, 18);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Topology top;
  top.n = natoms_dist(rng);
  top.parent.assign(top.n, -1);
  for (int i = 0; i < top.n; ++i) top.elements.push_back(random_element(rng));

  int start = 0;
  if (u(rng) < 0.3 && top.n >= 9) {
    // Lead with a 6-ring, aromatic half the time.
    top.ring_size = 6;
    const int order = u(rng) < 0.5 ? 4 : 1;
    for (int i = 0; i < 6; ++i) {
      top.elements[i] = order == 4 ? "C" : top.elements[i];
      top.bonds.push_back({i, (i + 1) % 6, order});
    }
    start = 6;
  }

  std::vector<int> degree(top.n, 0);
  for (const auto& b : top.bonds) {
    ++degree[b.a1];
    ++degree[b.a2];
  }
  for (int i = std::max(1, start); i < top.n; ++i) {
    int parent = i - 1;
    if (i == start && start > 0) {
      parent = std::uniform_int_distribution<int>(0, start - 1)(rng);
    } else if (u(rng) < 0.25) {
      // occasional branch off an earlier atom
      std::uniform_int_distribution<int> pick(0, i - 1);
      for (int tries = 0; tries < 8; ++tries) {
        const int cand = pick(rng);
        if (degree[cand] < 3) {
          parent = cand;
          break;
        }
      }
    }
    top.parent[i] = parent;
    top.bonds.push_back({parent, i, u(rng) < 0.12 ? 2 : 1});
    ++degree[parent];
    ++degree[i];
  }
  return top;
}

// Embeds the topology with a controllable bend: extended chains keep the
// previous growth direction, folded ones turn hard at every step.
std::vector<Vec3> embed(const Topology& top, bool extended, std::mt19937_64& rng) {
  const double bond = 1.5;
  std::vector<Vec3> pos(top.n);
  std::vector<Vec3> dir(top.n, {1, 0, 0});

  if (top.ring_size > 0) {
    // Flat hexagon of circumradius ~bond.
    for (int i = 0; i < top.ring_size; ++i) {
      const double a = 2.0 * kPi * i / top.ring_size;
      pos[i] = {bond * std::cos(a), bond * std::sin(a), 0.0};
      dir[i] = normalized(pos[i]);
    }
  }

  const double keep = extended ? 1.35 : 0.65;  // persistence of direction
  for (int i = top.ring_size == 0 ? 1 : top.ring_size; i < top.n; ++i) {
    const int p = top.parent[i] < 0 ? 0 : top.parent[i];
    Vec3 d = normalized(keep * dir[p] + random_unit(rng));
    // Nudge away from any atom closer than 0.9 A.
    for (int attempt = 0; attempt < 12; ++attempt) {
      const Vec3 cand = pos[p] + bond * d;
      bool clash = false;
      for (int j = 0; j < i; ++j)
        if (norm(cand - pos[j]) < 0.9) {
          clash = true;
          break;
        }
      if (!clash) break;
      d = normalized(keep * dir[p] + 3.0 * random_unit(rng));
    }
    pos[i] = pos[p] + bond * d;
    dir[i] = d;
  }
  return pos;
}

void orient_randomly(std::vector<Vec3>& pos, std::mt19937_64& rng) {
  Tensor r = sample_rotation(3, rng);
  const auto m = r.data();
  std::uniform_real_distribution<double> shift(-3.0, 3.0);
  const Vec3 t{shift(rng), shift(rng), shift(rng)};
  Vec3 centroid{};
  for (const Vec3& p : pos) centroid = centroid + (1.0 / pos.size()) * p;
  for (Vec3& p : pos) {
    const Vec3 q = p - centroid;
    p = Vec3{m[0] * q.x + m[1] * q.y + m[2] * q.z, m[3] * q.x + m[4] * q.y + m[5] * q.z,
             m[6] * q.x + m[7] * q.y + m[8] * q.z} +
        t;
  }
}

double round4(double v) { return std::round(v * 1e4) / 1e4; }

}  // namespace

SynthChemCorpus generate_chem_corpus(const SynthChemOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> jitter(0.0, options.jitter_sigma);
  SynthChemCorpus corpus;

  int serial = 0;
  for (int pair = 0; pair < options.pairs; ++pair) {
    const Topology top = random_topology(rng);
    for (const bool extended : {false, true}) {
      std::vector<Vec3> pos = embed(top, extended, rng);
      orient_randomly(pos, rng);

      MolRecord rec;
      rec.name = "mol_" + std::to_string(100000 + serial++);
      for (int i = 0; i < top.n; ++i) {
        SdfAtom a;
        a.symbol = top.elements[i];
        a.x = round4(pos[i].x);
        a.y = round4(pos[i].y);
        a.z = round4(pos[i].z);
        rec.atoms.push_back(std::move(a));
      }
      rec.bonds = top.bonds;
      // A sprinkling of charged species keeps the charge path exercised.
      if (pair % 17 == 0 && !extended) rec.atoms[0].formal_charge = -1;

      ConformerRecord cr;
      cr.id = rec.name;
      for (int c = 0; c < std::max(1, options.conformers); ++c) {
        std::vector<double> coords;
        coords.reserve(top.n * 3);
        for (int i = 0; i < top.n; ++i) {
          const double dx = c == 0 ? 0.0 : jitter(rng);
          const double dy = c == 0 ? 0.0 : jitter(rng);
          const double dz = c == 0 ? 0.0 : jitter(rng);
          coords.push_back(round4(pos[i].x + dx));
          coords.push_back(round4(pos[i].y + dy));
          coords.push_back(round4(pos[i].z + dz));
        }
        cr.pool.conformers.push_back(
            Tensor::from_data({top.n, 3}, std::move(coords)));
      }

      corpus.molecules.push_back(std::move(rec));
      corpus.labels.push_back(extended ? 1.0 : 0.0);
      corpus.conformers.push_back(std::move(cr));
    }
  }
  return corpus;
}

void write_chem_dataset(const std::string& dir, const SynthChemCorpus& corpus) {
  write_sdf(dir + "/molecules.sdf", corpus.molecules);
  std::ofstream labels(dir + "/labels.csv");
  if (!labels) throw std::runtime_error("cannot write labels.csv under " + dir);
  labels << "id,target\n";
  for (std::size_t i = 0; i < corpus.molecules.size(); ++i)
    labels << corpus.molecules[i].name << ',' << corpus.labels[i] << '\n';
  write_conformer_pools(dir + "/conformers.txt", corpus.conformers);
}

}  // namespace sgcn
