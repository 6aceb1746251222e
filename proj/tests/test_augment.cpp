#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "sgcn/augment.hpp"
#include "sgcn/data.hpp"

using namespace sgcn;

namespace {

SpatialGraph chain_graph(std::int64_t n, std::int64_t t, std::mt19937_64& rng) {
  SpatialGraph g;
  g.features = Tensor::uniform({n, 2}, -1, 1, rng);
  g.positions = snap_positions(Tensor::uniform({n, t}, -3, 3, rng));
  auto adj = std::make_shared<AdjacencyList>(n);
  for (std::int64_t i = 0; i + 1 < n; ++i) {
    (*adj)[i].push_back(static_cast<std::int32_t>(i + 1));
    (*adj)[i + 1].push_back(static_cast<std::int32_t>(i));
  }
  for (auto& nb : *adj) std::sort(nb.begin(), nb.end());
  g.adjacency = std::move(adj);
  return g;
}

double pair_dist(const Tensor& pos, std::int64_t a, std::int64_t b) {
  double acc = 0.0;
  for (std::int64_t s = 0; s < pos.shape()[1]; ++s) {
    const double d = pos(a, s) - pos(b, s);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("identity rotation leaves the graph unchanged") {
  std::mt19937_64 rng(1);
  SpatialGraph g = chain_graph(6, 2, rng);
  SpatialGraph r = rotate(g, Tensor::identity(2));
  for (std::int64_t i = 0; i < g.positions.numel(); ++i)
    CHECK(r.positions.data()[i] == g.positions.data()[i]);
}

TEST_CASE("quarter turn maps (1,0) to (0,1)") {
  SpatialGraph g;
  g.features = Tensor::zeros({1, 1});
  g.positions = Tensor::from_data({1, 2}, {1, 0});
  g.adjacency = std::make_shared<AdjacencyList>(AdjacencyList{{}});
  const double a = std::numbers::pi / 2;
  SpatialGraph r = rotate(g, Tensor::from_data({2, 2}, {std::cos(a), -std::sin(a),
                                                        std::sin(a), std::cos(a)}));
  CHECK(r.positions(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.positions(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rotations reject non-orthonormal matrices") {
  std::mt19937_64 rng(2);
  SpatialGraph g = chain_graph(3, 2, rng);
  CHECK_THROWS_AS(rotate(g, Tensor::from_data({2, 2}, {1, 0, 0, 2})), std::invalid_argument);
  // reflection: orthonormal but det -1
  CHECK_THROWS_AS(rotate(g, Tensor::from_data({2, 2}, {1, 0, 0, -1})), std::invalid_argument);
}

TEST_CASE("sampled rotations are orthonormal with det +1 and preserve distances") {
  std::mt19937_64 rng(3);
  for (int dim : {2, 3}) {
    SpatialGraph g = chain_graph(7, dim, rng);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor r = sample_rotation(dim, rng);  // rotate() itself checks the invariants
      SpatialGraph moved = rotate(g, r);
      for (std::int64_t a = 0; a < g.num_nodes(); ++a)
        for (std::int64_t b = a + 1; b < g.num_nodes(); ++b)
          CHECK(std::abs(pair_dist(moved.positions, a, b) - pair_dist(g.positions, a, b)) <=
                1e-10);
    }
  }
}

TEST_CASE("seeded 2-D rotation sampling is reproducible") {
  std::mt19937_64 a(77), b(77);
  for (int i = 0; i < 5; ++i) {
    Tensor ra = sample_rotation(2, a);
    Tensor rb = sample_rotation(2, b);
    for (std::int64_t j = 0; j < 4; ++j) CHECK(ra.data()[j] == rb.data()[j]);
  }
}

TEST_CASE("3-D rotations are uniform: mean image of e1 is near zero") {
  std::mt19937_64 rng(4);
  double mx = 0, my = 0, mz = 0;
  const int samples = 10000;
  for (int i = 0; i < samples; ++i) {
    Tensor r = sample_rotation(3, rng);
    mx += r(0, 0);
    my += r(1, 0);
    mz += r(2, 0);
  }
  const double norm =
      std::sqrt(mx * mx + my * my + mz * mz) / static_cast<double>(samples);
  CHECK(norm <= 0.05);
}

TEST_CASE("all-off policy returns the batch unchanged") {
  std::mt19937_64 rng(5);
  GraphBatch batch = make_batch({chain_graph(5, 3, rng), chain_graph(4, 3, rng)});
  std::mt19937_64 aug_rng(6);
  GraphBatch out = augment_batch(batch, AugmentPolicy{}, nullptr, aug_rng);
  for (std::int64_t i = 0; i < batch.positions.numel(); ++i)
    CHECK(out.positions.data()[i] == batch.positions.data()[i]);
}

TEST_CASE("single-conformer pool without rotation repeats the same geometry") {
  std::mt19937_64 rng(7);
  SpatialGraph g = chain_graph(5, 3, rng);
  std::vector<ConformerPool> pools = {ConformerPool{{g.positions}}};
  GraphBatch batch = make_batch({g});
  AugmentPolicy policy;
  policy.conformer_pool_size = 1;
  std::mt19937_64 aug_rng(8);
  for (int epoch = 0; epoch < 3; ++epoch) {
    GraphBatch out = augment_batch(batch, policy, &pools, aug_rng);
    for (std::int64_t i = 0; i < batch.positions.numel(); ++i)
      CHECK(out.positions.data()[i] == batch.positions.data()[i]);
  }
}

TEST_CASE("conformer sampling with the same seed picks the same conformers") {
  std::mt19937_64 rng(9);
  SpatialGraph g = chain_graph(6, 3, rng);
  ConformerPool pool;
  for (int c = 0; c < 4; ++c) pool.conformers.push_back(snap_positions(
      Tensor::uniform({6, 3}, -2, 2, rng)));
  std::vector<ConformerPool> pools = {pool};
  GraphBatch batch = make_batch({g});
  AugmentPolicy policy;
  policy.conformer_pool_size = 4;
  std::mt19937_64 ra(10), rb(10);
  for (int step = 0; step < 6; ++step) {
    GraphBatch a = augment_batch(batch, policy, &pools, ra);
    GraphBatch b = augment_batch(batch, policy, &pools, rb);
    for (std::int64_t i = 0; i < a.positions.numel(); ++i)
      CHECK(a.positions.data()[i] == b.positions.data()[i]);
  }
}

TEST_CASE("pool topology mismatches are rejected") {
  std::mt19937_64 rng(11);
  SpatialGraph g = chain_graph(5, 3, rng);
  std::vector<ConformerPool> pools = {ConformerPool{{Tensor::zeros({4, 3})}}};
  GraphBatch batch = make_batch({g});
  AugmentPolicy policy;
  policy.conformer_pool_size = 1;
  std::mt19937_64 aug_rng(12);
  CHECK_THROWS_AS(augment_batch(batch, policy, &pools, aug_rng), std::invalid_argument);
}

TEST_CASE("translation-only augmentation is exactly invisible to the model") {
  std::mt19937_64 rng(13);
  std::vector<SpatialGraph> graphs;
  for (int i = 0; i < 4; ++i) graphs.push_back(chain_graph(6, 3, rng));
  GraphBatch batch = make_batch(graphs);

  std::mt19937_64 mrng(14);
  Model model = make_model(3, 2, {{3, 8}, {2, 6}}, 2, LayerMode::Spatial, mrng);
  Tensor before = model.forward(batch);

  AugmentPolicy policy;
  policy.translate_sigma = 1.5;
  std::mt19937_64 aug_rng(15);
  for (int trial = 0; trial < 5; ++trial) {
    GraphBatch shifted = augment_batch(batch, policy, nullptr, aug_rng);
    Tensor after = model.forward(shifted);
    for (std::int64_t i = 0; i < before.numel(); ++i)
      CHECK(before.data()[i] == after.data()[i]);
  }
}

TEST_CASE("test-time prediction with one sample and no policy is a plain forward") {
  std::mt19937_64 rng(16);
  SpatialGraph g = chain_graph(5, 2, rng);
  std::mt19937_64 mrng(17);
  Model model = make_model(2, 2, {{2, 5}}, 3, LayerMode::Spatial, mrng);
  std::mt19937_64 prng(18);
  Tensor tta = test_time_predict(model, g, AugmentPolicy{}, 1, prng);
  Tensor plain = model.forward(make_batch({g}));
  REQUIRE(tta.numel() == 3);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(tta.data()[i] == plain.data()[i]);
}

TEST_CASE("translate-only test-time averaging equals the single prediction") {
  std::mt19937_64 rng(19);
  SpatialGraph g = chain_graph(6, 3, rng);
  std::mt19937_64 mrng(20);
  Model model = make_model(3, 2, {{2, 6}}, 2, LayerMode::Spatial, mrng);
  AugmentPolicy policy;
  policy.translate_sigma = 0.8;
  Tensor plain = model.forward(make_batch({g}));
  for (int samples : {1, 2, 3, 4, 7}) {
    std::mt19937_64 prng(21);
    Tensor tta = test_time_predict(model, g, policy, samples, prng);
    for (std::int64_t i = 0; i < plain.numel(); ++i) CHECK(tta.data()[i] == plain.data()[i]);
  }
}

TEST_CASE("conformer pool files round-trip") {
  std::mt19937_64 rng(22);
  std::vector<ConformerRecord> records;
  for (int m = 0; m < 3; ++m) {
    ConformerRecord rec;
    rec.id = "mol_" + std::to_string(m);
    for (int c = 0; c < 2 + m; ++c)
      rec.pool.conformers.push_back(snap_positions(Tensor::uniform({4 + m, 3}, -3, 3, rng)));
    records.push_back(std::move(rec));
  }
  const std::string path =
      (std::filesystem::temp_directory_path() / "sgcn_pools_test.txt").string();
  write_conformer_pools(path, records);
  auto back = read_conformer_pools(path);
  std::filesystem::remove(path);

  REQUIRE(back.size() == records.size());
  for (std::size_t m = 0; m < records.size(); ++m) {
    CHECK(back[m].id == records[m].id);
    REQUIRE(back[m].pool.conformers.size() == records[m].pool.conformers.size());
    for (std::size_t c = 0; c < records[m].pool.conformers.size(); ++c) {
      const Tensor& a = records[m].pool.conformers[c];
      const Tensor& b = back[m].pool.conformers[c];
      REQUIRE(a.shape() == b.shape());
      // snapped coordinates survive the text round trip exactly
      for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
    }
  }
}
