#include <doctest.h>

#include <random>
#include <vector>

#include "sgcn/graph.hpp"
#include "sgcn/kernels.hpp"

using namespace sgcn;

namespace {

void fill(std::vector<double>& v, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& x : v) x = d(rng);
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("parallel matmul kernels match the serial reference bit for bit") {
  std::mt19937_64 rng(5);
  for (auto [m, k, n] : {std::array<std::int64_t, 3>{1, 1, 1},
                         {7, 3, 5},
                         {64, 33, 17},
                         {130, 64, 31}}) {
    std::vector<double> a(m * k), b(k * n);
    fill(a, rng);
    fill(b, rng);

    std::vector<double> cs(m * n), cp(m * n);
    kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n);
    kernels::parallel::matmul(a.data(), b.data(), cp.data(), m, k, n);
    CHECK(same_bits(cs, cp));

    std::vector<double> das(m * k, 0.1), dap(m * k, 0.1);
    std::vector<double> g(m * n);
    fill(g, rng);
    kernels::serial::matmul_acc_a_bt(g.data(), b.data(), das.data(), m, k, n);
    kernels::parallel::matmul_acc_a_bt(g.data(), b.data(), dap.data(), m, k, n);
    CHECK(same_bits(das, dap));

    std::vector<double> dbs(k * n, -0.2), dbp(k * n, -0.2);
    kernels::serial::matmul_acc_at_b(a.data(), g.data(), dbs.data(), m, k, n);
    kernels::parallel::matmul_acc_at_b(a.data(), g.data(), dbp.data(), m, k, n);
    CHECK(same_bits(dbs, dbp));
  }
}

TEST_CASE("parallel spatial gather matches the serial reference bit for bit") {
  std::mt19937_64 rng(6);
  std::vector<double> img(19 * 23);
  fill(img, rng);
  GraphBatch batch = make_batch({build_grid_graph(Tensor::from_data({19, 23}, img), 2)});
  const std::int64_t n = batch.num_nodes(), t = 2, d = 9;
  std::vector<double> h(n * d), u(t * d), b(d), gout(n * d);
  fill(h, rng);
  fill(u, rng);
  fill(b, rng);
  fill(gout, rng);
  const auto* off = batch.adjacency->offsets.data();
  const auto* idx = batch.adjacency->indices.data();
  const auto* roff = batch.reverse->offsets.data();
  const auto* rsrc = batch.reverse->indices.data();
  const double* pos = batch.positions.data().data();

  for (const double* p : {pos, static_cast<const double*>(nullptr)}) {
    std::vector<double> outs(n * d), outp(n * d);
    kernels::serial::spatial_gather(off, idx, p, h.data(), u.data(), b.data(), outs.data(), n, t,
                                    d);
    kernels::parallel::spatial_gather(off, idx, p, h.data(), u.data(), b.data(), outp.data(), n,
                                      t, d);
    CHECK(same_bits(outs, outp));

    std::vector<double> dhs(n * d, 0), dhp(n * d, 0), dus(t * d, 0), dup(t * d, 0), dbs(d, 0),
        dbp(d, 0);
    kernels::serial::spatial_gather_backward(off, idx, roff, rsrc, p, h.data(), u.data(),
                                             b.data(), gout.data(), dhs.data(), dus.data(),
                                             dbs.data(), n, t, d);
    kernels::parallel::spatial_gather_backward(off, idx, roff, rsrc, p, h.data(), u.data(),
                                               b.data(), gout.data(), dhp.data(), dup.data(),
                                               dbp.data(), n, t, d);
    CHECK(same_bits(dhs, dhp));
    CHECK(same_bits(dus, dup));
    CHECK(same_bits(dbs, dbp));
  }
}

TEST_CASE("parallel conv2d matches the serial reference bit for bit") {
  std::mt19937_64 rng(7);
  for (int radius : {0, 1, 2}) {
    const std::int64_t rows = 37, cols = 29, side = 2 * radius + 1;
    std::vector<double> img(rows * cols), f(side * side), os(rows * cols), op(rows * cols);
    fill(img, rng);
    fill(f, rng);
    kernels::serial::conv2d(img.data(), rows, cols, f.data(), radius, os.data());
    kernels::parallel::conv2d(img.data(), rows, cols, f.data(), radius, op.data());
    CHECK(same_bits(os, op));
  }
}

TEST_CASE("exec mode switch changes the dispatch target, not the results") {
  std::mt19937_64 rng(8);
  const std::int64_t m = 70, k = 70, n = 70;  // above the parallel cutoff
  std::vector<double> a(m * k), b(k * n), c1(m * n), c2(m * n);
  fill(a, rng);
  fill(b, rng);
  kernels::set_exec_mode(kernels::ExecMode::Serial);
  kernels::matmul(a.data(), b.data(), c1.data(), m, k, n);
  kernels::set_exec_mode(kernels::ExecMode::Parallel);
  kernels::matmul(a.data(), b.data(), c2.data(), m, k, n);
  CHECK(same_bits(c1, c2));
}
