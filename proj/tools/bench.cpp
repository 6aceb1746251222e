// Times the serial reference kernels against the OpenMP versions on
// representative workloads and checks that the two produce identical bits.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <vector>

#include "sgcn/graph.hpp"
#include "sgcn/kernels.hpp"

using namespace sgcn;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto start = Clock::now();
    fn();
    best = std::min(best, ms_since(start));
  }
  return best;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

void fill(std::vector<double>& v, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& x : v) x = d(rng);
}

void row(const char* name, double serial_ms, double parallel_ms, bool bits_equal) {
  std::printf("%-28s %10.2f ms %10.2f ms %8.2fx   %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, bits_equal ? "bits equal" : "BITS DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
  std::mt19937_64 rng(42);
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

  {
    const std::int64_t m = 384, k = 384, n = 384;
    std::vector<double> a(m * k), b(k * n), cs(m * n), cp(m * n);
    fill(a, rng);
    fill(b, rng);
    const double ts = time_best_of(reps, [&] {
      kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n);
    });
    const double tp = time_best_of(reps, [&] {
      kernels::parallel::matmul(a.data(), b.data(), cp.data(), m, k, n);
    });
    row("matmul 384^3", ts, tp, same_bits(cs, cp));
  }

  {
    // Grid-graph aggregation at image scale: 128x128 pixels, radius 2.
    std::vector<double> img(128 * 128);
    fill(img, rng);
    SpatialGraph g = build_grid_graph(Tensor::from_data({128, 128}, img), 2);
    GraphBatch batch = make_batch({g});
    const std::int64_t nn = batch.num_nodes(), t = 2, d = 32;
    std::vector<double> h(nn * d), u(t * d), b(d), outs(nn * d), outp(nn * d);
    fill(h, rng);
    fill(u, rng);
    fill(b, rng);
    const auto* off = batch.adjacency->offsets.data();
    const auto* idx = batch.adjacency->indices.data();
    const double* pos = batch.positions.data().data();
    const double ts = time_best_of(reps, [&] {
      kernels::serial::spatial_gather(off, idx, pos, h.data(), u.data(), b.data(), outs.data(),
                                      nn, t, d);
    });
    const double tp = time_best_of(reps, [&] {
      kernels::parallel::spatial_gather(off, idx, pos, h.data(), u.data(), b.data(), outp.data(),
                                        nn, t, d);
    });
    row("spatial_gather 128x128 d32", ts, tp, same_bits(outs, outp));

    // Backward pass over the same workload.
    std::vector<double> gout(nn * d), dhs(nn * d), dhp(nn * d), dus(t * d), dup(t * d), dbs(d),
        dbp(d);
    fill(gout, rng);
    const auto* roff = batch.reverse->offsets.data();
    const auto* rsrc = batch.reverse->indices.data();
    const double tbs = time_best_of(reps, [&] {
      std::fill(dhs.begin(), dhs.end(), 0.0);
      std::fill(dus.begin(), dus.end(), 0.0);
      std::fill(dbs.begin(), dbs.end(), 0.0);
      kernels::serial::spatial_gather_backward(off, idx, roff, rsrc, pos, h.data(), u.data(),
                                               b.data(), gout.data(), dhs.data(), dus.data(),
                                               dbs.data(), nn, t, d);
    });
    const double tbp = time_best_of(reps, [&] {
      std::fill(dhp.begin(), dhp.end(), 0.0);
      std::fill(dup.begin(), dup.end(), 0.0);
      std::fill(dbp.begin(), dbp.end(), 0.0);
      kernels::parallel::spatial_gather_backward(off, idx, roff, rsrc, pos, h.data(), u.data(),
                                                 b.data(), gout.data(), dhp.data(), dup.data(),
                                                 dbp.data(), nn, t, d);
    });
    row("spatial_gather bwd", tbs, tbp,
        same_bits(dhs, dhp) && same_bits(dus, dup) && same_bits(dbs, dbp));
  }

  {
    const std::int64_t rows = 512, cols = 512, radius = 2;
    std::vector<double> img(rows * cols), f((2 * radius + 1) * (2 * radius + 1)), os(rows * cols),
        op(rows * cols);
    fill(img, rng);
    fill(f, rng);
    const double ts = time_best_of(reps, [&] {
      kernels::serial::conv2d(img.data(), rows, cols, f.data(), radius, os.data());
    });
    const double tp = time_best_of(reps, [&] {
      kernels::parallel::conv2d(img.data(), rows, cols, f.data(), radius, op.data());
    });
    row("conv2d 512^2 r2", ts, tp, same_bits(os, op));
  }

  return 0;
}
