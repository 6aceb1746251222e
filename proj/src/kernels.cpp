#include "sgcn/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sgcn::kernels {

namespace {
std::atomic<ExecMode> g_mode{ExecMode::Parallel};

// Below this many fused multiply-adds the fork/join overhead dominates.
constexpr std::int64_t kParallelCutoff = 1 << 15;
}  // namespace

ExecMode exec_mode() { return g_mode.load(std::memory_order_relaxed); }
void set_exec_mode(ExecMode mode) { g_mode.store(mode, std::memory_order_relaxed); }

// The serial and parallel bodies are kept textually identical apart from the
// pragma so that per-element summation order (and therefore every bit of the
// result) matches.

namespace serial {

void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_acc_a_bt(const double* g, const double* b, double* da,
                     std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* darow = da + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

void matmul_acc_at_b(const double* a, const double* g, double* db,
                     std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t p = 0; p < k; ++p) {
    double* dbrow = db + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      const double* grow = g + i * n;
      for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}

void spatial_gather(const std::int64_t* offsets, const std::int32_t* indices,
                    const double* pos, const double* h,
                    const double* u, const double* b, double* out,
                    std::int64_t n, std::int64_t t, std::int64_t d) {
  for (std::int64_t i = 0; i < n; ++i) {
    double* orow = out + i * d;
    std::fill(orow, orow + d, 0.0);
    for (std::int64_t e = offsets[i]; e < offsets[i + 1]; ++e) {
      const std::int64_t j = indices[e];
      const double* hrow = h + j * d;
      double dp[3] = {0, 0, 0};
      if (pos)
        for (std::int64_t s = 0; s < t; ++s) dp[s] = pos[j * t + s] - pos[i * t + s];
      for (std::int64_t c = 0; c < d; ++c) {
        double z = b[c];
        if (pos) {
          for (std::int64_t s = 0; s < t; ++s) z += u[s * d + c] * dp[s];
        }
        if (z > 0.0) orow[c] += z * hrow[c];
      }
    }
  }
}

void spatial_gather_backward(const std::int64_t* offsets, const std::int32_t* indices,
                             const std::int64_t* roffsets, const std::int32_t* rsources,
                             const double* pos, const double* h,
                             const double* u, const double* b, const double* gout,
                             double* dh, double* du, double* db,
                             std::int64_t n, std::int64_t t, std::int64_t d) {
  if (dh) {
    for (std::int64_t j = 0; j < n; ++j) {
      double* drow = dh + j * d;
      for (std::int64_t e = roffsets[j]; e < roffsets[j + 1]; ++e) {
        const std::int64_t i = rsources[e];
        const double* grow = gout + i * d;
        double dp[3] = {0, 0, 0};
        if (pos)
          for (std::int64_t s = 0; s < t; ++s) dp[s] = pos[j * t + s] - pos[i * t + s];
        for (std::int64_t c = 0; c < d; ++c) {
          double z = b[c];
          if (pos) {
            for (std::int64_t s = 0; s < t; ++s) z += u[s * d + c] * dp[s];
          }
          if (z > 0.0) drow[c] += z * grow[c];
        }
      }
    }
  }
  if (du || db) {
    for (std::int64_t c = 0; c < d; ++c) {
      for (std::int64_t i = 0; i < n; ++i) {
        const double gi = gout[i * d + c];
        for (std::int64_t e = offsets[i]; e < offsets[i + 1]; ++e) {
          const std::int64_t j = indices[e];
          double dp[3] = {0, 0, 0};
          if (pos)
            for (std::int64_t s = 0; s < t; ++s) dp[s] = pos[j * t + s] - pos[i * t + s];
          double z = b[c];
          if (pos) {
            for (std::int64_t s = 0; s < t; ++s) z += u[s * d + c] * dp[s];
          }
          if (z > 0.0) {
            const double w = gi * h[j * d + c];
            if (db) db[c] += w;
            if (du && pos) {
              for (std::int64_t s = 0; s < t; ++s) du[s * d + c] += w * dp[s];
            }
          }
        }
      }
    }
  }
}

void conv2d(const double* image, std::int64_t rows, std::int64_t cols,
            const double* filter, std::int64_t radius, double* out) {
  const std::int64_t side = 2 * radius + 1;
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::int64_t di = -radius; di <= radius; ++di) {
        const std::int64_t ii = i + di;
        if (ii < 0 || ii >= rows) continue;
        for (std::int64_t dj = -radius; dj <= radius; ++dj) {
          const std::int64_t jj = j + dj;
          if (jj < 0 || jj >= cols) continue;
          acc += filter[(di + radius) * side + (dj + radius)] * image[ii * cols + jj];
        }
      }
      out[i * cols + j] = acc;
    }
  }
}

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_acc_a_bt(const double* g, const double* b, double* da,
                     std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* darow = da + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

void matmul_acc_at_b(const double* a, const double* g, double* db,
                     std::int64_t m, std::int64_t k, std::int64_t n) {
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < k; ++p) {
    double* dbrow = db + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      const double* grow = g + i * n;
      for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}

void spatial_gather(const std::int64_t* offsets, const std::int32_t* indices,
                    const double* pos, const double* h,
                    const double* u, const double* b, double* out,
                    std::int64_t n, std::int64_t t, std::int64_t d) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    double* orow = out + i * d;
    std::fill(orow, orow + d, 0.0);
    for (std::int64_t e = offsets[i]; e < offsets[i + 1]; ++e) {
      const std::int64_t j = indices[e];
      const double* hrow = h + j * d;
      double dp[3] = {0, 0, 0};
      if (pos)
        for (std::int64_t s = 0; s < t; ++s) dp[s] = pos[j * t + s] - pos[i * t + s];
      for (std::int64_t c = 0; c < d; ++c) {
        double z = b[c];
        if (pos) {
          for (std::int64_t s = 0; s < t; ++s) z += u[s * d + c] * dp[s];
        }
        if (z > 0.0) orow[c] += z * hrow[c];
      }
    }
  }
}

void spatial_gather_backward(const std::int64_t* offsets, const std::int32_t* indices,
                             const std::int64_t* roffsets, const std::int32_t* rsources,
                             const double* pos, const double* h,
                             const double* u, const double* b, const double* gout,
                             double* dh, double* du, double* db,
                             std::int64_t n, std::int64_t t, std::int64_t d) {
  if (dh) {
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < n; ++j) {
      double* drow = dh + j * d;
      for (std::int64_t e = roffsets[j]; e < roffsets[j + 1]; ++e) {
        const std::int64_t i = rsources[e];
        const double* grow = gout + i * d;
        double dp[3] = {0, 0, 0};
        if (pos)
          for (std::int64_t s = 0; s < t; ++s) dp[s] = pos[j * t + s] - pos[i * t + s];
        for (std::int64_t c = 0; c < d; ++c) {
          double z = b[c];
          if (pos) {
            for (std::int64_t s = 0; s < t; ++s) z += u[s * d + c] * dp[s];
          }
          if (z > 0.0) drow[c] += z * grow[c];
        }
      }
    }
  }
  if (du || db) {
#pragma omp parallel for schedule(static)
    for (std::int64_t c = 0; c < d; ++c) {
      for (std::int64_t i = 0; i < n; ++i) {
        const double gi = gout[i * d + c];
        for (std::int64_t e = offsets[i]; e < offsets[i + 1]; ++e) {
          const std::int64_t j = indices[e];
          double dp[3] = {0, 0, 0};
          if (pos)
            for (std::int64_t s = 0; s < t; ++s) dp[s] = pos[j * t + s] - pos[i * t + s];
          double z = b[c];
          if (pos) {
            for (std::int64_t s = 0; s < t; ++s) z += u[s * d + c] * dp[s];
          }
          if (z > 0.0) {
            const double w = gi * h[j * d + c];
            if (db) db[c] += w;
            if (du && pos) {
              for (std::int64_t s = 0; s < t; ++s) du[s * d + c] += w * dp[s];
            }
          }
        }
      }
    }
  }
}

void conv2d(const double* image, std::int64_t rows, std::int64_t cols,
            const double* filter, std::int64_t radius, double* out) {
  const std::int64_t side = 2 * radius + 1;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    for (std::int64_t j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (std::int64_t di = -radius; di <= radius; ++di) {
        const std::int64_t ii = i + di;
        if (ii < 0 || ii >= rows) continue;
        for (std::int64_t dj = -radius; dj <= radius; ++dj) {
          const std::int64_t jj = j + dj;
          if (jj < 0 || jj >= cols) continue;
          acc += filter[(di + radius) * side + (dj + radius)] * image[ii * cols + jj];
        }
      }
      out[i * cols + j] = acc;
    }
  }
}

}  // namespace parallel

namespace {
inline bool go_parallel(std::int64_t work) {
  return exec_mode() == ExecMode::Parallel && work >= kParallelCutoff;
}
}  // namespace

void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n) {
  if (go_parallel(m * k * n))
    parallel::matmul(a, b, c, m, k, n);
  else
    serial::matmul(a, b, c, m, k, n);
}

void matmul_acc_a_bt(const double* g, const double* b, double* da,
                     std::int64_t m, std::int64_t k, std::int64_t n) {
  if (go_parallel(m * k * n))
    parallel::matmul_acc_a_bt(g, b, da, m, k, n);
  else
    serial::matmul_acc_a_bt(g, b, da, m, k, n);
}

void matmul_acc_at_b(const double* a, const double* g, double* db,
                     std::int64_t m, std::int64_t k, std::int64_t n) {
  if (go_parallel(m * k * n))
    parallel::matmul_acc_at_b(a, g, db, m, k, n);
  else
    serial::matmul_acc_at_b(a, g, db, m, k, n);
}

void spatial_gather(const std::int64_t* offsets, const std::int32_t* indices,
                    const double* pos, const double* h,
                    const double* u, const double* b, double* out,
                    std::int64_t n, std::int64_t t, std::int64_t d) {
  if (go_parallel(offsets[n] * d * (t + 1)))
    parallel::spatial_gather(offsets, indices, pos, h, u, b, out, n, t, d);
  else
    serial::spatial_gather(offsets, indices, pos, h, u, b, out, n, t, d);
}

void spatial_gather_backward(const std::int64_t* offsets, const std::int32_t* indices,
                             const std::int64_t* roffsets, const std::int32_t* rsources,
                             const double* pos, const double* h,
                             const double* u, const double* b, const double* gout,
                             double* dh, double* du, double* db,
                             std::int64_t n, std::int64_t t, std::int64_t d) {
  if (go_parallel(offsets[n] * d * (t + 1)))
    parallel::spatial_gather_backward(offsets, indices, roffsets, rsources, pos, h, u, b,
                                      gout, dh, du, db, n, t, d);
  else
    serial::spatial_gather_backward(offsets, indices, roffsets, rsources, pos, h, u, b,
                                    gout, dh, du, db, n, t, d);
}

void conv2d(const double* image, std::int64_t rows, std::int64_t cols,
            const double* filter, std::int64_t radius, double* out) {
  const std::int64_t side = 2 * radius + 1;
  if (go_parallel(rows * cols * side * side))
    parallel::conv2d(image, rows, cols, filter, radius, out);
  else
    serial::conv2d(image, rows, cols, filter, radius, out);
}

}  // namespace sgcn::kernels
