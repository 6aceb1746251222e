#pragma once

#include <cstdint>

// Dense numeric kernels behind the tensor and layer ops. Every kernel exists
// twice: a plain serial reference under kernels::serial and an OpenMP version
// under kernels::parallel. Both iterate each output element's summation in
// the same order, so results are bitwise identical; the test suite relies on
// that and the benchmark tool compares their wall time. The unprefixed
// functions dispatch on the global exec mode.

namespace sgcn::kernels {

enum class ExecMode { Serial, Parallel };

ExecMode exec_mode();
void set_exec_mode(ExecMode mode);

namespace serial {

// c = a(m x k) * b(k x n), row-major.
void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n);

// da(m x k) += g(m x n) * b(k x n)^T
void matmul_acc_a_bt(const double* g, const double* b, double* da,
                     std::int64_t m, std::int64_t k, std::int64_t n);

// db(k x n) += a(m x k)^T * g(m x n)
void matmul_acc_at_b(const double* a, const double* g, double* db,
                     std::int64_t m, std::int64_t k, std::int64_t n);

// Position-gated neighborhood sum over a CSR adjacency:
//   out[i,c] = sum_{j in N_i} relu(sum_s u[s,c]*(pos[j,s]-pos[i,s]) + b[c]) * h[j,c]
// pos may be null, in which case all position differences are zero.
void spatial_gather(const std::int64_t* offsets, const std::int32_t* indices,
                    const double* pos, const double* h,
                    const double* u, const double* b, double* out,
                    std::int64_t n, std::int64_t t, std::int64_t d);

// Gradients of spatial_gather. dh uses the reverse adjacency (edges i->j
// grouped by j); du and db are reduced edge-major per feature column so each
// output cell is owned by exactly one loop iteration. Any of dh/du/db may be
// null to skip that gradient. All are accumulated into.
void spatial_gather_backward(const std::int64_t* offsets, const std::int32_t* indices,
                             const std::int64_t* roffsets, const std::int32_t* rsources,
                             const double* pos, const double* h,
                             const double* u, const double* b, const double* gout,
                             double* dh, double* du, double* db,
                             std::int64_t n, std::int64_t t, std::int64_t d);

// 2-D cross-correlation with an odd (2r+1)^2 filter; out-of-bounds taps are
// dropped from the sum, so the output has the same extent as the image.
void conv2d(const double* image, std::int64_t rows, std::int64_t cols,
            const double* filter, std::int64_t radius, double* out);

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_acc_a_bt(const double* g, const double* b, double* da,
                     std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_acc_at_b(const double* a, const double* g, double* db,
                     std::int64_t m, std::int64_t k, std::int64_t n);
void spatial_gather(const std::int64_t* offsets, const std::int32_t* indices,
                    const double* pos, const double* h,
                    const double* u, const double* b, double* out,
                    std::int64_t n, std::int64_t t, std::int64_t d);
void spatial_gather_backward(const std::int64_t* offsets, const std::int32_t* indices,
                             const std::int64_t* roffsets, const std::int32_t* rsources,
                             const double* pos, const double* h,
                             const double* u, const double* b, const double* gout,
                             double* dh, double* du, double* db,
                             std::int64_t n, std::int64_t t, std::int64_t d);
void conv2d(const double* image, std::int64_t rows, std::int64_t cols,
            const double* filter, std::int64_t radius, double* out);

}  // namespace parallel

// Dispatchers: route to serial or parallel per exec_mode(). Small workloads
// stay serial regardless; the cut-over only affects speed, never bits.
void matmul(const double* a, const double* b, double* c,
            std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_acc_a_bt(const double* g, const double* b, double* da,
                     std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_acc_at_b(const double* a, const double* g, double* db,
                     std::int64_t m, std::int64_t k, std::int64_t n);
void spatial_gather(const std::int64_t* offsets, const std::int32_t* indices,
                    const double* pos, const double* h,
                    const double* u, const double* b, double* out,
                    std::int64_t n, std::int64_t t, std::int64_t d);
void spatial_gather_backward(const std::int64_t* offsets, const std::int32_t* indices,
                             const std::int64_t* roffsets, const std::int32_t* rsources,
                             const double* pos, const double* h,
                             const double* u, const double* b, const double* gout,
                             double* dh, double* du, double* db,
                             std::int64_t n, std::int64_t t, std::int64_t d);
void conv2d(const double* image, std::int64_t rows, std::int64_t cols,
            const double* filter, std::int64_t radius, double* out);

}  // namespace sgcn::kernels
