#pragma once

#include <cstdint>

namespace fnri::kernels {

// Runtime switch between the OpenMP drivers and the serial ones. Both call
// the same per-row routines, so results are bitwise identical either way and
// independent of thread count (each output element keeps a fixed summation
// order). Default: parallel on, honoring FNRI_SERIAL=1 in the environment.
bool parallel_enabled();
void set_parallel(bool on);
int thread_count();

// C[m,n] (+)= A[m,k] * B[k,n], all row-major. accumulate=false zeroes C first.
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate);

// C[k,n] (+)= A^T * B with A[m,k], B[m,n]. Gradient of matmul wrt B-side.
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate);

// C[m,k] (+)= A * B^T with A[m,n], B[k,n]. Gradient of matmul wrt A-side.
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t n, int64_t k,
               bool accumulate);

// out[n] (+)= sum over rows of A[m,n].
void col_sums(const double* a, double* out, int64_t m, int64_t n, bool accumulate);

// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, int64_t n);

// Serial reference implementations, kept for testing. Naive dot-product loop
// order, written independently of the drivers above.
namespace ref {
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t n, int64_t k);
}  // namespace ref

// Runs f(r) for r in [0, rows); parallel when enabled and the range is large
// enough to amortize fork/join. f must be safe to run rows concurrently.
template <typename F>
void parallel_rows(int64_t rows, F&& f);

namespace detail {
bool use_parallel(int64_t rows);
}

}  // namespace fnri::kernels

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fnri::kernels {

template <typename F>
void parallel_rows(int64_t rows, F&& f) {
#ifdef _OPENMP
  if (detail::use_parallel(rows)) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) f(r);
    return;
  }
#endif
  for (int64_t r = 0; r < rows; ++r) f(r);
}

}  // namespace fnri::kernels
