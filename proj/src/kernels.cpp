#include "fnri/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fnri::kernels {

namespace {

std::atomic<bool> g_parallel{[] {
  const char* env = std::getenv("FNRI_SERIAL");
  return !(env && env[0] == '1');
}()};

// One output row of C = A*B: c[n] (+)= sum_k a[k] * B[k,:]. The k loop is
// ascending for every element, which pins the floating-point reduction order.
inline void row_axpy_kernel(const double* a_row, const double* b, double* c_row, int64_t k,
                            int64_t n, bool accumulate) {
  if (!accumulate) std::memset(c_row, 0, static_cast<size_t>(n) * sizeof(double));
  for (int64_t kk = 0; kk < k; ++kk) {
    const double a = a_row[kk];
    const double* b_row = b + kk * n;
    for (int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
  }
}

}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int thread_count() {
#ifdef _OPENMP
  return parallel_enabled() ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

bool detail::use_parallel(int64_t rows) {
#ifdef _OPENMP
  return parallel_enabled() && rows >= 32 && omp_get_max_threads() > 1 && !omp_in_parallel();
#else
  (void)rows;
  return false;
#endif
}

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
  parallel_rows(m, [&](int64_t i) { row_axpy_kernel(a + i * k, b, c + i * n, k, n, accumulate); });
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
  // Transpose A once so each output row is again an axpy sweep over B.
  std::vector<double> at(static_cast<size_t>(m * k));
  for (int64_t r = 0; r < m; ++r)
    for (int64_t i = 0; i < k; ++i) at[static_cast<size_t>(i * m + r)] = a[r * k + i];
  parallel_rows(k, [&](int64_t i) { row_axpy_kernel(at.data() + i * m, b, c + i * n, m, n, accumulate); });
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t n, int64_t k,
               bool accumulate) {
  std::vector<double> bt(static_cast<size_t>(n * k));
  for (int64_t r = 0; r < k; ++r)
    for (int64_t j = 0; j < n; ++j) bt[static_cast<size_t>(j * k + r)] = b[r * n + j];
  parallel_rows(m, [&](int64_t i) { row_axpy_kernel(a + i * n, bt.data(), c + i * k, n, k, accumulate); });
}

void col_sums(const double* a, double* out, int64_t m, int64_t n, bool accumulate) {
  if (!accumulate) std::memset(out, 0, static_cast<size_t>(n) * sizeof(double));
  for (int64_t r = 0; r < m; ++r) {
    const double* row = a + r * n;
    for (int64_t j = 0; j < n; ++j) out[j] += row[j];
  }
}

void axpy(double alpha, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

namespace ref {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = s;
    }
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t r = 0; r < m; ++r) s += a[r * k + i] * b[r * n + j];
      c[i * n + j] = s;
    }
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (int64_t o = 0; o < n; ++o) s += a[i * n + o] * b[j * n + o];
      c[i * k + j] = s;
    }
}

}  // namespace ref

}  // namespace fnri::kernels
