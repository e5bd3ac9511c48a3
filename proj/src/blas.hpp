#pragma once

#include <cblas.h>

#include <algorithm>
#include <cstddef>

namespace kwsrl::nn::blas {

// Row-major C[m, n] = op(A)[m, k] * op(B)[k, n] + beta * C, dense leading
// dimensions. OpenBLAS is pinned to one thread so runs stay reproducible.
void pin_single_thread();

inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
                 float beta, float* c)
{
    if (m == 0 || n == 0) return;
    pin_single_thread();
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, int(m), int(n), int(k),
                1.0f, a, std::max(1, ta ? int(m) : int(k)), b, std::max(1, tb ? int(k) : int(n)), beta, c, int(n));
}

inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                 double beta, double* c)
{
    if (m == 0 || n == 0) return;
    pin_single_thread();
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, int(m), int(n), int(k),
                1.0, a, std::max(1, ta ? int(m) : int(k)), b, std::max(1, tb ? int(k) : int(n)), beta, c, int(n));
}

}  // namespace kwsrl::nn::blas
