#pragma once

#include <cstddef>

// Numeric inner loops. Every kernel has a scalar reference implementation and
// an AVX2+FMA variant; the active one is chosen at runtime (CPU detection,
// overridable via DAER_KERNELS=scalar|avx2|auto or kernels::force()).
// The higher-level routines (matmul*, softmax_row) are composed from the
// dispatched primitives, so they accelerate without their own variants.
namespace daer::kernels {

enum class Isa { scalar, avx2 };

Isa active();
const char* name(Isa isa);
// Override dispatch; throws std::invalid_argument if the ISA is unsupported here.
void force(Isa isa);
// Re-detect from CPU + DAER_KERNELS.
void reset_dispatch();

double dot(const double* a, const double* b, std::size_t n);
double sum_squares(const double* a, std::size_t n);
// Requires n >= 1.
double reduce_max(const double* a, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double* x, std::size_t n, double s);

// Row-major matmuls; c is overwritten.
// c (m x n) = a (m x k) * b (k x n)
void matmul(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
            double* c);
// c (m x n) = a (m x k) * b(n x k)^T
void matmul_nt(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
               double* c);
// c (k x n) = a (m x k)^T * b (m x n)
void matmul_tn(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
               double* c);

// Numerically stable softmax of one row: out = exp(x - max) / sum. n >= 1.
void softmax_row(const double* logits, double* out, std::size_t n);

}  // namespace daer::kernels
