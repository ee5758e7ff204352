#pragma once

#include <cstddef>

// Internal: per-ISA kernel entry points behind the dispatch table.
namespace daer::kernels::detail {

double dot_scalar(const double* a, const double* b, std::size_t n);
double sum_squares_scalar(const double* a, std::size_t n);
double reduce_max_scalar(const double* a, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
void scale_scalar(double* x, std::size_t n, double s);

#if defined(__x86_64__) || defined(_M_X64)
#define DAER_HAVE_AVX2_BUILD 1
double dot_avx2(const double* a, const double* b, std::size_t n);
double sum_squares_avx2(const double* a, std::size_t n);
double reduce_max_avx2(const double* a, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
void scale_avx2(double* x, std::size_t n, double s);
#endif

}  // namespace daer::kernels::detail
