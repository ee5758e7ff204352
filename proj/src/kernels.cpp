#include "daer/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "daer/kernels_impl.hpp"

namespace daer::kernels {

namespace {

struct Table {
    Isa isa;
    double (*dot)(const double*, const double*, std::size_t);
    double (*sum_squares)(const double*, std::size_t);
    double (*reduce_max)(const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double*, std::size_t, double);
};

constexpr Table kScalar{Isa::scalar,          detail::dot_scalar, detail::sum_squares_scalar,
                        detail::reduce_max_scalar, detail::axpy_scalar, detail::scale_scalar};

#ifdef DAER_HAVE_AVX2_BUILD
constexpr Table kAvx2{Isa::avx2,            detail::dot_avx2, detail::sum_squares_avx2,
                      detail::reduce_max_avx2, detail::axpy_avx2, detail::scale_avx2};
#endif

bool cpu_has_avx2() {
#ifdef DAER_HAVE_AVX2_BUILD
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Table* pick(Isa isa) {
#ifdef DAER_HAVE_AVX2_BUILD
    if (isa == Isa::avx2) return &kAvx2;
#endif
    if (isa == Isa::avx2) throw std::invalid_argument("kernels: avx2 not available in this build");
    return &kScalar;
}

const Table* detect() {
    const char* env = std::getenv("DAER_KERNELS");
    if (env != nullptr) {
        if (std::strcmp(env, "scalar") == 0) return &kScalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!cpu_has_avx2())
                throw std::invalid_argument("DAER_KERNELS=avx2 but CPU lacks avx2+fma");
            return pick(Isa::avx2);
        }
        // anything else, including "auto", falls through to detection
    }
    return cpu_has_avx2() ? pick(Isa::avx2) : &kScalar;
}

const Table* g_table = nullptr;

const Table* table() {
    if (g_table == nullptr) g_table = detect();
    return g_table;
}

}  // namespace

Isa active() { return table()->isa; }

const char* name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void force(Isa isa) {
    if (isa == Isa::avx2 && !cpu_has_avx2())
        throw std::invalid_argument("kernels::force: avx2 unsupported on this CPU");
    g_table = pick(isa);
}

void reset_dispatch() { g_table = detect(); }

double dot(const double* a, const double* b, std::size_t n) { return table()->dot(a, b, n); }

double sum_squares(const double* a, std::size_t n) { return table()->sum_squares(a, n); }

double reduce_max(const double* a, std::size_t n) { return table()->reduce_max(a, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    table()->axpy(alpha, x, y, n);
}

void scale(double* x, std::size_t n, double s) { table()->scale(x, n, s); }

void matmul(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
            double* c) {
    // Accumulates over l in index order per output entry, matching the naive
    // triple loop's summation order.
    const Table* t = table();
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (std::size_t l = 0; l < k; ++l) t->axpy(ai[l], b + l * n, ci, n);
    }
}

void matmul_nt(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
               double* c) {
    const Table* t = table();
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = t->dot(ai, b + j * k, k);
    }
}

void matmul_tn(const double* a, std::size_t m, std::size_t k, const double* b, std::size_t n,
               double* c) {
    const Table* t = table();
    for (std::size_t i = 0; i < k * n; ++i) c[i] = 0.0;
    for (std::size_t l = 0; l < m; ++l) {
        const double* al = a + l * k;
        const double* bl = b + l * n;
        for (std::size_t i = 0; i < k; ++i) t->axpy(al[i], bl, c + i * n, n);
    }
}

void softmax_row(const double* logits, double* out, std::size_t n) {
    const Table* t = table();
    const double m = t->reduce_max(logits, n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(logits[j] - m);
        out[j] = e;
        sum += e;
    }
    t->scale(out, n, 1.0 / sum);
}

}  // namespace daer::kernels
