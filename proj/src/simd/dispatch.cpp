#include "fracctl/simd.hpp"

#include "fracctl/errors.hpp"

#include <atomic>

namespace fracctl::simd {

namespace {

Isa detect() {
#if defined(FRACCTL_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
    if (__builtin_cpu_supports("avx2")) return Isa::Avx2;
#endif
    return Isa::Scalar;
}

std::atomic<int>& selected() {
    static std::atomic<int> isa{static_cast<int>(detect())};
    return isa;
}

}  // namespace

Isa active_isa() { return static_cast<Isa>(selected().load(std::memory_order_relaxed)); }

const char* isa_name(Isa isa) {
    switch (isa) {
        case Isa::Avx2: return "avx2";
        case Isa::Scalar: break;
    }
    return "scalar";
}

bool isa_available(Isa isa) {
    if (isa == Isa::Scalar) return true;
    return detect() == Isa::Avx2;
}

void force_isa(Isa isa) {
    if (!isa_available(isa)) throw DomainError(std::string("simd: ISA not available: ") + isa_name(isa));
    selected().store(static_cast<int>(isa), std::memory_order_relaxed);
}

void reset_isa() { selected().store(static_cast<int>(detect()), std::memory_order_relaxed); }

#if defined(FRACCTL_HAVE_AVX2)
#define FRACCTL_DISPATCH(fn, ...)                                  \
    if (active_isa() == Isa::Avx2) return avx2::fn(__VA_ARGS__);   \
    return ref::fn(__VA_ARGS__)
#else
#define FRACCTL_DISPATCH(fn, ...) return ref::fn(__VA_ARGS__)
#endif

double dot(const double* a, const double* b, std::size_t n) { FRACCTL_DISPATCH(dot, a, b, n); }

double dot3(const double* a, const double* b, const double* c, std::size_t n) {
    FRACCTL_DISPATCH(dot3, a, b, c, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) { FRACCTL_DISPATCH(axpy, alpha, x, y, n); }

void inv_pow(double x, const double* y, double p, double* out, std::size_t n) {
    FRACCTL_DISPATCH(inv_pow, x, y, p, out, n);
}

double inv_pow_sum(double x, const double* y, const double* w, double p, std::size_t n) {
    FRACCTL_DISPATCH(inv_pow_sum, x, y, w, p, n);
}

#undef FRACCTL_DISPATCH

}  // namespace fracctl::simd
