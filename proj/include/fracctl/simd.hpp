#pragma once

// Data-parallel kernels used by the quadrature loops. Every kernel has a
// scalar reference implementation; vector variants are selected at runtime
// and reproduce the reference bit for bit (same lane split, same reduction
// order, no contraction into FMA).

#include <cstddef>

namespace fracctl::simd {

enum class Isa { Scalar, Avx2 };

Isa active_isa();
const char* isa_name(Isa isa);
bool isa_available(Isa isa);
// Pins the dispatch (tests, benchmarks). Throws DomainError if unavailable.
void force_isa(Isa isa);
void reset_isa();

double dot(const double* a, const double* b, std::size_t n);
// sum a_i b_i c_i
double dot3(const double* a, const double* b, const double* c, std::size_t n);
// y += alpha x
void axpy(double alpha, const double* x, double* y, std::size_t n);
// out_i = |x - y_i|^(-p); requires x != y_i
void inv_pow(double x, const double* y, double p, double* out, std::size_t n);
// sum w_i |x - y_i|^(-p)
double inv_pow_sum(double x, const double* y, const double* w, double p, std::size_t n);

// exp/log used inside inv_pow; exposed for accuracy tests.
double poly_exp(double x);
double poly_log(double x);

namespace ref {
double dot(const double* a, const double* b, std::size_t n);
double dot3(const double* a, const double* b, const double* c, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void inv_pow(double x, const double* y, double p, double* out, std::size_t n);
double inv_pow_sum(double x, const double* y, const double* w, double p, std::size_t n);
}  // namespace ref

#if defined(FRACCTL_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double dot3(const double* a, const double* b, const double* c, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void inv_pow(double x, const double* y, double p, double* out, std::size_t n);
double inv_pow_sum(double x, const double* y, const double* w, double p, std::size_t n);
}  // namespace avx2
#endif

}  // namespace fracctl::simd
