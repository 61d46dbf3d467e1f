// Compiled with -mavx2 (no FMA). Lane layout and reduction order mirror
// kernels_scalar.cpp so results are bitwise identical.

#include "fracctl/simd.hpp"

#include "poly_math.hpp"

#include <immintrin.h>

#include <cmath>

namespace fracctl::simd::avx2 {

using namespace detail;

namespace {

inline double hsum(__m256d v) {
    alignas(32) double l[4];
    _mm256_store_pd(l, v);
    return (l[0] + l[1]) + (l[2] + l[3]);
}

inline __m256d vexp(__m256d x) {
    x = _mm256_min_pd(_mm256_max_pd(x, _mm256_set1_pd(-kExpClamp)), _mm256_set1_pd(kExpClamp));
    const __m256d fx = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(kLog2e)),
                                       _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(fx, _mm256_set1_pd(kLn2Hi)));
    r = _mm256_sub_pd(r, _mm256_mul_pd(fx, _mm256_set1_pd(kLn2Lo)));
    const __m256d xx = _mm256_mul_pd(r, r);
    __m256d px = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(kExpP0), xx), _mm256_set1_pd(kExpP1));
    px = _mm256_add_pd(_mm256_mul_pd(px, xx), _mm256_set1_pd(kExpP2));
    px = _mm256_mul_pd(r, px);
    __m256d qx = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(kExpQ0), xx), _mm256_set1_pd(kExpQ1));
    qx = _mm256_add_pd(_mm256_mul_pd(qx, xx), _mm256_set1_pd(kExpQ2));
    qx = _mm256_add_pd(_mm256_mul_pd(qx, xx), _mm256_set1_pd(kExpQ3));
    __m256d e = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
    e = _mm256_add_pd(_mm256_set1_pd(1.0), _mm256_mul_pd(_mm256_set1_pd(2.0), e));
    const __m256i n = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(fx, _mm256_set1_pd(kRoundMagic))),
                                       _mm256_castpd_si256(_mm256_set1_pd(kRoundMagic)));
    return _mm256_castsi256_pd(_mm256_add_epi64(_mm256_castpd_si256(e), _mm256_slli_epi64(n, 52)));
}

inline __m256d vlog(__m256d x) {
    const __m256i bits = _mm256_castpd_si256(x);
    // biased exponent (0..2047) converted exactly through the 2^52 trick
    const __m256i be = _mm256_srli_epi64(bits, 52);
    const __m256d two52 = _mm256_set1_pd(4503599627370496.0);
    __m256d e = _mm256_sub_pd(_mm256_castsi256_pd(_mm256_or_si256(be, _mm256_castpd_si256(two52))), two52);
    e = _mm256_sub_pd(e, _mm256_set1_pd(1022.0));
    const __m256d m = _mm256_castsi256_pd(
        _mm256_or_si256(_mm256_and_si256(bits, _mm256_set1_epi64x(0x000FFFFFFFFFFFFFll)),
                        _mm256_set1_epi64x(0x3FE0000000000000ll)));
    const __m256d small = _mm256_cmp_pd(m, _mm256_set1_pd(kSqrtHalf), _CMP_LT_OQ);
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d f = _mm256_blendv_pd(_mm256_sub_pd(m, one), _mm256_sub_pd(_mm256_add_pd(m, m), one), small);
    e = _mm256_blendv_pd(e, _mm256_sub_pd(e, one), small);
    const __m256d z = _mm256_mul_pd(f, f);
    __m256d p = _mm256_add_pd(_mm256_mul_pd(_mm256_set1_pd(kLogP0), f), _mm256_set1_pd(kLogP1));
    p = _mm256_add_pd(_mm256_mul_pd(p, f), _mm256_set1_pd(kLogP2));
    p = _mm256_add_pd(_mm256_mul_pd(p, f), _mm256_set1_pd(kLogP3));
    p = _mm256_add_pd(_mm256_mul_pd(p, f), _mm256_set1_pd(kLogP4));
    p = _mm256_add_pd(_mm256_mul_pd(p, f), _mm256_set1_pd(kLogP5));
    __m256d q = _mm256_add_pd(f, _mm256_set1_pd(kLogQ0));
    q = _mm256_add_pd(_mm256_mul_pd(q, f), _mm256_set1_pd(kLogQ1));
    q = _mm256_add_pd(_mm256_mul_pd(q, f), _mm256_set1_pd(kLogQ2));
    q = _mm256_add_pd(_mm256_mul_pd(q, f), _mm256_set1_pd(kLogQ3));
    q = _mm256_add_pd(_mm256_mul_pd(q, f), _mm256_set1_pd(kLogQ4));
    __m256d y = _mm256_mul_pd(f, _mm256_div_pd(_mm256_mul_pd(z, p), q));
    y = _mm256_sub_pd(y, _mm256_mul_pd(e, _mm256_set1_pd(kLogE1)));
    y = _mm256_sub_pd(y, _mm256_mul_pd(_mm256_set1_pd(0.5), z));
    __m256d r = _mm256_add_pd(f, y);
    return _mm256_add_pd(r, _mm256_mul_pd(e, _mm256_set1_pd(kLogE2)));
}

inline __m256d vinvpow(__m256d vx, const double* y, __m256d mp) {
    const __m256d sign = _mm256_set1_pd(-0.0);
    const __m256d d = _mm256_andnot_pd(sign, _mm256_sub_pd(vx, _mm256_loadu_pd(y)));
    return vexp(_mm256_mul_pd(mp, vlog(d)));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < n4; i += 4)
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    double s = hsum(acc);
    for (std::size_t i = n4; i < n; ++i) s = s + a[i] * b[i];
    return s;
}

double dot3(const double* a, const double* b, const double* c, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < n4; i += 4) {
        const __m256d ab = _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(ab, _mm256_loadu_pd(c + i)));
    }
    double s = hsum(acc);
    for (std::size_t i = n4; i < n; ++i) s = s + (a[i] * b[i]) * c[i];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < n4; i += 4)
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i))));
    for (std::size_t i = n4; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void inv_pow(double x, const double* y, double p, double* out, std::size_t n) {
    const __m256d vx = _mm256_set1_pd(x);
    const __m256d mp = _mm256_set1_pd(-p);
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < n4; i += 4) _mm256_storeu_pd(out + i, vinvpow(vx, y + i, mp));
    if (n4 < n) ref::inv_pow(x, y + n4, p, out + n4, n - n4);
}

double inv_pow_sum(double x, const double* y, const double* w, double p, std::size_t n) {
    const __m256d vx = _mm256_set1_pd(x);
    const __m256d mp = _mm256_set1_pd(-p);
    __m256d acc = _mm256_setzero_pd();
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < n4; i += 4)
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(w + i), vinvpow(vx, y + i, mp)));
    double s = hsum(acc);
    for (std::size_t i = n4; i < n; ++i) s = s + w[i] * poly_exp(-p * poly_log(std::abs(x - y[i])));
    return s;
}

}  // namespace fracctl::simd::avx2
