#include "fracctl/simd.hpp"

#include "poly_math.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace fracctl::simd {

using namespace detail;

double poly_exp(double x) {
    x = std::min(std::max(x, -kExpClamp), kExpClamp);
    const double fx = std::nearbyint(x * kLog2e);
    double r = x - fx * kLn2Hi;
    r = r - fx * kLn2Lo;
    const double xx = r * r;
    const double px = r * ((kExpP0 * xx + kExpP1) * xx + kExpP2);
    const double qx = ((kExpQ0 * xx + kExpQ1) * xx + kExpQ2) * xx + kExpQ3;
    double e = px / (qx - px);
    e = 1.0 + 2.0 * e;
    const std::int64_t n = std::bit_cast<std::int64_t>(fx + kRoundMagic) -
                           std::bit_cast<std::int64_t>(kRoundMagic);
    return std::bit_cast<double>(std::bit_cast<std::int64_t>(e) + (n << 52));
}

double poly_log(double x) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    double e = static_cast<double>(static_cast<std::int64_t>(bits >> 52)) - 1022.0;
    const double m = std::bit_cast<double>((bits & 0x000FFFFFFFFFFFFFull) | 0x3FE0000000000000ull);
    double f;
    if (m < kSqrtHalf) {
        e = e - 1.0;
        f = (m + m) - 1.0;
    } else {
        f = m - 1.0;
    }
    const double z = f * f;
    const double p = ((((kLogP0 * f + kLogP1) * f + kLogP2) * f + kLogP3) * f + kLogP4) * f + kLogP5;
    const double q = ((((f + kLogQ0) * f + kLogQ1) * f + kLogQ2) * f + kLogQ3) * f + kLogQ4;
    double y = f * (z * p / q);
    y = y - e * kLogE1;
    y = y - 0.5 * z;
    double r = f + y;
    r = r + e * kLogE2;
    return r;
}

namespace ref {

double dot(const double* a, const double* b, std::size_t n) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < n4; i += 4)
        for (int l = 0; l < 4; ++l) acc[l] = acc[l] + a[i + l] * b[i + l];
    double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (std::size_t i = n4; i < n; ++i) s = s + a[i] * b[i];
    return s;
}

double dot3(const double* a, const double* b, const double* c, std::size_t n) {
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < n4; i += 4)
        for (int l = 0; l < 4; ++l) acc[l] = acc[l] + (a[i + l] * b[i + l]) * c[i + l];
    double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (std::size_t i = n4; i < n; ++i) s = s + (a[i] * b[i]) * c[i];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void inv_pow(double x, const double* y, double p, double* out, std::size_t n) {
    const double mp = -p;
    for (std::size_t i = 0; i < n; ++i) out[i] = poly_exp(mp * poly_log(std::abs(x - y[i])));
}

double inv_pow_sum(double x, const double* y, const double* w, double p, std::size_t n) {
    const double mp = -p;
    double acc[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n4 = n - n % 4;
    for (std::size_t i = 0; i < n4; i += 4)
        for (int l = 0; l < 4; ++l)
            acc[l] = acc[l] + w[i + l] * poly_exp(mp * poly_log(std::abs(x - y[i + l])));
    double s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (std::size_t i = n4; i < n; ++i) s = s + w[i] * poly_exp(mp * poly_log(std::abs(x - y[i])));
    return s;
}

}  // namespace ref
}  // namespace fracctl::simd
