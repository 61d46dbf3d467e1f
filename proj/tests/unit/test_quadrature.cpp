#include "doctest.h"

#include "fracctl/errors.hpp"
#include "fracctl/quadrature.hpp"

#include <cmath>

using namespace fracctl;

TEST_CASE("gauss-legendre is exact for degree 2n-1") {
    for (int n : {1, 2, 5, 10, 16, 30}) {
        const GaussRule& r = gauss_legendre(n);
        for (int k = 0; k <= 2 * n - 1; ++k) {
            double q = 0.0;
            for (int i = 0; i < n; ++i) q += r.w[i] * std::pow(r.x[i], k);
            const double exact = (k % 2 == 1) ? 0.0 : 2.0 / (k + 1);
            CHECK(q == doctest::Approx(exact).epsilon(1e-14));
        }
    }
}

TEST_CASE("gauss-jacobi integrates weighted monomials") {
    for (double beta : {-0.5, 0.25, 0.75}) {
        const double L = 0.3;
        const GaussRule r = jacobi_on_segment(12, beta, L);
        for (int k = 0; k < 20; ++k) {
            double q = 0.0;
            for (int i = 0; i < r.size(); ++i) q += r.w[i] * std::pow(r.x[i], k);
            const double exact = std::pow(L, beta + k + 1) / (beta + k + 1);
            CHECK(q == doctest::Approx(exact).epsilon(1e-12));
        }
    }
}

TEST_CASE("gauss-jacobi with both exponents matches beta function") {
    // int_{-1}^{1} (1-x)^a (1+x)^b dx = 2^{a+b+1} B(a+1, b+1)
    const double a = 0.3, b = -0.4;
    const GaussRule r = gauss_jacobi(8, a, b);
    double q = 0.0;
    for (double w : r.w) q += w;
    const double exact = std::pow(2.0, a + b + 1) * std::tgamma(a + 1) * std::tgamma(b + 1) / std::tgamma(a + b + 2);
    CHECK(q == doctest::Approx(exact).epsilon(1e-13));
}

TEST_CASE("invalid rules are rejected") {
    CHECK_THROWS_AS(gauss_legendre(0), DomainError);
    CHECK_THROWS_AS(gauss_jacobi(4, -1.0, 0.0), DomainError);
}
