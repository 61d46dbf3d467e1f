#include "doctest.h"

#include "fracctl/errors.hpp"
#include "fracctl/spectral_core.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <numbers>

using namespace fracctl;
using std::numbers::pi;

namespace {

// Stiffness entries through the symbol |xi|^{2s} and the hat transform:
// K_{0k} = h^{1-2s}/pi int_0^inf eta^{2s} sinc^4(eta/2) cos(k eta) d eta.
// Expanding sin^4 into cosines and using int_0^inf eta^{a-1} cos(w eta) =
// Gamma(a) cos(pi a/2) w^{-a} (a = 2s-3) gives a closed form in s.
long double fourier_closed_form(int k, long double s, long double h) {
    const long double a = 3.0L - 2.0L * s;
    auto p = [a](long double z) { return z == 0 ? 0.0L : std::pow(std::abs(z), a); };
    const long double kk = k;
    const long double d4 = p(kk + 2) - 4 * p(kk + 1) + 6 * p(kk) - 4 * p(kk - 1) + p(kk - 2);
    const long double c = std::tgamma(2.0L * s - 3.0L) *
                          std::cos(std::numbers::pi_v<long double> * (2.0L * s - 3.0L) / 2) /
                          std::numbers::pi_v<long double>;
    return std::pow(h, 1.0L - 2.0L * s) * c * d4;
}

double fourier_entry(int k, double s, double h) {
    if (s != 0.5) return static_cast<double>(fourier_closed_form(k, s, h));
    // removable singularity at s = 1/2: Richardson on symmetric averages
    auto avg = [&](long double d) {
        return 0.5L * (fourier_closed_form(k, 0.5L + d, h) + fourier_closed_form(k, 0.5L - d, h));
    };
    return static_cast<double>((4.0L * avg(1e-5L) - avg(2e-5L)) / 3.0L);
}

// log((1 - t^{2s}) / (1 - t^2)) evaluated directly in t
double log_ratio(double t, double s) {
    if (t > 1e8) return (2 * s - 2) * std::log(t);
    if (t < 1e-8) return std::log1p(-std::pow(t, 2 * s)) - std::log1p(-t * t);
    const double lt = std::log(t);
    if (std::abs(lt) < 1e-12) return std::log(s);
    return std::log(std::expm1(2 * s * lt) / std::expm1(2 * lt));
}

// gamma(y) with adaptive quadrature in the original variable r, split at 1/y
double gamma_oracle(double y, double s) {
    auto f = [&](double r) { return log_ratio(r * y, s) / (1 + r * r); };
    boost::math::quadrature::tanh_sinh<double> ts;
    boost::math::quadrature::exp_sinh<double> es;
    const double J = ts.integrate(f, 0.0, 1.0 / y, 1e-14) +
                     es.integrate(f, 1.0 / y, std::numeric_limits<double>::infinity(), 1e-14);
    const double a = std::pow(y, 2 * s);
    return std::sqrt(4 * s) * std::sin(s * pi) / (2 * pi) * a / (1 + a * a - 2 * a * std::cos(s * pi)) *
           std::exp(J / pi);
}

double G_oracle(double x, double s) {
    auto f = [&](double y) { return (x * y > 700) ? 0.0 : std::exp(-x * y) * gamma_oracle(y, s); };
    boost::math::quadrature::tanh_sinh<double> ts;
    boost::math::quadrature::exp_sinh<double> es;
    return ts.integrate(f, 0.0, 1.0, 1e-10) + es.integrate(f, 1.0, std::numeric_limits<double>::infinity(), 1e-10);
}

}  // namespace

TEST_CASE("fractional order domain") {
    CHECK_THROWS_AS(FracOrder(0.0), DomainError);
    CHECK_THROWS_AS(FracOrder(1.0), DomainError);
    CHECK_THROWS_AS(FracOrder(-0.2), DomainError);
    CHECK_THROWS_AS(FracOrder(std::nan("")), DomainError);
    CHECK(FracOrder(0.3).value() == 0.3);
}

TEST_CASE("normalization constant") {
    CHECK(normalization_constant(FracOrder(0.5)) == doctest::Approx(1.0 / pi).epsilon(1e-15));
    CHECK(normalization_constant(FracOrder(0.9)) == doctest::Approx(0.16490493881830276).epsilon(1e-14));
    for (double s : {0.1, 0.37, 0.75}) {
        const double via_tgamma = s * std::pow(2.0, 2 * s) * boost::math::tgamma((2 * s + 1) / 2) /
                                  (std::sqrt(pi) * boost::math::tgamma(1 - s));
        CHECK(normalization_constant(FracOrder(s)) == doctest::Approx(via_tgamma).epsilon(1e-14));
    }
}

TEST_CASE("eigenvalue asymptotics") {
    CHECK(eigenvalue_asymptotic(10, 0.75) == doctest::Approx(61.09215880316427).epsilon(1e-14));
    CHECK(eigenvalue_asymptotic(1, 0.5) == doctest::Approx(3 * pi / 8).epsilon(1e-15));
    CHECK(eigenvalue_asymptotic(3, 1.0) == doctest::Approx(std::pow(3 * pi / 2, 2)).epsilon(1e-15));
    for (double s : {0.2, 0.5, 0.8})
        for (int k = 1; k < 30; ++k)
            CHECK(std::pow(mu(k, FracOrder(s)), 2 * s) == doctest::Approx(eigenvalue_asymptotic(k, s)).epsilon(1e-14));
    CHECK_THROWS_AS(eigenvalue_asymptotic(0, 0.5), DomainError);
}

TEST_CASE("grid invariants") {
    const Grid g = Grid::uniform(9);
    CHECK(g.interior_count() == 9);
    CHECK(g.node(0) == -1.0);
    CHECK(g.node(10) == 1.0);
    CHECK(g.h() == doctest::Approx(0.2));
    CHECK(g.is_uniform());
    CHECK_THROWS_AS(Grid({-1.0, 0.5, 0.2, 1.0}), DomainError);
    CHECK_THROWS_AS(Grid({-0.9, 0.0, 1.0}), DomainError);
    CHECK_FALSE(Grid({-1.0, -0.5, 1.0}).is_uniform());
}

TEST_CASE("stiffness entries agree with the Fourier-side oracle") {
    for (double s : {0.25, 0.5, 0.75}) {
        const Grid g = Grid::uniform(63);
        const StiffnessMatrix K = assemble_stiffness(g, FracOrder(s));
        CHECK(K.assembly_error < 1e-12);
        for (int k : {0, 1, 2, 3, 4, 7, 20, 50, 62}) {
            const double ref = fourier_entry(k, s, K.h);
            CHECK(K.column[k] == doctest::Approx(ref).epsilon(1e-11));
        }
        // M-matrix sign pattern
        for (int k = 1; k < K.size; ++k) CHECK(K.column[k] < 0.0);
    }
    CHECK_THROWS_AS(assemble_stiffness(Grid({-1.0, -0.5, 1.0}), FracOrder(0.5)), DomainError);
}

TEST_CASE("mass matrix rows integrate the hats") {
    const Grid g = Grid::uniform(15);
    const Eigen::MatrixXd B = assemble_mass(g);
    for (int i = 1; i < 14; ++i) CHECK(B.row(i).sum() == doctest::Approx(g.h()).epsilon(1e-14));
}

TEST_CASE("eigenvalues for s = 1/2") {
    const SpectralBasis coarse = eigen_solve(Grid::uniform(9), FracOrder(0.5), 3);
    CHECK(std::abs(coarse.eigenvalue(1) - 3 * pi / 8) < 0.25 * 3 * pi / 8);
    double prev = coarse.eigenvalue(1);
    for (int M : {63, 255, 1023}) {
        const SpectralBasis b = eigen_solve(Grid::uniform(M), FracOrder(0.5), 3);
        // conforming Galerkin: upper bounds that decrease under refinement
        CHECK(b.eigenvalue(1) < prev);
        CHECK(b.eigenvalue(1) > 1.1577);
        prev = b.eigenvalue(1);
    }
    CHECK(prev == doctest::Approx(1.15777).epsilon(3e-4));
}

TEST_CASE("eigenvectors are mass-orthonormal with the rho sign convention") {
    const Grid g = Grid::uniform(255);
    const FracOrder s(0.75);
    const SpectralBasis b = eigen_solve(g, s, 12);
    const Eigen::MatrixXd B = assemble_mass(g);
    const Eigen::MatrixXd gram = b.vectors().transpose() * B * b.vectors();
    CHECK((gram - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff() < 1e-12);
    for (int n = 2; n <= 12; ++n) CHECK(b.eigenvalue(n) > b.eigenvalue(n - 1));
    for (int n = 1; n <= 12; ++n) {
        const ApproxEigenfunction rho(n, s);
        double c = 0.0;
        for (int i = 1; i <= 255; ++i) c += b.vectors()(i - 1, n - 1) * rho(g.node(i)) * g.h();
        CHECK(c > 0.9);
    }
    CHECK(b.evaluate(1, -1.0) == 0.0);
    CHECK(b.evaluate(1, 1.5) == 0.0);
    CHECK(b.evaluate(1, g.node(128)) == doctest::Approx(b.vectors()(127, 0)));
}

TEST_CASE("cutoff profile") {
    CHECK(q_profile(1.0 / 6) == doctest::Approx(7.0 / 8).epsilon(1e-15));
    CHECK(q_profile(0.0) == 0.5);
    CHECK(q_profile(-0.5) == 0.0);
    CHECK(q_profile(0.5) == 1.0);
    for (double x = -0.6; x <= 0.6; x += 0.01) CHECK(q_profile(x) + q_profile(-x) == doctest::Approx(1.0));
    // C^1 at the junctions
    for (double x0 : {-1.0 / 3, 0.0, 1.0 / 3}) {
        const double e = 1e-7;
        const double dl = (q_profile(x0) - q_profile(x0 - e)) / e;
        const double dr = (q_profile(x0 + e) - q_profile(x0)) / e;
        CHECK(std::abs(dl - dr) < 1e-5);
    }
}

TEST_CASE("gamma density against adaptive quadrature") {
    CHECK(gamma_density(1.0, FracOrder(0.5)) == doctest::Approx(0.0707008024650).epsilon(1e-11));
    for (double s : {0.25, 0.5, 0.75})
        for (double y : {1e-3, 0.2, 1.0, 3.0, 50.0}) {
            const double ref = gamma_oracle(y, s);
            CHECK(gamma_density(y, FracOrder(s)) == doctest::Approx(ref).epsilon(1e-10));
        }
    CHECK_THROWS_AS(gamma_density(0.0, FracOrder(0.5)), DomainError);
}

TEST_CASE("Laplace transform G") {
    // two quadrature schemes at s = 1/2, x = 1
    const double ref = G_oracle(1.0, 0.5);
    CHECK(std::abs((*laplace_G(FracOrder(0.5)))(1.0) - ref) < 1e-6);
    CHECK((*laplace_G(FracOrder(0.5)))(1.0) == doctest::Approx(0.0501359840468).epsilon(1e-10));
    CHECK((*laplace_G(FracOrder(0.75)))(1.0) == doctest::Approx(0.0293999962).epsilon(1e-8));
    CHECK((*laplace_G(FracOrder(0.25)))(1.0) == doctest::Approx(0.0645674838).epsilon(1e-8));
    // F_alpha(0+) = 0 forces int gamma = sin((1-s) pi / 4)
    for (double s : {0.1, 0.25, 0.5, 0.75, 0.9}) {
        const auto G = laplace_G(FracOrder(s));
        CHECK((*G)(0.0) == doctest::Approx(std::sin((1 - s) * pi / 4)).epsilon(1e-10));
        // completely monotone: decreasing and positive
        double prev = (*G)(0.0);
        for (double x : {1e-6, 1e-3, 0.1, 1.0, 10.0, 100.0}) {
            const double v = (*G)(x);
            CHECK(v > 0.0);
            CHECK(v < prev);
            prev = v;
        }
    }
    CHECK_THROWS_AS((*laplace_G(FracOrder(0.5)))(-1.0), DomainError);
}

TEST_CASE("approximate eigenfunctions") {
    const FracOrder s(0.75);
    const LaplaceG& G = *laplace_G(s);
    CHECK(F_alpha(-0.2, 3.0, G) == 0.0);
    CHECK(std::abs(F_alpha(1e-9, 3.0, G)) < 1e-5);
    for (int k : {1, 2, 5, 9}) {
        const ApproxEigenfunction rho(k, s);
        CHECK(rho(1.0) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(rho(-1.2) == 0.0);
        CHECK(rho(3.0) == 0.0);
        double n2 = 0.0;
        const int m = 4000;
        for (int i = 0; i < m; ++i) {
            const double x = -1.0 + (i + 0.5) * 2.0 / m;
            n2 += rho(x) * rho(x) * 2.0 / m;
        }
        CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(0.05));
        // parity (-1)^{k+1}
        const double sign = (k % 2 == 1) ? 1.0 : -1.0;
        CHECK(rho(-0.37) == doctest::Approx(sign * rho(0.37)).epsilon(1e-12));
    }
}

TEST_CASE("generalized eigensolver on a problem with known spectrum") {
    // A = tridiag(-1, 2, -1), B = tridiag(1, 4, 1): lambda_j = (2 - 2 cos t_j) / (4 + 2 cos t_j)
    const int n = 200;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n), B = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        A(i, i) = 2;
        B(i, i) = 4;
        if (i + 1 < n) {
            A(i, i + 1) = A(i + 1, i) = -1;
            B(i, i + 1) = B(i + 1, i) = 1;
        }
    }
    const GeneralizedEigenpairs p = solve_generalized(A, B, 8);
    for (int j = 1; j <= 8; ++j) {
        const double t = j * pi / (n + 1);
        CHECK(p.values[j - 1] == doctest::Approx((2 - 2 * std::cos(t)) / (4 + 2 * std::cos(t))).epsilon(1e-10));
        const Eigen::VectorXd r = A * p.vectors.col(j - 1) - p.values[j - 1] * B * p.vectors.col(j - 1);
        CHECK(r.norm() < 1e-12);
    }
    CHECK_THROWS_AS(solve_generalized(A, Eigen::MatrixXd::Identity(n, n) + Eigen::MatrixXd::Constant(n, n, 0.1), 2),
                    DomainError);
}
