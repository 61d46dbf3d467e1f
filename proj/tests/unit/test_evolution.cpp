#include "doctest.h"

#include "fracctl/errors.hpp"
#include "fracctl/evolution.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <random>

using namespace fracctl;
using boost::math::quadrature::gauss_kronrod;

namespace {

struct Setup {
    SpectralBasis basis;
    ModeTraces traces;
    std::shared_ptr<const ExteriorQuadrature> quad;
};

Setup make_setup(double s, int M = 127, int N = 20, const char* region = "1.5:2.5") {
    const FracOrder o(s);
    auto basis = eigen_solve(Grid::uniform(M), o, N);
    auto quad = gramian_quadrature(ExteriorRegion::parse(region), o);
    auto traces = compute_traces(basis, quad);
    return {std::move(basis), std::move(traces), std::move(quad)};
}

double tau_integral(const TimeProfile& c, double lambda, double t) {
    auto f = [&](double tau) { return evaluate(c, tau) * std::exp(-lambda * (t - tau)); };
    if (const auto* p = std::get_if<PiecewisePolynomial>(&c)) {
        double acc = 0.0;
        const auto& b = p->grid.breakpoints();
        for (std::size_t k = 0; k + 1 < b.size() && b[k] < t; ++k)
            acc += gauss_kronrod<double, 31>::integrate(f, b[k], std::min(b[k + 1], t), 10, 1e-15);
        return acc;
    }
    return gauss_kronrod<double, 31>::integrate(f, 0.0, t, 10, 1e-15);
}

ControlSignal random_signal(const Setup& S, std::mt19937& rng, double T, int terms) {
    std::normal_distribution<double> nd;
    std::vector<ExteriorProfile> p;
    std::vector<TimeProfile> c;
    for (int j = 0; j < terms; ++j) {
        const double a = nd(rng), b = nd(rng), f = 1.0 + std::abs(nd(rng));
        p.push_back(ExteriorProfile::sample(S.quad, [=](double x) { return a + b * std::sin(f * x); }));
        const int segs = 4;
        std::vector<std::vector<double>> coef;
        for (int k = 0; k < segs; ++k) coef.push_back({nd(rng)});  // piecewise constant
        c.emplace_back(PiecewisePolynomial(TimeGrid::uniform(T, segs), coef));
    }
    return ControlSignal(S.quad, T, std::move(p), std::move(c));
}

Eigen::VectorXd random_unit(std::mt19937& rng, int N) {
    std::normal_distribution<double> nd;
    Eigen::VectorXd v(N);
    for (int i = 0; i < N; ++i) v[i] = nd(rng);
    return v / v.norm();
}

}  // namespace

TEST_CASE("exponential moment kernel against quadrature") {
    for (int i = 0; i <= 6; ++i)
        for (double z : {0.0, 1e-9, 0.3, 2.5, 6.9, 7.1, 40.0, 1e4}) {
            CAPTURE(i);
            CAPTURE(z);
            const double ref = gauss_kronrod<double, 61>::integrate(
                [&](double r) { return std::pow(r, i) * std::exp(-z * (1.0 - r)); }, 0.0, 1.0, 15, 1e-15);
            CHECK(exponential_moment_kernel(i, z) == doctest::Approx(ref).epsilon(1e-13));
        }
    CHECK_THROWS_AS(exponential_moment_kernel(-1, 1.0), DomainError);
}

TEST_CASE("closed-form time integrals match tau quadrature") {
    const PiecewisePolynomial pp(TimeGrid({0.0, 0.2, 0.7, 1.3}), {{1.0, -2.0, 0.5}, {0.3}, {-1.0, 0.0, 0.0, 4.0}});
    const ExponentialProfile ep{1.7, 3.2, 1.3};
    for (double lam : {0.0, 0.8, 12.0, 300.0})
        for (double t : {0.0, 0.1, 0.7, 1.0, 1.3}) {
            CHECK(exponential_moment(pp, lam, t) == doctest::Approx(tau_integral(pp, lam, t)).epsilon(1e-10));
            CHECK(exponential_moment(ep, lam, t) == doctest::Approx(tau_integral(ep, lam, t)).epsilon(1e-10));
        }
    CHECK_THROWS_AS(exponential_moment(pp, 1.0, 1.5), DomainError);
}

TEST_CASE("time grids and profiles validate their input") {
    CHECK_THROWS_AS(TimeGrid({0.0}), DomainError);
    CHECK_THROWS_AS(TimeGrid({0.1, 1.0}), DomainError);
    CHECK_THROWS_AS(TimeGrid({0.0, 0.5, 0.5}), DomainError);
    CHECK_THROWS_AS(PiecewisePolynomial(TimeGrid::uniform(1.0, 2), {{1.0}}), DomainError);
    const TimeGrid g = TimeGrid::uniform(2.0, 4);
    CHECK(g.segment_of(0.0) == 0);
    CHECK(g.segment_of(0.5) == 1);
    CHECK(g.segment_of(2.0) == 3);
    const PiecewisePolynomial p(TimeGrid({0.0, 1.0}), {{1.0, 2.0, 3.0}});
    CHECK(p(0.5) == doctest::Approx(1.0 + 1.0 + 0.75));
}

TEST_CASE("free evolution: decay, semigroup and monotonicity") {
    const auto S = make_setup(0.6, 63, 10);
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(10);
    e1[0] = 1.0;
    const auto g0 = ControlSignal::zero(S.quad, 3.0);
    const auto u = solve_forward(ModalState(0.0, e1), g0, S.traces, 0.7);
    CHECK(u.coefficients[0] == doctest::Approx(std::exp(-0.7 * S.basis.eigenvalue(1))));
    CHECK(u.coefficients.tail(9).norm() == 0.0);
    CHECK(solve_forward(ModalState(0.0, Eigen::VectorXd::Zero(10)), g0, S.traces, 1.0).norm() == 0.0);

    std::mt19937 rng(7);
    const ModalState u0(0.0, random_unit(rng, 10));
    const auto a = solve_forward(u0, g0, S.traces, 1.1);
    const auto b = solve_forward(solve_forward(u0, g0, S.traces, 0.4), g0, S.traces, 0.7);
    CHECK((a.coefficients - b.coefficients).norm() <= 1e-12 * a.norm());
    double prev = u0.norm();
    for (double t = 0.1; t <= 3.0; t += 0.1) {
        const double n = solve_forward(u0, g0, S.traces, t).norm();
        CHECK(n <= prev);
        prev = n;
    }
}

TEST_CASE("constant-in-time control has the closed-form response") {
    const auto S = make_setup(0.75, 127, 8);
    const auto p = ExteriorProfile::sample(S.quad, [](double x) { return std::exp(-(x - 2.0) * (x - 2.0)); });
    const double T = 1.0;
    const ControlSignal g(S.quad, T, {p}, {PiecewisePolynomial::constant(T, 1.0)});
    const auto u = solve_forward(ModalState(0.0, Eigen::VectorXd::Zero(8)), g, S.traces, T);
    for (int n = 0; n < 8; ++n) {
        const double lam = S.basis.eigenvalue(n + 1);
        double m = 0.0;
        for (int q = 0; q < S.quad->size(); ++q)
            m += S.quad->weights()[static_cast<std::size_t>(q)] * p.values()[static_cast<std::size_t>(q)] * S.traces.values(q, n);
        // the control enters with a minus sign (see the normal-derivative convention)
        const double ref = -m * tau_integral(PiecewisePolynomial::constant(T, 1.0), lam, T);
        CHECK(u.coefficients[n] == doctest::Approx(-m * (1.0 - std::exp(-lam * T)) / lam).epsilon(1e-13));
        CHECK(u.coefficients[n] == doctest::Approx(ref).epsilon(1e-10));
    }
}

TEST_CASE("forward solve is affine in the data") {
    const auto S = make_setup(0.4, 63, 12, "-3:-1.3");
    std::mt19937 rng(3);
    const double T = 0.8;
    const auto g1 = random_signal(S, rng, T, 2), g2 = random_signal(S, rng, T, 3);
    const ModalState a(0.0, random_unit(rng, 12)), b(0.0, random_unit(rng, 12));
    const auto ua = solve_forward(a, g1, S.traces, T);
    const auto ub = solve_forward(b, g2, S.traces, T);
    std::vector<ExteriorProfile> p = g1.profiles();
    std::vector<TimeProfile> c;
    const auto s1 = g1.scaled(2.0), s2 = g2.scaled(-3.0);
    for (const auto& x : s1.coefficients()) c.push_back(x);
    for (const auto& x : g2.profiles()) p.push_back(x);
    for (const auto& x : s2.coefficients()) c.push_back(x);
    const ControlSignal g(S.quad, T, p, c);
    const ModalState ab(0.0, 2.0 * a.coefficients - 3.0 * b.coefficients);
    const auto u = solve_forward(ab, g, S.traces, T);
    CHECK((u.coefficients - (2.0 * ua.coefficients - 3.0 * ub.coefficients)).norm() <= 1e-12 * u.norm());
}

TEST_CASE("steady state of a constant control is the Dirichlet lifting") {
    const double s = 0.6;
    const auto S = make_setup(s, 255, 6);
    const auto p = ExteriorProfile::sample(S.quad, [](double x) { return 1.0 + 0.5 * x; });
    const double T = 40.0;
    const ControlSignal g(S.quad, T, {p}, {PiecewisePolynomial::constant(T, 1.0)});
    const auto u = solve_forward(ModalState(0.0, Eigen::VectorXd::Zero(6)), g, S.traces, T);
    const auto v = solve_dirichlet(p, S.basis.grid(), FracOrder(s));
    const Eigen::Map<const Eigen::VectorXd> w(v.values().data(), v.count());
    const Eigen::MatrixXd B = assemble_mass(S.basis.grid());
    for (int n = 0; n < 6; ++n) {
        const double proj = w.dot(B * S.basis.vectors().col(n));
        CHECK(u.coefficients[n] == doctest::Approx(proj).epsilon(2e-3));
    }
}

TEST_CASE("Dirichlet lifting: zero data, maximum principle, harmonicity") {
    const FracOrder o(0.7);
    const Grid grid = Grid::uniform(63);
    auto quad = std::make_shared<const ExteriorQuadrature>(ExteriorRegion({{1.2, 2.0}, {-1.8, -1.1}}));
    const auto zero = solve_dirichlet(ExteriorProfile::sample(quad, [](double) { return 0.0; }), grid, o);
    for (double v : zero.values()) CHECK(v == 0.0);
    const auto pos = solve_dirichlet(ExteriorProfile::sample(quad, [](double x) { return x > 0 ? 1.0 : 0.3; }), grid, o);
    for (double v : pos.values()) CHECK(v > 0.0);
    CHECK(pos(1.5) == doctest::Approx(1.0));
    // pointwise (-Delta)^s v is small compared to the size of a single term
    const Grid fine = Grid::uniform(511);
    const auto vf = solve_dirichlet(ExteriorProfile::sample(quad, [](double x) { return x > 0 ? 1.0 : 0.3; }), fine, o);
    auto gp = vf;
    const double one = std::abs(frac_laplacian_pv(SampledFunction::on_grid(fine, vf.values()), 0.0, o));
    CHECK(std::abs(frac_laplacian_pv(gp, 0.0, o)) < 1e-2 * one);
}

TEST_CASE("dual solve: terminal condition and norm bound") {
    Eigen::VectorXd lam(3);
    lam << 1.0, 4.0, 9.0;
    const ModalState psi0(2.0, Eigen::Vector3d(1.0, -2.0, 0.5));
    CHECK(solve_dual(psi0, lam, 2.0).coefficients == psi0.coefficients);
    const auto p = solve_dual(psi0, lam, 1.5);
    CHECK(p.coefficients[1] == doctest::Approx(-2.0 * std::exp(-2.0)));
    for (double t = 0.0; t <= 2.0; t += 0.25) CHECK(solve_dual(psi0, lam, t).norm() <= psi0.norm());
    CHECK_THROWS_AS(solve_dual(psi0, lam, 2.5), DomainError);
}

TEST_CASE("dual normal trace: single mode, rejection at T, truncation stability") {
    const double s = 0.75;
    const FracOrder o(s);
    const auto basis = eigen_solve(Grid::uniform(255), o, 40);
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(20);
    e1[0] = 1.0;
    const ModalState psi(1.0, e1);
    const double x = 1.8;
    const auto tv = dual_normal_trace(psi, basis, 0.5, x);
    const double ref = std::exp(-0.5 * basis.eigenvalue(1)) *
                       nonlocal_normal_derivative(SampledFunction::from_mode(basis, 1, EndModel::PowerLaw), x, o);
    CHECK(tv.value == doctest::Approx(ref).epsilon(1e-12));
    CHECK_THROWS_AS(dual_normal_trace(psi, basis, 1.0, x), DomainError);
    CHECK_THROWS_AS(dual_normal_trace(psi, basis, 0.5, 0.5), DomainError);
    CHECK(dual_normal_trace(ModalState(1.0, Eigen::VectorXd::Zero(20)), basis, 0.5, x).value == 0.0);

    std::mt19937 rng(11);
    const Eigen::VectorXd r = random_unit(rng, 40);
    const auto v20 = dual_normal_trace(ModalState(1.0, r.head(20)), basis, 0.5, x);
    const auto v40 = dual_normal_trace(ModalState(1.0, r), basis, 0.5, x);
    CHECK(std::abs(v20.value - v40.value) < 1e-8);
    CHECK(v20.remainder < 1e-8);
    CHECK(v20.remainder >= std::abs(v20.value - v40.value));
}

TEST_CASE("duality identity over random instances") {
    const auto S = make_setup(0.6, 127, 20);
    std::mt19937 rng(2024);
    const double T = 1.0;
    for (int k = 0; k < 20; ++k) {
        const auto g = random_signal(S, rng, T, 2);
        const ModalState u0(0.0, random_unit(rng, 20));
        const ModalState psi0(T, random_unit(rng, 20));
        const auto d = duality_residual(u0, g, psi0, S.traces);
        CHECK(d.residual < 1e-10);
        // control term through an independent time quadrature
        const Eigen::MatrixXd m = control_moments(g, S.traces);
        double oracle = 0.0;
        for (int j = 0; j < g.terms(); ++j)
            for (int n = 0; n < 20; ++n)
                oracle += psi0.coefficients[n] * m(j, n) *
                          tau_integral(g.coefficients()[static_cast<std::size_t>(j)], S.basis.eigenvalue(n + 1), T);
        CHECK(d.control == doctest::Approx(oracle).epsilon(1e-10));
        const auto d3 = duality_residual(u0, g.scaled(3.0), psi0, S.traces);
        CHECK(d3.control == doctest::Approx(3.0 * d.control).epsilon(1e-14));
    }
    const auto d0 = duality_residual(ModalState(0.0, random_unit(rng, 20)), ControlSignal::zero(S.quad, T),
                                     ModalState(T, random_unit(rng, 20)), S.traces);
    CHECK(d0.residual < 1e-15);
}

TEST_CASE("control signal value, support and norm") {
    const auto S = make_setup(0.6, 31, 4);
    const double T = 2.0;
    const auto p = ExteriorProfile::sample(S.quad, [](double x) { return x; });
    const ControlSignal g(S.quad, T, {p, p}, {ExponentialProfile{1.0, 0.5, T}, ExponentialProfile{2.0, 1.5, T}});
    CHECK(g(2.0, 1.0) == doctest::Approx(2.0 * (std::exp(-0.5) + 2.0 * std::exp(-1.5))));
    CHECK(g(0.5, 1.0) == 0.0);
    CHECK(g(2.0, 2.5) == 0.0);
    const double pp = p.inner(p);
    auto f = [&](double t) {
        const double c = std::exp(-0.5 * (T - t)) + 2.0 * std::exp(-1.5 * (T - t));
        return c * c;
    };
    const double ref = std::sqrt(pp * gauss_kronrod<double, 31>::integrate(f, 0.0, T));
    CHECK(g.l2_norm() == doctest::Approx(ref).epsilon(1e-13));
    const ControlSignal gp(S.quad, T, {p}, {PiecewisePolynomial(TimeGrid({0.0, 0.5, 2.0}), {{1.0}, {0.0, 1.0}})});
    CHECK(gp.l2_norm() == doctest::Approx(std::sqrt(pp * (0.5 + 1.5 / 3.0))).epsilon(1e-13));
    CHECK_THROWS_AS(ControlSignal(S.quad, T, {p}, {ExponentialProfile{1.0, 1.0, 1.0}}), DomainError);
    CHECK_THROWS_AS(ControlSignal(S.quad, T, {p}, {}), DomainError);
}

TEST_CASE("forward solve rejects a control on a different region") {
    const auto S = make_setup(0.6, 31, 4);
    auto other = gramian_quadrature(ExteriorRegion::parse("-3:-2"), FracOrder(0.6));
    const ControlSignal g(other, 1.0, {ExteriorProfile::sample(other, [](double) { return 1.0; })},
                          {PiecewisePolynomial::constant(1.0, 1.0)});
    CHECK_THROWS_AS(solve_forward(ModalState(0.0, Eigen::VectorXd::Zero(4)), g, S.traces, 1.0), DomainError);
}
