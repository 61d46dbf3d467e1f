#include "fracctl/control_synthesis.hpp"

#include "fracctl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

// Eigen 3.4's generic hypot needs NumTraits::infinity(), which the Boost 1.74
// NumTraits for multiprecision numbers does not provide.
namespace Eigen::internal {
template <>
struct hypot_impl<fracctl::mpfloat> {
    static fracctl::mpfloat run(const fracctl::mpfloat& x, const fracctl::mpfloat& y) {
        return boost::multiprecision::hypot(x, y);
    }
};
}  // namespace Eigen::internal

namespace fracctl {

namespace {

// Neumaier's variant of compensated summation
struct Neumaier {
    double sum = 0.0, c = 0.0;
    void add(double v) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v)) c += (sum - t) + v;
        else c += (v - t) + sum;
        sum = t;
    }
    double value() const { return sum + c; }
};

double time_factor(double a, double T) {
    // (1 - e^{-a T}) / a, with the a -> 0 limit
    return a * T < 1e-300 ? T : -std::expm1(-a * T) / a;
}

mpfloat time_factor_mp(const mpfloat& a, double T) {
    if (a == 0) return mpfloat(T);
    return -boost::multiprecision::expm1(-a * T) / a;
}

VectorMp to_mp(const Eigen::VectorXd& v) {
    VectorMp out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = v[i];
    return out;
}

Eigen::VectorXd to_double(const VectorMp& v) {
    Eigen::VectorXd out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i]);
    return out;
}

}  // namespace

// ---------------------------------------------------------------- Gramian

double GramianSystem::trace() const {
    mpfloat t = 0;
    for (int i = 0; i < N; ++i) t += G(i, i);
    return static_cast<double>(t);
}

double GramianSystem::condition() const {
    if (!(min_eigenvalue > 0.0)) return std::numeric_limits<double>::infinity();
    return max_eigenvalue / min_eigenvalue;
}

Eigen::MatrixXd GramianSystem::gramian() const {
    Eigen::MatrixXd out(N, N);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) out(i, j) = static_cast<double>(G(i, j));
    return out;
}

GramianSystem assemble_gramian(const ModeTraces& traces, double T, int N) {
    if (!(T > 0.0) || !std::isfinite(T)) throw DomainError("assemble_gramian: T must be positive");
    if (N < 1 || N > traces.values.cols()) throw DomainError("assemble_gramian: N out of range");
    GramianSystem sys;
    sys.N = N;
    sys.T = T;
    sys.eigenvalues = traces.eigenvalues.head(N);
    sys.kappa.resize(N, N);
    sys.G.resize(N, N);
    const auto& w = traces.quadrature->weights();
    // kappa in extended precision keeps the Gram matrix of the sampled traces PSD
    // well below double rounding, where its smallest eigenvalues live
    std::vector<mpfloat> wm(w.begin(), w.end());
    MatrixMp V(static_cast<Eigen::Index>(w.size()), N);
    for (Eigen::Index q = 0; q < V.rows(); ++q)
        for (int n = 0; n < N; ++n) V(q, n) = traces.values(q, n);
    for (int n = 0; n < N; ++n)
        for (int m = 0; m <= n; ++m) {
            mpfloat k = 0;
            for (Eigen::Index q = 0; q < V.rows(); ++q) k += wm[static_cast<std::size_t>(q)] * V(q, n) * V(q, m);
            const mpfloat g = k * time_factor_mp(mpfloat(sys.eigenvalues[n]) + sys.eigenvalues[m], T);
            sys.kappa(n, m) = sys.kappa(m, n) = static_cast<double>(k);
            sys.G(n, m) = sys.G(m, n) = g;
        }
    Eigen::SelfAdjointEigenSolver<MatrixMp> es(sys.G, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("assemble_gramian: eigenvalue iteration failed");
    sys.min_eigenvalue = static_cast<double>(es.eigenvalues()[0]);
    sys.max_eigenvalue = static_cast<double>(es.eigenvalues()[N - 1]);
    if (sys.min_eigenvalue < -1e-12 * sys.trace())
        throw NumericalError("assemble_gramian: Gramian is indefinite (smallest eigenvalue " +
                             std::to_string(sys.min_eigenvalue) + "); trace quadrature is unreliable");
    return sys;
}

GramianSystem assemble_gramian(const SpectralBasis& basis, const ExteriorRegion& region, double T, int N) {
    if (N < 1 || N > basis.size()) throw DomainError("assemble_gramian: N out of range");
    const SpectralBasis b = basis.truncated(N);
    return assemble_gramian(compute_traces(b, gramian_quadrature(region, b.order())), T, N);
}

double default_regularization(FracOrder s, const GramianSystem& sys) {
    return s.value() > 0.5 ? 0.0 : 1e-10 * sys.trace() / sys.N;
}

VectorMp solve_gramian(const GramianSystem& sys, const VectorMp& r, double eps, const SolverOptions& opts,
                       SolverDiagnostics& diag) {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw DomainError("solve_gramian: epsilon must be >= 0");
    if (r.size() != sys.N) throw DomainError("solve_gramian: right-hand side has the wrong size");
    if (!(opts.relative_tolerance > 0.0)) throw DomainError("solve_gramian: tolerance must be positive");
    const int N = sys.N;
    const int max_it = opts.max_iterations > 0 ? opts.max_iterations : 10 * N;
    diag = {};
    VectorMp x = VectorMp::Zero(N);
    const mpfloat rnorm = r.norm();
    if (rnorm == 0) {
        diag.converged = true;
        return x;
    }
    MatrixMp A = sys.G;
    for (int i = 0; i < N; ++i) A(i, i) += eps;
    VectorMp dinv(N);
    for (int i = 0; i < N; ++i) {
        if (!(A(i, i) > 0)) throw NumericalError("solve_gramian: non-positive diagonal entry");
        dinv[i] = 1 / A(i, i);
    }
    VectorMp res = r;
    VectorMp z = dinv.cwiseProduct(res);
    VectorMp p = z;
    mpfloat rz = res.dot(z);
    const mpfloat tol = rnorm * opts.relative_tolerance;
    for (int it = 1; it <= max_it; ++it) {
        const VectorMp Ap = A * p;
        const mpfloat pAp = p.dot(Ap);
        if (!(pAp > 0)) throw NumericalError("solve_gramian: indefinite system (p^T A p <= 0)");
        const mpfloat alpha = rz / pAp;
        x += alpha * p;
        res -= alpha * Ap;
        diag.iterations = it;
        // recompute the true residual rather than trusting the recurrence
        const mpfloat true_res = (r - A * x).norm();
        diag.residual = static_cast<double>(true_res / rnorm);
        if (true_res <= tol) {
            diag.converged = true;
            return x;
        }
        z = dinv.cwiseProduct(res);
        const mpfloat rz_new = res.dot(z);
        p = z + (rz_new / rz) * p;
        rz = rz_new;
    }
    throw NumericalError("solve_gramian: CG did not converge in " + std::to_string(max_it) +
                         " iterations (relative residual " + std::to_string(diag.residual) + ")");
}

// ---------------------------------------------------------------- synthesis

ControlResult synthesize_null_control(const ModalState& u0, const ModeTraces& traces, FracOrder s, double T, int N,
                                      std::optional<double> epsilon, const SolverOptions& opts, bool gagliardo_cost) {
    if (u0.size() != N) throw DomainError("synthesize_null_control: u0 must have N coefficients");
    GramianSystem sys = assemble_gramian(traces, T, N);
    const double eps = epsilon ? *epsilon : default_regularization(s, sys);
    if (!(eps >= 0.0)) throw DomainError("synthesize_null_control: epsilon must be >= 0");

    Eigen::VectorXd r(N);
    for (int n = 0; n < N; ++n) r[n] = u0.coefficients[n] * std::exp(-sys.eigenvalues[n] * T);
    SolverDiagnostics diag;
    const VectorMp psi_mp = solve_gramian(sys, to_mp(r), eps, opts, diag);
    const Eigen::VectorXd psi = to_double(psi_mp);

    const auto quad = traces.quadrature;
    std::vector<ExteriorProfile> profiles;
    std::vector<TimeProfile> coeffs;
    for (int m = 0; m < N; ++m) {
        if (psi[m] == 0.0) continue;
        const auto col = traces.values.col(m);
        profiles.emplace_back(quad, std::vector<double>(col.data(), col.data() + col.size()));
        coeffs.emplace_back(ExponentialProfile{psi[m], sys.eigenvalues[m], T});
    }
    ControlSignal g(quad, T, std::move(profiles), std::move(coeffs));

    ControlResult res{std::move(g), psi, r, std::move(sys), eps, diag, 0.0, 0.0, {}, {}, 0.0, false};
    const VectorMp pd = to_mp(psi);
    res.cost_l2 = static_cast<double>(boost::multiprecision::sqrt(boost::multiprecision::abs(pd.dot(res.system.G * pd))));
    res.cost_gagliardo = res.cost_l2;
    if (gagliardo_cost) {
        std::vector<int> active;
        for (int m = 0; m < N; ++m)
            if (psi[m] != 0.0) active.push_back(m);
        std::vector<ExteriorProfile> tr;
        for (int m : active) {
            const auto col = traces.values.col(m);
            tr.emplace_back(quad, std::vector<double>(col.data(), col.data() + col.size()));
        }
        long double h = 0.0L;
        for (std::size_t a = 0; a < active.size(); ++a)
            for (std::size_t b = 0; b <= a; ++b) {
                const int m = active[a], k = active[b];
                const double f = gagliardo_form(tr[a], tr[b], s) *
                                 time_factor(res.system.eigenvalues[m] + res.system.eigenvalues[k], T);
                h += static_cast<long double>(a == b ? 1.0 : 2.0) * psi[m] * psi[k] * f;
            }
        res.cost_gagliardo = std::sqrt(res.cost_l2 * res.cost_l2 + std::max(0.0, static_cast<double>(h)));
    }

    const ModalState start(0.0, u0.coefficients);
    res.terminal = solve_forward(start, res.control, traces, T);
    res.free_terminal = solve_free(start, traces.eigenvalues, T);
    const double fn = res.free_terminal.norm();
    if (fn == 0.0) {
        res.exact_null = res.terminal.norm() == 0.0;
        res.defect = res.terminal.norm();
    } else {
        res.defect = res.terminal.norm() / fn;
        res.exact_null = res.defect == 0.0;
    }
    return res;
}

ControlResult synthesize_null_control(const ModalState& u0, const SpectralBasis& basis, const ExteriorRegion& region,
                                      double T, int N, std::optional<double> epsilon, const SolverOptions& opts) {
    if (N < 1 || N > basis.size()) throw DomainError("synthesize_null_control: N out of range");
    const SpectralBasis b = basis.truncated(N);
    const ModeTraces traces = compute_traces(b, gramian_quadrature(region, b.order()));
    return synthesize_null_control(u0, traces, b.order(), T, N, epsilon, opts);
}

// ---------------------------------------------------------------- verification

VerificationReport verify_null_control(const ControlResult& result, const ModalState& u0, const ModeTraces& traces,
                                       int probes, std::uint64_t seed) {
    const int N = result.system.N;
    const double T = result.system.T;
    if (u0.size() != N) throw DomainError("verify_null_control: u0 must have N coefficients");
    VerificationReport rep;
    const ModalState start(0.0, u0.coefficients);
    const ModalState uT = solve_forward(start, result.control, traces, T);
    const ModalState fT = solve_free(start, traces.eigenvalues, T);
    rep.terminal = uT.coefficients;
    const double fn = fT.norm();
    rep.defect = fn == 0.0 ? uT.norm() : uT.norm() / fn;
    rep.defect_mismatch = std::abs(rep.defect - result.defect);

    const VectorMp psi = to_mp(result.psi0);
    const VectorMp Gpsi = result.system.G * psi;
    // scale: the larger of the free state and the control contributions that cancel it
    const VectorMp spread = result.system.G.cwiseAbs() * psi.cwiseAbs();
    const double scale = std::max(fn, static_cast<double>(spread.maxCoeff()));
    double worst = 0.0;
    for (int n = 0; n < N; ++n) {
        const mpfloat pred = mpfloat(fT.coefficients[n]) - Gpsi[n];
        worst = std::max(worst, std::abs(static_cast<double>(pred - uT.coefficients[n])));
    }
    rep.closed_loop_error = scale == 0.0 ? worst : worst / scale;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    for (int k = 0; k < probes; ++k) {
        Eigen::VectorXd p(N);
        for (int n = 0; n < N; ++n) p[n] = nd(rng);
        const auto d = duality_residual(start, result.control, ModalState(T, p / p.norm()), traces);
        rep.duality_residuals.push_back(d.residual);
        rep.max_duality_residual = std::max(rep.max_duality_residual, d.residual);
    }
    rep.passed = rep.defect_mismatch <= 1e-12 && rep.closed_loop_error <= 1e-10 && rep.max_duality_residual < 1e-8;
    return rep;
}

TrajectoryResult steer_to_trajectory(const ModalState& u0, const ModalState& target0, const ModeTraces& traces,
                                     FracOrder s, double T, int N, std::optional<double> epsilon,
                                     const SolverOptions& opts) {
    if (u0.size() != N || target0.size() != N) throw DomainError("steer_to_trajectory: states must have N coefficients");
    TrajectoryResult out{synthesize_null_control(ModalState(0.0, u0.coefficients - target0.coefficients), traces, s, T,
                                                 N, epsilon, opts),
                         {}, {}, 0.0};
    out.target = solve_free(ModalState(0.0, target0.coefficients), traces.eigenvalues, T);
    out.reached = solve_forward(ModalState(0.0, u0.coefficients), out.control.control, traces, T);
    const double tn = out.target.norm();
    const double diff = (out.reached.coefficients - out.target.coefficients).norm();
    out.mismatch = tn == 0.0 ? diff : diff / tn;
    return out;
}

// ---------------------------------------------------------------- observability

ObservabilityEstimate observability_constant_estimate(const GramianSystem& sys) {
    const int N = sys.N;
    ObservabilityEstimate est;
    est.N = N;
    est.smallest_ritz = sys.min_eigenvalue;
    Eigen::LLT<MatrixMp> llt(sys.G);
    if (llt.info() != Eigen::Success || !(sys.min_eigenvalue > 0.0))
        throw NumericalError("observability_constant_estimate: Gramian is numerically singular (smallest Ritz value " +
                             std::to_string(sys.min_eigenvalue) + ")");
    // L^{-1} D L^{-T} has the eigenvalues of G^{-1/2} D G^{-1/2}
    MatrixMp D = MatrixMp::Zero(N, N);
    for (int n = 0; n < N; ++n) D(n, n) = boost::multiprecision::exp(mpfloat(-2.0 * sys.eigenvalues[n] * sys.T));
    const MatrixMp L = llt.matrixL();
    MatrixMp X = L.triangularView<Eigen::Lower>().solve(D);
    MatrixMp A = L.triangularView<Eigen::Lower>().solve(X.transpose());
    A = (A + A.transpose()) / 2;
    Eigen::SelfAdjointEigenSolver<MatrixMp> es(A, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("observability_constant_estimate: eigensolver failed");
    est.constant = static_cast<double>(es.eigenvalues()[N - 1]);
    return est;
}

// ---------------------------------------------------------------- Muntz

double muntz_block_sum(double s, long long n0, long long n1) {
    if (n0 < 0 || n1 < n0) throw DomainError("muntz_block_sum: need 0 <= n0 <= n1");
    if (n1 > std::numeric_limits<int>::max()) throw DomainError("muntz_block_sum: n1 too large");
    Neumaier acc;
    // smallest terms first
    for (long long n = n1; n > n0; --n) acc.add(1.0 / eigenvalue_asymptotic(static_cast<int>(n), s));
    return acc.value();
}

MuntzReport muntz_report(FracOrder order, long long N_max) {
    if (N_max < 10) throw DomainError("muntz_report: N_max must be >= 10");
    if (N_max > std::numeric_limits<int>::max() / 2) throw DomainError("muntz_report: N_max too large");
    const double s = order.value();
    MuntzReport rep;
    rep.s = s;
    rep.N_max = N_max;
    std::vector<long long> marks;
    for (long long d = 10; d <= N_max; d *= 10)
        for (long long f : {1, 2, 5})
            if (f * d <= N_max) marks.push_back(f * d);
    if (marks.back() != N_max) marks.push_back(N_max);

    Neumaier acc;
    std::size_t next = 0;
    for (long long n = 1; n <= N_max && next < marks.size(); ++n) {
        acc.add(1.0 / eigenvalue_asymptotic(static_cast<int>(n), s));
        if (n == marks[next]) {
            const double inc = 2 * n <= N_max ? muntz_block_sum(s, n, 2 * n) : std::nan("");
            rep.checkpoints.push_back({n, acc.value(), inc});
            ++next;
        }
    }

    rep.verdict = 2.0 * s <= 1.0 ? MuntzVerdict::Divergent : MuntzVerdict::Convergent;
    const auto& last = rep.checkpoints.back();
    // reference checkpoint about a decade below N_max
    const MuntzCheckpoint* ref = &rep.checkpoints.front();
    for (const auto& c : rep.checkpoints)
        if (c.N * 10 <= last.N) ref = &c;
    const double a = static_cast<double>(ref->N), b = static_cast<double>(last.N);
    if (2.0 * s == 1.0) {
        rep.tail_model = "logarithmic";
        rep.tail_coefficient = (last.partial_sum - ref->partial_sum) / std::log(b / a);
        rep.tail_bound = std::numeric_limits<double>::infinity();
    } else if (2.0 * s < 1.0) {
        rep.tail_model = "power";
        rep.tail_coefficient =
            (last.partial_sum - ref->partial_sum) / (std::pow(b, 1.0 - 2.0 * s) - std::pow(a, 1.0 - 2.0 * s));
        rep.tail_bound = std::numeric_limits<double>::infinity();
    } else {
        // mu_n >= (n - 1/2) pi / 2, so sum_{n > N} 1/lambda_n <= (2/pi)^{2s} (N - 1/2)^{1-2s} / (2s - 1)
        rep.tail_model = "p-series";
        rep.tail_coefficient = std::pow(2.0 / M_PI, 2.0 * s) / (2.0 * s - 1.0);
        rep.tail_bound = rep.tail_coefficient * std::pow(b - 0.5, 1.0 - 2.0 * s);
    }
    return rep;
}

const char* to_string(MuntzVerdict v) { return v == MuntzVerdict::Divergent ? "divergent" : "convergent"; }

}  // namespace fracctl
