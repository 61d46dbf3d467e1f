#include "fracctl/evolution.hpp"

#include "fracctl/errors.hpp"
#include "fracctl/quadrature.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace fracctl {

namespace {

void check_finite(const Eigen::VectorXd& v, const char* what) {
    if (!v.allFinite()) throw DomainError(std::string(what) + ": non-finite coefficient");
}

bool same_horizon(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b)); }

}  // namespace

ModalState::ModalState(double time, Eigen::VectorXd c) : t(time), coefficients(std::move(c)) {
    if (!std::isfinite(time)) throw DomainError("modal state: non-finite time");
    check_finite(coefficients, "modal state");
}

// ---------------------------------------------------------------- time grids and profiles

TimeGrid::TimeGrid(std::vector<double> breakpoints) : t_(std::move(breakpoints)) {
    if (t_.size() < 2) throw DomainError("time grid needs at least two breakpoints");
    if (t_.front() != 0.0) throw DomainError("time grid must start at 0");
    for (std::size_t i = 1; i < t_.size(); ++i)
        if (!(t_[i] > t_[i - 1]) || !std::isfinite(t_[i])) throw DomainError("time grid breakpoints must increase");
}

TimeGrid TimeGrid::uniform(double horizon, int segments) {
    if (!(horizon > 0.0) || segments < 1) throw DomainError("time grid: need T > 0 and at least one segment");
    std::vector<double> t(static_cast<std::size_t>(segments) + 1);
    for (int k = 0; k <= segments; ++k) t[static_cast<std::size_t>(k)] = horizon * k / segments;
    t.back() = horizon;
    return TimeGrid(std::move(t));
}

int TimeGrid::segment_of(double t) const {
    if (t < 0.0 || t > horizon()) throw DomainError("time outside the grid");
    const auto it = std::upper_bound(t_.begin(), t_.end(), t);
    return std::min(static_cast<int>(it - t_.begin()) - 1, segments() - 1);
}

PiecewisePolynomial::PiecewisePolynomial(TimeGrid g, std::vector<std::vector<double>> c)
    : grid(std::move(g)), coefficients(std::move(c)) {
    if (static_cast<int>(coefficients.size()) != grid.segments())
        throw DomainError("piecewise polynomial: one coefficient vector per segment required");
    for (const auto& seg : coefficients)
        for (double a : seg)
            if (!std::isfinite(a)) throw DomainError("piecewise polynomial: non-finite coefficient");
}

PiecewisePolynomial PiecewisePolynomial::constant(double horizon, double value) {
    return PiecewisePolynomial(TimeGrid::uniform(horizon, 1), {{value}});
}

double PiecewisePolynomial::operator()(double t) const {
    const int k = grid.segment_of(t);
    const auto& b = grid.breakpoints();
    const double sigma = (t - b[static_cast<std::size_t>(k)]) / (b[static_cast<std::size_t>(k) + 1] - b[static_cast<std::size_t>(k)]);
    const auto& a = coefficients[static_cast<std::size_t>(k)];
    double v = 0.0;
    for (auto it = a.rbegin(); it != a.rend(); ++it) v = v * sigma + *it;
    return v;
}

double ExponentialProfile::operator()(double t) const {
    if (t < 0.0 || t > horizon) throw DomainError("time outside the horizon");
    return amplitude * std::exp(-rate * (horizon - t));
}

double evaluate(const TimeProfile& c, double t) {
    return std::visit([t](const auto& p) { return p(t); }, c);
}

double horizon_of(const TimeProfile& c) {
    if (const auto* p = std::get_if<PiecewisePolynomial>(&c)) return p->grid.horizon();
    return std::get<ExponentialProfile>(c).horizon;
}

double exponential_moment_kernel(int i, double z) {
    if (i < 0) throw DomainError("exponential moment: negative degree");
    if (z < 0.0) throw DomainError("exponential moment: negative rate");
    if (z <= i + 1.0) {
        // e^{-z} sum_k z^k / (k! (i + k + 1)), all terms positive
        long double term = 1.0L, acc = 0.0L;
        for (int k = 0; k < 400; ++k) {
            const long double add = term / (i + k + 1);
            acc += add;
            if (add < 1e-21L * acc) break;
            term *= z / (k + 1);
        }
        return static_cast<double>(std::exp(-static_cast<long double>(z)) * acc);
    }
    long double E = -std::expm1(-static_cast<long double>(z)) / z;
    for (int k = 1; k <= i; ++k) E = (1.0L - k * E) / z;
    return static_cast<double>(E);
}

double exponential_moment(const TimeProfile& c, double lambda, double t) {
    if (t < 0.0 || t > horizon_of(c) * (1.0 + 1e-12)) throw DomainError("exponential moment: t outside [0, T]");
    if (const auto* e = std::get_if<ExponentialProfile>(&c)) {
        const double r = e->rate + lambda;
        const double f = (r == 0.0) ? t : -std::expm1(-r * t) / r;
        return e->amplitude * std::exp(-e->rate * (e->horizon - t)) * f;
    }
    const auto& p = std::get<PiecewisePolynomial>(c);
    const auto& b = p.grid.breakpoints();
    long double acc = 0.0L;
    for (int k = 0; k < p.grid.segments(); ++k) {
        const double t0 = b[static_cast<std::size_t>(k)], t1 = b[static_cast<std::size_t>(k) + 1];
        if (t0 >= t) break;
        const double tend = std::min(t1, t);
        const double L = t1 - t0;
        const double se = (tend - t0) / L;
        const double z = lambda * L * se;
        const long double pref = std::exp(-static_cast<long double>(lambda) * (t - tend));
        const auto& a = p.coefficients[static_cast<std::size_t>(k)];
        long double seg = 0.0L, sp = se;
        for (std::size_t i = 0; i < a.size(); ++i) {
            seg += static_cast<long double>(a[i]) * L * sp * exponential_moment_kernel(static_cast<int>(i), z);
            sp *= se;
        }
        acc += pref * seg;
    }
    return static_cast<double>(acc);
}

// ---------------------------------------------------------------- control signal

ControlSignal::ControlSignal(std::shared_ptr<const ExteriorQuadrature> quad, double horizon,
                             std::vector<ExteriorProfile> profiles, std::vector<TimeProfile> coefficients)
    : T_(horizon), quad_(std::move(quad)), p_(std::move(profiles)), c_(std::move(coefficients)) {
    if (!quad_) throw DomainError("control signal needs a quadrature");
    if (!(T_ > 0.0) || !std::isfinite(T_)) throw DomainError("control signal: horizon must be positive");
    if (p_.size() != c_.size()) throw DomainError("control signal: one time coefficient per profile");
    for (const auto& p : p_)
        if (p.quadrature_ptr() != quad_ && p.quadrature().nodes() != quad_->nodes())
            throw DomainError("control signal: profiles must share the region quadrature");
    for (const auto& c : c_)
        if (!same_horizon(horizon_of(c), T_)) throw DomainError("control signal: time coefficient horizon mismatch");
}

ControlSignal ControlSignal::zero(std::shared_ptr<const ExteriorQuadrature> quad, double horizon) {
    return ControlSignal(std::move(quad), horizon, {}, {});
}

double ControlSignal::operator()(double x, double t) const {
    if (!(t > 0.0 && t < T_) || !quad_->region().contains(x)) return 0.0;
    double v = 0.0;
    for (std::size_t j = 0; j < p_.size(); ++j) v += evaluate(c_[j], t) * p_[j](x);
    return v;
}

ControlSignal ControlSignal::scaled(double factor) const {
    std::vector<TimeProfile> c = c_;
    for (auto& tp : c) {
        if (auto* e = std::get_if<ExponentialProfile>(&tp)) {
            e->amplitude *= factor;
        } else {
            for (auto& seg : std::get<PiecewisePolynomial>(tp).coefficients)
                for (double& a : seg) a *= factor;
        }
    }
    return ControlSignal(quad_, T_, p_, std::move(c));
}

double ControlSignal::l2_norm() const {
    const std::size_t J = p_.size();
    if (J == 0) return 0.0;
    std::set<double> cuts{0.0, T_};
    for (const auto& c : c_)
        if (const auto* p = std::get_if<PiecewisePolynomial>(&c))
            for (double b : p->grid.breakpoints()) cuts.insert(std::min(b, T_));
    const std::vector<double> cv(cuts.begin(), cuts.end());
    const GaussRule& g = gauss_legendre(20);
    long double acc = 0.0L;
    for (std::size_t j = 0; j < J; ++j) {
        for (std::size_t k = 0; k <= j; ++k) {
            const double pp = p_[j].inner(p_[k]);
            long double time = 0.0L;
            const auto* ej = std::get_if<ExponentialProfile>(&c_[j]);
            const auto* ek = std::get_if<ExponentialProfile>(&c_[k]);
            if (ej && ek) {
                const double r = ej->rate + ek->rate;
                time = static_cast<long double>(ej->amplitude) * ek->amplitude * (r == 0.0 ? T_ : -std::expm1(-r * T_) / r);
            } else {
                for (std::size_t s = 0; s + 1 < cv.size(); ++s) {
                    const double m = 0.5 * (cv[s] + cv[s + 1]), w = 0.5 * (cv[s + 1] - cv[s]);
                    for (int i = 0; i < g.size(); ++i) {
                        const double t = m + w * g.x[i];
                        time += static_cast<long double>(w * g.w[i]) * evaluate(c_[j], t) * evaluate(c_[k], t);
                    }
                }
            }
            acc += (j == k ? 1.0L : 2.0L) * pp * time;
        }
    }
    return std::sqrt(static_cast<double>(std::max(acc, 0.0L)));
}

// ---------------------------------------------------------------- modal solves

Eigen::MatrixXd control_moments(const ControlSignal& g, const ModeTraces& traces) {
    const auto& q = *traces.quadrature;
    if (&q != &g.quadrature() && q.nodes() != g.quadrature().nodes())
        throw DomainError("control region does not match the trace region");
    const int J = g.terms(), N = static_cast<int>(traces.values.cols());
    const auto& w = q.weights();
    Eigen::MatrixXd m(J, N);
    for (int j = 0; j < J; ++j) {
        const auto& p = g.profiles()[static_cast<std::size_t>(j)].values();
        for (int n = 0; n < N; ++n) {
            long double acc = 0.0L;
            for (std::size_t i = 0; i < w.size(); ++i)
                acc += static_cast<long double>(w[i]) * p[i] * traces.values(static_cast<Eigen::Index>(i), n);
            m(j, n) = static_cast<double>(acc);
        }
    }
    return m;
}

ModalState solve_free(const ModalState& u0, const Eigen::VectorXd& eigenvalues, double t) {
    if (u0.size() > eigenvalues.size()) throw DomainError("solve_forward: more coefficients than eigenvalues");
    if (!(t >= 0.0)) throw DomainError("solve_forward: t must be non-negative");
    Eigen::VectorXd c(u0.size());
    for (int n = 0; n < u0.size(); ++n) c[n] = u0.coefficients[n] * std::exp(-eigenvalues[n] * t);
    return ModalState(t, std::move(c));
}

ModalState solve_forward(const ModalState& u0, const ControlSignal& g, const ModeTraces& traces, double t) {
    if (u0.size() > traces.values.cols()) throw DomainError("solve_forward: more coefficients than traced modes");
    if (!(t >= 0.0) || t > g.horizon() * (1.0 + 1e-12)) throw DomainError("solve_forward: t outside [0, T]");
    ModalState out = solve_free(u0, traces.eigenvalues, t);
    if (g.terms() == 0) return out;
    const Eigen::MatrixXd m = control_moments(g, traces);
    for (int n = 0; n < u0.size(); ++n) {
        long double acc = 0.0L;
        for (int j = 0; j < g.terms(); ++j)
            acc += static_cast<long double>(m(j, n)) *
                   exponential_moment(g.coefficients()[static_cast<std::size_t>(j)], traces.eigenvalues[n], t);
        out.coefficients[n] = static_cast<double>(out.coefficients[n] - acc);
    }
    return out;
}

ModalState solve_dual(const ModalState& psi0, const Eigen::VectorXd& eigenvalues, double t) {
    const double T = psi0.t;
    if (psi0.size() > eigenvalues.size()) throw DomainError("solve_dual: more coefficients than eigenvalues");
    if (!(t >= 0.0 && t <= T)) throw DomainError("solve_dual: t outside [0, T]");
    Eigen::VectorXd c(psi0.size());
    for (int n = 0; n < psi0.size(); ++n) c[n] = psi0.coefficients[n] * std::exp(-eigenvalues[n] * (T - t));
    return ModalState(t, std::move(c));
}

TraceValue dual_normal_trace(const ModalState& psi0, const SpectralBasis& basis, double t, double x) {
    const double T = psi0.t;
    if (!(t >= 0.0 && t < T)) throw DomainError("dual_normal_trace: requires 0 <= t < T");
    if (x >= -1.0 && x <= 1.0) throw DomainError("dual_normal_trace: x must lie outside [-1, 1]");
    const int N = psi0.size();
    if (N > basis.size()) throw DomainError("dual_normal_trace: more coefficients than modes");
    const FracOrder s = basis.order();
    NormalDerivativeOperator op(-1.0, 1.0, basis.grid().interior_count(), s, EndModel::PowerLaw, s.value());
    const Eigen::MatrixXd tr = op.apply(basis.vectors().leftCols(N), {x});
    long double acc = 0.0L;
    double growth = 0.0;
    for (int n = 0; n < N; ++n) {
        acc += static_cast<long double>(psi0.coefficients[n]) * std::exp(-basis.eigenvalue(n + 1) * (T - t)) * tr(0, n);
        growth = std::max(growth, std::abs(tr(0, n)) / std::pow(mu(n + 1, s), s.value()));
    }
    // omitted modes: |psi0_n| <= |psi0|, |N_s phi_n(x)| ~ growth * mu_n^s
    double tail = 0.0;
    for (int n = N + 1; n < N + 100000; ++n) {
        const double term = std::pow(mu(n, s), s.value()) * std::exp(-eigenvalue_asymptotic(n, s.value()) * (T - t));
        tail += term;
        if (term < 1e-18 * std::max(tail, 1e-300)) break;
    }
    return {static_cast<double>(acc), psi0.norm() * growth * tail};
}

// ---------------------------------------------------------------- Dirichlet lifting

namespace {

double g2_kernel(double z, double s) {
    const double e = 1.0 - 2.0 * s;
    const double L = std::log(std::abs(z));
    const double t = e * L;
    const double E = std::abs(e) < 1e-14 ? L * (1.0 + 0.5 * t) : std::expm1(t) / e;
    return E / (-2.0 * s);
}

// int phi_i(x) |x - y|^{-1-2s} dx for y outside the support of the hat
double hat_kernel(const Grid& grid, int i, double y, double s) {
    const double xl = grid.node(i - 1), xc = grid.node(i), xr = grid.node(i + 1);
    const double h = xc - xl;
    const double dist = std::min(std::abs(y - xl), std::abs(y - xr));
    if (dist < 2.0 * h) return (g2_kernel(xl - y, s) - 2.0 * g2_kernel(xc - y, s) + g2_kernel(xr - y, s)) / h;
    const GaussRule& r = gauss_legendre(8);
    const double p = 1.0 + 2.0 * s;
    double acc = 0.0;
    for (int k = 0; k < r.size(); ++k) {
        const double t = 0.5 + 0.5 * r.x[k];
        acc += 0.5 * r.w[k] * t * (std::pow(std::abs(xl + t * h - y), -p) + std::pow(std::abs(xr - t * h - y), -p));
    }
    return h * acc;
}

}  // namespace

SampledFunction solve_dirichlet(const ExteriorProfile& g, const Grid& grid, FracOrder s) {
    const StiffnessMatrix K = assemble_stiffness(grid, s);
    const int M = grid.interior_count();
    const auto& q = g.quadrature();
    const double Cs = normalization_constant(s);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(M);
    for (int k = 0; k < q.size(); ++k) {
        const double gw = q.weights()[static_cast<std::size_t>(k)] * g.values()[static_cast<std::size_t>(k)];
        if (gw == 0.0) continue;
        const double y = q.nodes()[static_cast<std::size_t>(k)];
        for (int i = 1; i <= M; ++i) b[i - 1] += Cs * gw * hat_kernel(grid, i, y, s.value());
    }
    Eigen::LLT<Eigen::MatrixXd> llt(K.dense());
    if (llt.info() != Eigen::Success) throw NumericalError("solve_dirichlet: stiffness matrix is not positive definite");
    const Eigen::VectorXd w = llt.solve(b);
    if (!w.allFinite()) throw NumericalError("solve_dirichlet: singular system");
    return SampledFunction::on_grid(grid, std::vector<double>(w.data(), w.data() + w.size())).with_exterior(g);
}

// ---------------------------------------------------------------- duality

DualityTerms duality_residual(const ModalState& u0, const ControlSignal& g, const ModalState& psi0,
                              const ModeTraces& traces) {
    const double T = psi0.t;
    if (!same_horizon(T, g.horizon())) throw DomainError("duality_residual: dual horizon differs from the control horizon");
    if (u0.size() != psi0.size()) throw DomainError("duality_residual: state sizes differ");
    const int N = u0.size();
    const Eigen::VectorXd& lam = traces.eigenvalues;
    const ModalState psi_init = solve_dual(psi0, lam, 0.0);
    const ModalState uT = solve_forward(u0, g, traces, T);
    DualityTerms d{};
    long double a = 0.0L, b = 0.0L, c = 0.0L;
    for (int n = 0; n < N; ++n) {
        a += static_cast<long double>(u0.coefficients[n]) * psi_init.coefficients[n];
        b += static_cast<long double>(uT.coefficients[n]) * psi0.coefficients[n];
    }
    if (g.terms() > 0) {
        // dual side: int_0^T c_j(t) (p_j, N_s psi(t)) dt
        const Eigen::MatrixXd m = control_moments(g, traces);
        for (int j = 0; j < g.terms(); ++j)
            for (int n = 0; n < N; ++n)
                c += static_cast<long double>(psi0.coefficients[n]) * m(j, n) *
                     exponential_moment(g.coefficients()[static_cast<std::size_t>(j)], lam[n], T);
    }
    d.initial = static_cast<double>(a);
    d.terminal = static_cast<double>(b);
    d.control = static_cast<double>(c);
    const long double scale = std::max({std::abs(a), std::abs(b), std::abs(c)});
    d.residual = scale > 0.0L ? static_cast<double>(std::abs(a - b - c) / scale) : 0.0;
    return d;
}

}  // namespace fracctl
