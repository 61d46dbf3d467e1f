#pragma once

#include "fracctl/nonlocal_ops.hpp"
#include "fracctl/spectral_core.hpp"

#include <Eigen/Dense>

#include <variant>
#include <vector>

namespace fracctl {

// Coefficients u_n = (u(., t), phi_n) at time t.
struct ModalState {
    double t = 0.0;
    Eigen::VectorXd coefficients;

    ModalState() = default;
    ModalState(double time, Eigen::VectorXd c);
    int size() const { return static_cast<int>(coefficients.size()); }
    double norm() const { return coefficients.norm(); }
};

class TimeGrid {
public:
    explicit TimeGrid(std::vector<double> breakpoints);
    static TimeGrid uniform(double horizon, int segments);

    double horizon() const { return t_.back(); }
    const std::vector<double>& breakpoints() const { return t_; }
    int segments() const { return static_cast<int>(t_.size()) - 1; }
    // segment containing t (right-continuous, last segment closed)
    int segment_of(double t) const;

private:
    std::vector<double> t_;
};

// c(t) = sum_i a_{k,i} sigma^i on segment k, sigma = (t - t_k) / (t_{k+1} - t_k).
struct PiecewisePolynomial {
    TimeGrid grid;
    std::vector<std::vector<double>> coefficients;  // one vector per segment

    PiecewisePolynomial(TimeGrid g, std::vector<std::vector<double>> c);
    static PiecewisePolynomial constant(double horizon, double value);
    double operator()(double t) const;
};

// c(t) = amplitude * exp(-rate (T - t)) on [0, T]
struct ExponentialProfile {
    double amplitude;
    double rate;
    double horizon;
    double operator()(double t) const;
};

using TimeProfile = std::variant<PiecewisePolynomial, ExponentialProfile>;

double evaluate(const TimeProfile& c, double t);
double horizon_of(const TimeProfile& c);

// int_0^t c(tau) e^{-lambda (t - tau)} d tau in closed form.
double exponential_moment(const TimeProfile& c, double lambda, double t);
// E_i(z) = int_0^1 r^i e^{-z (1 - r)} dr
double exponential_moment_kernel(int i, double z);

// g(x, t) = sum_j c_j(t) p_j(x) on O x (0, T), zero elsewhere.
class ControlSignal {
public:
    ControlSignal(std::shared_ptr<const ExteriorQuadrature> quad, double horizon, std::vector<ExteriorProfile> profiles,
                  std::vector<TimeProfile> coefficients);
    static ControlSignal zero(std::shared_ptr<const ExteriorQuadrature> quad, double horizon);

    double horizon() const { return T_; }
    int terms() const { return static_cast<int>(p_.size()); }
    const std::vector<ExteriorProfile>& profiles() const { return p_; }
    const std::vector<TimeProfile>& coefficients() const { return c_; }
    const ExteriorQuadrature& quadrature() const { return *quad_; }
    std::shared_ptr<const ExteriorQuadrature> quadrature_ptr() const { return quad_; }
    double operator()(double x, double t) const;
    ControlSignal scaled(double factor) const;
    // L2(O x (0, T)) norm, exact in time for exponential profiles, Gauss otherwise
    double l2_norm() const;

private:
    double T_;
    std::shared_ptr<const ExteriorQuadrature> quad_;
    std::vector<ExteriorProfile> p_;
    std::vector<TimeProfile> c_;
};

// (p_j, N_s phi_n)_{L2(O)}: rows j, columns n
Eigen::MatrixXd control_moments(const ControlSignal& g, const ModeTraces& traces);

// u_n(t) = u0_n e^{-lambda_n t} - int_0^t (g, N_s phi_n) e^{-lambda_n (t - tau)} d tau
ModalState solve_forward(const ModalState& u0, const ControlSignal& g, const ModeTraces& traces, double t);
ModalState solve_free(const ModalState& u0, const Eigen::VectorXd& eigenvalues, double t);

// psi_n(t) = psi0_n e^{-lambda_n (T - t)}; psi0.t holds T
ModalState solve_dual(const ModalState& psi0, const Eigen::VectorXd& eigenvalues, double t);

struct TraceValue {
    double value;
    double remainder;  // estimate of the omitted modes n > N
};
TraceValue dual_normal_trace(const ModalState& psi0, const SpectralBasis& basis, double t, double x);

// (-Delta)^s v = 0 in (-1, 1), v = g on O: Galerkin interior part plus the profile.
SampledFunction solve_dirichlet(const ExteriorProfile& g, const Grid& grid, FracOrder s);

struct DualityTerms {
    double initial;   // (u(0), psi(0))
    double terminal;  // (u(T), psi(T))
    double control;   // int_0^T int_O g N_s psi
    double residual;  // |initial - terminal - control| / max term
};
DualityTerms duality_residual(const ModalState& u0, const ControlSignal& g, const ModalState& psi0,
                              const ModeTraces& traces);

}  // namespace fracctl
