#pragma once

#include "fracctl/evolution.hpp"
#include "fracctl/nonlocal_ops.hpp"
#include "fracctl/spectral_core.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/eigen.hpp>

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fracctl {

// 50 decimal digits: the Gramian spans ~15 orders of magnitude at N = 20.
using mpfloat = boost::multiprecision::cpp_bin_float_50;
using MatrixMp = Eigen::Matrix<mpfloat, Eigen::Dynamic, Eigen::Dynamic>;
using VectorMp = Eigen::Matrix<mpfloat, Eigen::Dynamic, 1>;

struct SolverOptions {
    double relative_tolerance = 1e-12;
    int max_iterations = 0;  // 0 selects 10 N
};

struct SolverDiagnostics {
    int iterations = 0;
    double residual = 0.0;  // ||(G + eps I) psi - r|| / ||r||
    bool converged = false;
};

// G_nm = kappa_nm (1 - e^{-(lambda_n + lambda_m) T}) / (lambda_n + lambda_m)
struct GramianSystem {
    int N = 0;
    double T = 0.0;
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd kappa;
    MatrixMp G;
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;

    double trace() const;
    // max / min eigenvalue; infinity when min <= 0
    double condition() const;
    Eigen::MatrixXd gramian() const;
};

GramianSystem assemble_gramian(const ModeTraces& traces, double T, int N);
GramianSystem assemble_gramian(const SpectralBasis& basis, const ExteriorRegion& region, double T, int N);

// 0 for s > 1/2, 1e-10 trace(G) / N otherwise.
double default_regularization(FracOrder s, const GramianSystem& sys);

// Preconditioned CG on (G + eps I) psi = r. Throws NumericalError on
// breakdown or when the iteration budget runs out.
VectorMp solve_gramian(const GramianSystem& sys, const VectorMp& r, double eps, const SolverOptions& opts,
                       SolverDiagnostics& diag);

struct ControlResult {
    ControlSignal control;
    Eigen::VectorXd psi0;
    Eigen::VectorXd rhs;  // r_n = u0_n e^{-lambda_n T}
    GramianSystem system;
    double epsilon = 0.0;
    SolverDiagnostics diagnostics;
    double cost_l2 = 0.0;
    double cost_gagliardo = 0.0;  // (||g||^2 + int_0^T [g(t)]^2_{H^s(O)} dt)^{1/2}
    ModalState terminal;
    ModalState free_terminal;
    double defect = 0.0;  // ||u(T)|| / ||u_free(T)||, 0 for an exact null
    bool exact_null = false;
};

ControlResult synthesize_null_control(const ModalState& u0, const ModeTraces& traces, FracOrder s, double T, int N,
                                      std::optional<double> epsilon = std::nullopt, const SolverOptions& opts = {},
                                      bool gagliardo_cost = true);
ControlResult synthesize_null_control(const ModalState& u0, const SpectralBasis& basis, const ExteriorRegion& region,
                                      double T, int N, std::optional<double> epsilon = std::nullopt,
                                      const SolverOptions& opts = {});

struct VerificationReport {
    Eigen::VectorXd terminal;
    double defect = 0.0;
    double defect_mismatch = 0.0;  // |reported - re-simulated|
    // max_n |u0_n e^{-lambda T} - (G psi)_n - u_n(T)| relative to max(||u_free(T)||, max_n (|G| |psi|)_n)
    double closed_loop_error = 0.0;
    std::vector<double> duality_residuals;
    double max_duality_residual = 0.0;
    bool passed = false;
};

VerificationReport verify_null_control(const ControlResult& result, const ModalState& u0, const ModeTraces& traces,
                                       int probes = 10, std::uint64_t seed = 1);

struct TrajectoryResult {
    ControlResult control;  // null control of u0 - target0
    ModalState target;      // free evolution of target0 at T
    ModalState reached;     // u(T) from u0 under the control
    double mismatch = 0.0;  // ||reached - target|| / ||target||
};

TrajectoryResult steer_to_trajectory(const ModalState& u0, const ModalState& target0, const ModeTraces& traces,
                                     FracOrder s, double T, int N, std::optional<double> epsilon = std::nullopt,
                                     const SolverOptions& opts = {});

struct ObservabilityEstimate {
    double constant = 0.0;       // max psi^T D psi / psi^T G psi, D = diag(e^{-2 lambda T})
    double smallest_ritz = 0.0;  // smallest eigenvalue of G
    int N = 0;
};

// Throws NumericalError when G is numerically singular.
ObservabilityEstimate observability_constant_estimate(const GramianSystem& sys);

enum class MuntzVerdict { Convergent, Divergent };

struct MuntzCheckpoint {
    long long N;
    double partial_sum;
    double doubling_increment;  // S_{2N} - S_N, NaN if 2N > N_max
};

struct MuntzReport {
    double s = 0.0;
    long long N_max = 0;
    std::vector<MuntzCheckpoint> checkpoints;
    MuntzVerdict verdict = MuntzVerdict::Convergent;
    // "logarithmic": S_N ~ c ln N, "power": S_N ~ c N^{1-2s}, "p-series": tail <= c N^{1-2s}
    std::string tail_model;
    double tail_coefficient = 0.0;
    double tail_bound = 0.0;  // bound on S_inf - S_{N_max} when convergent, infinity otherwise
};

// sum_{n = n0 + 1}^{n1} 1 / lambda_asym(n), compensated
double muntz_block_sum(double s, long long n0, long long n1);
MuntzReport muntz_report(FracOrder s, long long N_max);

const char* to_string(MuntzVerdict v);

}  // namespace fracctl
