#pragma once

#include <Eigen/Dense>

#include <memory>
#include <vector>

namespace fracctl {

// Fractional order s, validated to lie in (0, 1).
class FracOrder {
public:
    explicit FracOrder(double s);
    double value() const { return s_; }

private:
    double s_;
};

// C_s = s 2^{2s} Gamma((2s+1)/2) / (sqrt(pi) Gamma(1-s)).
double normalization_constant(FracOrder s);

// (n pi/2 - (2-2s) pi/8)^{2s}. Accepts s in (0, 1] so the local case can be
// used as a sanity check of the formula.
double eigenvalue_asymptotic(int n, double s);

// Half-line frequency mu_k = k pi/2 - (1-s) pi/4.
double mu(int k, FracOrder s);

// Nodes of a partition of [-1, 1]; node 0 is -1 and the last node is 1.
class Grid {
public:
    explicit Grid(std::vector<double> nodes);
    static Grid uniform(int interior_nodes);

    const std::vector<double>& nodes() const { return nodes_; }
    int interior_count() const { return static_cast<int>(nodes_.size()) - 2; }
    double node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
    // maximum spacing
    double h() const { return h_; }
    bool is_uniform(double rtol = 1e-12) const;

private:
    std::vector<double> nodes_;
    double h_;
};

// Galerkin stiffness of the P1 hat basis. On a uniform grid it is symmetric
// Toeplitz, stored through its first column.
struct StiffnessMatrix {
    int size = 0;
    double h = 0.0;
    std::vector<double> column;
    double assembly_error = 0.0;  // max relative difference between two quadrature orders

    double entry(int i, int j) const { return column[static_cast<std::size_t>(i > j ? i - j : j - i)]; }
    Eigen::MatrixXd dense() const;
};

StiffnessMatrix assemble_stiffness(const Grid& grid, FracOrder s, double tol = 1e-12);
Eigen::MatrixXd assemble_mass(const Grid& grid);

// Smallest N generalized eigenpairs K v = lambda M v, M-orthonormal. M must be
// tridiagonal (it is factored as a bidiagonal Cholesky product).
struct GeneralizedEigenpairs {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
};
GeneralizedEigenpairs solve_generalized(const Eigen::MatrixXd& K, const Eigen::MatrixXd& M, int N);

class SpectralBasis {
public:
    SpectralBasis(FracOrder s, Grid grid, Eigen::VectorXd eigenvalues, Eigen::MatrixXd vectors,
                  double assembly_error);

    FracOrder order() const { return s_; }
    const Grid& grid() const { return grid_; }
    int size() const { return static_cast<int>(values_.size()); }
    // 1-based mode index n
    double eigenvalue(int n) const { return values_[n - 1]; }
    const Eigen::VectorXd& eigenvalues() const { return values_; }
    // interior nodal values, one column per mode
    const Eigen::MatrixXd& vectors() const { return vectors_; }
    double assembly_error() const { return assembly_error_; }
    // P1 interpolant of mode n, zero outside (-1, 1)
    double evaluate(int n, double x) const;
    SpectralBasis truncated(int N) const;

private:
    FracOrder s_;
    Grid grid_;
    Eigen::VectorXd values_;
    Eigen::MatrixXd vectors_;
    double assembly_error_;
};

// Assembles, solves and fixes signs so that (phi_n, rho_n) >= 0.
SpectralBasis eigen_solve(const Grid& grid, FracOrder s, int N, double tol = 1e-12);

// Smooth cutoff: 0 below -1/3, 1 above 1/3, q(x) + q(-x) = 1.
double q_profile(double x);

struct QuadratureValue {
    double value;
    double error_estimate;
};

// Density gamma(y) entering the half-line profile, with error estimate of the
// inner logarithmic integral.
QuadratureValue gamma_density_estimate(double y, FracOrder s);
double gamma_density(double y, FracOrder s, double tol = 1e-8);

// G(x) = int_0^inf e^{-x y} gamma(y) dy, tabulated once per s.
class LaplaceG {
public:
    explicit LaplaceG(FracOrder s, double tol = 1e-8);

    FracOrder order() const { return s_; }
    double operator()(double x) const;
    QuadratureValue evaluate(double x) const;

private:
    FracOrder s_;
    double tol_;
    double v0_;
    double dv_;
    std::vector<double> weights_;  // gamma(e^v) e^v
    std::vector<double> ev_;       // e^v
};

// Shared table per order (thread-safe cache).
std::shared_ptr<const LaplaceG> laplace_G(FracOrder s);

// F_alpha(x) = sin(alpha x + (1-s) pi/4) - G(alpha x) for x > 0, 0 otherwise.
double F_alpha(double x, double alpha, const LaplaceG& G);

// rho_k(x) = q(-x) F_{mu_k}(1+x) + (-1)^{k+1} q(x) F_{mu_k}(1-x).
class ApproxEigenfunction {
public:
    ApproxEigenfunction(int k, FracOrder s);

    int index() const { return k_; }
    double frequency() const { return mu_; }
    double operator()(double x) const;

private:
    int k_;
    double mu_;
    std::shared_ptr<const LaplaceG> G_;
};

}  // namespace fracctl
