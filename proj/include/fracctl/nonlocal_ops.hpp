#pragma once

#include "fracctl/spectral_core.hpp"

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fracctl {

struct Interval {
    double a;
    double b;
};

// Finite union of disjoint open intervals outside [-1, 1].
class ExteriorRegion {
public:
    explicit ExteriorRegion(std::vector<Interval> intervals);
    // "a:b[,c:d]"
    static ExteriorRegion parse(const std::string& text);

    const std::vector<Interval>& intervals() const { return intervals_; }
    bool contains(double x) const;
    double measure() const;
    std::string to_string() const;

private:
    std::vector<Interval> intervals_;
};

struct ExteriorQuadratureOptions {
    int order = 16;            // Gauss-Legendre points per panel
    double max_panel = 0.25;   // cap on panel length
    // Power of the distance to +-1 that the integrands behave like when an
    // interval touches the boundary; the touching end is integrated down to
    // a tiny distance and the remainder added with this exponent.
    double touching_exponent = 0.0;
    bool allow_touching = false;
};

// Composite Gauss rule on an exterior region, geometrically graded towards +-1.
class ExteriorQuadrature {
public:
    ExteriorQuadrature(const ExteriorRegion& region, ExteriorQuadratureOptions opts = {});

    const ExteriorRegion& region() const { return region_; }
    const std::vector<double>& nodes() const { return x_; }
    const std::vector<double>& weights() const { return w_; }
    // interval index of each node
    const std::vector<int>& owner() const { return owner_; }
    int size() const { return static_cast<int>(x_.size()); }

private:
    ExteriorRegion region_;
    std::vector<double> x_;
    std::vector<double> w_;
    std::vector<int> owner_;
};

// Function on O known at the quadrature nodes; the L2(O) product is the
// quadrature sum. Pointwise values elsewhere use the P1 interpolant through
// the nodes of the same interval (constant beyond the outermost nodes).
class ExteriorProfile {
public:
    ExteriorProfile(std::shared_ptr<const ExteriorQuadrature> quad, std::vector<double> values);
    static ExteriorProfile sample(std::shared_ptr<const ExteriorQuadrature> quad,
                                  const std::function<double(double)>& f);

    const ExteriorQuadrature& quadrature() const { return *quad_; }
    std::shared_ptr<const ExteriorQuadrature> quadrature_ptr() const { return quad_; }
    const std::vector<double>& values() const { return v_; }
    double operator()(double x) const;
    double inner(const ExteriorProfile& other) const;
    double norm() const { return std::sqrt(inner(*this)); }

private:
    std::shared_ptr<const ExteriorQuadrature> quad_;
    std::vector<double> v_;
};

enum class EndModel {
    Linear,    // P1 ramp in the two boundary cells
    PowerLaw,  // u_1 (d/h)^s in the two boundary cells (d = distance to the support end)
};

// Piecewise linear samples on a uniform lattice a + j h (j = 0..n+1) with
// value 0 at both support ends and zero extension outside [a, b], unless an
// explicit exterior profile is attached.
class SampledFunction {
public:
    SampledFunction(double a, double b, std::vector<double> values, EndModel end = EndModel::Linear,
                    double end_exponent = 0.5);
    static SampledFunction on_grid(const Grid& grid, std::vector<double> values, EndModel end = EndModel::Linear,
                                   double end_exponent = 0.5);
    static SampledFunction from_mode(const SpectralBasis& basis, int n, EndModel end = EndModel::Linear);
    static SampledFunction from_coefficients(const SpectralBasis& basis, const Eigen::VectorXd& c,
                                             EndModel end = EndModel::Linear);

    SampledFunction with_exterior(ExteriorProfile g) const;

    double a() const { return a_; }
    double b() const { return b_; }
    double h() const { return h_; }
    int count() const { return static_cast<int>(v_.size()); }
    double node(int j) const { return a_ + j * h_; }
    // lattice value, j in [-inf, inf]; zero outside 1..n
    double value(int j) const { return (j >= 1 && j <= count()) ? v_[static_cast<std::size_t>(j - 1)] : 0.0; }
    const std::vector<double>& values() const { return v_; }
    EndModel end_model() const { return end_; }
    double end_exponent() const { return end_exponent_; }
    const std::optional<ExteriorProfile>& exterior() const { return ext_; }
    double operator()(double x) const;

private:
    double a_, b_, h_;
    std::vector<double> v_;
    EndModel end_;
    double end_exponent_;
    std::optional<ExteriorProfile> ext_;
};

// Pointwise (-Delta)^s u(x): second-difference window of half-width h,
// cubic interpolation within a fixed radius and P1 elsewhere. Points within
// one cell of a support end or inside the closure of an attached exterior
// profile are rejected (DomainError).
double frac_laplacian_pv(const SampledFunction& u, double x, FracOrder s);
// Same operator at all lattice nodes (Toeplitz fast path).
std::vector<double> frac_laplacian_at_nodes(const SampledFunction& u, FracOrder s);
// Exact (-Delta)^s of the P1 interpolant of u (no boundary model), any x not at a node.
double frac_laplacian_p1_exact(const SampledFunction& u, double x, FracOrder s);

// C_s int_{supp} (u(x) - u(y)) |x-y|^{-1-2s} dy for x outside [a, b], by
// per-cell Gauss quadrature (graded towards a nearby support end).
double nonlocal_normal_derivative(const SampledFunction& u, double x, FracOrder s, double tol = 1e-9);

// Batched normal derivatives of many lattice functions sharing one lattice.
// apply() returns -C_s int u K for functions vanishing at the query point.
class NormalDerivativeOperator {
public:
    NormalDerivativeOperator(double a, double b, int count, FracOrder s, EndModel end, double end_exponent,
                             double tol = 1e-9);
    // columns: count x m nodal values; result: xs.size() x m
    Eigen::MatrixXd apply(const Eigen::MatrixXd& columns, const std::vector<double>& xs) const;

private:
    double end_cell(double delta, bool same_side, double& err) const;

    double a_, b_, h_;
    int n_;
    FracOrder s_;
    EndModel end_;
    double p_;
    double tol_;
    std::vector<double> qy_;  // Gauss nodes of the cells between interior nodes
    std::vector<double> qw_;
    std::vector<int> qcell_;  // left node (1-based) of the owning cell
    std::vector<double> qt_;  // local coordinate in the cell
};

// N_s phi_n sampled at the exterior quadrature nodes, one column per mode.
struct ModeTraces {
    std::shared_ptr<const ExteriorQuadrature> quadrature;
    Eigen::MatrixXd values;  // nodes x modes
    Eigen::VectorXd eigenvalues;
};
ModeTraces compute_traces(const SpectralBasis& basis, std::shared_ptr<const ExteriorQuadrature> quad,
                          EndModel end = EndModel::PowerLaw);
std::shared_ptr<const ExteriorQuadrature> gramian_quadrature(const ExteriorRegion& region, FracOrder s,
                                                             int order = 16);

// kappa_nm = (N_s phi_n, N_s phi_m)_{L2(O)} for n, m <= K
Eigen::MatrixXd exterior_gram(const ModeTraces& traces, int K);
Eigen::MatrixXd exterior_gram(const SpectralBasis& basis, const ExteriorRegion& region, int K);

struct EtaBound {
    double eta;
    int argmin;  // 1-based mode attaining the minimum
};
EtaBound lower_bound_eta(const SpectralBasis& basis, const ExteriorRegion& region, int K);

// |u|^2_{H^s(R)} of the zero-extended P1 function (Gagliardo double integral).
double gagliardo_seminorm_squared(const SampledFunction& u, FracOrder s);
double gagliardo_seminorm(const SampledFunction& u, FracOrder s);
// Gagliardo bilinear form on O x O of the P1 interpolants of two profiles.
double gagliardo_form(const ExteriorProfile& f, const ExteriorProfile& g, FracOrder s);

// Smooth test function with its fractional Laplacian in closed form.
struct TestFunction {
    std::function<double(double)> value;
    std::function<double(double)> frac_laplacian;
    double radius;  // |v| < 1e-17 outside [center - radius, center + radius]
    double center;
};
TestFunction gaussian_test_function(double center, double width, double amplitude, FracOrder s);

struct IbpTerms {
    double bilinear;   // int u (-Delta)^s v
    double interior;   // int_{(-1,1)} v (-Delta)^s u
    double exterior;   // int_{|x|>1} v N_s u
    double residual;   // |bilinear - interior - exterior|
};
// u: P1 samples on [-1, 1] (Linear end model).
IbpTerms integration_by_parts_residual(const SampledFunction& u, const TestFunction& v, FracOrder s);

}  // namespace fracctl
