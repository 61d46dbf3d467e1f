#include "fracctl/spectral_core.hpp"

#include "fracctl/errors.hpp"
#include "fracctl/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

namespace fracctl {

namespace {

constexpr double kPi = std::numbers::pi;

// expm1(a z) / a, continuous at a = 0
double expm1_over(double a, double z) {
    const double t = a * z;
    if (std::abs(t) < 1e-300) return z;
    if (std::abs(a) < 1e-14) return z * (1.0 + 0.5 * t);
    return std::expm1(t) / a;
}

// Antiderivative of order four of |z|^{-1-2s} (up to the constant); its fourth
// difference gives the near-diagonal stiffness entries.
double g4(double z, double s) {
    z = std::abs(z);
    if (z == 0.0) return 0.0;
    const double e = 1.0 - 2.0 * s;
    return z * z * expm1_over(e, std::log(z)) / ((-2.0 * s) * (2.0 - 2.0 * s) * (3.0 - 2.0 * s));
}

double bspline3(double t) {
    t = std::abs(t);
    if (t >= 2.0) return 0.0;
    if (t >= 1.0) {
        const double u = 2.0 - t;
        return u * u * u / 6.0;
    }
    return 2.0 / 3.0 - t * t + 0.5 * t * t * t;
}

// int_{-2}^{2} B3(t) |k + t|^{-1-2s} dt for k >= 3, piecewise Gauss-Legendre
double bspline_moment(int k, double s, const GaussRule& rule) {
    double acc = 0.0;
    for (int lo = -2; lo < 2; ++lo) {
        for (int i = 0; i < rule.size(); ++i) {
            const double t = lo + 0.5 + 0.5 * rule.x[i];
            acc += 0.5 * rule.w[i] * bspline3(t) * std::pow(k + t, -1.0 - 2.0 * s);
        }
    }
    return acc;
}

}  // namespace

FracOrder::FracOrder(double s) : s_(s) {
    if (!(s > 0.0 && s < 1.0)) throw DomainError("fractional order must lie in (0, 1), got " + std::to_string(s));
}

double normalization_constant(FracOrder order) {
    const double s = order.value();
    const double lg = std::log(s) + 2.0 * s * std::log(2.0) + std::lgamma(s + 0.5) - 0.5 * std::log(kPi) -
                      std::lgamma(1.0 - s);
    return std::exp(lg);
}

double eigenvalue_asymptotic(int n, double s) {
    if (n < 1) throw DomainError("eigenvalue_asymptotic: n must be >= 1");
    if (!(s > 0.0 && s <= 1.0)) throw DomainError("eigenvalue_asymptotic: s must lie in (0, 1]");
    return std::pow(n * kPi / 2.0 - (2.0 - 2.0 * s) * kPi / 8.0, 2.0 * s);
}

double mu(int k, FracOrder s) {
    if (k < 1) throw DomainError("mu: k must be >= 1");
    return k * kPi / 2.0 - (1.0 - s.value()) * kPi / 4.0;
}

// ---------------------------------------------------------------- Grid

Grid::Grid(std::vector<double> nodes) : nodes_(std::move(nodes)), h_(0.0) {
    if (nodes_.size() < 3) throw DomainError("grid needs at least one interior node");
    if (nodes_.front() != -1.0 || nodes_.back() != 1.0) throw DomainError("grid must start at -1 and end at 1");
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
        const double d = nodes_[i] - nodes_[i - 1];
        if (!(d > 0.0)) throw DomainError("grid nodes must be strictly increasing");
        h_ = std::max(h_, d);
    }
}

Grid Grid::uniform(int interior_nodes) {
    if (interior_nodes < 1) throw DomainError("grid needs at least one interior node");
    const int cells = interior_nodes + 1;
    std::vector<double> x(static_cast<std::size_t>(cells) + 1);
    for (int i = 0; i <= cells; ++i) x[static_cast<std::size_t>(i)] = -1.0 + 2.0 * i / cells;
    x.front() = -1.0;
    x.back() = 1.0;
    return Grid(std::move(x));
}

bool Grid::is_uniform(double rtol) const {
    const double h0 = 2.0 / static_cast<double>(nodes_.size() - 1);
    for (std::size_t i = 1; i < nodes_.size(); ++i)
        if (std::abs(nodes_[i] - nodes_[i - 1] - h0) > rtol * h0 * 4.0) return false;
    return true;
}

// ---------------------------------------------------------------- assembly

Eigen::MatrixXd StiffnessMatrix::dense() const {
    Eigen::MatrixXd K(size, size);
    for (int j = 0; j < size; ++j)
        for (int i = 0; i < size; ++i) K(i, j) = entry(i, j);
    return K;
}

StiffnessMatrix assemble_stiffness(const Grid& grid, FracOrder order, double tol) {
    if (!grid.is_uniform()) throw DomainError("assemble_stiffness: only uniform grids are supported");
    const double s = order.value();
    const int M = grid.interior_count();
    const double h = 2.0 / (M + 1);
    const double scale = -normalization_constant(order) * std::pow(h, 1.0 - 2.0 * s);

    StiffnessMatrix K;
    K.size = M;
    K.h = h;
    K.column.resize(static_cast<std::size_t>(M));
    const GaussRule& lo = gauss_legendre(20);
    const GaussRule& hi = gauss_legendre(30);
    double err = 0.0;
    for (int k = 0; k < M; ++k) {
        double d;
        if (k <= 2) {
            d = g4(k + 2, s) - 4.0 * g4(k + 1, s) + 6.0 * g4(k, s) - 4.0 * g4(k - 1, s) + g4(k - 2, s);
        } else {
            d = bspline_moment(k, s, hi);
            const double d2 = bspline_moment(k, s, lo);
            err = std::max(err, std::abs(d - d2) / std::abs(d));
        }
        K.column[static_cast<std::size_t>(k)] = scale * d;
    }
    K.assembly_error = err;
    if (err > tol) throw QuadratureError("stiffness assembly did not reach tolerance", err);
    return K;
}

Eigen::MatrixXd assemble_mass(const Grid& grid) {
    const int M = grid.interior_count();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(M, M);
    const auto& x = grid.nodes();
    for (int i = 0; i < M; ++i) {
        const double hl = x[static_cast<std::size_t>(i) + 1] - x[static_cast<std::size_t>(i)];
        const double hr = x[static_cast<std::size_t>(i) + 2] - x[static_cast<std::size_t>(i) + 1];
        B(i, i) = (hl + hr) / 3.0;
        if (i + 1 < M) {
            B(i, i + 1) = hr / 6.0;
            B(i + 1, i) = hr / 6.0;
        }
    }
    return B;
}

namespace {

// Solves (T - shift) x = b for symmetric tridiagonal T (diag d, off e) by
// Gaussian elimination with partial pivoting; b is overwritten.
void tridiagonal_shifted_solve(const Eigen::VectorXd& d, const Eigen::VectorXd& e, double shift,
                               Eigen::VectorXd& b) {
    const int n = static_cast<int>(d.size());
    // rows stored as (sub, diag, sup, sup2) after pivoting
    std::vector<double> a(n), dd(n), c(n), c2(n, 0.0);
    for (int i = 0; i < n; ++i) {
        a[i] = (i > 0) ? e[i - 1] : 0.0;
        dd[i] = d[i] - shift;
        c[i] = (i + 1 < n) ? e[i] : 0.0;
    }
    const double tiny = 1e-300;
    for (int i = 0; i + 1 < n; ++i) {
        if (std::abs(a[i + 1]) > std::abs(dd[i])) {
            // swap rows i and i+1
            std::swap(dd[i], a[i + 1]);
            std::swap(c[i], dd[i + 1]);
            std::swap(c2[i], c[i + 1]);
            std::swap(b[i], b[i + 1]);
        }
        if (dd[i] == 0.0) dd[i] = tiny;
        const double m = a[i + 1] / dd[i];
        dd[i + 1] -= m * c[i];
        c[i + 1] -= m * c2[i];
        b[i + 1] -= m * b[i];
        a[i + 1] = 0.0;
    }
    if (dd[n - 1] == 0.0) dd[n - 1] = tiny;
    b[n - 1] /= dd[n - 1];
    if (n > 1) b[n - 2] = (b[n - 2] - c[n - 2] * b[n - 1]) / dd[n - 2];
    for (int i = n - 3; i >= 0; --i) b[i] = (b[i] - c[i] * b[i + 1] - c2[i] * b[i + 2]) / dd[i];
}

}  // namespace

GeneralizedEigenpairs solve_generalized(const Eigen::MatrixXd& K, const Eigen::MatrixXd& B, int N) {
    const int n = static_cast<int>(K.rows());
    if (N < 1 || N > n) throw DomainError("eigen_solve: requested mode count out of range");
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            if (std::abs(i - j) > 1 && B(i, j) != 0.0) throw DomainError("eigen_solve: mass matrix must be tridiagonal");

    // B = L L^T with L lower bidiagonal (diag l, sub m)
    Eigen::VectorXd l(n), m(std::max(n - 1, 0));
    for (int i = 0; i < n; ++i) {
        double piv = B(i, i) - (i > 0 ? m[i - 1] * m[i - 1] : 0.0);
        if (!(piv > 0.0)) throw NumericalError("eigen_solve: mass matrix is not positive definite");
        l[i] = std::sqrt(piv);
        if (i + 1 < n) m[i] = B(i + 1, i) / l[i];
    }
    auto solve_L = [&](Eigen::Ref<Eigen::VectorXd> v) {
        v[0] /= l[0];
        for (int i = 1; i < n; ++i) v[i] = (v[i] - m[i - 1] * v[i - 1]) / l[i];
    };
    auto solve_Lt = [&](Eigen::Ref<Eigen::VectorXd> v) {
        v[n - 1] /= l[n - 1];
        for (int i = n - 2; i >= 0; --i) v[i] = (v[i] - m[i] * v[i + 1]) / l[i];
    };
    // C = L^{-1} K L^{-T}
    Eigen::MatrixXd C = K;
    for (int j = 0; j < n; ++j) solve_L(C.col(j));
    C.transposeInPlace();
    for (int j = 0; j < n; ++j) solve_L(C.col(j));
    C = (0.5 * (C + C.transpose())).eval();

    Eigen::Tridiagonalization<Eigen::MatrixXd> tri(C);
    const Eigen::VectorXd d = tri.diagonal();
    const Eigen::VectorXd e = tri.subDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ev;
    ev.computeFromTridiagonal(d, e, Eigen::EigenvaluesOnly);
    if (ev.info() != Eigen::Success) throw NumericalError("eigen_solve: tridiagonal QR did not converge");
    const double tnorm = std::max(std::abs(ev.eigenvalues()[0]), std::abs(ev.eigenvalues()[n - 1]));

    // inverse iteration on T for the N smallest eigenvalues
    Eigen::MatrixXd Y(n, N);
    Eigen::VectorXd values(N);
    const double eps = std::numeric_limits<double>::epsilon();
    for (int k = 0; k < N; ++k) {
        const double lam = ev.eigenvalues()[k];
        const double shift = lam + 4.0 * eps * tnorm * ((k % 2 == 0) ? 1.0 : -1.0);
        Eigen::VectorXd y = Eigen::VectorXd::Ones(n);
        for (int i = 0; i < n; ++i) y[i] += 1e-3 * std::sin(0.7 * i + k);
        for (int it = 0; it < 3; ++it) {
            tridiagonal_shifted_solve(d, e, shift, y);
            for (int j = 0; j < k; ++j)
                if (std::abs(values[j] - lam) < 1e-3 * tnorm) y -= Y.col(j).dot(y) * Y.col(j);
            y.normalize();
        }
        Y.col(k) = y;
        Eigen::VectorXd Ty = d.cwiseProduct(y);
        Ty.head(n - 1) += e.cwiseProduct(y.tail(n - 1));
        Ty.tail(n - 1) += e.cwiseProduct(y.head(n - 1));
        values[k] = y.dot(Ty);
    }

    GeneralizedEigenpairs out;
    // back-transform: x = L^{-T} Q y
    Eigen::MatrixXd X = tri.matrixQ() * Y;
    for (int k = 0; k < N; ++k) solve_Lt(X.col(k));
    // sort (Rayleigh quotients can swap nearly tied values)
    std::vector<int> order(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) order[static_cast<std::size_t>(k)] = k;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
    out.values.resize(N);
    out.vectors.resize(n, N);
    for (int k = 0; k < N; ++k) {
        out.values[k] = values[order[static_cast<std::size_t>(k)]];
        out.vectors.col(k) = X.col(order[static_cast<std::size_t>(k)]);
    }

    // deterministic re-orthonormalisation inside numerically tied clusters
    for (int j = 0; j < N; ++j) {
        for (int i = 0; i < j; ++i) {
            if (std::abs(out.values[j] - out.values[i]) > 1e-10 * std::abs(out.values[j])) continue;
            const double c = out.vectors.col(i).dot(B * out.vectors.col(j));
            out.vectors.col(j) -= c * out.vectors.col(i);
        }
        out.vectors.col(j) /= std::sqrt(out.vectors.col(j).dot(B * out.vectors.col(j)));
    }
    return out;
}

// ---------------------------------------------------------------- basis

SpectralBasis::SpectralBasis(FracOrder s, Grid grid, Eigen::VectorXd eigenvalues, Eigen::MatrixXd vectors,
                             double assembly_error)
    : s_(s),
      grid_(std::move(grid)),
      values_(std::move(eigenvalues)),
      vectors_(std::move(vectors)),
      assembly_error_(assembly_error) {
    if (vectors_.rows() != grid_.interior_count() || vectors_.cols() != values_.size())
        throw DomainError("SpectralBasis: shape mismatch");
    for (int i = 1; i < values_.size(); ++i)
        if (values_[i] < values_[i - 1]) throw DomainError("SpectralBasis: eigenvalues must be non-decreasing");
}

double SpectralBasis::evaluate(int n, double x) const {
    if (n < 1 || n > size()) throw DomainError("SpectralBasis::evaluate: mode index out of range");
    if (x <= -1.0 || x >= 1.0) return 0.0;
    const auto& nodes = grid_.nodes();
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
    const int j = static_cast<int>(it - nodes.begin()) - 1;  // cell [x_j, x_{j+1}]
    const double t = (x - nodes[static_cast<std::size_t>(j)]) /
                     (nodes[static_cast<std::size_t>(j) + 1] - nodes[static_cast<std::size_t>(j)]);
    const int M = grid_.interior_count();
    const double a = (j >= 1) ? vectors_(j - 1, n - 1) : 0.0;
    const double b = (j + 1 <= M) ? vectors_(j, n - 1) : 0.0;
    return (1.0 - t) * a + t * b;
}

SpectralBasis SpectralBasis::truncated(int N) const {
    if (N < 1 || N > size()) throw DomainError("SpectralBasis::truncated: N out of range");
    return SpectralBasis(s_, grid_, values_.head(N), vectors_.leftCols(N), assembly_error_);
}

SpectralBasis eigen_solve(const Grid& grid, FracOrder s, int N, double tol) {
    const StiffnessMatrix K = assemble_stiffness(grid, s, tol);
    const Eigen::MatrixXd B = assemble_mass(grid);
    GeneralizedEigenpairs pairs = solve_generalized(K.dense(), B, N);

    const int M = grid.interior_count();
    const int stride = std::max(1, M / 256);
    for (int n = 1; n <= N; ++n) {
        const ApproxEigenfunction rho(n, s);
        double c = 0.0, pp = 0.0, rr = 0.0;
        for (int i = 0; i < M; i += stride) {
            const double p = pairs.vectors(i, n - 1);
            const double r = rho(grid.node(i + 1));
            c += p * r;
            pp += p * p;
            rr += r * r;
        }
        const double corr = (pp > 0.0 && rr > 0.0) ? c / std::sqrt(pp * rr) : 0.0;
        bool flip = corr < 0.0;
        if (std::abs(corr) < 1e-3) {
            Eigen::Index imax = 0;
            pairs.vectors.col(n - 1).cwiseAbs().maxCoeff(&imax);
            flip = pairs.vectors(imax, n - 1) < 0.0;
        }
        if (flip) pairs.vectors.col(n - 1) *= -1.0;
    }
    return SpectralBasis(s, grid, std::move(pairs.values), std::move(pairs.vectors), K.assembly_error);
}

// ---------------------------------------------------------------- half-line profile

double q_profile(double x) {
    constexpr double third = 1.0 / 3.0;
    if (x < -third) return 0.0;
    if (x <= 0.0) return 4.5 * (x + third) * (x + third);
    if (x <= third) return 1.0 - 4.5 * (x - third) * (x - third);
    return 1.0;
}

namespace {

constexpr double kInnerStep = 0.05;
constexpr int kInnerHalfWidth = 900;  // 45 / 0.05

// log((1 - e^{2su}) / (1 - e^{2u})), removable at u = 0
double log_h(double u, double s) {
    if (u == 0.0) return std::log(s);
    if (std::abs(u) <= 1.0) return std::log(std::expm1(2.0 * s * u) / std::expm1(2.0 * u));
    if (u > 0.0) return 2.0 * s * u + std::log(-std::expm1(-2.0 * s * u)) - 2.0 * u - std::log(-std::expm1(-2.0 * u));
    return std::log(-std::expm1(2.0 * s * u)) - std::log(-std::expm1(2.0 * u));
}

const std::vector<double>& sech_weights() {
    static const std::vector<double> w = [] {
        std::vector<double> v(2 * kInnerHalfWidth + 1);
        for (int i = -kInnerHalfWidth; i <= kInnerHalfWidth; ++i)
            v[static_cast<std::size_t>(i + kInnerHalfWidth)] = 0.5 / std::cosh(i * kInnerStep);
        return v;
    }();
    return w;
}

// log of the algebraic prefactor of gamma at y = e^L
double log_gamma_prefactor(double L, double s) {
    const double c = std::cos(s * kPi), sn = std::sin(s * kPi);
    double logD;
    if (2.0 * s * L > 30.0) {
        const double e = std::exp(-2.0 * s * L);
        logD = 4.0 * s * L + std::log1p(-2.0 * c * e + e * e);
    } else {
        const double a = std::exp(2.0 * s * L);
        logD = std::log((a - c) * (a - c) + sn * sn);
    }
    return std::log(std::sqrt(4.0 * s) * sn / (2.0 * kPi)) + 2.0 * s * L - logD;
}

}  // namespace

QuadratureValue gamma_density_estimate(double y, FracOrder order) {
    if (!(y > 0.0)) throw DomainError("gamma_density: y must be positive");
    const double s = order.value();
    const double L = std::log(y);
    const auto& w = sech_weights();
    double fine = 0.0, coarse = 0.0;
    for (int i = -kInnerHalfWidth; i <= kInnerHalfWidth; ++i) {
        const double term = log_h(L + i * kInnerStep, s) * w[static_cast<std::size_t>(i + kInnerHalfWidth)];
        fine += term;
        if (i % 2 == 0) coarse += term;
    }
    fine *= kInnerStep;
    coarse *= 2.0 * kInnerStep;
    const double value = std::exp(log_gamma_prefactor(L, s) + fine / kPi);
    return {value, value * std::abs(fine - coarse) / kPi};
}

double gamma_density(double y, FracOrder s, double tol) {
    const QuadratureValue q = gamma_density_estimate(y, s);
    if (q.error_estimate > tol * q.value) throw QuadratureError("gamma_density: inner integral", q.error_estimate);
    return q.value;
}

LaplaceG::LaplaceG(FracOrder order, double tol) : s_(order), tol_(tol), v0_(-40.0), dv_(0.1) {
    const double s = order.value();
    const double vmax = std::min(40.0 / s + 10.0, 1500.0);
    const int nv = static_cast<int>(std::ceil((vmax - v0_) / dv_)) + 1;
    // log h sampled once on the inner lattice shared by every outer node
    const int ratio = 2;  // dv / inner step
    const int nu = (nv - 1) * ratio + 2 * kInnerHalfWidth + 1;
    const double u0 = v0_ - kInnerHalfWidth * kInnerStep;
    std::vector<double> lh(static_cast<std::size_t>(nu));
    for (int i = 0; i < nu; ++i) lh[static_cast<std::size_t>(i)] = log_h(u0 + i * kInnerStep, s);
    const auto& w = sech_weights();
    weights_.resize(static_cast<std::size_t>(nv));
    ev_.resize(static_cast<std::size_t>(nv));
    double worst = 0.0;
    for (int j = 0; j < nv; ++j) {
        const double v = v0_ + j * dv_;
        const std::size_t c = static_cast<std::size_t>(j * ratio);
        double fine = 0.0, coarse = 0.0;
        for (int i = 0; i <= 2 * kInnerHalfWidth; ++i) {
            const double term = lh[c + static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
            fine += term;
            if ((i - kInnerHalfWidth) % 2 == 0) coarse += term;
        }
        fine *= kInnerStep;
        coarse *= 2.0 * kInnerStep;
        worst = std::max(worst, std::abs(fine - coarse) / kPi);
        weights_[static_cast<std::size_t>(j)] = std::exp(log_gamma_prefactor(v, s) + fine / kPi + v);
        ev_[static_cast<std::size_t>(j)] = std::exp(v);
    }
    if (worst > tol_) throw QuadratureError("LaplaceG: inner integral", worst);
}

QuadratureValue LaplaceG::evaluate(double x) const {
    if (x < 0.0) throw DomainError("LaplaceG: argument must be non-negative");
    double fine = 0.0, coarse = 0.0;
    std::size_t j = 0;
    for (; j < weights_.size(); ++j) {
        const double a = x * ev_[j];
        if (a > 745.0) break;
        const double term = weights_[j] * std::exp(-a);
        fine += term;
        if (j % 2 == 0) coarse += term;
    }
    fine *= dv_;
    coarse *= 2.0 * dv_;
    double err = std::abs(fine - coarse);
    if (j == weights_.size()) {
        // untruncated tail of the y^{-1-s} decay, beyond the table
        err += weights_.back() * std::exp(-x * ev_.back()) / s_.value();
    }
    return {fine, err};
}

double LaplaceG::operator()(double x) const {
    const QuadratureValue q = evaluate(x);
    if (q.error_estimate > tol_ * std::max(std::abs(q.value), 1e-300) && q.error_estimate > 1e-15)
        throw QuadratureError("LaplaceG: outer integral", q.error_estimate);
    return q.value;
}

std::shared_ptr<const LaplaceG> laplace_G(FracOrder s) {
    static std::mutex mu;
    static std::map<std::uint64_t, std::shared_ptr<const LaplaceG>> cache;
    const std::uint64_t key = std::bit_cast<std::uint64_t>(s.value());
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto g = std::make_shared<const LaplaceG>(s);
    cache.emplace(key, g);
    return g;
}

double F_alpha(double x, double alpha, const LaplaceG& G) {
    if (x <= 0.0) return 0.0;
    const double s = G.order().value();
    return std::sin(alpha * x + (1.0 - s) * kPi / 4.0) - G(alpha * x);
}

ApproxEigenfunction::ApproxEigenfunction(int k, FracOrder s) : k_(k), mu_(mu(k, s)), G_(laplace_G(s)) {}

double ApproxEigenfunction::operator()(double x) const {
    double v = 0.0;
    const double a = q_profile(-x);
    if (a != 0.0) v += a * F_alpha(1.0 + x, mu_, *G_);
    const double b = q_profile(x);
    if (b != 0.0) v += ((k_ % 2 == 1) ? 1.0 : -1.0) * b * F_alpha(1.0 - x, mu_, *G_);
    return v;
}

}  // namespace fracctl
