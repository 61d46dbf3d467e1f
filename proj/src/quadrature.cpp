#include "fracctl/quadrature.hpp"

#include "fracctl/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace fracctl {

namespace {

GaussRule make_legendre(int n) {
    GaussRule r;
    r.x.resize(n);
    r.w.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 1; j <= n; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        // one more evaluation for the derivative at the converged root
        double p0 = 1.0, p1 = 0.0;
        for (int j = 1; j <= n; ++j) {
            double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
        }
        dp = n * (z * p0 - p1) / (z * z - 1.0);
        double w = 2.0 / ((1.0 - z * z) * dp * dp);
        r.x[i] = -z;
        r.x[n - 1 - i] = z;
        r.w[i] = w;
        r.w[n - 1 - i] = w;
    }
    if (n % 2 == 1) r.x[n / 2] = 0.0;
    return r;
}

}  // namespace

const GaussRule& gauss_legendre(int n) {
    if (n < 1) throw DomainError("gauss_legendre: n must be positive");
    static std::mutex mu;
    static std::map<int, GaussRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_legendre(n)).first;
    return it->second;
}

GaussRule gauss_jacobi(int n, double alpha, double beta) {
    if (n < 1) throw DomainError("gauss_jacobi: n must be positive");
    if (!(alpha > -1.0) || !(beta > -1.0)) throw DomainError("gauss_jacobi: exponents must exceed -1");
    const double ab = alpha + beta;
    Eigen::VectorXd diag(n), off(std::max(n - 1, 1));
    for (int k = 0; k < n; ++k) {
        if (k == 0) {
            diag[k] = (beta - alpha) / (ab + 2.0);
        } else {
            double t = 2.0 * k + ab;
            diag[k] = (beta * beta - alpha * alpha) / (t * (t + 2.0));
        }
    }
    for (int k = 1; k < n; ++k) {
        double t = 2.0 * k + ab;
        double b2;
        if (k == 1)
            b2 = 4.0 * (1.0 + alpha) * (1.0 + beta) / ((2.0 + ab) * (2.0 + ab) * (3.0 + ab));
        else
            b2 = 4.0 * k * (k + alpha) * (k + beta) * (k + ab) / (t * t * (t + 1.0) * (t - 1.0));
        off[k - 1] = std::sqrt(b2);
    }
    const double mu0 = std::exp((ab + 1.0) * std::log(2.0) + std::lgamma(alpha + 1.0) +
                                std::lgamma(beta + 1.0) - std::lgamma(ab + 2.0));
    GaussRule r;
    r.x.resize(n);
    r.w.resize(n);
    if (n == 1) {
        r.x[0] = diag[0];
        r.w[0] = mu0;
        return r;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, off.head(n - 1), Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success) throw NumericalError("gauss_jacobi: tridiagonal eigensolver failed");
    for (int i = 0; i < n; ++i) {
        r.x[i] = es.eigenvalues()[i];
        double v = es.eigenvectors()(0, i);
        r.w[i] = mu0 * v * v;
    }
    return r;
}

GaussRule jacobi_on_segment(int n, double beta, double length) {
    // d = L (1 + x) / 2 ; d^beta = (L/2)^beta (1+x)^beta
    GaussRule ref = gauss_jacobi(n, 0.0, beta);
    const double scale = std::pow(0.5 * length, beta + 1.0);
    for (int i = 0; i < n; ++i) {
        ref.x[i] = 0.5 * length * (1.0 + ref.x[i]);
        ref.w[i] *= scale;
    }
    return ref;
}

}  // namespace fracctl
