#pragma once

#include <vector>

namespace fracctl {

// Nodes and weights on the reference interval (-1, 1).
struct GaussRule {
    std::vector<double> x;
    std::vector<double> w;
    int size() const { return static_cast<int>(x.size()); }
};

// Cached n-point Gauss-Legendre rule.
const GaussRule& gauss_legendre(int n);

// n-point rule for the weight (1-x)^alpha (1+x)^beta on (-1, 1), alpha, beta > -1.
GaussRule gauss_jacobi(int n, double alpha, double beta);

// Rule for int_0^L d^beta f(d) dd: nodes d_i in (0, L), weights include d^beta.
GaussRule jacobi_on_segment(int n, double beta, double length);

}  // namespace fracctl
