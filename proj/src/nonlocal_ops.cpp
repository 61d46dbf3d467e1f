#include "fracctl/nonlocal_ops.hpp"

#include "fracctl/errors.hpp"
#include "fracctl/quadrature.hpp"
#include "fracctl/simd.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/hypergeometric_1F1.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

namespace fracctl {

namespace {

constexpr double kPi = std::numbers::pi;

double expm1_over(double a, double z) {
    const double t = a * z;
    if (std::abs(t) < 1e-300) return z;
    if (std::abs(a) < 1e-14) return z * (1.0 + 0.5 * t);
    return std::expm1(t) / a;
}

// g2'' = |z|^{-1-2s}, g3' = g2, g4' = g3; each defined up to a polynomial
// that the second differences below annihilate.
double g2(double z, double s) {
    return expm1_over(1.0 - 2.0 * s, std::log(std::abs(z))) / (-2.0 * s);
}
double g3(double z, double s) {
    if (z == 0.0) return 0.0;
    const double E = expm1_over(1.0 - 2.0 * s, std::log(std::abs(z)));
    return z * (E - 1.0) / ((2.0 - 2.0 * s) * (-2.0 * s));
}
double g4(double z, double s) {
    if (z == 0.0) return 0.0;
    const double E = expm1_over(1.0 - 2.0 * s, std::log(std::abs(z)));
    return z * z * (E - 2.0 + s) / ((3.0 - 2.0 * s) * (2.0 - 2.0 * s) * (-2.0 * s));
}

// cubic Lagrange cardinals on nodes -1, 0, 1, 2
void cubic_cardinals(double t, double c[4]) {
    c[0] = -t * (t - 1.0) * (t - 2.0) / 6.0;
    c[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    c[2] = -(t + 1.0) * t * (t - 2.0) / 2.0;
    c[3] = (t + 1.0) * t * (t - 1.0) / 6.0;
}

int near_radius(double h) { return std::max(2, static_cast<int>(std::ceil(0.05 / h))); }

bool in_closure(const ExteriorRegion& region, double x) {
    for (const auto& I : region.intervals())
        if (x >= I.a && x <= I.b) return true;
    return false;
}

// int_{d0}^{d0+h} r^{-1-2s} dr and int (r - d0) r^{-1-2s} dr, d0 > 0
void p1_moments(double d0, double h, double s, double& I0, double& J) {
    const double l = std::log1p(h / d0);
    I0 = std::pow(d0, -2.0 * s) * (-std::expm1(-2.0 * s * l)) / (2.0 * s);
    const double I1 = std::pow(d0, 1.0 - 2.0 * s) * expm1_over(1.0 - 2.0 * s, l);
    J = I1 - d0 * I0;
}

// int_0^L d^q f(d) by Gauss-Jacobi on [0, min(delta, L)] and geometric
// Gauss-Legendre panels beyond; f is smooth at the scale of delta.
template <class F>
double graded_end_integral(double q, double delta, double L, const GaussRule& jac_unit, int gl, F&& f) {
    const double first = std::min(delta, L);
    double acc = 0.0;
    const double sc = std::pow(first, q + 1.0);
    for (int i = 0; i < jac_unit.size(); ++i) acc += sc * jac_unit.w[i] * f(first * jac_unit.x[i]);
    const GaussRule& r = gauss_legendre(gl);
    double lo = first;
    while (lo < L) {
        const double hi = std::min(2.0 * lo, L);
        const double c = 0.5 * (lo + hi), w = 0.5 * (hi - lo);
        for (int i = 0; i < r.size(); ++i) {
            const double d = c + w * r.x[i];
            acc += w * r.w[i] * std::pow(d, q) * f(d);
        }
        lo = hi;
    }
    return acc;
}

}  // namespace

// ---------------------------------------------------------------- region

ExteriorRegion::ExteriorRegion(std::vector<Interval> intervals) : intervals_(std::move(intervals)) {
    if (intervals_.empty()) throw DomainError("exterior region must contain at least one interval");
    for (const auto& I : intervals_) {
        if (!std::isfinite(I.a) || !std::isfinite(I.b) || !(I.a < I.b))
            throw DomainError("exterior interval must be finite with a < b");
        if (!(I.b <= -1.0 || I.a >= 1.0)) throw DomainError("exterior interval must lie outside (-1, 1)");
    }
    std::sort(intervals_.begin(), intervals_.end(), [](const Interval& x, const Interval& y) { return x.a < y.a; });
    for (std::size_t i = 1; i < intervals_.size(); ++i)
        if (intervals_[i].a < intervals_[i - 1].b) throw DomainError("exterior intervals must be disjoint");
}

ExteriorRegion ExteriorRegion::parse(const std::string& text) {
    std::vector<Interval> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError("region item '" + item + "' is not of the form a:b");
        try {
            std::size_t used = 0;
            const std::string la = item.substr(0, colon), lb = item.substr(colon + 1);
            const double a = std::stod(la, &used);
            if (la.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(la);
            const double b = std::stod(lb, &used);
            if (lb.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(lb);
            out.push_back({a, b});
        } catch (const std::logic_error&) {
            throw ConfigError("region item '" + item + "' has a malformed number");
        }
    }
    try {
        return ExteriorRegion(std::move(out));
    } catch (const DomainError& e) {
        throw ConfigError(std::string("region '") + text + "': " + e.what());
    }
}

bool ExteriorRegion::contains(double x) const {
    for (const auto& I : intervals_)
        if (x > I.a && x < I.b) return true;
    return false;
}

double ExteriorRegion::measure() const {
    double m = 0.0;
    for (const auto& I : intervals_) m += I.b - I.a;
    return m;
}

std::string ExteriorRegion::to_string() const {
    std::string s;
    char buf[64];
    for (const auto& I : intervals_) {
        if (!s.empty()) s += ',';
        std::snprintf(buf, sizeof buf, "%.17g:%.17g", I.a, I.b);
        s += buf;
    }
    return s;
}

// ---------------------------------------------------------------- exterior quadrature

ExteriorQuadrature::ExteriorQuadrature(const ExteriorRegion& region, ExteriorQuadratureOptions opts)
    : region_(region) {
    if (opts.order < 2) throw DomainError("exterior quadrature order must be >= 2");
    if (!(opts.max_panel > 0.0)) throw DomainError("exterior quadrature panel cap must be positive");
    const GaussRule& r = gauss_legendre(opts.order);
    int idx = 0;
    for (const auto& I : region_.intervals()) {
        const bool right = I.a >= 1.0;
        // distance to the nearest boundary point
        const double d0 = right ? I.a - 1.0 : -1.0 - I.b;
        const double d1 = right ? I.b - 1.0 : -1.0 - I.a;
        std::vector<std::pair<double, double>> pts;  // (d, w)
        double lo = d0;
        if (d0 == 0.0) {
            if (!opts.allow_touching) throw DomainError("exterior interval touches the domain boundary");
            // nodes are stored as x = +-(1 + d); below ~1e-8 the rounding of
            // 1 + d would dominate, so the remainder uses the power model
            lo = 1e-8 * d1;
            pts.emplace_back(lo, lo / (1.0 + opts.touching_exponent));
        }
        while (lo < d1) {
            const double hi = std::min({2.0 * lo, lo + opts.max_panel, d1});
            const double c = 0.5 * (lo + hi), w = 0.5 * (hi - lo);
            for (int i = 0; i < r.size(); ++i) pts.emplace_back(c + w * r.x[i], w * r.w[i]);
            lo = hi;
        }
        std::vector<std::pair<double, double>> xs;
        xs.reserve(pts.size());
        for (const auto& [d, w] : pts) xs.emplace_back(right ? 1.0 + d : -1.0 - d, w);
        std::sort(xs.begin(), xs.end());
        for (const auto& [x, w] : xs) {
            x_.push_back(x);
            w_.push_back(w);
            owner_.push_back(idx);
        }
        ++idx;
    }
}

// ---------------------------------------------------------------- profiles

ExteriorProfile::ExteriorProfile(std::shared_ptr<const ExteriorQuadrature> quad, std::vector<double> values)
    : quad_(std::move(quad)), v_(std::move(values)) {
    if (!quad_) throw DomainError("exterior profile needs a quadrature");
    if (static_cast<int>(v_.size()) != quad_->size())
        throw DomainError("exterior profile: value count does not match the quadrature");
}

ExteriorProfile ExteriorProfile::sample(std::shared_ptr<const ExteriorQuadrature> quad,
                                        const std::function<double(double)>& f) {
    std::vector<double> v;
    v.reserve(quad->nodes().size());
    for (double x : quad->nodes()) v.push_back(f(x));
    return ExteriorProfile(std::move(quad), std::move(v));
}

double ExteriorProfile::operator()(double x) const {
    const auto& I = quad_->region().intervals();
    const auto& xs = quad_->nodes();
    const auto& own = quad_->owner();
    for (std::size_t k = 0; k < I.size(); ++k) {
        if (!(x >= I[k].a && x <= I[k].b)) continue;
        const auto first = std::find(own.begin(), own.end(), static_cast<int>(k)) - own.begin();
        auto last = first;
        while (last < static_cast<long>(own.size()) && own[static_cast<std::size_t>(last)] == static_cast<int>(k)) ++last;
        const auto lo = static_cast<std::size_t>(first), hi = static_cast<std::size_t>(last - 1);
        if (x <= xs[lo]) return v_[lo];
        if (x >= xs[hi]) return v_[hi];
        const auto it = std::upper_bound(xs.begin() + first, xs.begin() + last, x);
        const auto j = static_cast<std::size_t>(it - xs.begin());
        const double t = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
        return (1.0 - t) * v_[j - 1] + t * v_[j];
    }
    return 0.0;
}

double ExteriorProfile::inner(const ExteriorProfile& other) const {
    if (other.quad_ != quad_ && other.quad_->nodes() != quad_->nodes())
        throw DomainError("exterior profiles live on different quadratures");
    return simd::dot3(v_.data(), other.v_.data(), quad_->weights().data(), v_.size());
}

// ---------------------------------------------------------------- sampled functions

SampledFunction::SampledFunction(double a, double b, std::vector<double> values, EndModel end, double end_exponent)
    : a_(a), b_(b), h_(0.0), v_(std::move(values)), end_(end), end_exponent_(end_exponent) {
    if (!(a < b) || !std::isfinite(a) || !std::isfinite(b)) throw DomainError("sampled function: need a < b");
    if (v_.empty()) throw DomainError("sampled function: no interior values");
    for (double v : v_)
        if (!std::isfinite(v)) throw DomainError("sampled function: non-finite value");
    if (end_ == EndModel::PowerLaw && !(end_exponent_ > 0.0))
        throw DomainError("sampled function: power-law end exponent must be positive");
    if (end_ == EndModel::Linear) end_exponent_ = 1.0;
    h_ = (b_ - a_) / (static_cast<double>(v_.size()) + 1.0);
}

SampledFunction SampledFunction::on_grid(const Grid& grid, std::vector<double> values, EndModel end,
                                         double end_exponent) {
    if (!grid.is_uniform()) throw DomainError("sampled function: grid must be uniform");
    if (static_cast<int>(values.size()) != grid.interior_count())
        throw DomainError("sampled function: value count does not match the grid");
    return SampledFunction(-1.0, 1.0, std::move(values), end, end_exponent);
}

SampledFunction SampledFunction::from_mode(const SpectralBasis& basis, int n, EndModel end) {
    if (n < 1 || n > basis.size()) throw DomainError("sampled function: mode index out of range");
    const Eigen::VectorXd c = basis.vectors().col(n - 1);
    return on_grid(basis.grid(), std::vector<double>(c.data(), c.data() + c.size()), end, basis.order().value());
}

SampledFunction SampledFunction::from_coefficients(const SpectralBasis& basis, const Eigen::VectorXd& c,
                                                   EndModel end) {
    if (c.size() > basis.size()) throw DomainError("sampled function: too many coefficients");
    const Eigen::VectorXd u = basis.vectors().leftCols(c.size()) * c;
    return on_grid(basis.grid(), std::vector<double>(u.data(), u.data() + u.size()), end, basis.order().value());
}

SampledFunction SampledFunction::with_exterior(ExteriorProfile g) const {
    for (const auto& I : g.quadrature().region().intervals())
        if (I.b > a_ && I.a < b_) throw DomainError("exterior profile overlaps the support of the sampled function");
    SampledFunction out = *this;
    out.ext_ = std::move(g);
    return out;
}

double SampledFunction::operator()(double x) const {
    if (x <= a_ || x >= b_) return ext_ ? (*ext_)(x) : 0.0;
    const int n = count();
    const double pos = (x - a_) / h_;
    const int j = std::min(static_cast<int>(std::floor(pos)), n);
    const double t = pos - j;
    if (j == 0) return end_ == EndModel::PowerLaw ? v_.front() * std::pow(t, end_exponent_) : t * v_.front();
    if (j == n) return end_ == EndModel::PowerLaw ? v_.back() * std::pow(1.0 - t, end_exponent_) : (1.0 - t) * v_.back();
    return (1.0 - t) * value(j) + t * value(j + 1);
}

// ---------------------------------------------------------------- principal value

namespace {

double profile_integral(const ExteriorProfile& g, double x, double s) {
    const auto& q = g.quadrature();
    return simd::inv_pow_sum(x, q.nodes().data(), [&] {
        static thread_local std::vector<double> wv;
        wv.resize(q.weights().size());
        for (std::size_t i = 0; i < wv.size(); ++i) wv[i] = q.weights()[i] * g.values()[i];
        return wv.data();
    }(), 1.0 + 2.0 * s, q.weights().size());
}

// int over the end cell of u_1 (d/h)^q |x - y|^{-1-2s}, x outside the support
double end_cell_exterior(double u1, double q, double h, double delta, bool same_side, double s) {
    if (u1 == 0.0) return 0.0;
    const double p = 1.0 + 2.0 * s;
    if (same_side && 2.0 * s > q) {
        // t = d / (delta + d) turns it into an incomplete beta function
        const double T = h / (delta + h);
        return u1 * std::pow(h, -q) * std::pow(delta, q + 1.0 - p) * boost::math::beta(q + 1.0, 2.0 * s - q, T);
    }
    const GaussRule jac = jacobi_on_segment(24, q, 1.0);
    if (same_side)
        return u1 * std::pow(h, -q) *
               graded_end_integral(q, delta, h, jac, 24, [&](double d) { return std::pow(delta + d, -p); });
    double acc = 0.0;
    const double sc = std::pow(h, q + 1.0);
    for (int i = 0; i < jac.size(); ++i) acc += sc * jac.w[i] * std::pow(delta - h * jac.x[i], -p);
    return u1 * std::pow(h, -q) * acc;
}

double pv_exterior(const SampledFunction& u, double x, double s) {
    const double h = u.h();
    const int n = u.count();
    const bool power = u.end_model() == EndModel::PowerLaw;
    double acc = 0.0;
    for (int c = 0; c <= n; ++c) {
        if (power && (c == 0 || c == n)) continue;
        const double y0 = u.node(c), y1 = y0 + h;
        double uN, uF, d0;  // values at the near and far end of the cell
        if (x < y0) {
            d0 = y0 - x;
            uN = u.value(c);
            uF = u.value(c + 1);
        } else {
            d0 = x - y1;
            uN = u.value(c + 1);
            uF = u.value(c);
        }
        if (uN == 0.0 && uF == 0.0) continue;
        double I0, J;
        p1_moments(d0, h, s, I0, J);
        acc += uN * I0 + (uF - uN) / h * J;
    }
    if (power) {
        const double q = u.end_exponent();
        const bool left = x < u.a();
        acc += end_cell_exterior(u.value(1), q, h, left ? u.a() - x : x - u.a(), left, s);
        acc += end_cell_exterior(u.value(n), q, h, left ? u.b() - x : x - u.b(), !left, s);
    }
    if (u.exterior()) acc += profile_integral(*u.exterior(), x, s);
    return -normalization_constant(FracOrder(s)) * acc;
}

double pv_interior(const SampledFunction& u, double x, double s) {
    const double h = u.h();
    const int n = u.count();
    const double pos = (x - u.a()) / h;
    int j = static_cast<int>(std::floor(pos));
    if (j > n) j = n;
    const double t = pos - j;
    const int nn = near_radius(h);
    const double p = 1.0 + 2.0 * s;
    const bool power = u.end_model() == EndModel::PowerLaw;

    double card[4];
    cubic_cardinals(t, card);
    const double second[4] = {1.0 - t, 3.0 * t - 2.0, 1.0 - 3.0 * t, t};
    double u2 = 0.0, ux = 0.0;
    for (int k = 0; k < 4; ++k) {
        u2 += second[k] * u.value(j - 1 + k);
        ux += card[k] * u.value(j - 1 + k);
    }
    // scaled coordinate xi = (y - x) / h; the window is |xi| < 1
    double acc = -u2 / (2.0 - 2.0 * s) + ux / s;

    const GaussRule& g20 = gauss_legendre(20);
    const GaussRule& g8 = gauss_legendre(8);
    static thread_local GaussRule jac;
    static thread_local double jac_q = -1.0;
    if (power && jac_q != u.end_exponent()) {
        jac = jacobi_on_segment(20, u.end_exponent(), 1.0);
        jac_q = u.end_exponent();
    }
    double cells = 0.0;
    for (int c = 0; c <= n; ++c) {
        const double lo = c - pos, hi = lo + 1.0;
        const double dist = hi <= 0.0 ? -hi : (lo >= 0.0 ? lo : 0.0);
        if (power && (c == 0 || c == n)) {
            const double u1 = (c == 0) ? u.value(1) : u.value(n);
            for (int i = 0; i < jac.size(); ++i) {
                const double xi = (c == 0) ? lo + jac.x[i] : hi - jac.x[i];
                cells += u1 * jac.w[i] * std::pow(std::abs(xi), -p);
            }
            continue;
        }
        if (dist < nn - 0.5) {
            const double pieces[2][2] = {{lo, std::min(hi, -1.0)}, {std::max(lo, 1.0), hi}};
            for (const auto& pc : pieces) {
                if (!(pc[1] > pc[0])) continue;
                const double m = 0.5 * (pc[0] + pc[1]), w = 0.5 * (pc[1] - pc[0]);
                for (int i = 0; i < g20.size(); ++i) {
                    const double xi = m + w * g20.x[i];
                    double cc[4];
                    cubic_cardinals(xi - lo, cc);
                    double uy = 0.0;
                    for (int k = 0; k < 4; ++k) uy += cc[k] * u.value(c - 1 + k);
                    cells += w * g20.w[i] * uy * std::pow(std::abs(xi), -p);
                }
            }
        } else {
            const double uL = u.value(c), uR = u.value(c + 1);
            if (uL == 0.0 && uR == 0.0) continue;
            for (int i = 0; i < g8.size(); ++i) {
                const double tt = 0.5 + 0.5 * g8.x[i];
                cells += 0.5 * g8.w[i] * ((1.0 - tt) * uL + tt * uR) * std::pow(std::abs(lo + tt), -p);
            }
        }
    }
    acc -= cells;
    const double Cs = normalization_constant(FracOrder(s));
    double out = Cs * std::pow(h, -2.0 * s) * acc;
    if (u.exterior()) out -= Cs * profile_integral(*u.exterior(), x, s);
    return out;
}

}  // namespace

double frac_laplacian_pv(const SampledFunction& u, double x, FracOrder order) {
    const double s = order.value();
    if (!std::isfinite(x)) throw DomainError("frac_laplacian_pv: non-finite point");
    if (x < u.a() || x > u.b()) {
        if (u.exterior() && in_closure(u.exterior()->quadrature().region(), x))
            throw DomainError("frac_laplacian_pv: point lies on the exterior profile");
        return pv_exterior(u, x, s);
    }
    const double h = u.h();
    const double margin = (u.end_model() == EndModel::PowerLaw) ? 2.0 * h : h;
    const double dist = std::min(x - u.a(), u.b() - x);
    if (dist < margin * (1.0 - 1e-12))
        throw DomainError("frac_laplacian_pv: point too close to the end of the support");
    return pv_interior(u, x, s);
}

std::vector<double> frac_laplacian_at_nodes(const SampledFunction& u, FracOrder order) {
    if (u.end_model() != EndModel::Linear) throw DomainError("frac_laplacian_at_nodes: needs the linear end model");
    const double s = order.value();
    const int n = u.count();
    const double h = u.h();
    const int nn = near_radius(h);
    const double p = 1.0 + 2.0 * s;
    const GaussRule& g20 = gauss_legendre(20);
    const GaussRule& g8 = gauss_legendre(8);

    // symmetric weights on offsets 0..n+1 (units h^{-2s}); cell [m, m+1] to the right
    std::vector<double> w(static_cast<std::size_t>(n) + 3, 0.0);
    std::vector<double> ext(static_cast<std::size_t>(nn), 0.0);  // leakage of the cubic cell beyond the lattice
    for (int m = 1; m <= n + 1; ++m) {
        if (m < nn - 0.5) {
            for (int i = 0; i < g20.size(); ++i) {
                const double tt = 0.5 + 0.5 * g20.x[i];
                const double kw = 0.5 * g20.w[i] * std::pow(m + tt, -p);
                double cc[4];
                cubic_cardinals(tt, cc);
                for (int k = 0; k < 4; ++k) {
                    const int node = m - 1 + k;
                    if (node > n + 1) continue;
                    w[static_cast<std::size_t>(node)] -= kw * cc[k] * (node == 0 ? 2.0 : 1.0);
                }
                ext[static_cast<std::size_t>(m)] += kw * cc[0];
            }
        } else {
            for (int i = 0; i < g8.size(); ++i) {
                const double tt = 0.5 + 0.5 * g8.x[i];
                const double kw = 0.5 * g8.w[i] * std::pow(m + tt, -p);
                w[static_cast<std::size_t>(m)] -= kw * (1.0 - tt);
                if (m + 1 <= n + 1) w[static_cast<std::size_t>(m) + 1] -= kw * tt;
            }
        }
    }
    w[0] += 2.0 / (2.0 - 2.0 * s) + 1.0 / s;
    w[1] += -1.0 / (2.0 - 2.0 * s);

    std::vector<double> W(2 * static_cast<std::size_t>(n) - 1);
    for (int d = -(n - 1); d <= n - 1; ++d) W[static_cast<std::size_t>(d + n - 1)] = w[static_cast<std::size_t>(std::abs(d))];
    const double Cs = normalization_constant(order);
    const double scale = Cs * std::pow(h, -2.0 * s);
    const double u1 = u.value(1), un = u.value(n);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double v = simd::dot(W.data() + (n - 1 - i), u.values().data(), static_cast<std::size_t>(n));
        // cubic cells just outside the lattice are zero in the generic operator
        const int mr = n - i;      // cell [n+1, n+2] seen from node i+1
        const int ml = i + 1;      // cell [-1, 0]
        if (mr < nn - 0.5) v += un * ext[static_cast<std::size_t>(mr)];
        if (ml < nn - 0.5) v += u1 * ext[static_cast<std::size_t>(ml)];
        out[static_cast<std::size_t>(i)] = scale * v;
        if (u.exterior()) out[static_cast<std::size_t>(i)] -= Cs * profile_integral(*u.exterior(), u.node(i + 1), s);
    }
    return out;
}

double frac_laplacian_p1_exact(const SampledFunction& u, double x, FracOrder order) {
    const double s = order.value();
    const double h = u.h();
    double acc = 0.0;
    for (int j = 1; j <= u.count(); ++j) {
        const double uj = u.value(j);
        if (uj == 0.0) continue;
        const double z = x - u.node(j);
        if (z == 0.0 || z == h || z == -h) throw DomainError("frac_laplacian_p1_exact: point on a node");
        acc += uj * (g2(z + h, s) - 2.0 * g2(z, s) + g2(z - h, s));
    }
    return -normalization_constant(order) / h * acc;
}

// ---------------------------------------------------------------- normal derivative

NormalDerivativeOperator::NormalDerivativeOperator(double a, double b, int count, FracOrder s, EndModel end,
                                                   double end_exponent, double tol)
    : a_(a), b_(b), h_(0.0), n_(count), s_(s), end_(end), p_(end == EndModel::Linear ? 1.0 : end_exponent), tol_(tol) {
    if (count < 1 || !(a < b)) throw DomainError("normal derivative: bad lattice");
    if (!(p_ > 0.0)) throw DomainError("normal derivative: end exponent must be positive");
    h_ = (b - a) / (count + 1.0);
    const GaussRule& g = gauss_legendre(10);
    for (int j = 1; j < n_; ++j) {
        for (int i = 0; i < g.size(); ++i) {
            const double t = 0.5 + 0.5 * g.x[i];
            qy_.push_back(a_ + (j + t) * h_);
            qw_.push_back(0.5 * h_ * g.w[i]);
            qcell_.push_back(j);
            qt_.push_back(t);
        }
    }
}

double NormalDerivativeOperator::end_cell(double delta, bool same_side, double& err) const {
    // int_0^h (d/h)^p |distance|^{-1-2s} dd, computed at two orders
    const double p = 1.0 + 2.0 * s_.value();
    static thread_local double cached_q = -1.0;
    static thread_local GaussRule j24, j14;
    if (cached_q != p_) {
        j24 = jacobi_on_segment(24, p_, 1.0);
        j14 = jacobi_on_segment(14, p_, 1.0);
        cached_q = p_;
    }
    const double hq = std::pow(h_, -p_);
    double hi, lo;
    if (same_side) {
        auto f = [&](double d) { return std::pow(delta + d, -p); };
        hi = hq * graded_end_integral(p_, delta, h_, j24, 24, f);
        lo = hq * graded_end_integral(p_, delta, h_, j14, 14, f);
    } else {
        hi = lo = 0.0;
        const double sc = std::pow(h_, p_ + 1.0);
        for (int i = 0; i < j24.size(); ++i) hi += sc * j24.w[i] * std::pow(delta - h_ * j24.x[i], -p);
        for (int i = 0; i < j14.size(); ++i) lo += sc * j14.w[i] * std::pow(delta - h_ * j14.x[i], -p);
        hi *= hq;
        lo *= hq;
    }
    err = std::abs(hi - lo);
    return hi;
}

Eigen::MatrixXd NormalDerivativeOperator::apply(const Eigen::MatrixXd& columns, const std::vector<double>& xs) const {
    if (columns.rows() != n_) throw DomainError("normal derivative: column length does not match the lattice");
    const int m = static_cast<int>(columns.cols());
    const std::size_t Q = qy_.size();
    Eigen::MatrixXd Uq(static_cast<Eigen::Index>(Q), m);
    for (std::size_t q = 0; q < Q; ++q) {
        const int j = qcell_[q];
        const double t = qt_[q];
        for (int c = 0; c < m; ++c) Uq(static_cast<Eigen::Index>(q), c) = qw_[q] * ((1.0 - t) * columns(j - 1, c) + t * columns(j, c));
    }
    const double Cs = normalization_constant(s_);
    const double p = 1.0 + 2.0 * s_.value();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), m);
    std::vector<double> k(Q);
    for (std::size_t r = 0; r < xs.size(); ++r) {
        const double x = xs[r];
        if (!(x < a_ || x > b_)) throw DomainError("normal derivative: point must lie outside the support");
        if (Q > 0) simd::inv_pow(x, qy_.data(), p, k.data(), Q);
        const bool left = x < a_;
        double eL, eR;
        const double IL = end_cell(left ? a_ - x : x - a_, left, eL);
        const double IR = end_cell(left ? b_ - x : x - b_, !left, eR);
        for (int c = 0; c < m; ++c) {
            const double* col = Uq.col(c).data();
            const double u1 = columns(0, c), un = columns(n_ - 1, c);
            const double regular = Q > 0 ? simd::dot(k.data(), col, Q) : 0.0;
            const double v = regular + u1 * IL + un * IR;
            const double err = std::abs(u1) * eL + std::abs(un) * eR;
            if (err > tol_ * std::max(std::abs(v), std::abs(u1 * IL) + std::abs(un * IR)))
                throw QuadratureError("normal derivative: boundary cell quadrature", err);
            out(static_cast<Eigen::Index>(r), c) = -Cs * v;
        }
    }
    return out;
}

double nonlocal_normal_derivative(const SampledFunction& u, double x, FracOrder s, double tol) {
    NormalDerivativeOperator op(u.a(), u.b(), u.count(), s, u.end_model(), u.end_exponent(), tol);
    const Eigen::Map<const Eigen::VectorXd> col(u.values().data(), u.count());
    const double v = op.apply(col, {x})(0, 0);
    const double ux = u.exterior() ? (*u.exterior())(x) : 0.0;
    if (ux == 0.0) return v;
    const double d0 = (x < u.a()) ? u.a() - x : x - u.b();
    double I0, J;
    p1_moments(d0, u.b() - u.a(), s.value(), I0, J);
    return v + normalization_constant(s) * ux * I0;
}

// ---------------------------------------------------------------- traces and Gramian

std::shared_ptr<const ExteriorQuadrature> gramian_quadrature(const ExteriorRegion& region, FracOrder s, int order) {
    ExteriorQuadratureOptions o;
    o.order = order;
    for (const auto& I : region.intervals()) {
        if (I.a == 1.0 || I.b == -1.0) {
            if (s.value() >= 0.5)
                throw QuadratureError("exterior region touches the domain; traces are not square integrable for s >= 1/2",
                                      std::numeric_limits<double>::infinity());
            o.allow_touching = true;
            o.touching_exponent = -2.0 * s.value();
        }
    }
    return std::make_shared<const ExteriorQuadrature>(region, o);
}

ModeTraces compute_traces(const SpectralBasis& basis, std::shared_ptr<const ExteriorQuadrature> quad, EndModel end) {
    if (!basis.grid().is_uniform()) throw DomainError("compute_traces: grid must be uniform");
    NormalDerivativeOperator op(-1.0, 1.0, basis.grid().interior_count(), basis.order(), end, basis.order().value());
    ModeTraces t;
    t.values = op.apply(basis.vectors(), quad->nodes());
    t.quadrature = std::move(quad);
    t.eigenvalues = basis.eigenvalues();
    return t;
}

Eigen::MatrixXd exterior_gram(const ModeTraces& traces, int K) {
    if (K < 1 || K > traces.values.cols()) throw DomainError("exterior_gram: K out of range");
    const auto& w = traces.quadrature->weights();
    const std::size_t Q = w.size();
    Eigen::MatrixXd G(K, K);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j <= i; ++j) {
            const double v = simd::dot3(traces.values.col(i).data(), traces.values.col(j).data(), w.data(), Q);
            G(i, j) = v;
            G(j, i) = v;
        }
    return G;
}

Eigen::MatrixXd exterior_gram(const SpectralBasis& basis, const ExteriorRegion& region, int K) {
    if (K < 1 || K > basis.size()) throw DomainError("exterior_gram: K out of range");
    return exterior_gram(compute_traces(basis.truncated(K), gramian_quadrature(region, basis.order())), K);
}

EtaBound lower_bound_eta(const SpectralBasis& basis, const ExteriorRegion& region, int K) {
    const Eigen::MatrixXd G = exterior_gram(basis, region, K);
    EtaBound e{std::numeric_limits<double>::infinity(), 0};
    for (int k = 0; k < K; ++k) {
        const double v = std::sqrt(std::max(G(k, k), 0.0));
        if (v < e.eta) {
            e.eta = v;
            e.argmin = k + 1;
        }
    }
    return e;
}

// ---------------------------------------------------------------- Gagliardo

namespace {

struct Segment {
    double x0, x1, u0, u1;
    double slope() const { return (u1 - u0) / (x1 - x0); }
    double at(double x) const { return u0 + (x - x0) * slope(); }
};

struct AdjacentConstants {
    double a2, a11;
};

AdjacentConstants adjacent_constants(double s) {
    const GaussRule& g = gauss_legendre(30);
    const double p = 1.0 + 2.0 * s;
    double a2 = 0.0, a11 = 0.0;
    for (int i = 0; i < g.size(); ++i) {
        const double t = 0.5 + 0.5 * g.x[i];
        const double k = 0.5 * g.w[i] * std::pow(1.0 + t, -p);
        a2 += (1.0 + t * t) * k;
        a11 += 2.0 * t * k;
    }
    return {a2 / (3.0 - 2.0 * s), a11 / (3.0 - 2.0 * s)};
}

Segment sub(const Segment& S, double x0, double x1) { return {x0, x1, S.at(x0), S.at(x1)}; }

// int_A int_B (u(x) - u(y))^2 |x - y|^{-1-2s}, A entirely left of B
double pair_integral(const Segment& A, const Segment& B, double s, const AdjacentConstants& ac) {
    const double la = A.x1 - A.x0, lb = B.x1 - B.x0;
    const double gap = B.x0 - A.x1;
    const double L = std::max(la, lb);
    if (gap <= 1e-14 * L) {
        if (std::abs(la - lb) <= 1e-12 * L) {
            const double ba = A.slope(), bb = B.slope();
            return std::pow(la, 3.0 - 2.0 * s) * (ba * ba * ac.a2 + 2.0 * ba * bb * ac.a11 + bb * bb * ac.a2);
        }
        if (la > lb) {
            const double cut = A.x1 - lb;
            return pair_integral(sub(A, cut, A.x1), B, s, ac) + pair_integral(sub(A, A.x0, cut), B, s, ac);
        }
        const double cut = B.x0 + la;
        return pair_integral(A, sub(B, B.x0, cut), s, ac) + pair_integral(A, sub(B, cut, B.x1), s, ac);
    }
    if (gap < L) {
        if (la >= lb) {
            const double m = 0.5 * (A.x0 + A.x1);
            return pair_integral(sub(A, A.x0, m), B, s, ac) + pair_integral(sub(A, m, A.x1), B, s, ac);
        }
        const double m = 0.5 * (B.x0 + B.x1);
        return pair_integral(A, sub(B, B.x0, m), s, ac) + pair_integral(A, sub(B, m, B.x1), s, ac);
    }
    const GaussRule& g = gauss_legendre(gap >= 8.0 * L ? 4 : 8);
    const double p = 1.0 + 2.0 * s;
    double acc = 0.0;
    for (int i = 0; i < g.size(); ++i) {
        const double x = 0.5 * (A.x0 + A.x1) + 0.5 * la * g.x[i];
        const double ux = A.at(x);
        for (int k = 0; k < g.size(); ++k) {
            const double y = 0.5 * (B.x0 + B.x1) + 0.5 * lb * g.x[k];
            const double d = ux - B.at(y);
            acc += g.w[i] * g.w[k] * d * d * std::pow(y - x, -p);
        }
    }
    return 0.25 * la * lb * acc;
}

// double integral over (union of segments)^2; segments sorted and non-overlapping
double seminorm_on_segments(const std::vector<Segment>& segs, double s) {
    const AdjacentConstants ac = adjacent_constants(s);
    double acc = 0.0;
    for (std::size_t i = 0; i < segs.size(); ++i) {
        const double l = segs[i].x1 - segs[i].x0, b = segs[i].slope();
        acc += b * b * 2.0 * std::pow(l, 3.0 - 2.0 * s) / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
        for (std::size_t j = i + 1; j < segs.size(); ++j) acc += 2.0 * pair_integral(segs[i], segs[j], s, ac);
    }
    return acc;
}

}  // namespace

double gagliardo_seminorm_squared(const SampledFunction& u, FracOrder order) {
    if (u.exterior()) throw DomainError("gagliardo_seminorm: functions with exterior profiles are not supported");
    const double s = order.value();
    const int n = u.count();
    const double h = u.h();
    std::vector<Segment> segs;
    for (int c = 0; c <= n; ++c) segs.push_back({u.node(c), u.node(c + 1), u.value(c), u.value(c + 1)});
    double acc = seminorm_on_segments(segs, s);

    // 2 int u^2 kappa, kappa(x) = int_{R \ (a,b)} |x - y|^{-1-2s} dy
    auto kappa_far = [&](double x, bool drop_left, bool drop_right) {
        double k = 0.0;
        if (!drop_left) k += std::pow(x - u.a(), -2.0 * s);
        if (!drop_right) k += std::pow(u.b() - x, -2.0 * s);
        return k / (2.0 * s);
    };
    const GaussRule& g = gauss_legendre(16);
    double tail = 0.0;
    for (int c = 0; c <= n; ++c) {
        const bool first = c == 0, last = c == n;
        for (int i = 0; i < g.size(); ++i) {
            const double x = u.node(c) + h * (0.5 + 0.5 * g.x[i]);
            const double ux = segs[static_cast<std::size_t>(c)].at(x);
            tail += 0.5 * h * g.w[i] * ux * ux * kappa_far(x, first, last);
        }
    }
    // near-end parts of kappa in the end cells, u = u_1 d / h
    const double endc = std::pow(h, 1.0 - 2.0 * s) / ((3.0 - 2.0 * s) * 2.0 * s);
    tail += (u.value(1) * u.value(1) + u.value(n) * u.value(n)) * endc;
    acc += 2.0 * tail;
    return acc;
}

double gagliardo_seminorm(const SampledFunction& u, FracOrder s) {
    return std::sqrt(std::max(gagliardo_seminorm_squared(u, s), 0.0));
}

double gagliardo_form(const ExteriorProfile& f, const ExteriorProfile& g, FracOrder order) {
    const auto& q = f.quadrature();
    if (&q != &g.quadrature() && q.nodes() != g.quadrature().nodes())
        throw DomainError("gagliardo_form: profiles live on different quadratures");
    auto segments = [&](const std::vector<double>& v) {
        std::vector<Segment> segs;
        const auto& x = q.nodes();
        const auto& own = q.owner();
        const auto& I = q.region().intervals();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const bool start = i == 0 || own[i] != own[i - 1];
            const bool end = i + 1 == x.size() || own[i + 1] != own[i];
            const auto& iv = I[static_cast<std::size_t>(own[i])];
            if (start && x[i] > iv.a) segs.push_back({iv.a, x[i], v[i], v[i]});
            if (!end) segs.push_back({x[i], x[i + 1], v[i], v[i + 1]});
            else if (x[i] < iv.b) segs.push_back({x[i], iv.b, v[i], v[i]});
        }
        return segs;
    };
    std::vector<double> sum(f.values().size()), diff(f.values().size());
    for (std::size_t i = 0; i < sum.size(); ++i) {
        sum[i] = f.values()[i] + g.values()[i];
        diff[i] = f.values()[i] - g.values()[i];
    }
    const double s = order.value();
    return 0.25 * (seminorm_on_segments(segments(sum), s) - seminorm_on_segments(segments(diff), s));
}

// ---------------------------------------------------------------- integration by parts

TestFunction gaussian_test_function(double center, double width, double amplitude, FracOrder order) {
    if (!(width > 0.0) || !std::isfinite(center) || !std::isfinite(amplitude))
        throw DomainError("gaussian test function: bad parameters");
    const double s = order.value();
    const double a = 1.0 / (2.0 * width * width);
    const double pref = amplitude * std::pow(4.0 * a, s) * std::exp(std::lgamma(0.5 + s) - std::lgamma(0.5));
    TestFunction t;
    t.center = center;
    t.radius = width * std::sqrt(2.0 * std::log(std::max(std::abs(amplitude), 1.0) * 1e17));
    t.value = [=](double x) { return amplitude * std::exp(-a * (x - center) * (x - center)); };
    t.frac_laplacian = [=](double x) {
        return pref * boost::math::hypergeometric_1F1(0.5 + s, 0.5, -a * (x - center) * (x - center));
    };
    return t;
}

IbpTerms integration_by_parts_residual(const SampledFunction& u, const TestFunction& v, FracOrder order) {
    if (u.a() != -1.0 || u.b() != 1.0 || u.end_model() != EndModel::Linear || u.exterior())
        throw DomainError("integration_by_parts_residual: u must be a P1 function on [-1, 1]");
    const double s = order.value();
    const int n = u.count();
    const double h = u.h();
    const double Cs = normalization_constant(order);
    IbpTerms r{};

    // int u (-Delta)^s v over the support of u
    const GaussRule& g8 = gauss_legendre(8);
    for (int c = 0; c <= n; ++c)
        for (int i = 0; i < g8.size(); ++i) {
            const double t = 0.5 + 0.5 * g8.x[i];
            const double x = u.node(c) + t * h;
            r.bilinear += 0.5 * h * g8.w[i] * ((1.0 - t) * u.value(c) + t * u.value(c + 1)) * v.frac_laplacian(x);
        }

    // int_{(-1,1)} I_h v (-Delta)^s u: Galerkin rows for interior hats, closed
    // form for the two boundary half-hats
    const StiffnessMatrix K = assemble_stiffness(Grid::uniform(n), order);
    std::vector<double> W(2 * static_cast<std::size_t>(n) - 1);
    for (int d = -(n - 1); d <= n - 1; ++d) W[static_cast<std::size_t>(d + n - 1)] = K.column[static_cast<std::size_t>(std::abs(d))];
    for (int i = 0; i < n; ++i)
        r.interior += v.value(u.node(i + 1)) * simd::dot(W.data() + (n - 1 - i), u.values().data(), static_cast<std::size_t>(n));
    auto Phi = [&](double c) { return -g3(-c, s) + (g4(h - c, s) - g4(-c, s)) / h; };
    const GaussRule& g10 = gauss_legendre(10);
    auto half_hat = [&](bool left) {
        double acc = 0.0;
        for (int j = 1; j <= n; ++j) {
            const double uj = left ? u.value(j) : u.value(n + 1 - j);
            if (uj == 0.0) continue;
            double psi;
            if (j <= 3) {
                psi = Phi((j - 1) * h) - 2.0 * Phi(j * h) + Phi((j + 1) * h);
            } else {
                psi = 0.0;
                for (int i = 0; i < g10.size(); ++i) {
                    const double t = h * (0.5 + 0.5 * g10.x[i]);
                    const double z = t - j * h;
                    psi += 0.5 * h * g10.w[i] * (1.0 - t / h) * (g2(z + h, s) - 2.0 * g2(z, s) + g2(z - h, s));
                }
            }
            acc += uj * psi;
        }
        return -Cs / h * acc;
    };
    r.interior += v.value(-1.0) * half_hat(true) + v.value(1.0) * half_hat(false);

    // int_{|x|>1} v N_s u
    const double R = std::max(1.5, v.center + v.radius), L = std::max(1.5, v.radius - v.center);
    ExteriorQuadratureOptions o;
    o.allow_touching = true;
    o.touching_exponent = std::min(0.0, 1.0 - 2.0 * s);
    ExteriorQuadrature quad(ExteriorRegion({{-L, -1.0}, {1.0, R}}), o);
    NormalDerivativeOperator op(-1.0, 1.0, n, order, EndModel::Linear, 1.0);
    const Eigen::Map<const Eigen::VectorXd> col(u.values().data(), n);
    const Eigen::MatrixXd N = op.apply(col, quad.nodes());
    for (int q = 0; q < quad.size(); ++q)
        r.exterior += quad.weights()[static_cast<std::size_t>(q)] * v.value(quad.nodes()[static_cast<std::size_t>(q)]) * N(q, 0);

    r.residual = std::abs(r.bilinear - r.interior - r.exterior);
    return r;
}

}  // namespace fracctl
