#pragma once

// Multivariate normal CDF: exact paths for d <= 2, one-dimensional adaptive
// quadrature over a bivariate conditional for d = 3, randomized quasi-Monte
// Carlo over the separation-of-variables transform for 4 <= d <= 8.

#include <array>
#include <cstdint>
#include <numeric>

#include <boost/math/quadrature/gauss.hpp>

#include "brar/numerics.hpp"
#include "brar/rng.hpp"

namespace brar {

struct MvnCdfOptions {
    double tol = 1e-6;           // target standard error (d >= 4)
    std::uint64_t seed = 0;      // randomizes the lattice shifts
    int shifts = 12;             // independent randomizations, >= 8
    int max_points = 50'000;     // lattice points per shift
};

/// Standard bivariate normal P(X < h, Y < k) with correlation r.
/// Drezner-Wesolowsky quadrature in Genz's refinement; accurate to ~1e-15.
inline double bvn_cdf(double h, double k, double r) {
    detail::require(!std::isnan(h) && !std::isnan(k) && !std::isnan(r), "bvn_cdf: NaN argument");
    detail::require(r >= -1.0 && r <= 1.0, "bvn_cdf: correlation outside [-1, 1]");
    if (h == -kInf || k == -kInf) return 0.0;
    if (h == kInf) return norm_cdf(k);
    if (k == kInf) return norm_cdf(h);

    // Genz's routine computes the upper orthant P(X > dh, Y > dk).
    const double dh = -h;
    const double dk = -k;
    constexpr double two_pi = 2.0 * std::numbers::pi;

    auto half_rule = [](double ar) -> std::pair<std::span<const double>, std::span<const double>> {
        using G6 = boost::math::quadrature::gauss<double, 6>;
        using G12 = boost::math::quadrature::gauss<double, 12>;
        using G20 = boost::math::quadrature::gauss<double, 20>;
        if (ar < 0.3) return {G6::abscissa(), G6::weights()};
        if (ar < 0.75) return {G12::abscissa(), G12::weights()};
        return {G20::abscissa(), G20::weights()};
    };
    const auto [nodes, weights] = half_rule(std::abs(r));

    double hk = dh * dk;
    double bvn = 0.0;
    if (std::abs(r) < 0.925) {
        const double hs = 0.5 * (dh * dh + dk * dk);
        const double asr = std::asin(r);
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            for (double x : {-nodes[i], nodes[i]}) {
                const double sn = std::sin(asr * (x + 1.0) / 2.0);
                bvn += weights[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
            }
        }
        bvn = bvn * asr / (2.0 * two_pi) + norm_cdf(-dh) * norm_cdf(-dk);
        return std::clamp(bvn, 0.0, 1.0);
    }

    double kk = dk;
    if (r < 0.0) {
        kk = -kk;
        hk = -hk;
    }
    if (std::abs(r) < 1.0) {
        const double as = (1.0 - r) * (1.0 + r);
        double a = std::sqrt(as);
        const double bs = (dh - kk) * (dh - kk);
        const double c = (4.0 - hk) / 8.0;
        const double d = (12.0 - hk) / 16.0;
        bvn = a * std::exp(-(bs / as + hk) / 2.0) *
              (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
        if (hk > -160.0) {
            const double b = std::sqrt(bs);
            bvn -= std::exp(-hk / 2.0) * std::sqrt(two_pi) * norm_cdf(-b / a) * b *
                   (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            for (double x : {-nodes[i], nodes[i]}) {
                double xs = a * (x + 1.0);
                xs *= xs;
                const double rs = std::sqrt(1.0 - xs);
                bvn += a * weights[i] *
                       (std::exp(-bs / (2.0 * xs) - hk / (1.0 + rs)) / rs -
                        std::exp(-(bs / xs + hk) / 2.0) * (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
        bvn = -bvn / two_pi;
    }
    if (r > 0.0) bvn += norm_cdf(-std::max(dh, kk));
    if (r < 0.0) bvn = -bvn + std::max(0.0, norm_cdf(-dh) - norm_cdf(-kk));
    return std::clamp(bvn, 0.0, 1.0);
}

namespace detail {

// sqrt of the first primes: generators of the Richtmyer lattice.
inline constexpr std::array<double, 7> kRichtmyer = {
    1.4142135623730951, 1.7320508075688772, 2.2360679774997896, 2.6457513110645907,
    3.3166247903554,    3.605551275463989,  4.123105625617661};

/// Separation-of-variables integrand for P(X <= b), X ~ N(0, L L^T).
class GenzIntegrand {
public:
    GenzIntegrand(Vector bound, Matrix lower) : b_(std::move(bound)), l_(std::move(lower)),
                                                 y_(b_.size()) {
        e1_ = norm_cdf(b_(0) / l_(0, 0));
    }

    double first_factor() const { return e1_; }

    double operator()(std::span<const double> w) {
        const Eigen::Index d = b_.size();
        double e = e1_;
        double f = e;
        for (Eigen::Index i = 1; i < d; ++i) {
            const double u = std::clamp(w[static_cast<std::size_t>(i - 1)] * e, 1e-300,
                                        1.0 - 1e-16);
            y_(i - 1) = norm_quantile(u);
            double s = 0.0;
            for (Eigen::Index j = 0; j < i; ++j) s += l_(i, j) * y_(j);
            e = norm_cdf((b_(i) - s) / l_(i, i));
            f *= e;
            if (f == 0.0) break;
        }
        return f;
    }

private:
    Vector b_;
    Matrix l_;
    Vector y_;
    double e1_ = 0.0;
};

}  // namespace detail

/// P(X <= upper) for X ~ N(spec.mean, spec.cov), d <= 8.
///
/// d = 1 and d = 2 are computed deterministically (error 0). For d >= 3 the
/// integral is estimated on a randomly shifted Richtmyer lattice with
/// antithetic tent-transformed points; variables are ordered by increasing
/// standardized bound. `error` is the standard error across shifts; when the
/// point budget runs out before `tol` is met, `converged` is false.
namespace detail {

/// P(Z < h) for a standardized trivariate normal, conditioning on Z_0:
/// int_{-inf}^{h_0} phi(x) P(Z_1 < h_1, Z_2 < h_2 | Z_0 = x) dx.
inline Estimate trivariate_cdf(const Vector& h, const Matrix& corr) {
    constexpr double floor = -38.5;  // phi vanishes in double below this
    if (h(0) <= floor) return {0.0, 0.0, true};
    const double r1 = corr(0, 1), r2 = corr(0, 2);
    const double s1 = std::sqrt(1.0 - r1 * r1), s2 = std::sqrt(1.0 - r2 * r2);
    const double rc = std::clamp((corr(1, 2) - r1 * r2) / (s1 * s2), -1.0, 1.0);
    auto f = [&](double x) {
        return std::exp(norm_log_pdf(x, 0.0, 1.0)) * bvn_cdf((h(1) - r1 * x) / s1, (h(2) - r2 * x) / s2, rc);
    };
    std::vector<double> breaks;
    for (double b : {-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0}) breaks.push_back(b);
    for (double b : {0.01, 0.1, 1.0}) breaks.push_back(h(0) - b);
    const auto r = adaptive_quad(f, floor, h(0), QuadSpec{1e-300, 1e-11, 400}, breaks);
    return {std::clamp(r.value, 0.0, 1.0), r.error, r.converged};
}

}  // namespace detail

inline Estimate mvn_cdf(const Vector& upper, const MvnSpec& spec, const MvnCdfOptions& opt = {}) {
    spec.validate();
    detail::require(upper.size() == spec.dim(), "mvn_cdf: dimension mismatch");
    detail::require(spec.dim() <= 8, "mvn_cdf: dimension above 8 is not supported");
    detail::require(!upper.hasNaN(), "mvn_cdf: NaN argument");
    detail::require(opt.tol > 0.0 && opt.shifts >= 2 && opt.max_points >= 1,
                    "mvn_cdf: invalid options");
    detail::cholesky(spec.cov);  // reject non-PD input up front

    // Drop coordinates with +inf bound (marginalize); any -inf bound gives 0.
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < upper.size(); ++i) {
        if (upper(i) == -kInf) return {0.0, 0.0, true};
        if (upper(i) != kInf) keep.push_back(i);
    }
    const auto d = static_cast<Eigen::Index>(keep.size());
    if (d == 0) return {1.0, 0.0, true};

    Vector sd(d);
    Vector z(d);  // standardized bounds
    for (Eigen::Index i = 0; i < d; ++i) {
        sd(i) = std::sqrt(spec.cov(keep[i], keep[i]));
        z(i) = (upper(keep[i]) - spec.mean(keep[i])) / sd(i);
    }
    if (d == 1) return {norm_cdf(z(0)), 0.0, true};
    if (d == 2) {
        const double r = spec.cov(keep[0], keep[1]) / (sd(0) * sd(1));
        return {bvn_cdf(z(0), z(1), std::clamp(r, -1.0, 1.0)), 0.0, true};
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return z(a) < z(b); });

    Matrix corr(d, d);
    Vector bound(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const auto oi = order[static_cast<std::size_t>(i)];
        bound(i) = z(oi);
        for (Eigen::Index j = 0; j < d; ++j) {
            const auto oj = order[static_cast<std::size_t>(j)];
            corr(i, j) = spec.cov(keep[oi], keep[oj]) / (sd(oi) * sd(oj));
        }
    }
    if (d == 3) return detail::trivariate_cdf(bound, corr);
    const Matrix lower = detail::cholesky(corr).matrixL();

    const auto dims = static_cast<std::size_t>(d - 1);
    const auto shifts = static_cast<std::size_t>(opt.shifts);
    std::vector<std::vector<double>> shift(shifts, std::vector<double>(dims));
    CounterRng rng(derive_seed(opt.seed, 0x6d766e));
    for (auto& s : shift)
        for (auto& v : s) v = rng.uniform();

    detail::GenzIntegrand integrand(bound, lower);
    std::vector<double> sums(shifts, 0.0);
    std::vector<double> w(dims), w_anti(dims);
    long points = 0;
    long next_check = std::min(1000, opt.max_points);
    double mean = 0.0;
    double se = kInf;

    while (true) {
        for (long k = points + 1; k <= next_check; ++k) {
            for (std::size_t s = 0; s < shifts; ++s) {
                for (std::size_t j = 0; j < dims; ++j) {
                    const double x = static_cast<double>(k) * detail::kRichtmyer[j] + shift[s][j];
                    const double frac = x - std::floor(x);
                    w[j] = std::abs(2.0 * frac - 1.0);
                    w_anti[j] = 1.0 - w[j];
                }
                sums[s] += 0.5 * (integrand(w) + integrand(w_anti));
            }
        }
        points = next_check;

        mean = 0.0;
        for (double s : sums) mean += s / static_cast<double>(points);
        mean /= static_cast<double>(shifts);
        double var = 0.0;
        for (double s : sums) {
            const double dev = s / static_cast<double>(points) - mean;
            var += dev * dev;
        }
        var /= static_cast<double>(shifts * (shifts - 1));
        se = std::sqrt(var);

        if (se <= opt.tol || points >= opt.max_points) break;
        next_check = std::min<long>(2 * points, opt.max_points);
    }
    return {std::clamp(mean, 0.0, 1.0), se, se <= opt.tol};
}

}  // namespace brar
