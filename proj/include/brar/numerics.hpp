#pragma once

// Special functions and integration primitives shared by the evidence engines.

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string>
#include <numbers>
#include <queue>
#include <span>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "brar/error.hpp"

namespace brar {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Integration controls for adaptive_quad.
struct QuadSpec {
    double abs_tol = 1e-10;
    double rel_tol = 1e-8;
    int max_subdivisions = 200;

    void validate() const {
        detail::require(abs_tol > 0 && rel_tol > 0, "QuadSpec: tolerances must be positive");
        detail::require(max_subdivisions >= 1, "QuadSpec: max_subdivisions must be >= 1");
    }
};

/// A numerical estimate together with its error estimate. `converged == false`
/// is the accuracy warning: the value is the best estimate reached within budget.
struct Estimate {
    double value = 0.0;
    double error = 0.0;
    bool converged = true;
};

namespace detail {

inline void require_not_nan(double x, const char* what) {
    if (std::isnan(x)) throw InvalidArgument(std::string(what) + ": NaN argument");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Univariate normal

inline double norm_cdf(double x) {
    detail::require_not_nan(x, "norm_cdf");
    return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
}

inline double norm_log_pdf(double x, double mean = 0.0, double var = 1.0) {
    const double z = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + z * z / var);
}

/// log Phi(x), accurate far into the lower tail where Phi(x) underflows.
inline double log_norm_cdf(double x) {
    detail::require_not_nan(x, "log_norm_cdf");
    if (x > 0.0) return std::log1p(-norm_cdf(-x));
    if (x > -37.0) return std::log(norm_cdf(x));
    // Asymptotic series of the Mills ratio.
    const double z2 = 1.0 / (x * x);
    const double series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2)));
    return -0.5 * x * x - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

inline double norm_quantile(double p) {
    detail::require(p >= 0.0 && p <= 1.0, "norm_quantile: p outside [0, 1]");
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// ---------------------------------------------------------------------------
// Beta family

inline double log_beta(double a, double b) {
    detail::require(a > 0.0 && b > 0.0, "log_beta: arguments must be positive");
    return boost::math::lgamma(a) + boost::math::lgamma(b) - boost::math::lgamma(a + b);
}

inline double log_binomial_coefficient(int n, int k) {
    detail::require(n >= 0 && k >= 0 && k <= n, "log_binomial_coefficient: need 0 <= k <= n");
    return boost::math::lgamma(n + 1.0) - boost::math::lgamma(k + 1.0) -
           boost::math::lgamma(n - k + 1.0);
}

/// Regularized incomplete beta function I_x(a, b).
inline double inc_beta_reg(double x, double a, double b) {
    detail::require_not_nan(x, "inc_beta_reg");
    detail::require(x >= 0.0 && x <= 1.0, "inc_beta_reg: x outside [0, 1]");
    detail::require(a > 0.0 && b > 0.0, "inc_beta_reg: shape parameters must be positive");
    return boost::math::ibeta(a, b, x);
}

inline double beta_pdf(double x, double a, double b) {
    detail::require(a > 0.0 && b > 0.0, "beta_pdf: shape parameters must be positive");
    if (x <= 0.0 || x >= 1.0) return 0.0;
    return boost::math::ibeta_derivative(a, b, x);
}

/// Overloads taking the complement xc = 1 - x exactly; near 1 they work from
/// xc so a singular (1 - x)^(b - 1) factor keeps full precision.
inline double inc_beta_reg(double x, double xc, double a, double b) {
    if (x <= 0.5) return inc_beta_reg(x, a, b);
    detail::require_not_nan(xc, "inc_beta_reg");
    detail::require(xc >= 0.0, "inc_beta_reg: x outside [0, 1]");
    detail::require(a > 0.0 && b > 0.0, "inc_beta_reg: shape parameters must be positive");
    return boost::math::ibetac(b, a, xc);
}

inline double beta_pdf(double x, double xc, double a, double b) {
    if (x <= 0.5) return beta_pdf(x, a, b);
    return beta_pdf(xc, b, a);
}

// ---------------------------------------------------------------------------
// log-sum-exp

inline double logsumexp(std::span<const double> values) {
    detail::require(!values.empty(), "logsumexp: empty input");
    double hi = -kInf;
    for (double v : values) {
        detail::require_not_nan(v, "logsumexp");
        hi = std::max(hi, v);
    }
    if (std::isinf(hi)) return hi;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - hi);
    return hi + std::log(acc);
}

inline double logsumexp(std::initializer_list<double> values) {
    return logsumexp(std::span<const double>(values.begin(), values.size()));
}

// ---------------------------------------------------------------------------
// Adaptive Gauss-Kronrod quadrature

namespace detail {

struct QuadSegment {
    double lo, hi, value, error;
    bool operator<(const QuadSegment& other) const { return error < other.error; }
};

template <class F>
QuadSegment gauss_kronrod15(F& f, double lo, double hi) {
    using Kronrod = boost::math::quadrature::gauss_kronrod<double, 15>;
    using Gauss = boost::math::quadrature::gauss<double, 7>;
    static const auto& xk = Kronrod::abscissa();  // 8 nodes, xk[0] = 0
    static const auto& wk = Kronrod::weights();
    static const auto& wg = Gauss::weights();     // 4 weights on xk[0], xk[2], xk[4], xk[6]

    const double center = 0.5 * (lo + hi);
    const double half = 0.5 * (hi - lo);
    auto eval = [&](double x) {
        const double y = f(x);
        if (!std::isfinite(y)) throw InvalidArgument("adaptive_quad: integrand is not finite");
        return y;
    };

    const double f0 = eval(center);
    double kronrod = wk[0] * f0;
    double gauss = wg[0] * f0;
    for (std::size_t j = 1; j < xk.size(); ++j) {
        const double dx = half * xk[j];
        const double pair = eval(center - dx) + eval(center + dx);
        kronrod += wk[j] * pair;
        if (j % 2 == 0) gauss += wg[j / 2] * pair;
    }
    kronrod *= half;
    gauss *= half;
    return {lo, hi, kronrod, std::abs(kronrod - gauss)};
}

}  // namespace detail

/// Integrates f over [lo, hi] by adaptive Gauss-Kronrod (7/15) bisection of the
/// worst segment. Optional interior break points seed the initial partition,
/// which keeps narrow peaks from falling between the nodes of a single rule.
template <class F>
Estimate adaptive_quad(F&& f, double lo, double hi, const QuadSpec& spec = {},
                       std::span<const double> breaks = {}) {
    spec.validate();
    detail::require(std::isfinite(lo) && std::isfinite(hi) && lo < hi,
                    "adaptive_quad: need finite lo < hi");

    std::vector<double> points{lo};
    for (double b : breaks)
        if (b > lo && b < hi) points.push_back(b);
    points.push_back(hi);
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());

    std::priority_queue<detail::QuadSegment> queue;
    double value = 0.0;
    double error = 0.0;
    for (std::size_t k = 0; k + 1 < points.size(); ++k) {
        auto seg = detail::gauss_kronrod15(f, points[k], points[k + 1]);
        value += seg.value;
        error += seg.error;
        queue.push(seg);
    }

    auto target = [&] { return std::max(spec.abs_tol, spec.rel_tol * std::abs(value)); };
    int subdivisions = 0;
    while (error > target() && subdivisions < spec.max_subdivisions) {
        const auto worst = queue.top();
        queue.pop();
        const double mid = 0.5 * (worst.lo + worst.hi);
        if (mid <= worst.lo || mid >= worst.hi) {  // interval at machine resolution
            queue.push(worst);
            break;
        }
        const auto left = detail::gauss_kronrod15(f, worst.lo, mid);
        const auto right = detail::gauss_kronrod15(f, mid, worst.hi);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        queue.push(left);
        queue.push(right);
        ++subdivisions;
    }

    // Re-sum to shed the drift of the incremental updates.
    value = 0.0;
    error = 0.0;
    while (!queue.empty()) {
        value += queue.top().value;
        error += queue.top().error;
        queue.pop();
    }
    return {value, error, error <= target()};
}

/// Integrates over [0, 1]. The end pieces [0, delta] and [1 - delta, 1] use the
/// substitution t = u^2 (t = 1 - u^2) so integrable t^(s-1) endpoint
/// singularities with s < 1 stay tractable. An integrand callable as f(t, 1 - t)
/// receives the complement exactly, which it needs when singular at 1.
template <class F>
Estimate integrate_unit_interval(F&& f, const QuadSpec& spec = {},
                                 std::span<const double> breaks = {}) {
    constexpr double delta = 1e-8;
    const double root = std::sqrt(delta);
    auto g = [&](double t, double tc) {
        if constexpr (std::is_invocable_v<F&, double, double>) return f(t, tc);
        else return f(t);
    };
    auto left = adaptive_quad([&](double u) { return 2.0 * u * g(u * u, 1.0 - u * u); }, 0.0, root, spec);
    auto middle = adaptive_quad([&](double t) { return g(t, 1.0 - t); }, delta, 1.0 - delta, spec, breaks);
    auto right = adaptive_quad([&](double u) { return 2.0 * u * g(1.0 - u * u, u * u); }, 0.0, root, spec);
    return {left.value + middle.value + right.value, left.error + middle.error + right.error,
            left.converged && middle.converged && right.converged};
}

// ---------------------------------------------------------------------------
// Multivariate normal density

struct MvnSpec {
    Vector mean;
    Matrix cov;

    Eigen::Index dim() const { return mean.size(); }

    void validate() const {
        detail::require(mean.size() >= 1, "MvnSpec: dimension must be >= 1");
        detail::require(cov.rows() == mean.size() && cov.cols() == mean.size(),
                        "MvnSpec: covariance shape does not match mean");
        detail::require(mean.allFinite() && cov.allFinite(), "MvnSpec: non-finite entries");
        const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
        if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
            throw CovarianceError("MvnSpec: covariance is not symmetric");
    }
};

namespace detail {

inline Eigen::LLT<Matrix> cholesky(const Matrix& cov) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
        throw CovarianceError("covariance matrix is not positive definite");
    const auto diag = llt.matrixLLT().diagonal();
    if (!(diag.array() > 0.0).all() || !diag.allFinite())
        throw CovarianceError("covariance matrix is not positive definite");
    return llt;
}

}  // namespace detail

inline double mvn_logpdf(const Vector& x, const MvnSpec& spec) {
    spec.validate();
    detail::require(x.size() == spec.dim(), "mvn_logpdf: dimension mismatch");
    detail::require(!x.hasNaN(), "mvn_logpdf: NaN argument");
    const auto llt = detail::cholesky(spec.cov);
    const Vector z = llt.matrixL().solve(x - spec.mean);
    const double log_det_half = llt.matrixLLT().diagonal().array().log().sum();
    return -0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) - log_det_half -
           0.5 * z.squaredNorm();
}

}  // namespace brar
