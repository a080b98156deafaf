#pragma once

// Frequentist estimates feeding the normal engine and the simulation metrics.

#include <cmath>

#include "brar/binomial_rar.hpp"
#include "brar/normal_rar.hpp"

namespace brar {

struct GlmFit {
    Vector coef;  // intercept (control log-odds), then log odds ratios vs control
    Matrix cov;
    bool converged = false;
    int iterations = 0;

    /// Treatment log odds ratios and their covariance, as normal-engine input.
    MultiEffectEstimate treatment_effects() const {
        const Eigen::Index k = coef.size() - 1;
        return {coef.tail(k), cov.bottomRightCorner(k, k)};
    }
};

struct IrlsOptions {
    int max_iterations = 25;
    double score_tol = 1e-8;
    double separation_eps = 1e-8;
};

/// Logistic regression of success on arm indicators (control = reference),
/// fitted by iteratively reweighted least squares on the grouped counts.
/// Non-convergence is reported, not thrown: an arm without patients, a fitted
/// probability within `separation_eps` of 0 or 1, or a score that is still
/// above tolerance after the iteration cap all give converged = false.
inline GlmFit logistic_fit(const BinomialData& data, const IrlsOptions& opt = {}) {
    data.validate();
    const auto m = static_cast<Eigen::Index>(data.arms());

    GlmFit fit;
    fit.coef = Vector::Zero(m);
    fit.cov = Matrix::Zero(m, m);
    for (int n : data.n)
        if (n == 0) return fit;

    Matrix x = Matrix::Zero(m, m);
    x.col(0).setOnes();
    for (Eigen::Index a = 1; a < m; ++a) x(a, a) = 1.0;
    Vector y(m), n(m);
    for (Eigen::Index a = 0; a < m; ++a) {
        y(a) = data.y[static_cast<std::size_t>(a)];
        n(a) = data.n[static_cast<std::size_t>(a)];
    }

    Vector beta = Vector::Zero(m);
    auto fitted = [&](const Vector& b) {
        const Vector eta = x * b;
        return Vector((1.0 + (-eta.array()).exp()).inverse());
    };

    Matrix info(m, m);
    for (int it = 1; it <= opt.max_iterations; ++it) {
        const Vector p = fitted(beta);
        const Vector w = (n.array() * p.array() * (1.0 - p.array())).matrix();
        info = x.transpose() * w.asDiagonal() * x;
        const Vector score = x.transpose() * (y - n.cwiseProduct(p));
        fit.iterations = it;
        if (score.cwiseAbs().maxCoeff() < opt.score_tol) break;
        Eigen::LDLT<Matrix> solver(info);
        if (solver.info() != Eigen::Success || !solver.isPositive()) return fit;
        beta += solver.solve(score);
        if (!beta.allFinite()) return fit;
    }

    const Vector p = fitted(beta);
    const Vector w = (n.array() * p.array() * (1.0 - p.array())).matrix();
    info = x.transpose() * w.asDiagonal() * x;
    const Vector score = x.transpose() * (y - n.cwiseProduct(p));
    fit.coef = beta;
    const bool separated =
        (p.array() < opt.separation_eps).any() || (p.array() > 1.0 - opt.separation_eps).any();
    if (separated || score.cwiseAbs().maxCoeff() >= opt.score_tol) return fit;

    Eigen::LLT<Matrix> llt(info);
    if (llt.info() != Eigen::Success) return fit;
    fit.cov = llt.solve(Matrix::Identity(m, m));
    fit.converged = fit.cov.allFinite();
    return fit;
}

/// Log odds ratio (treatment vs control) with 0.5 added to every cell of the
/// 2x2 table, and its standard error sqrt(sum 1 / cell).
inline EffectEstimate yates_log_or(const BinomialData& data) {
    data.validate();
    detail::require(data.arms() == 2, "yates_log_or: need exactly two arms");
    const double ts = data.y[1] + 0.5;
    const double tf = data.n[1] - data.y[1] + 0.5;
    const double cs = data.y[0] + 0.5;
    const double cf = data.n[0] - data.y[0] + 0.5;
    return {std::log(ts * cf / (tf * cs)), std::sqrt(1.0 / ts + 1.0 / tf + 1.0 / cs + 1.0 / cf)};
}

struct WaldResult {
    double estimate = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    bool reject = false;
    bool degenerate = false;  // se == 0: interval collapses to the point estimate
};

/// Wald analysis of the rate difference y_t/n_t - y_c/n_c: two-sided
/// (1 - alpha) interval and a one-sided upper-tail test at level alpha / 2.
inline WaldResult rate_diff_wald(int y_t, int n_t, int y_c, int n_c, double alpha = 0.05) {
    detail::require(n_t >= 1 && n_c >= 1, "rate_diff_wald: need at least one patient per arm");
    detail::require(y_t >= 0 && y_t <= n_t && y_c >= 0 && y_c <= n_c, "rate_diff_wald: need 0 <= y <= n");
    detail::require(alpha > 0.0 && alpha < 1.0, "rate_diff_wald: alpha outside (0, 1)");

    const double pt = static_cast<double>(y_t) / n_t;
    const double pc = static_cast<double>(y_c) / n_c;
    WaldResult r;
    r.estimate = pt - pc;
    r.se = std::sqrt(pt * (1.0 - pt) / n_t + pc * (1.0 - pc) / n_c);
    const double z = norm_quantile(1.0 - alpha / 2.0);
    r.ci_lo = r.estimate - z * r.se;
    r.ci_hi = r.estimate + z * r.se;
    if (r.se == 0.0) {
        // Only possible when both observed rates are 0 or 1.
        r.degenerate = true;
        r.reject = r.estimate > 0.0;
        return r;
    }
    r.reject = r.estimate / r.se > z;
    return r;
}

}  // namespace brar
