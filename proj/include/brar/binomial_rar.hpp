#pragma once

// Exact point-null RAR for binary outcomes with independent beta slabs.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "brar/hypothesis.hpp"
#include "brar/numerics.hpp"

namespace brar {

/// Success counts y and trial counts n per arm, control first.
struct BinomialData {
    std::vector<int> y;
    std::vector<int> n;

    std::size_t arms() const { return y.size(); }

    void validate() const {
        detail::require(y.size() == n.size(), "BinomialData: y and n lengths differ");
        detail::require(y.size() >= 2, "BinomialData: need at least two arms");
        for (std::size_t a = 0; a < y.size(); ++a)
            detail::require(y[a] >= 0 && y[a] <= n[a], "BinomialData: need 0 <= y <= n");
    }
};

struct BetaPriorSet {
    double a0 = 1.0;
    double b0 = 1.0;
    std::vector<double> a;
    std::vector<double> b;

    static BetaPriorSet uniform(std::size_t arms) {
        return {1.0, 1.0, std::vector<double>(arms, 1.0), std::vector<double>(arms, 1.0)};
    }

    void validate(std::size_t arms) const {
        detail::require(a0 > 0.0 && b0 > 0.0, "BetaPriorSet: a0, b0 must be positive");
        detail::require(a.size() == arms && b.size() == arms,
                        "BetaPriorSet: a and b must match the arm count");
        for (std::size_t j = 0; j < arms; ++j)
            detail::require(a[j] > 0.0 && b[j] > 0.0 && std::isfinite(a[j]) && std::isfinite(b[j]),
                            "BetaPriorSet: shape parameters must be positive");
    }
};

/// log Pr(y | H0): all arms share one success probability ~ Beta(a0, b0).
inline double logml_null(const BinomialData& data, const BetaPriorSet& prior) {
    data.validate();
    prior.validate(data.arms());
    double out = 0.0;
    double ys = 0.0;
    double ns = 0.0;
    for (std::size_t j = 0; j < data.arms(); ++j) {
        out += log_binomial_coefficient(data.n[j], data.y[j]);
        ys += data.y[j];
        ns += data.n[j];
    }
    return out + log_beta(prior.a0 + ys, prior.b0 + ns - ys) - log_beta(prior.a0, prior.b0);
}

namespace detail {

inline bool is_small_integer(double x) { return x == std::floor(x) && x <= 1e6; }

/// Pr(X_i > X_j) for independent X_i ~ Beta(ai, bi), X_j ~ Beta(aj, bj) with
/// integer ai, as a finite sum of ai positive terms accumulated in log space.
inline double two_arm_exceedance(double ai, double bi, double aj, double bj) {
    double log_term = log_beta(aj, bi + bj) - std::log(bi) - log_beta(1.0, bi) - log_beta(aj, bj);
    double hi = log_term;
    double acc = 1.0;  // sum of exp(log_term_k - hi)
    const auto terms = static_cast<long>(ai);
    for (long k = 0; k + 1 < terms; ++k) {
        const double kd = static_cast<double>(k);
        log_term += std::log((aj + kd) / (aj + kd + bj + bi)) + std::log((bi + kd) / (bi + kd + 1.0)) +
                    std::log((kd + 1.0 + bi) / (kd + 1.0));
        if (log_term > hi) {
            acc = acc * std::exp(hi - log_term) + 1.0;
            hi = log_term;
        } else {
            acc += std::exp(log_term - hi);
        }
    }
    return std::min(1.0, std::exp(hi + std::log(acc)));
}

}  // namespace detail

/// Probability that arm i has the largest success probability when arm j's
/// probability is Beta(a[j], b[j]), independently across arms:
///   Q_i = int_0^1 beta_pdf(t; a_i, b_i) prod_{j != i} I_t(a_j, b_j) dt.
/// Two arms with integer a_i use an exact finite sum; otherwise the integral is
/// evaluated by adaptive quadrature seeded with break points around the mode
/// of arm i's density.
inline Estimate q_max_prob(std::span<const double> a, std::span<const double> b, std::size_t i,
                           const QuadSpec& quad = {}) {
    detail::require(a.size() == b.size() && a.size() >= 2, "q_max_prob: need >= 2 arms");
    detail::require(i < a.size(), "q_max_prob: arm index out of range");
    for (std::size_t j = 0; j < a.size(); ++j)
        detail::require(a[j] > 0.0 && b[j] > 0.0, "q_max_prob: shape parameters must be positive");

    if (a.size() == 2 && detail::is_small_integer(a[i])) {
        const std::size_t j = 1 - i;
        return {detail::two_arm_exceedance(a[i], b[i], a[j], b[j]), 0.0, true};
    }

    auto integrand = [&](double t, double tc) {
        double v = beta_pdf(t, tc, a[i], b[i]);
        for (std::size_t j = 0; j < a.size() && v > 0.0; ++j)
            if (j != i) v *= inc_beta_reg(t, tc, a[j], b[j]);
        return v;
    };
    const double s = a[i] + b[i];
    const double mean = a[i] / s;
    const double sd = std::sqrt(a[i] * b[i] / (s * s * (s + 1.0)));
    std::vector<double> breaks;
    for (double m : {-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0}) breaks.push_back(mean + m * sd);
    auto est = integrate_unit_interval(integrand, quad, breaks);
    est.value = std::clamp(est.value, 0.0, 1.0);
    return est;
}

namespace detail {

inline void posterior_shapes(const BinomialData& data, const BetaPriorSet& prior,
                             std::vector<double>& a, std::vector<double>& b) {
    a.resize(data.arms());
    b.resize(data.arms());
    for (std::size_t j = 0; j < data.arms(); ++j) {
        a[j] = prior.a[j] + data.y[j];
        b[j] = prior.b[j] + data.n[j] - data.y[j];
    }
}

}  // namespace detail

/// log Pr(y | arm i is best): product of independent beta-binomial marginals
/// times the posterior-to-prior ratio of Q_i. Arm 0 (control) gives H-.
inline Estimate logml_directional(const BinomialData& data, const BetaPriorSet& prior, std::size_t i,
                                  const QuadSpec& quad = {}) {
    data.validate();
    prior.validate(data.arms());
    detail::require(i < data.arms(), "logml_directional: arm index out of range");

    double independent = 0.0;
    for (std::size_t j = 0; j < data.arms(); ++j)
        independent += log_binomial_coefficient(data.n[j], data.y[j]) +
                       log_beta(prior.a[j] + data.y[j], prior.b[j] + data.n[j] - data.y[j]) -
                       log_beta(prior.a[j], prior.b[j]);

    const auto q_prior = q_max_prob(prior.a, prior.b, i, quad);
    if (q_prior.value <= 0.0)
        throw DegeneratePrior("logml_directional: arm " + std::to_string(i) +
                              " can never be the maximum under its prior");
    std::vector<double> a, b;
    detail::posterior_shapes(data, prior, a, b);
    const auto q_post = q_max_prob(a, b, i, quad);
    return {independent + std::log(q_post.value) - std::log(q_prior.value),
            q_post.error / std::max(q_post.value, 1e-300) + q_prior.error / q_prior.value,
            q_prior.converged && q_post.converged};
}

struct BinomialRarResult {
    PriorWeights prior;
    EvidenceSummary evidence;
    AllocationVector allocation;
    bool converged = true;
};

/// Prior hypothesis weights: (1 - p_null) * Q_i at the prior shapes,
/// renormalized so the directional weights sum to exactly 1 - p_null.
inline PriorWeights binomial_prior_weights(const BetaPriorSet& prior, double p_null,
                                           const QuadSpec& quad = {}) {
    std::vector<double> region(prior.a.size());
    double total = 0.0;
    for (std::size_t i = 0; i < region.size(); ++i) {
        region[i] = q_max_prob(prior.a, prior.b, i, quad).value;
        total += region[i];
    }
    for (double& r : region) r /= total;
    return default_prior_weights(p_null, region);
}

/// End-to-end exact point-null RAR. `baseline` replaces equal randomization as
/// the shrinkage target when given.
inline BinomialRarResult brar_binomial(const BinomialData& data, const BetaPriorSet& prior, double p_null,
                                       const QuadSpec& quad = {},
                                       const std::optional<AllocationVector>& baseline = {}) {
    data.validate();
    prior.validate(data.arms());
    detail::require(p_null >= 0.0 && p_null <= 1.0, "brar_binomial: p_null outside [0, 1]");

    BinomialRarResult out;
    out.prior = binomial_prior_weights(prior, p_null, quad);

    std::vector<double> log_ml(data.arms() + 1);
    log_ml[1] = logml_null(data, prior);
    for (std::size_t i = 0; i < data.arms(); ++i) {
        const auto lm = logml_directional(data, prior, i, quad);
        out.converged = out.converged && lm.converged;
        log_ml[i == 0 ? 0 : i + 1] = lm.value;
    }
    out.evidence = posterior_from_logml(std::move(log_ml), out.prior);
    out.allocation = baseline ? allocation_baseline_shrink(out.evidence, *baseline)
                              : allocation_equal_shrink(out.evidence, data.arms() - 1);
    return out;
}

}  // namespace brar
