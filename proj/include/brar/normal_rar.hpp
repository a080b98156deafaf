#pragma once

// Point-null RAR for approximately normal effect estimates: closed forms for
// one treatment, truncated multivariate normal orthant ratios for K > 1.

#include <optional>
#include <string>
#include <vector>

#include "brar/hypothesis.hpp"
#include "brar/mvn.hpp"
#include "brar/rng.hpp"

namespace brar {

struct EffectEstimate {
    double theta_hat = 0.0;
    double se = 1.0;

    void validate() const {
        detail::require(std::isfinite(theta_hat) && std::isfinite(se) && se > 0.0,
                        "EffectEstimate: need finite theta_hat and se > 0");
    }
};

struct NormalPrior {
    double mu = 0.0;
    double tau = 1.0;

    void validate() const {
        detail::require(std::isfinite(mu) && std::isfinite(tau) && tau > 0.0,
                        "NormalPrior: need finite mu and tau > 0");
    }
};

struct PosteriorMoments {
    double mu_star;
    double tau_star;
};

inline PosteriorMoments two_group_posterior_moments(const EffectEstimate& est, const NormalPrior& prior) {
    est.validate();
    prior.validate();
    const double prec_data = 1.0 / (est.se * est.se);
    const double prec_prior = 1.0 / (prior.tau * prior.tau);
    const double var = 1.0 / (prec_data + prec_prior);
    return {var * (est.theta_hat * prec_data + prior.mu * prec_prior), std::sqrt(var)};
}

/// Log marginal likelihoods (H-, H0, H+) of a single effect estimate under the
/// spike-and-slab prior with slab N(mu, tau^2) truncated to each half-line.
inline std::vector<double> two_group_logml(const EffectEstimate& est, const NormalPrior& prior) {
    const auto post = two_group_posterior_moments(est, prior);
    const double s2 = est.se * est.se;
    const double base = norm_log_pdf(est.theta_hat, prior.mu, s2 + prior.tau * prior.tau);
    const double z_post = post.mu_star / post.tau_star;
    const double z_prior = prior.mu / prior.tau;
    return {base + log_norm_cdf(-z_post) - log_norm_cdf(-z_prior),
            norm_log_pdf(est.theta_hat, 0.0, s2),
            base + log_norm_cdf(z_post) - log_norm_cdf(z_prior)};
}

/// Prior weights for (H-, H0, H+) that average back to the untruncated slab.
inline PriorWeights two_group_prior_weights(const NormalPrior& prior, double p_null) {
    prior.validate();
    const double z = prior.mu / prior.tau;
    const std::vector<double> region{norm_cdf(-z), norm_cdf(z)};
    return default_prior_weights(p_null, region);
}

inline EvidenceSummary two_group_evidence(const EffectEstimate& est, const NormalPrior& prior,
                                          double p_null) {
    return posterior_from_logml(two_group_logml(est, prior), two_group_prior_weights(prior, p_null));
}

inline AllocationVector two_group_allocation(const EffectEstimate& est, const NormalPrior& prior,
                                             double p_null) {
    return allocation_equal_shrink(two_group_evidence(est, prior, p_null), 1);
}

// ---------------------------------------------------------------------------
// K treatments

struct MultiEffectEstimate {
    Vector theta_hat;
    Matrix cov;

    Eigen::Index treatments() const { return theta_hat.size(); }

    void validate() const {
        MvnSpec{theta_hat, cov}.validate();
        detail::cholesky(cov);
    }
};

struct MvnPrior {
    Vector mean;
    Matrix cov;

    /// Unit-variance slab with common correlation rho; rho = 0.5 gives every
    /// directional hypothesis the same prior mass when the mean is zero.
    static MvnPrior equicorrelated(Eigen::Index treatments, double var = 1.0, double rho = 0.5,
                                   double mean = 0.0) {
        detail::require(treatments >= 1, "MvnPrior: need K >= 1");
        MvnPrior p{Vector::Constant(treatments, mean), Matrix::Constant(treatments, treatments, rho * var)};
        p.cov.diagonal().setConstant(var);
        return p;
    }

    void validate() const {
        MvnSpec{mean, cov}.validate();
        detail::cholesky(cov);
    }
};

struct MultiPosteriorMoments {
    Vector mean;
    Matrix cov;
};

/// mean* = T*(S^-1 theta_hat + T^-1 mu), T* = (S^-1 + T^-1)^-1, evaluated in
/// the equivalent form T* = T - T (S + T)^-1 T which needs a single solve.
inline MultiPosteriorMoments multi_group_posterior_moments(const MultiEffectEstimate& est,
                                                           const MvnPrior& prior) {
    const auto llt = detail::cholesky(est.cov + prior.cov);
    const Matrix gain = llt.solve(prior.cov).transpose();  // T (S + T)^-1
    Matrix cov = prior.cov - gain * prior.cov;
    cov = 0.5 * (cov + cov.transpose()).eval();
    return {prior.mean + gain * (est.theta_hat - prior.mean), cov};
}

/// Contrast matrix mapping H+i onto the negative orthant: the first row is
/// -e_i (theta_i > 0), then one row e_j - e_i per j != i (theta_i > theta_j).
inline Eigen::MatrixXi contrast_matrix(int i, int treatments) {
    detail::require(treatments >= 1 && i >= 1 && i <= treatments,
                    "contrast_matrix: index out of range");
    Eigen::MatrixXi a = Eigen::MatrixXi::Zero(treatments, treatments);
    a(0, i - 1) = -1;
    int row = 1;
    for (int j = 1; j <= treatments; ++j) {
        if (j == i) continue;
        a(row, j - 1) = 1;
        a(row, i - 1) = -1;
        ++row;
    }
    return a;
}

struct NormalEngineOptions {
    std::uint64_t seed = 0;
    double mvn_tol = 1e-6;
};

/// Log marginal likelihoods together with the orthant probabilities they were
/// built from. `region_prior` holds the untruncated-slab probability of each
/// directional region, ordered (Minus, Plus1..PlusK).
struct MultiGroupLogml {
    std::vector<double> log_ml;
    std::vector<double> region_prior;
    std::vector<std::string> warnings;
    bool converged = true;
};

/// Regions whose prior orthant probability falls below this are treated as
/// impossible: log-ml -inf and prior weight 0.
inline constexpr double kRegionUnderflow = 1e-300;

inline MultiGroupLogml multi_group_logml(const MultiEffectEstimate& est, const MvnPrior& prior,
                                         const NormalEngineOptions& opt = {}) {
    est.validate();
    prior.validate();
    const Eigen::Index k = est.treatments();
    detail::require(prior.mean.size() == k, "multi_group_logml: prior dimension mismatch");

    MultiGroupLogml out;
    if (k == 1) {
        const EffectEstimate e{est.theta_hat(0), std::sqrt(est.cov(0, 0))};
        const NormalPrior p{prior.mean(0), std::sqrt(prior.cov(0, 0))};
        out.log_ml = two_group_logml(e, p);
        const double z = p.mu / p.tau;
        out.region_prior = {norm_cdf(-z), norm_cdf(z)};
        return out;
    }

    const auto post = multi_group_posterior_moments(est, prior);
    const double base = mvn_logpdf(est.theta_hat, {prior.mean, est.cov + prior.cov});
    const double null = mvn_logpdf(est.theta_hat, {Vector::Zero(k), est.cov});
    const Vector zero = Vector::Zero(k);

    auto region = [&](const Matrix& a, std::uint64_t tag) {
        MvnCdfOptions o;
        o.tol = opt.mvn_tol;
        o.seed = derive_seed(opt.seed, 2 * tag);
        const auto p_prior = mvn_cdf(zero, {a * prior.mean, a * prior.cov * a.transpose()}, o);
        o.seed = derive_seed(opt.seed, 2 * tag + 1);
        const auto p_post = mvn_cdf(zero, {a * post.mean, a * post.cov * a.transpose()}, o);
        if (!p_prior.converged || !p_post.converged) {
            out.converged = false;
            out.warnings.push_back("orthant probability for region " + std::to_string(tag) +
                                   " did not reach tolerance");
        }
        out.region_prior.push_back(p_prior.value);
        if (p_prior.value < kRegionUnderflow) {
            out.warnings.push_back("prior orthant probability for region " + std::to_string(tag) +
                                   " underflows; hypothesis dropped");
            return -kInf;
        }
        return base + std::log(p_post.value) - std::log(p_prior.value);
    };

    out.log_ml.resize(static_cast<std::size_t>(k) + 2);
    out.log_ml[0] = region(Matrix::Identity(k, k), 0);
    out.log_ml[1] = null;
    for (int i = 1; i <= k; ++i)
        out.log_ml[static_cast<std::size_t>(i) + 1] =
            region(contrast_matrix(i, static_cast<int>(k)).cast<double>(), static_cast<std::uint64_t>(i));
    return out;
}

struct NormalRarResult {
    PriorWeights prior;
    EvidenceSummary evidence;
    AllocationVector allocation;
    std::vector<std::string> warnings;
    bool converged = true;
};

/// Evidence and allocation for K >= 1 normal effect estimates. Region priors
/// are the slab's orthant probabilities (renormalized to absorb Monte Carlo
/// noise; underflowing regions get weight 0). `baseline` replaces equal
/// randomization as the shrinkage target when given.
inline NormalRarResult multi_group_allocation(const MultiEffectEstimate& est, const MvnPrior& prior,
                                              double p_null, const NormalEngineOptions& opt = {},
                                              const std::optional<AllocationVector>& baseline = {}) {
    detail::require(p_null >= 0.0 && p_null <= 1.0, "multi_group_allocation: p_null outside [0, 1]");
    auto logml = multi_group_logml(est, prior, opt);

    std::vector<double> region = logml.region_prior;
    double total = 0.0;
    for (std::size_t r = 0; r < region.size(); ++r) {
        if (region[r] < kRegionUnderflow) region[r] = 0.0;
        total += region[r];
    }
    detail::require(total > 0.0, "multi_group_allocation: slab prior has no mass");
    for (double& r : region) r /= total;

    NormalRarResult out;
    out.prior = default_prior_weights(p_null, region);
    out.evidence = posterior_from_logml(std::move(logml.log_ml), out.prior);
    out.allocation = baseline ? allocation_baseline_shrink(out.evidence, *baseline)
                              : allocation_equal_shrink(out.evidence, static_cast<std::size_t>(est.treatments()));
    out.warnings = std::move(logml.warnings);
    out.converged = logml.converged;
    return out;
}

}  // namespace brar
