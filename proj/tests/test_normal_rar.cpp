#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "brar/normal_rar.hpp"
#include "oracles.hpp"

using namespace brar;

namespace {

MultiEffectEstimate diag_estimate(std::initializer_list<double> theta, double var) {
    MultiEffectEstimate e;
    e.theta_hat = Eigen::Map<const Vector>(theta.begin(), static_cast<Eigen::Index>(theta.size()));
    e.cov = Matrix::Identity(e.theta_hat.size(), e.theta_hat.size()) * var;
    return e;
}

}  // namespace

TEST(TwoGroup, LogmlAgainstQuadrature) {
    const auto lm = two_group_logml({0.3, 0.15}, {0.0, 1.0});
    const auto q = oracle::two_group_ml(0.3, 0.15, 0.0, 1.0);
    EXPECT_NEAR(lm[0], std::log(q.minus), 1e-8);
    EXPECT_NEAR(lm[1], std::log(q.null), 1e-12);
    EXPECT_NEAR(lm[2], std::log(q.plus), 1e-8);
    // Frozen from the quadrature oracle.
    EXPECT_NEAR(lm[0], -4.011814656800923, 1e-9);
    EXPECT_NEAR(lm[1], -1.021818548318791, 1e-9);
    EXPECT_NEAR(lm[2], -0.305189964471463, 1e-9);
}

TEST(TwoGroup, ZeroEstimateIsSymmetric) {
    const auto lm = two_group_logml({0.0, 0.4}, {0.0, 0.7});
    EXPECT_NEAR(lm[0], lm[2], 1e-14);
    const auto s = two_group_evidence({0.0, 0.4}, {0.0, 0.7}, 0.3);
    EXPECT_NEAR(s.posterior[0], s.posterior[2], 1e-14);
    EXPECT_NEAR(two_group_allocation({0.0, 0.4}, {0.0, 0.7}, 0.3)[1], 0.5, 1e-14);
}

TEST(TwoGroup, PosteriorAndAllocation) {
    const auto s = two_group_evidence({0.5, 0.2}, {0.0, 1.0}, 0.5);
    // Frozen from the quadrature oracle.
    EXPECT_NEAR(s.posterior[0], 0.005679222074979, 1e-10);
    EXPECT_NEAR(s.posterior[1], 0.201690918529299, 1e-10);
    EXPECT_NEAR(s.posterior[2], 0.792629859395721, 1e-10);
    const auto q = oracle::two_group_ml(0.5, 0.2, 0.0, 1.0);
    const double denom = 0.25 * q.minus + 0.5 * q.null + 0.25 * q.plus;
    EXPECT_NEAR(s.posterior[2], 0.25 * q.plus / denom, 1e-9);
    const auto a = two_group_allocation({0.5, 0.2}, {0.0, 1.0}, 0.5);
    EXPECT_NEAR(a[1], 0.893475318660371, 1e-10);
    EXPECT_NEAR(a[1], s.posterior[2] + 0.5 * s.posterior[1], 1e-15);
}

TEST(TwoGroup, QuadratureOracleRandomCases) {
    std::mt19937_64 gen(51);
    std::normal_distribution<double> z;
    for (int k = 0; k < 40; ++k) {
        const double th = z(gen), se = std::exp(0.5 * z(gen) - 1.0), mu = 0.3 * z(gen), tau = std::exp(0.4 * z(gen));
        const auto lm = two_group_logml({th, se}, {mu, tau});
        const auto q = oracle::two_group_ml(th, se, mu, tau);
        EXPECT_NEAR(std::exp(lm[0]) / q.minus, 1.0, 1e-6) << th << " " << se << " " << mu << " " << tau;
        EXPECT_NEAR(std::exp(lm[2]) / q.plus, 1.0, 1e-6);
    }
}

TEST(TwoGroup, MixtureMarginalConsistency) {
    // Weighted directional marginals add back to the untruncated slab marginal.
    for (double th : {-0.8, 0.0, 0.35, 1.7}) {
        const EffectEstimate e{th, 0.3};
        const NormalPrior p{0.2, 0.8};
        const double p0 = 0.4;
        const auto lm = two_group_logml(e, p);
        const auto w = two_group_prior_weights(p, p0);
        const double mixture = w.p_minus * std::exp(lm[0]) + w.p_null * std::exp(lm[1]) + w.p_plus[0] * std::exp(lm[2]);

        boost::math::quadrature::tanh_sinh<double> ts;
        boost::math::quadrature::exp_sinh<double> es;
        auto joint = [&](double t) { return oracle::norm_pdf(th, t, 0.09) * oracle::norm_pdf(t, 0.2, 0.64); };
        const double slab = ts.integrate(joint, -1.0, 1.0) + es.integrate([&](double t) { return joint(1.0 + t); }, 0.0, kInf) +
                            es.integrate([&](double t) { return joint(-1.0 - t); }, 0.0, kInf);
        const double direct = p0 * oracle::norm_pdf(th, 0.0, 0.09) + (1 - p0) * slab;
        EXPECT_NEAR(mixture / direct, 1.0, 1e-6) << th;
    }
}

TEST(TwoGroup, LimitLaws) {
    std::mt19937_64 gen(52);
    std::normal_distribution<double> z;
    for (int k = 0; k < 100; ++k) {
        const EffectEstimate e{z(gen), std::exp(0.5 * z(gen))};
        const NormalPrior p{0.5 * z(gen), std::exp(0.3 * z(gen))};
        EXPECT_EQ(two_group_allocation(e, p, 1.0)[1], 0.5);
        const auto m = two_group_posterior_moments(e, p);
        EXPECT_NEAR(two_group_allocation(e, p, 0.0)[1], norm_cdf(m.mu_star / m.tau_star), 1e-9);
    }
}

TEST(TwoGroup, AllocationIncreasesWithEstimate) {
    double prev = 0.0;
    for (double th = -3.0; th <= 3.0; th += 0.05) {
        const double a = two_group_allocation({th, 0.5}, {0.0, 1.0}, 0.5)[1];
        EXPECT_GE(a, prev);
        prev = a;
    }
}

TEST(TwoGroup, PosteriorMomentIdentities) {
    const auto m = two_group_posterior_moments({0.4, 0.3}, {0.1, 0.6});
    const double prec = 1 / 0.09 + 1 / 0.36;
    EXPECT_NEAR(m.tau_star * m.tau_star, 1 / prec, 1e-14);
    EXPECT_NEAR(m.mu_star, (0.4 / 0.09 + 0.1 / 0.36) / prec, 1e-14);
}

TEST(TwoGroup, InvalidInput) {
    EXPECT_THROW(two_group_logml({0.1, 0.0}, {0, 1}), InvalidArgument);
    EXPECT_THROW(two_group_logml({0.1, 1.0}, {0, -1}), InvalidArgument);
    EXPECT_THROW(two_group_evidence({0.1, 1.0}, {0, 1}, 1.5), InvalidArgument);
}

TEST(MultiGroup, PosteriorMomentIdentities) {
    MultiEffectEstimate e;
    e.theta_hat = Vector::LinSpaced(3, -0.2, 0.6);
    e.cov = Matrix::Identity(3, 3) * 0.05;
    e.cov(0, 1) = e.cov(1, 0) = 0.01;
    const auto prior = MvnPrior::equicorrelated(3, 1.0, 0.5, 0.1);
    const auto m = multi_group_posterior_moments(e, prior);
    const Matrix prec = e.cov.inverse() + prior.cov.inverse();
    EXPECT_LE((m.cov - prec.inverse()).cwiseAbs().maxCoeff(), 1e-12);
    const Vector mean = prec.inverse() * (e.cov.inverse() * e.theta_hat + prior.cov.inverse() * prior.mean);
    EXPECT_LE((m.mean - mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MultiGroup, ContrastMatrix) {
    Eigen::MatrixXi expect(3, 3);
    expect << 0, -1, 0, 1, -1, 0, 0, -1, 1;
    EXPECT_EQ(contrast_matrix(2, 3), expect);
    EXPECT_THROW(contrast_matrix(0, 3), InvalidArgument);
    EXPECT_THROW(contrast_matrix(4, 3), InvalidArgument);
}

TEST(MultiGroup, ContrastRegionMatchesDefinition) {
    std::mt19937_64 gen(53);
    std::normal_distribution<double> z;
    for (int n = 0; n < 10000; ++n) {
        Vector t(3);
        for (int i = 0; i < 3; ++i) t(i) = z(gen);
        for (int i = 1; i <= 3; ++i) {
            const bool in_orthant = ((contrast_matrix(i, 3).cast<double>() * t).array() <= 0.0).all();
            Eigen::Index arg;
            const double top = t.maxCoeff(&arg);
            EXPECT_EQ(in_orthant, top > 0 && arg == i - 1);
        }
    }
}

TEST(MultiGroup, SingleTreatmentReducesToTwoGroup) {
    std::mt19937_64 gen(54);
    std::normal_distribution<double> z;
    for (int k = 0; k < 50; ++k) {
        const double th = z(gen), se = std::exp(0.4 * z(gen)), mu = 0.3 * z(gen), tau = std::exp(0.3 * z(gen));
        MultiEffectEstimate e{Vector::Constant(1, th), Matrix::Constant(1, 1, se * se)};
        MvnPrior p{Vector::Constant(1, mu), Matrix::Constant(1, 1, tau * tau)};
        const auto multi = multi_group_allocation(e, p, 0.3);
        const auto two = two_group_evidence({th, se}, {mu, tau}, 0.3);
        for (std::size_t h = 0; h < 3; ++h) EXPECT_NEAR(multi.evidence.posterior[h], two.posterior[h], 1e-9);
    }
}

TEST(MultiGroup, ImportanceSamplingOracle) {
    const auto e = diag_estimate({0.3, 0.1}, 0.04);
    const auto prior = MvnPrior::equicorrelated(2);
    const auto lm = multi_group_logml(e, prior, {.seed = 1});
    const auto is = oracle::multi_group_logml_is(e.theta_hat, e.cov, prior.mean, prior.cov, 1'000'000, 99);
    const std::size_t map[] = {0, 2, 3};
    for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(lm.log_ml[map[r]], is[r].value, 4 * is[r].se) << r;
    // Frozen from the first build, matched against the estimator above.
    EXPECT_NEAR(lm.log_ml[0], -4.49670657, 1e-6);
    EXPECT_NEAR(lm.log_ml[1], 0.13099876, 1e-6);
    EXPECT_NEAR(lm.log_ml[2], -0.99513153, 1e-6);
    EXPECT_NEAR(lm.log_ml[3], -2.12046328, 1e-6);
}

TEST(MultiGroup, ThreeTreatmentImportanceSampling) {
    const auto e = diag_estimate({0.25, -0.1, 0.05}, 0.03);
    const auto prior = MvnPrior::equicorrelated(3);
    const auto lm = multi_group_logml(e, prior, {.seed = 4});
    EXPECT_TRUE(lm.converged);
    const auto is = oracle::multi_group_logml_is(e.theta_hat, e.cov, prior.mean, prior.cov, 1'000'000, 98);
    const std::size_t map[] = {0, 2, 3, 4};
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(lm.log_ml[map[r]], is[r].value, 4 * is[r].se + 1e-5) << r;
}

TEST(MultiGroup, EquicorrelatedSlabGivesEqualRegionMass) {
    for (int k : {2, 3, 4}) {
        const MultiEffectEstimate e{Vector::Constant(k, 0.1), Matrix::Identity(k, k) * 0.1};
        const auto r = multi_group_allocation(e, MvnPrior::equicorrelated(k), 0.2);
        const double each = 0.8 / (k + 1);
        EXPECT_NEAR(r.prior.p_minus, each, k == 2 ? 1e-12 : 1e-5);
        for (double w : r.prior.p_plus) EXPECT_NEAR(w, each, k == 2 ? 1e-12 : 1e-5);
    }
}

TEST(MultiGroup, ZeroEstimateIsSymmetricAcrossTreatments) {
    const auto r2 = multi_group_allocation(diag_estimate({0.0, 0.0}, 0.05), MvnPrior::equicorrelated(2), 0.5);
    EXPECT_NEAR(r2.evidence.posterior[2], r2.evidence.posterior[3], 1e-14);
    const auto r3 = multi_group_allocation(diag_estimate({0.0, 0.0, 0.0}, 0.05), MvnPrior::equicorrelated(3), 0.5);
    EXPECT_NEAR(r3.evidence.posterior[2], r3.evidence.posterior[3], 1e-5);
    EXPECT_NEAR(r3.evidence.posterior[3], r3.evidence.posterior[4], 1e-5);
}

TEST(MultiGroup, PermutationEquivariance) {
    MultiEffectEstimate e;
    e.theta_hat = Vector(2);
    e.theta_hat << 0.35, -0.05;
    e.cov = Matrix(2, 2);
    e.cov << 0.04, 0.01, 0.01, 0.06;
    MultiEffectEstimate swapped;
    swapped.theta_hat = Vector(2);
    swapped.theta_hat << -0.05, 0.35;
    swapped.cov = Matrix(2, 2);
    swapped.cov << 0.06, 0.01, 0.01, 0.04;
    const auto a = multi_group_allocation(e, MvnPrior::equicorrelated(2), 0.4);
    const auto b = multi_group_allocation(swapped, MvnPrior::equicorrelated(2), 0.4);
    EXPECT_NEAR(a.allocation[0], b.allocation[0], 1e-8);
    EXPECT_NEAR(a.allocation[1], b.allocation[2], 1e-8);
    EXPECT_NEAR(a.allocation[2], b.allocation[1], 1e-8);

    const auto e3 = diag_estimate({0.3, 0.1, -0.2}, 0.05);
    const auto p3 = diag_estimate({-0.2, 0.3, 0.1}, 0.05);
    const auto x = multi_group_allocation(e3, MvnPrior::equicorrelated(3), 0.4, {.seed = 1});
    const auto y = multi_group_allocation(p3, MvnPrior::equicorrelated(3), 0.4, {.seed = 2});
    EXPECT_NEAR(x.allocation[1], y.allocation[2], 1e-9);
    EXPECT_NEAR(x.allocation[2], y.allocation[3], 1e-9);
    EXPECT_NEAR(x.allocation[3], y.allocation[1], 1e-9);
}

TEST(MultiGroup, LimitLaws) {
    const auto e = diag_estimate({0.2, 0.4, -0.1}, 0.04);
    const auto eq = multi_group_allocation(e, MvnPrior::equicorrelated(3), 1.0);
    for (double p : eq.allocation.probs) EXPECT_EQ(p, 0.25);
    const auto pure = multi_group_allocation(e, MvnPrior::equicorrelated(3), 0.0);
    EXPECT_NEAR(pure.allocation[0], pure.evidence.posterior[0], 1e-15);
    for (std::size_t i = 1; i <= 3; ++i) EXPECT_NEAR(pure.allocation[i], pure.evidence.posterior[i + 1], 1e-15);
}

TEST(MultiGroup, BaselineOverride) {
    const auto e = diag_estimate({0.0, 0.0}, 0.04);
    const auto r = multi_group_allocation(e, MvnPrior::equicorrelated(2), 1.0, {}, dunnett_baseline(2));
    EXPECT_EQ(r.allocation.probs, dunnett_baseline(2).probs);
}

TEST(MultiGroup, UnderflowingRegionIsDropped) {
    MvnPrior p{Vector::Constant(2, -40.0), Matrix::Identity(2, 2)};
    const auto r = multi_group_allocation(diag_estimate({0.1, 0.1}, 0.04), p, 0.5);
    EXPECT_EQ(r.prior.p_plus[0], 0.0);
    EXPECT_EQ(r.evidence.posterior[2], 0.0);
    EXPECT_FALSE(r.warnings.empty());
    EXPECT_NO_THROW(r.allocation.validate());
}

TEST(MultiGroup, Errors) {
    MultiEffectEstimate e = diag_estimate({0.1, 0.1}, 0.04);
    e.cov(0, 1) = e.cov(1, 0) = 0.5;
    EXPECT_THROW(multi_group_allocation(e, MvnPrior::equicorrelated(2), 0.5), CovarianceError);
    EXPECT_THROW(multi_group_allocation(diag_estimate({0.1, 0.1}, 0.04), MvnPrior::equicorrelated(3), 0.5),
                 InvalidArgument);
    EXPECT_THROW(multi_group_allocation(diag_estimate({0.1, 0.1}, 0.04), MvnPrior::equicorrelated(2), -0.1),
                 InvalidArgument);
}

TEST(MultiGroup, SeedDeterminism) {
    const auto e = diag_estimate({0.3, 0.1, 0.2}, 0.04);
    const auto a = multi_group_allocation(e, MvnPrior::equicorrelated(3), 0.5, {.seed = 17});
    const auto b = multi_group_allocation(e, MvnPrior::equicorrelated(3), 0.5, {.seed = 17});
    EXPECT_EQ(a.allocation.probs, b.allocation.probs);
}
