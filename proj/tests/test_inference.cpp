#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "brar/inference.hpp"

using namespace brar;

namespace {

double logit(double p) { return std::log(p / (1 - p)); }

}  // namespace

TEST(Logistic, SaturatedTwoByTwo) {
    const auto f = logistic_fit({{5, 5}, {10, 10}});
    ASSERT_TRUE(f.converged);
    EXPECT_NEAR(f.coef(1), 0.0, 1e-10);
    EXPECT_NEAR(f.cov(1, 1), 0.8, 1e-8);

    const auto g = logistic_fit({{10, 15}, {20, 20}});
    ASSERT_TRUE(g.converged);
    EXPECT_NEAR(g.coef(1), std::log(3.0), 1e-8);
    EXPECT_NEAR(g.coef(0), 0.0, 1e-8);
}

TEST(Logistic, SeparationAndEmptyArms) {
    EXPECT_FALSE(logistic_fit({{0, 1}, {1, 1}}).converged);
    EXPECT_FALSE(logistic_fit({{0, 0}, {0, 5}}).converged);
    EXPECT_FALSE(logistic_fit({{3, 5, 0}, {10, 10, 10}}).converged);
}

TEST(Logistic, MatchesClosedFormAndObservedInformation) {
    std::mt19937_64 gen(71);
    std::uniform_int_distribution<int> un(8, 60);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t m = 2 + rep % 3;
        BinomialData d;
        for (std::size_t a = 0; a < m; ++a) {
            const int n = un(gen);
            d.n.push_back(n);
            d.y.push_back(std::uniform_int_distribution<int>(1, n - 1)(gen));
        }
        const auto f = logistic_fit(d);
        ASSERT_TRUE(f.converged);
        const auto rate = [&](std::size_t a) { return static_cast<double>(d.y[a]) / d.n[a]; };
        const auto inv_cells = [&](std::size_t a) { return 1.0 / d.y[a] + 1.0 / (d.n[a] - d.y[a]); };
        for (std::size_t a = 1; a < m; ++a) {
            const auto i = static_cast<Eigen::Index>(a);
            EXPECT_NEAR(f.coef(i), logit(rate(a)) - logit(rate(0)), 1e-8);
            EXPECT_NEAR(f.cov(i, i) / (inv_cells(a) + inv_cells(0)), 1.0, 1e-6);
            for (std::size_t b = a + 1; b < m; ++b)
                EXPECT_NEAR(f.cov(i, static_cast<Eigen::Index>(b)) / inv_cells(0), 1.0, 1e-6);
        }
        const auto eff = f.treatment_effects();
        EXPECT_EQ(eff.treatments(), static_cast<Eigen::Index>(m - 1));
        EXPECT_LE((f.cov - f.cov.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Yates, Examples) {
    const auto e = yates_log_or({{0, 1}, {1, 1}});
    EXPECT_NEAR(e.theta_hat, std::log(9.0), 1e-14);
    EXPECT_NEAR(e.se, std::sqrt(16.0 / 3.0), 1e-14);
    EXPECT_NEAR(yates_log_or({{3, 3}, {6, 6}}).theta_hat, 0.0, 1e-15);
    EXPECT_NEAR(yates_log_or({{0, 11}, {1, 11}}).theta_hat, std::log(69.0), 1e-13);
    EXPECT_THROW(yates_log_or({{0, 1, 1}, {1, 1, 1}}), InvalidArgument);
}

TEST(Yates, AntisymmetricUnderSwap) {
    std::mt19937_64 gen(72);
    std::uniform_int_distribution<int> un(0, 30);
    for (int rep = 0; rep < 100; ++rep) {
        const int n0 = un(gen), n1 = un(gen);
        const int y0 = std::uniform_int_distribution<int>(0, n0)(gen), y1 = std::uniform_int_distribution<int>(0, n1)(gen);
        const auto a = yates_log_or({{y0, y1}, {n0, n1}});
        const auto b = yates_log_or({{y1, y0}, {n1, n0}});
        EXPECT_NEAR(a.theta_hat, -b.theta_hat, 1e-13);
        EXPECT_NEAR(a.se, b.se, 1e-14);
    }
}

TEST(Wald, Examples) {
    const auto eq = rate_diff_wald(7, 15, 7, 15);
    EXPECT_EQ(eq.estimate, 0.0);
    EXPECT_FALSE(eq.reject);

    const auto r = rate_diff_wald(15, 20, 10, 20);
    EXPECT_NEAR(r.estimate, 0.25, 1e-15);
    EXPECT_NEAR(r.se, 0.147902, 1e-6);
    EXPECT_NEAR(r.ci_hi - r.estimate, 1.959963984540054 * r.se, 1e-12);
    EXPECT_FALSE(r.reject);

    const auto d = rate_diff_wald(0, 10, 0, 10);
    EXPECT_TRUE(d.degenerate);
    EXPECT_FALSE(d.reject);
    EXPECT_EQ(d.ci_lo, d.ci_hi);
    EXPECT_TRUE(rate_diff_wald(10, 10, 0, 10).reject);
}

TEST(Wald, IntervalProperties) {
    std::mt19937_64 gen(73);
    std::uniform_int_distribution<int> un(1, 100);
    for (int rep = 0; rep < 1000; ++rep) {
        const int nt = un(gen), nc = un(gen);
        const int yt = std::uniform_int_distribution<int>(0, nt)(gen), yc = std::uniform_int_distribution<int>(0, nc)(gen);
        const auto w = rate_diff_wald(yt, nt, yc, nc);
        EXPECT_LE(w.ci_lo, w.estimate);
        EXPECT_GE(w.ci_hi, w.estimate);
        if (w.reject && !w.degenerate) {
            EXPECT_GT(w.estimate / w.se, 1.959963984540054);
        }
        if (!w.degenerate) {
            EXPECT_EQ(w.reject, w.ci_lo > 0.0);
        }
    }
}

TEST(Wald, Errors) {
    EXPECT_THROW(rate_diff_wald(1, 0, 0, 1), InvalidArgument);
    EXPECT_THROW(rate_diff_wald(3, 2, 0, 1), InvalidArgument);
    EXPECT_THROW(rate_diff_wald(1, 2, 0, 1, 1.5), InvalidArgument);
}
