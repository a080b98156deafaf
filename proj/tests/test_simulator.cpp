#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "brar/simulator.hpp"

using namespace brar;

namespace {

SimCondition equal_condition(std::size_t n_sim = 2000) {
    SimCondition c;
    c.n = 200;
    c.K = 1;
    c.theta1 = 0.25;
    c.theta_c = 0.25;
    c.n_sim = n_sim;
    c.seed = 5;
    return c;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("brar_sim_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST(Simulator, EqualSuccessesMatchBinomialMean) {
    const auto c = equal_condition();
    const auto m = run_condition(c);
    EXPECT_NEAR(m.rs, 0.25, 3 * m.rs_mcse);
    EXPECT_EQ(m.rep, 0.0);
    EXPECT_EQ(m.n_sim, 2000u);
    EXPECT_EQ(m.fallback_rate, 0.0);
}

TEST(Simulator, EqualNeverHasExtremeSteps) {
    const auto c = equal_condition(50);
    for (std::size_t r = 0; r < 50; ++r) {
        const auto rep = run_repetition(c, repetition_seed(c, r));
        EXPECT_EQ(rep.extreme_steps, 0u);
        EXPECT_EQ(rep.n_arm[0] + rep.n_arm[1], 200u);
    }
}

TEST(Simulator, EqualIsUnbiasedWithNominalCoverage) {
    auto c = equal_condition();
    c.theta1 = 0.4;
    const auto m = run_condition(c);
    EXPECT_NEAR(m.bias, 0.0, 3 * m.bias_mcse);
    EXPECT_NEAR(m.coverage, 0.95, 3 * std::sqrt(0.95 * 0.05 / m.n_analyzable));
}

TEST(Simulator, ThompsonBeatsEqualOnSuccessRate) {
    auto eq = equal_condition(300);
    eq.n = 60;
    eq.theta1 = 0.45;
    auto th = eq;
    th.policy = PolicySpec{.method = Method::PointNullBinomial, .p_null = 0.0};
    const auto a = run_condition(eq);
    const auto b = run_condition(th);
    EXPECT_GT(b.rs, a.rs);
    EXPECT_GT(b.rep, 0.0);
}

TEST(Simulator, CappingRemovesExtremeSteps) {
    auto c = equal_condition(40);
    c.n = 60;
    c.theta1 = 0.45;
    c.policy = PolicySpec{.method = Method::PointNullBinomial, .p_null = 0.0, .cap = std::make_pair(0.1, 0.9)};
    EXPECT_EQ(run_condition(c).rep, 0.0);
}

TEST(Simulator, ImbalanceMeasureForOneTreatment) {
    SimCondition c = equal_condition(4);
    std::vector<RepetitionResult> reps(4);
    const std::size_t n1[] = {50, 89, 90, 150};
    for (std::size_t r = 0; r < 4; ++r) {
        reps[r].n_arm = {200 - n1[r], n1[r]};
        reps[r].analyzable = true;
    }
    // n_C - n_1 > 20 holds for n_1 = 50 and 89 only.
    const auto m = summarize(c, reps);
    EXPECT_DOUBLE_EQ(m.s01, 0.5);
    EXPECT_DOUBLE_EQ(m.s01_mcse, std::sqrt(0.25 / 4));
}

TEST(Simulator, SummaryMeansAndMcse) {
    SimCondition c = equal_condition(3);
    c.n = 10;
    std::vector<RepetitionResult> reps(3);
    const double est[] = {0.1, -0.1, 0.3};
    for (std::size_t r = 0; r < 3; ++r) {
        reps[r].successes = 2 + 2 * r;
        reps[r].n_arm = {5, 5};
        reps[r].analyzable = r != 2;
        reps[r].rd1_estimate = est[r];
        reps[r].ci_covers = r == 0;
        reps[r].rejected = r == 2;
    }
    const auto m = summarize(c, reps);
    EXPECT_NEAR(m.rs, 0.4, 1e-15);
    EXPECT_NEAR(m.rs_mcse, 0.2 / std::sqrt(3.0), 1e-15);
    EXPECT_EQ(m.n_analyzable, 2u);
    EXPECT_NEAR(m.bias, 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(m.coverage, 0.5);
    EXPECT_NEAR(m.rejection, 1.0 / 3.0, 1e-15);
    EXPECT_THROW(summarize(c, {}), InvalidArgument);
}

TEST(Simulator, RepetitionSeedsDependOnConditionNotOrder) {
    auto a = equal_condition();
    auto b = a;
    b.n_sim = 7;
    EXPECT_EQ(repetition_seed(a, 3), repetition_seed(b, 3));
    b.theta1 = 0.3;
    EXPECT_NE(repetition_seed(a, 3), repetition_seed(b, 3));
    EXPECT_NE(repetition_seed(a, 3), repetition_seed(a, 4));
}

TEST(Simulator, WorkerCountDoesNotChangeOutput) {
    auto c = equal_condition(10);
    c.n = 40;
    c.theta1 = 0.45;
    std::vector<SimCondition> grid;
    for (Method m : {Method::PointNullBinomial, Method::PointNullNormal, Method::Rpw, Method::Equal}) {
        c.policy = PolicySpec{.method = m, .p_null = 0.5};
        grid.push_back(c);
    }
    const auto one = grid_csv(run_grid(grid, 1));
    const auto four = grid_csv(run_grid(grid, 4));
    EXPECT_EQ(one, four);
    EXPECT_EQ(grid_json(run_grid(grid, 4)).dump(), grid_json(run_grid(grid, 1)).dump());
}

TEST(Simulator, EmptyGridIsInvalid) {
    EXPECT_THROW(run_grid({}, 1), InvalidArgument);
    EXPECT_THROW(expand_grid(nlohmann::json::parse(R"({"n":[200]})")), InvalidArgument);
}

TEST(Simulator, InvalidConditions) {
    auto c = equal_condition();
    c.theta1 = 1.0;
    EXPECT_THROW(c.validate(), InvalidArgument);
    c = equal_condition();
    c.n_sim = 0;
    EXPECT_THROW(run_condition(c), InvalidArgument);
}

TEST(Simulator, ExpandDeskGrid) {
    const auto g = nlohmann::json::parse(R"({
        "n": [200, 654], "K": [1, 2, 3], "theta1": [0.25, 0.35, 0.45],
        "policies": [{"method":"point_null_binomial","p_null":0},{"method":"point_null_binomial","p_null":0.25},
                     {"method":"point_null_binomial","p_null":0.5},{"method":"point_null_binomial","p_null":0.75},
                     {"method":"equal"}],
        "nsim": 1000, "seed": 42})");
    const auto conds = expand_grid(g);
    EXPECT_EQ(conds.size(), 90u);
    EXPECT_EQ(conds[0].n_sim, 1000u);
    EXPECT_EQ(conds[0].seed, 42u);
    const auto over = expand_grid(g, 10, 7);
    EXPECT_EQ(over[5].n_sim, 10u);
    EXPECT_EQ(over[5].seed, 7u);
    std::set<std::string> ids;
    for (const auto& c : conds) ids.insert(c.id());
    EXPECT_EQ(ids.size(), 90u);
}

TEST(Simulator, ExplicitConditionList) {
    const auto conds = expand_grid(nlohmann::json::parse(R"({"conditions":[
        {"n":50,"K":2,"theta1":0.4,"policy":{"method":"rpw"}},
        {"n":60,"policy":{"method":"point_null_normal","power":{"ramp":true}}}], "nsim": 5})"));
    ASSERT_EQ(conds.size(), 2u);
    EXPECT_EQ(conds[0].K, 2u);
    EXPECT_EQ(conds[1].effective_policy().max_n, 60u);
}

TEST(Simulator, FilesWrittenAtomically) {
    const auto dir = scratch("files");
    auto c = equal_condition(5);
    c.n = 20;
    const auto rows = run_grid_to_files({c}, 2, dir / "grid.csv");
    EXPECT_FALSE(std::filesystem::exists(dir / "grid.csv.partial"));
    const auto csv = slurp(dir / "grid.csv");
    EXPECT_EQ(csv, grid_csv(rows));
    EXPECT_EQ(csv.substr(0, csv.find('\n')), kGridCsvHeader);
    const auto j = nlohmann::json::parse(slurp(dir / "grid.json"));
    EXPECT_EQ(j.size(), 1u);
}

TEST(Simulator, FailureLeavesPartialFile) {
    const auto dir = scratch("partial");
    // The destination is a non-empty directory, so the final rename fails.
    std::filesystem::create_directories(dir / "grid.csv" / "occupied");
    auto c = equal_condition(3);
    c.n = 10;
    EXPECT_ANY_THROW(run_grid_to_files({c}, 1, dir / "grid.csv"));
    const auto partial = slurp(dir / "grid.csv.partial");
    EXPECT_NE(partial.find(kGridCsvHeader), std::string::npos);
    EXPECT_EQ(std::count(partial.begin(), partial.end(), '\n'), 2);
}
