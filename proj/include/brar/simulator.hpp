#pragma once

// Sequential-trial simulation: data generation under an allocation policy,
// performance measures with Monte Carlo standard errors, and a grid runner.

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "brar/inference.hpp"
#include "brar/policies.hpp"
#include "brar/rng.hpp"

namespace brar {

struct SimCondition {
    std::size_t n = 200;
    std::size_t K = 1;
    double theta1 = 0.25;
    double theta_c = 0.25;
    double theta_rest = 0.3;  // treatments 2..K
    PolicySpec policy;
    EvidenceConfig engines;
    std::size_t n_sim = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(n >= 1, "SimCondition: n must be >= 1");
        detail::require(K >= 1, "SimCondition: K must be >= 1");
        detail::require(n_sim >= 1, "SimCondition: n_sim must be >= 1");
        for (double p : {theta1, theta_c, theta_rest})
            detail::require(p > 0.0 && p < 1.0, "SimCondition: probabilities must lie in (0, 1)");
        effective_policy().validate(K + 1);
    }

    /// Success probabilities per arm, control first.
    std::vector<double> thetas() const {
        std::vector<double> t(K + 1, theta_rest);
        t[0] = theta_c;
        t[1] = theta1;
        return t;
    }

    double rd1() const { return theta1 - theta_c; }

    /// The policy with the ramp horizon defaulted to the condition's sample size.
    PolicySpec effective_policy() const {
        PolicySpec p = policy;
        if (p.power && p.power->ramp && !p.max_n) p.max_n = n;
        return p;
    }

    /// Stable identifier; also the seed tag, so it excludes n_sim and seed.
    std::string id() const {
        char buf[128];
        std::snprintf(buf, sizeof buf, "n=%zu,K=%zu,theta_c=%g,theta1=%g,theta_rest=%g,", n, K, theta_c, theta1,
                      theta_rest);
        return buf + effective_policy().id();
    }
};

struct RepetitionResult {
    std::size_t successes = 0;
    std::size_t extreme_steps = 0;  // steps with any arm probability < 0.1 or > 0.9
    std::vector<std::size_t> n_arm;
    bool analyzable = false;  // both control and treatment 1 received patients
    double rd1_estimate = 0.0;
    bool ci_covers = false;
    bool rejected = false;
    std::size_t fallback_steps = 0;
};

inline std::uint64_t repetition_seed(const SimCondition& cond, std::size_t rep) {
    return derive_seed(derive_seed(cond.seed, hash_string(cond.id())), rep);
}

inline bool is_extreme(const AllocationVector& a) {
    for (double p : a.probs)
        if (p < 0.1 || p > 0.9) return true;
    return false;
}

/// One simulated trial. Patient i is randomized with the allocation computed
/// from the outcomes of patients 1..i-1, then its outcome is drawn from the
/// success probability of the assigned arm.
inline RepetitionResult run_repetition(const SimCondition& cond, std::uint64_t rep_seed) {
    const PolicySpec policy = cond.effective_policy();
    const auto theta = cond.thetas();
    const std::size_t arms = cond.K + 1;

    TrialState state(arms);
    CounterRng rng(rep_seed);
    RepetitionResult r;
    r.n_arm.assign(arms, 0);

    for (std::size_t i = 1; i <= cond.n; ++i) {
        const auto decision = next_allocation(state, policy, cond.engines, derive_seed(rep_seed, i), i);
        if (decision.fallback) ++r.fallback_steps;
        if (is_extreme(decision.allocation)) ++r.extreme_steps;
        const std::size_t arm = sample_arm(decision.allocation, rng.uniform());
        const int outcome = rng.uniform() < theta[arm] ? 1 : 0;
        state.record(arm, outcome);
        r.n_arm[arm] += 1;
        r.successes += static_cast<std::size_t>(outcome);
    }

    const auto counts = state.counts();
    if (counts.n[0] >= 1 && counts.n[1] >= 1) {
        const auto w = rate_diff_wald(counts.y[1], counts.n[1], counts.y[0], counts.n[0]);
        r.analyzable = true;
        r.rd1_estimate = w.estimate;
        r.ci_covers = w.ci_lo <= cond.rd1() && cond.rd1() <= w.ci_hi;
        r.rejected = w.reject;
    }
    return r;
}

struct MetricsSummary {
    double rs = 0.0, rs_mcse = 0.0;
    double rep = 0.0, rep_mcse = 0.0;
    double s01 = 0.0, s01_mcse = 0.0;
    double bias = 0.0, bias_mcse = 0.0;
    double coverage = 0.0, coverage_mcse = 0.0;
    double rejection = 0.0, rejection_mcse = 0.0;
    double fallback_rate = 0.0;
    std::size_t n_sim = 0;
    std::size_t n_analyzable = 0;
};

namespace detail {

struct MeanSe {
    double mean = 0.0;
    double mcse = 0.0;
};

inline MeanSe mean_and_mcse(const std::vector<double>& x) {
    MeanSe out;
    if (x.empty()) return out;
    const double n = static_cast<double>(x.size());
    for (double v : x) out.mean += v;
    out.mean /= n;
    if (x.size() < 2) return out;
    double ss = 0.0;
    for (double v : x) ss += (v - out.mean) * (v - out.mean);
    out.mcse = std::sqrt(ss / (n - 1.0) / n);
    return out;
}

inline MeanSe proportion(std::size_t hits, std::size_t total) {
    if (total == 0) return {};
    const double p = static_cast<double>(hits) / static_cast<double>(total);
    return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(total))};
}

}  // namespace detail

/// Aggregates repetitions into the performance measures. Bias and coverage
/// use the analyzable repetitions only; a repetition without patients on
/// control or treatment 1 counts as not rejecting.
inline MetricsSummary summarize(const SimCondition& cond, const std::vector<RepetitionResult>& reps) {
    detail::require(!reps.empty(), "summarize: no repetitions");
    const double n = static_cast<double>(cond.n);
    const double k = static_cast<double>(cond.K);

    std::vector<double> rs, rep, bias;
    std::size_t s01 = 0, covered = 0, rejected = 0, fallback = 0;
    for (const auto& r : reps) {
        rs.push_back(static_cast<double>(r.successes) / n);
        rep.push_back(static_cast<double>(r.extreme_steps) / n);
        const double n1 = static_cast<double>(r.n_arm[1]);
        if ((n - n1) / k - n1 > 0.1 * n) ++s01;
        fallback += r.fallback_steps;
        if (r.rejected) ++rejected;
        if (!r.analyzable) continue;
        bias.push_back(r.rd1_estimate - cond.rd1());
        if (r.ci_covers) ++covered;
    }

    MetricsSummary m;
    m.n_sim = reps.size();
    m.n_analyzable = bias.size();
    auto set = [](double& v, double& se, detail::MeanSe ms) {
        v = ms.mean;
        se = ms.mcse;
    };
    set(m.rs, m.rs_mcse, detail::mean_and_mcse(rs));
    set(m.rep, m.rep_mcse, detail::mean_and_mcse(rep));
    set(m.s01, m.s01_mcse, detail::proportion(s01, reps.size()));
    set(m.bias, m.bias_mcse, detail::mean_and_mcse(bias));
    set(m.coverage, m.coverage_mcse, detail::proportion(covered, bias.size()));
    set(m.rejection, m.rejection_mcse, detail::proportion(rejected, reps.size()));
    m.fallback_rate = static_cast<double>(fallback) / (n * static_cast<double>(reps.size()));
    return m;
}

/// Runs `count` indexed jobs on up to `workers` threads. The first exception
/// stops the remaining jobs and is rethrown.
template <class Job>
void parallel_for(std::size_t count, std::size_t workers, Job&& job) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count && !failed; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline MetricsSummary run_condition(const SimCondition& cond, std::size_t workers = 1) {
    cond.validate();
    std::vector<RepetitionResult> reps(cond.n_sim);
    parallel_for(cond.n_sim, workers, [&](std::size_t rep) { reps[rep] = run_repetition(cond, repetition_seed(cond, rep)); });
    return summarize(cond, reps);
}

struct GridRow {
    SimCondition condition;
    MetricsSummary metrics;
};

/// Runs every condition; repetitions of one condition are spread over the
/// workers. `on_row` is called in condition order as each one finishes.
template <class OnRow>
std::vector<GridRow> run_grid(const std::vector<SimCondition>& conditions, std::size_t workers, OnRow&& on_row) {
    detail::require(!conditions.empty(), "run_grid: empty grid");
    for (const auto& c : conditions) c.validate();
    std::vector<GridRow> rows;
    for (const auto& c : conditions) {
        rows.push_back({c, run_condition(c, workers)});
        on_row(rows.back());
    }
    return rows;
}

inline std::vector<GridRow> run_grid(const std::vector<SimCondition>& conditions, std::size_t workers = 1) {
    return run_grid(conditions, workers, [](const GridRow&) {});
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

/// Shortest round-trip decimal representation, shared by CSV and JSON output.
inline std::string format_number(double x) { return nlohmann::json(x).dump(); }

}  // namespace detail

inline const char* kGridCsvHeader =
    "n,K,theta_c,theta1,theta_rest,n_sim,seed,policy,rs,rs_mcse,rep,rep_mcse,s01,s01_mcse,bias,bias_mcse,"
    "coverage,coverage_mcse,rejection,rejection_mcse,fallback_rate,n_analyzable";

inline std::string csv_row(const GridRow& row) {
    using detail::format_number;
    const auto& c = row.condition;
    const auto& m = row.metrics;
    std::ostringstream out;
    out << c.n << ',' << c.K << ',' << format_number(c.theta_c) << ',' << format_number(c.theta1) << ','
        << format_number(c.theta_rest) << ',' << c.n_sim << ',' << c.seed << ",\"" << c.effective_policy().id()
        << "\"";
    for (double v : {m.rs, m.rs_mcse, m.rep, m.rep_mcse, m.s01, m.s01_mcse, m.bias, m.bias_mcse, m.coverage,
                     m.coverage_mcse, m.rejection, m.rejection_mcse, m.fallback_rate})
        out << ',' << format_number(v);
    out << ',' << m.n_analyzable;
    return out.str();
}

inline nlohmann::json to_json(const GridRow& row) {
    const auto& c = row.condition;
    const auto& m = row.metrics;
    return {{"n", c.n},
            {"K", c.K},
            {"theta_c", c.theta_c},
            {"theta1", c.theta1},
            {"theta_rest", c.theta_rest},
            {"n_sim", c.n_sim},
            {"seed", c.seed},
            {"policy", c.effective_policy().id()},
            {"policy_spec", to_json(c.effective_policy())},
            {"rs", m.rs},
            {"rs_mcse", m.rs_mcse},
            {"rep", m.rep},
            {"rep_mcse", m.rep_mcse},
            {"s01", m.s01},
            {"s01_mcse", m.s01_mcse},
            {"bias", m.bias},
            {"bias_mcse", m.bias_mcse},
            {"coverage", m.coverage},
            {"coverage_mcse", m.coverage_mcse},
            {"rejection", m.rejection},
            {"rejection_mcse", m.rejection_mcse},
            {"fallback_rate", m.fallback_rate},
            {"n_analyzable", m.n_analyzable}};
}

inline std::string grid_csv(const std::vector<GridRow>& rows) {
    std::string out = std::string(kGridCsvHeader) + "\n";
    for (const auto& r : rows) out += csv_row(r) + "\n";
    return out;
}

inline nlohmann::json grid_json(const std::vector<GridRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) out.push_back(to_json(r));
    return out;
}

/// Runs the grid writing `<csv>.partial` row by row. On success the CSV is
/// moved into place and the JSON mirror written next to it (same stem, .json);
/// on failure the partial file is left behind and the error rethrown.
inline std::vector<GridRow> run_grid_to_files(const std::vector<SimCondition>& conditions, std::size_t workers,
                                              const std::filesystem::path& csv_path) {
    const auto partial = std::filesystem::path(csv_path.string() + ".partial");
    std::ofstream out(partial, std::ios::trunc);
    if (!out) throw InvalidArgument("simulate: cannot write " + partial.string());
    out << kGridCsvHeader << '\n' << std::flush;
    auto rows = run_grid(conditions, workers, [&](const GridRow& row) { out << csv_row(row) << '\n' << std::flush; });
    out.close();
    std::filesystem::rename(partial, csv_path);
    auto json_path = csv_path;
    json_path.replace_extension(".json");
    std::ofstream(json_path, std::ios::trunc) << grid_json(rows).dump(2) << '\n';
    return rows;
}

// ---------------------------------------------------------------------------
// Grid specification

/// Expands a grid description into conditions, fully factorial over n, K,
/// theta1 and policies:
///   {"n": [200, 654], "K": [1, 2, 3], "theta1": [0.25, 0.35, 0.45],
///    "theta_c": 0.25, "theta_rest": 0.3, "policies": [PolicySpec...],
///    "prior": EvidenceConfig, "nsim": 1000, "seed": 42}
/// Scalars are accepted wherever a list is. An explicit "conditions" array of
/// objects with the same keys (scalar-valued, one "policy") is also accepted.
inline std::vector<SimCondition> expand_grid(const nlohmann::json& g, std::optional<std::size_t> n_sim = {},
                                             std::optional<std::uint64_t> seed = {}) {
    try {
        auto list = [&](const nlohmann::json& j, const char* key, auto fallback) {
            using T = decltype(fallback);
            if (!j.contains(key)) return std::vector<T>{fallback};
            const auto& v = j.at(key);
            return v.is_array() ? v.get<std::vector<T>>() : std::vector<T>{v.get<T>()};
        };
        const auto engines = g.contains("prior") ? evidence_config_from_json(g.at("prior")) : EvidenceConfig{};
        const std::size_t nsim = n_sim.value_or(g.value("nsim", std::size_t{1000}));
        const std::uint64_t master = seed.value_or(g.value("seed", std::uint64_t{0}));

        std::vector<SimCondition> out;
        auto add = [&](const nlohmann::json& j) {
            std::vector<PolicySpec> policies;
            if (j.contains("policy")) policies.push_back(policy_from_json(j.at("policy")));
            if (j.contains("policies"))
                for (const auto& p : j.at("policies")) policies.push_back(policy_from_json(p));
            detail::require(!policies.empty(), "grid: no policies given");
            for (std::size_t n : list(j, "n", std::size_t{200}))
                for (std::size_t k : list(j, "K", std::size_t{1}))
                    for (double t1 : list(j, "theta1", 0.25))
                        for (const auto& p : policies) {
                            SimCondition c;
                            c.n = n;
                            c.K = k;
                            c.theta1 = t1;
                            c.theta_c = j.value("theta_c", 0.25);
                            c.theta_rest = j.value("theta_rest", 0.3);
                            c.policy = p;
                            c.engines = engines;
                            c.n_sim = nsim;
                            c.seed = master;
                            c.validate();
                            out.push_back(std::move(c));
                        }
        };
        if (g.contains("conditions")) {
            for (const auto& c : g.at("conditions")) add(c);
        } else {
            add(g);
        }
        detail::require(!out.empty(), "grid: no conditions");
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("grid: ") + e.what());
    }
}

}  // namespace brar
