#pragma once

// Allocation policies: point-null evidence engines, comparators (equal, fixed,
// randomized play-the-winner) and the burn-in / power / capping modifications.

#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "brar/binomial_rar.hpp"
#include "brar/inference.hpp"
#include "brar/normal_rar.hpp"

namespace brar {

// ---------------------------------------------------------------------------
// Transforms

/// pi_k^c / sum_j pi_j^c.
inline AllocationVector power_transform(const AllocationVector& probs, double c) {
    probs.validate();
    detail::require(c > 0.0 && std::isfinite(c), "power_transform: c must be positive");
    AllocationVector out{std::vector<double>(probs.arms())};
    // Scale by the largest entry first so tiny c cannot underflow everything.
    double hi = 0.0;
    for (double p : probs.probs) hi = std::max(hi, p);
    double total = 0.0;
    for (std::size_t a = 0; a < probs.arms(); ++a) {
        out.probs[a] = probs[a] > 0.0 ? std::pow(probs[a] / hi, c) : 0.0;
        total += out.probs[a];
    }
    for (double& p : out.probs) p /= total;
    return out;
}

/// Clips every probability into [lo, hi] and renormalizes. When clipping
/// leaves a surplus, only entries above lo are scaled down (entries at lo
/// stay there); when it leaves a deficit, only entries below hi are scaled up.
/// Entries pushed across a bound by the rescaling are clipped and frozen, and
/// the rescaling repeats; the frozen set only grows, so this ends within m
/// rounds.
inline AllocationVector cap_and_renormalize(const AllocationVector& probs, double lo, double hi) {
    probs.validate();
    const std::size_t m = probs.arms();
    detail::require(lo >= 0.0 && lo < hi && hi <= 1.0, "cap_and_renormalize: need 0 <= lo < hi <= 1");
    detail::require(static_cast<double>(m) * lo <= 1.0 + 1e-12 && static_cast<double>(m) * hi >= 1.0 - 1e-12,
                    "cap_and_renormalize: bounds are infeasible for this arm count");

    std::vector<double> x = probs.probs;
    double total = 0.0;
    for (double& v : x) {
        v = std::clamp(v, lo, hi);
        total += v;
    }
    if (total == 1.0) return {x};

    const bool surplus = total > 1.0;
    const double bound = surplus ? lo : hi;
    std::vector<bool> frozen(m);
    for (std::size_t a = 0; a < m; ++a) frozen[a] = (x[a] == bound);

    for (std::size_t round = 0; round <= m; ++round) {
        double fixed_mass = 0.0;
        double free_mass = 0.0;
        for (std::size_t a = 0; a < m; ++a) (frozen[a] ? fixed_mass : free_mass) += x[a];
        if (free_mass <= 0.0) break;
        const double scale = (1.0 - fixed_mass) / free_mass;
        bool changed = false;
        for (std::size_t a = 0; a < m; ++a) {
            if (frozen[a]) continue;
            x[a] *= scale;
            if (surplus ? x[a] <= lo : x[a] >= hi) {
                x[a] = bound;
                frozen[a] = true;
                changed = true;
            }
        }
        if (!changed) break;
    }
    return {x};
}

/// Power schedule c = i / (2 n) for patient i of at most n.
inline double ramp_power(std::size_t patient, std::size_t max_n) {
    detail::require(max_n >= 1 && patient >= 1, "ramp_power: need patient >= 1 and max_n >= 1");
    return static_cast<double>(patient) / (2.0 * static_cast<double>(max_n));
}

/// Inverse-CDF draw of an arm for a uniform variate u in [0, 1). Arms with
/// zero probability are never returned.
inline std::size_t sample_arm(const AllocationVector& probs, double u) {
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t a = 0; a < probs.arms(); ++a) {
        if (probs[a] <= 0.0) continue;
        acc += probs[a];
        last = a;
        if (u < acc) return a;
    }
    return last;
}

// ---------------------------------------------------------------------------
// Randomized play-the-winner urn

struct RpwUrn {
    std::vector<double> balls;

    static RpwUrn initial(std::size_t arms, double per_arm = 1.0) {
        return {std::vector<double>(arms, per_arm)};
    }

    double total() const {
        double t = 0.0;
        for (double b : balls) t += b;
        return t;
    }

    AllocationVector allocation() const {
        const double t = total();
        detail::require(t > 0.0, "RpwUrn: empty urn");
        AllocationVector out{balls};
        for (double& p : out.probs) p /= t;
        return out;
    }
};

/// A success on `arm` adds one ball of that arm; a failure adds one ball split
/// evenly across the other arms.
inline RpwUrn rpw_update(RpwUrn urn, std::size_t arm, int outcome) {
    const std::size_t m = urn.balls.size();
    detail::require(m >= 2 && arm < m, "rpw_update: arm index out of range");
    detail::require(outcome == 0 || outcome == 1, "rpw_update: outcome must be 0 or 1");
    if (outcome == 1) {
        urn.balls[arm] += 1.0;
    } else {
        const double share = 1.0 / static_cast<double>(m - 1);
        for (std::size_t a = 0; a < m; ++a)
            if (a != arm) urn.balls[a] += share;
    }
    return urn;
}

// ---------------------------------------------------------------------------
// Trial state

struct Observation {
    std::size_t arm;
    int outcome;
    bool operator==(const Observation&) const = default;
};

/// Ordered outcome record of a trial; counts are derived from it.
class TrialState {
public:
    explicit TrialState(std::size_t arms) : arms_(arms) {
        detail::require(arms >= 2, "TrialState: need at least two arms");
    }

    std::size_t arms() const { return arms_; }
    std::size_t size() const { return events_.size(); }
    const std::vector<Observation>& events() const { return events_; }

    void record(std::size_t arm, int outcome) {
        detail::require(arm < arms_, "TrialState: arm index out of range");
        detail::require(outcome == 0 || outcome == 1, "TrialState: outcome must be 0 or 1");
        events_.push_back({arm, outcome});
    }

    [[nodiscard]] TrialState with(std::size_t arm, int outcome) const {
        TrialState next = *this;
        next.record(arm, outcome);
        return next;
    }

    BinomialData counts() const {
        BinomialData d{std::vector<int>(arms_, 0), std::vector<int>(arms_, 0)};
        for (const auto& e : events_) {
            d.n[e.arm] += 1;
            d.y[e.arm] += e.outcome;
        }
        return d;
    }

    bool operator==(const TrialState&) const = default;

private:
    std::size_t arms_;
    std::vector<Observation> events_;
};

// ---------------------------------------------------------------------------
// Policy specification

enum class Method { PointNullNormal, PointNullBinomial, Equal, Fixed, Rpw };
enum class NormalEstimator { Logistic, Yates };

struct PowerSpec {
    bool ramp = false;  // c = i / (2 n)
    double c = 1.0;     // used when ramp is false
};

struct PolicySpec {
    Method method = Method::Equal;
    double p_null = 0.5;
    int burn_in = 0;
    std::optional<std::pair<double, double>> cap;
    std::optional<PowerSpec> power;
    /// Fixed allocation (Fixed), or shrinkage target replacing equal
    /// randomization (point-null methods). Empty means equal.
    std::vector<double> baseline;
    NormalEstimator estimator = NormalEstimator::Logistic;
    std::optional<std::size_t> max_n;  // required by the ramp power schedule
    std::string label;

    bool is_point_null() const {
        return method == Method::PointNullNormal || method == Method::PointNullBinomial;
    }

    void validate(std::size_t arms) const {
        detail::require(arms >= 2, "PolicySpec: need at least two arms");
        detail::require(p_null >= 0.0 && p_null <= 1.0, "PolicySpec: p_null outside [0, 1]");
        detail::require(burn_in >= 0, "PolicySpec: burn_in must be >= 0");
        if (cap) {
            detail::require(cap->first >= 0.0 && cap->first < cap->second && cap->second <= 1.0,
                            "PolicySpec: cap needs 0 <= lo < hi <= 1");
            detail::require(static_cast<double>(arms) * cap->first <= 1.0 &&
                                static_cast<double>(arms) * cap->second >= 1.0,
                            "PolicySpec: cap bounds infeasible for this arm count");
        }
        if (power) {
            detail::require(power->ramp || power->c > 0.0, "PolicySpec: power c must be positive");
            detail::require(!power->ramp || (max_n && *max_n >= 1),
                            "PolicySpec: ramp power needs max_n");
        }
        if (method == Method::Fixed) detail::require(!baseline.empty(), "PolicySpec: fixed needs baseline");
        if (!baseline.empty()) {
            detail::require(baseline.size() == arms, "PolicySpec: baseline arm count mismatch");
            AllocationVector{baseline}.validate();
        }
    }

    /// Stable, human-readable identifier; `label` wins when set.
    std::string id() const {
        if (!label.empty()) return label;
        std::string s;
        switch (method) {
            case Method::PointNullNormal: s = "normal"; break;
            case Method::PointNullBinomial: s = "binomial"; break;
            case Method::Equal: return "equal";
            case Method::Fixed: s = "fixed"; break;
            case Method::Rpw: s = "rpw"; break;
        }
        char buf[64];
        if (is_point_null()) {
            std::snprintf(buf, sizeof buf, "(p0=%g)", p_null);
            s += buf;
            if (method == Method::PointNullNormal && estimator == NormalEstimator::Yates) s += "+yates";
        }
        if (burn_in > 0) s += "+burnin" + std::to_string(burn_in);
        if (power) {
            if (power->ramp) {
                s += "+power(ramp)";
            } else {
                std::snprintf(buf, sizeof buf, "+power(%g)", power->c);
                s += buf;
            }
        }
        if (cap) {
            std::snprintf(buf, sizeof buf, "+cap(%g,%g)", cap->first, cap->second);
            s += buf;
        }
        return s;
    }
};

/// Prior configuration shared by the evidence engines.
struct EvidenceConfig {
    double normal_mean = 0.0;
    double normal_var = 1.0;
    double normal_rho = 0.5;
    std::optional<BetaPriorSet> beta;  // uniform when unset
    QuadSpec quad;
    double mvn_tol = 1e-6;

    MvnPrior normal_prior(std::size_t treatments) const {
        return MvnPrior::equicorrelated(static_cast<Eigen::Index>(treatments), normal_var, normal_rho,
                                        normal_mean);
    }

    BetaPriorSet beta_prior(std::size_t arms) const {
        if (!beta) return BetaPriorSet::uniform(arms);
        beta->validate(arms);
        return *beta;
    }
};

struct AllocationDecision {
    AllocationVector allocation;
    bool fallback = false;  // engine failed; equal randomization used instead
    std::optional<EvidenceSummary> evidence;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::optional<MultiEffectEstimate> normal_estimate(const BinomialData& counts, NormalEstimator estimator) {
    if (estimator == NormalEstimator::Yates && counts.arms() == 2) {
        const auto e = yates_log_or(counts);
        return MultiEffectEstimate{Vector::Constant(1, e.theta_hat), Matrix::Constant(1, 1, e.se * e.se)};
    }
    const auto fit = logistic_fit(counts);
    if (!fit.converged) return std::nullopt;
    return fit.treatment_effects();
}

}  // namespace detail

/// Allocation for `patient` (1-based) given the outcomes recorded so far.
///
/// Patients within the burn-in get equal randomization. Otherwise the base
/// allocation comes from the policy's method, then the power transform and
/// capping are applied in that order. Engine failures (non-convergent
/// logistic fit, numerical errors) fall back to equal randomization with
/// `fallback` set; they never propagate.
inline AllocationDecision next_allocation(const TrialState& state, const PolicySpec& spec,
                                          const EvidenceConfig& engines, std::uint64_t seed,
                                          std::optional<std::size_t> patient = {}) {
    const std::size_t arms = state.arms();
    spec.validate(arms);
    const std::size_t i = patient.value_or(state.size() + 1);
    const auto equal = AllocationVector::equal(arms);

    AllocationDecision out;
    out.allocation = equal;
    if (i <= static_cast<std::size_t>(spec.burn_in)) return out;

    const std::optional<AllocationVector> baseline =
        spec.baseline.empty() ? std::nullopt : std::optional<AllocationVector>(AllocationVector{spec.baseline});

    try {
        switch (spec.method) {
            case Method::Equal: break;
            case Method::Fixed: out.allocation = *baseline; break;
            case Method::Rpw: {
                auto urn = RpwUrn::initial(arms);
                for (const auto& e : state.events()) urn = rpw_update(std::move(urn), e.arm, e.outcome);
                out.allocation = urn.allocation();
                break;
            }
            case Method::PointNullBinomial: {
                const auto r = brar_binomial(state.counts(), engines.beta_prior(arms), spec.p_null,
                                             engines.quad, baseline);
                if (!r.converged) out.warnings.push_back("quadrature did not reach tolerance");
                out.allocation = r.allocation;
                out.evidence = r.evidence;
                break;
            }
            case Method::PointNullNormal: {
                const auto est = detail::normal_estimate(state.counts(), spec.estimator);
                if (!est) {
                    out.fallback = true;
                    out.warnings.push_back("logistic regression did not converge");
                    return out;
                }
                const auto r = multi_group_allocation(*est, engines.normal_prior(arms - 1), spec.p_null,
                                                      {seed, engines.mvn_tol}, baseline);
                out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
                out.allocation = r.allocation;
                out.evidence = r.evidence;
                break;
            }
        }
    } catch (const std::exception& e) {
        out = AllocationDecision{equal, true, std::nullopt, {e.what()}};
        return out;
    }

    if (spec.power) {
        const double c = spec.power->ramp ? ramp_power(i, *spec.max_n) : spec.power->c;
        out.allocation = power_transform(out.allocation, c);
    }
    if (spec.cap) out.allocation = cap_and_renormalize(out.allocation, spec.cap->first, spec.cap->second);
    return out;
}

// ---------------------------------------------------------------------------
// JSON

inline std::string method_name(Method m) {
    switch (m) {
        case Method::PointNullNormal: return "point_null_normal";
        case Method::PointNullBinomial: return "point_null_binomial";
        case Method::Equal: return "equal";
        case Method::Fixed: return "fixed";
        case Method::Rpw: return "rpw";
    }
    return {};
}

inline Method parse_method(const std::string& s) {
    for (Method m : {Method::PointNullNormal, Method::PointNullBinomial, Method::Equal, Method::Fixed, Method::Rpw})
        if (method_name(m) == s) return m;
    throw InvalidArgument("unknown policy method '" + s + "'");
}

inline nlohmann::json to_json(const PolicySpec& p) {
    nlohmann::json j{{"method", method_name(p.method)}, {"burn_in", p.burn_in}};
    if (p.is_point_null()) j["p_null"] = p.p_null;
    if (p.cap) j["cap"] = {p.cap->first, p.cap->second};
    if (p.power) {
        if (p.power->ramp)
            j["power"] = {{"ramp", true}};
        else
            j["power"] = {{"c", p.power->c}};
    }
    if (!p.baseline.empty()) j["baseline"] = p.baseline;
    if (p.method == Method::PointNullNormal)
        j["estimator"] = p.estimator == NormalEstimator::Yates ? "yates" : "logistic";
    if (p.max_n) j["max_n"] = *p.max_n;
    if (!p.label.empty()) j["id"] = p.label;
    return j;
}

inline PolicySpec policy_from_json(const nlohmann::json& j) {
    try {
        PolicySpec p;
        p.method = parse_method(j.at("method").get<std::string>());
        p.p_null = j.value("p_null", p.is_point_null() ? 0.5 : 1.0);
        p.burn_in = j.value("burn_in", 0);
        if (j.contains("cap")) {
            const auto& c = j.at("cap");
            detail::require(c.is_array() && c.size() == 2, "policy: cap must be [lo, hi]");
            p.cap = std::make_pair(c[0].get<double>(), c[1].get<double>());
        }
        if (j.contains("power")) {
            const auto& pw = j.at("power");
            PowerSpec ps;
            if (pw.is_number()) {
                ps.c = pw.get<double>();
            } else {
                ps.ramp = pw.value("ramp", false);
                ps.c = pw.value("c", 1.0);
            }
            p.power = ps;
        }
        if (j.contains("baseline")) p.baseline = j.at("baseline").get<std::vector<double>>();
        const auto est = j.value("estimator", std::string("logistic"));
        detail::require(est == "logistic" || est == "yates", "policy: estimator must be logistic or yates");
        p.estimator = est == "yates" ? NormalEstimator::Yates : NormalEstimator::Logistic;
        if (j.contains("max_n")) p.max_n = j.at("max_n").get<std::size_t>();
        p.label = j.value("id", std::string());
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("policy: ") + e.what());
    }
}

inline nlohmann::json to_json(const EvidenceConfig& c) {
    nlohmann::json j{{"normal", {{"mean", c.normal_mean}, {"var", c.normal_var}, {"rho", c.normal_rho}}},
                     {"quad", {{"abs_tol", c.quad.abs_tol}, {"rel_tol", c.quad.rel_tol},
                               {"max_subdivisions", c.quad.max_subdivisions}}},
                     {"mvn_tol", c.mvn_tol}};
    if (c.beta) j["beta"] = {{"a0", c.beta->a0}, {"b0", c.beta->b0}, {"a", c.beta->a}, {"b", c.beta->b}};
    return j;
}

inline EvidenceConfig evidence_config_from_json(const nlohmann::json& j) {
    try {
        EvidenceConfig c;
        if (j.contains("normal")) {
            const auto& n = j.at("normal");
            c.normal_mean = n.value("mean", c.normal_mean);
            c.normal_var = n.value("var", c.normal_var);
            c.normal_rho = n.value("rho", c.normal_rho);
            detail::require(c.normal_var > 0.0, "prior: normal var must be positive");
        }
        if (j.contains("beta")) {
            const auto& b = j.at("beta");
            BetaPriorSet s;
            s.a0 = b.value("a0", 1.0);
            s.b0 = b.value("b0", 1.0);
            s.a = b.at("a").get<std::vector<double>>();
            s.b = b.at("b").get<std::vector<double>>();
            s.validate(s.a.size());
            c.beta = s;
        }
        if (j.contains("quad")) {
            const auto& q = j.at("quad");
            c.quad.abs_tol = q.value("abs_tol", c.quad.abs_tol);
            c.quad.rel_tol = q.value("rel_tol", c.quad.rel_tol);
            c.quad.max_subdivisions = q.value("max_subdivisions", c.quad.max_subdivisions);
            c.quad.validate();
        }
        c.mvn_tol = j.value("mvn_tol", c.mvn_tol);
        detail::require(c.mvn_tol > 0.0, "prior: mvn_tol must be positive");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("prior: ") + e.what());
    }
}

}  // namespace brar
