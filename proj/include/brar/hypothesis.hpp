#pragma once

// Hypothesis bookkeeping: prior weights, posterior probabilities from log
// marginal likelihoods, Bayes factors, and posterior-to-allocation maps.
//
// Hypotheses are always ordered (H-, H0, H+1, ..., H+K). Arms are always
// ordered (control, treatment 1, ..., treatment K).

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brar/error.hpp"
#include "brar/numerics.hpp"

namespace brar {

class HypothesisId {
public:
    enum class Kind { Minus, Null, Plus };

    static HypothesisId minus() { return HypothesisId(Kind::Minus, 0); }
    static HypothesisId null() { return HypothesisId(Kind::Null, 0); }
    static HypothesisId plus(int i) {
        detail::require(i >= 1, "HypothesisId: Plus index must be >= 1");
        return HypothesisId(Kind::Plus, i);
    }
    /// Position p in the canonical ordering (0 = H-, 1 = H0, 1 + i = H+i).
    static HypothesisId from_position(std::size_t p) {
        if (p == 0) return minus();
        if (p == 1) return null();
        return plus(static_cast<int>(p - 1));
    }

    Kind kind() const { return kind_; }
    int index() const { return index_; }

    std::size_t position() const {
        switch (kind_) {
            case Kind::Minus: return 0;
            case Kind::Null: return 1;
            case Kind::Plus: break;
        }
        return 1 + static_cast<std::size_t>(index_);
    }

    std::string label() const {
        switch (kind_) {
            case Kind::Minus: return "H-";
            case Kind::Null: return "H0";
            case Kind::Plus: break;
        }
        return "H+" + std::to_string(index_);
    }

    bool operator==(const HypothesisId&) const = default;

private:
    HypothesisId(Kind k, int i) : kind_(k), index_(i) {}
    Kind kind_;
    int index_;
};

inline std::vector<std::string> hypothesis_labels(std::size_t treatments) {
    std::vector<std::string> out;
    for (std::size_t p = 0; p < treatments + 2; ++p)
        out.push_back(HypothesisId::from_position(p).label());
    return out;
}

struct PriorWeights {
    double p_minus = 0.0;
    double p_null = 1.0;
    std::vector<double> p_plus;

    std::size_t treatments() const { return p_plus.size(); }

    /// Weights in canonical hypothesis order.
    std::vector<double> ordered() const {
        std::vector<double> out{p_minus, p_null};
        out.insert(out.end(), p_plus.begin(), p_plus.end());
        return out;
    }

    void validate() const {
        double total = 0.0;
        for (double w : ordered()) {
            detail::require(w >= 0.0 && w <= 1.0, "PriorWeights: weight outside [0, 1]");
            total += w;
        }
        detail::require(!p_plus.empty(), "PriorWeights: need at least one treatment");
        detail::require(std::abs(total - 1.0) <= 1e-12, "PriorWeights: weights do not sum to 1");
    }
};

/// Splits 1 - p_null over the directional hypotheses. `region_probs` is ordered
/// (Minus, Plus1, ..., PlusK) and must sum to 1.
inline PriorWeights default_prior_weights(double p_null, std::span<const double> region_probs) {
    detail::require(p_null >= 0.0 && p_null <= 1.0, "default_prior_weights: p_null outside [0, 1]");
    detail::require(region_probs.size() >= 2, "default_prior_weights: need Minus and >= 1 Plus");
    double total = 0.0;
    for (double r : region_probs) {
        detail::require(r >= 0.0, "default_prior_weights: negative region probability");
        total += r;
    }
    detail::require(std::abs(total - 1.0) <= 1e-9,
                    "default_prior_weights: region probabilities must sum to 1");

    PriorWeights w;
    w.p_null = p_null;
    w.p_minus = (1.0 - p_null) * region_probs[0] / total;
    for (std::size_t i = 1; i < region_probs.size(); ++i)
        w.p_plus.push_back((1.0 - p_null) * region_probs[i] / total);
    return w;
}

struct EvidenceSummary {
    std::vector<double> log_ml;
    std::vector<double> posterior;
    /// bf_log[j][i] = log BF_{ji} = log_ml[j] - log_ml[i]. Undefined (NaN) only
    /// when both hypotheses have log_ml = -inf.
    std::vector<std::vector<double>> bf_log;

    std::size_t treatments() const { return log_ml.size() - 2; }
    double bf(std::size_t j, std::size_t i) const { return std::exp(bf_log[j][i]); }
};

/// Posterior hypothesis probabilities from log marginal likelihoods.
/// Hypotheses with zero prior mass are left out of the normalization and get
/// posterior exactly 0, whatever their log_ml (including -inf).
inline EvidenceSummary posterior_from_logml(std::vector<double> log_ml, const PriorWeights& prior) {
    prior.validate();
    const auto weights = prior.ordered();
    detail::require(log_ml.size() == weights.size(),
                    "posterior_from_logml: log_ml and prior are not aligned");

    std::vector<double> terms;
    for (std::size_t h = 0; h < log_ml.size(); ++h) {
        detail::require_not_nan(log_ml[h], "posterior_from_logml");
        detail::require(log_ml[h] < kInf, "posterior_from_logml: +inf log marginal likelihood");
        if (weights[h] > 0.0) terms.push_back(log_ml[h] + std::log(weights[h]));
    }
    detail::require(!terms.empty(), "posterior_from_logml: all prior weights are zero");
    const double norm = logsumexp(terms);
    detail::require(std::isfinite(norm),
                    "posterior_from_logml: every hypothesis with prior mass has zero likelihood");

    EvidenceSummary out;
    out.posterior.resize(log_ml.size(), 0.0);
    for (std::size_t h = 0; h < log_ml.size(); ++h)
        if (weights[h] > 0.0) out.posterior[h] = std::exp(log_ml[h] + std::log(weights[h]) - norm);

    const std::size_t m = log_ml.size();
    out.bf_log.assign(m, std::vector<double>(m, 0.0));
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < m; ++i)
            if (i != j)
                out.bf_log[j][i] = (std::isinf(log_ml[j]) && std::isinf(log_ml[i]))
                                       ? std::numeric_limits<double>::quiet_NaN()
                                       : log_ml[j] - log_ml[i];
    out.log_ml = std::move(log_ml);
    return out;
}

struct AllocationVector {
    std::vector<double> probs;

    std::size_t arms() const { return probs.size(); }
    double operator[](std::size_t a) const { return probs[a]; }

    void validate() const {
        detail::require(probs.size() >= 2, "AllocationVector: need at least two arms");
        double total = 0.0;
        for (double p : probs) {
            detail::require(p >= 0.0 && p <= 1.0, "AllocationVector: probability outside [0, 1]");
            total += p;
        }
        detail::require(std::abs(total - 1.0) <= 1e-12, "AllocationVector: does not sum to 1");
    }

    static AllocationVector equal(std::size_t arms) {
        detail::require(arms >= 2, "AllocationVector: need at least two arms");
        return {std::vector<double>(arms, 1.0 / static_cast<double>(arms))};
    }
};

/// Dunnett-type square-root allocation: control sqrt(K)/(K + sqrt(K)),
/// each treatment 1/(K + sqrt(K)).
inline AllocationVector dunnett_baseline(std::size_t treatments) {
    detail::require(treatments >= 1, "dunnett_baseline: need K >= 1");
    const double k = static_cast<double>(treatments);
    const double denom = k + std::sqrt(k);
    AllocationVector out{std::vector<double>(treatments + 1, 1.0 / denom)};
    out.probs[0] = std::sqrt(k) / denom;
    return out;
}

/// Hypothesis-averaged allocation: arm a receives its directional posterior
/// mass plus Pr(H0 | y) times baseline[a].
inline AllocationVector allocation_baseline_shrink(const EvidenceSummary& summary,
                                                   const AllocationVector& baseline) {
    baseline.validate();
    const std::size_t arms = summary.posterior.size() - 1;
    detail::require(summary.posterior.size() >= 3, "allocation: need at least three hypotheses");
    detail::require(baseline.arms() == arms, "allocation: baseline arm count mismatch");

    const double p0 = summary.posterior[1];
    AllocationVector out{std::vector<double>(arms)};
    out.probs[0] = summary.posterior[0] + p0 * baseline[0];
    for (std::size_t a = 1; a < arms; ++a) out.probs[a] = summary.posterior[a + 1] + p0 * baseline[a];
    return out;
}

inline AllocationVector allocation_equal_shrink(const EvidenceSummary& summary, std::size_t treatments) {
    detail::require(summary.posterior.size() == treatments + 2,
                    "allocation_equal_shrink: summary does not cover K + 2 hypotheses");
    return allocation_baseline_shrink(summary, AllocationVector::equal(treatments + 1));
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json finite_or_null(double x) {
    return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const PriorWeights& w) {
    return {{"hypotheses", hypothesis_labels(w.treatments())}, {"prior", w.ordered()}};
}

inline nlohmann::json to_json(const EvidenceSummary& s) {
    nlohmann::json log_ml = nlohmann::json::array();
    for (double v : s.log_ml) log_ml.push_back(finite_or_null(v));
    nlohmann::json bf = nlohmann::json::array();
    for (const auto& row : s.bf_log) {
        nlohmann::json r = nlohmann::json::array();
        for (double v : row) r.push_back(finite_or_null(v));
        bf.push_back(r);
    }
    return {{"hypotheses", hypothesis_labels(s.treatments())},
            {"log_ml", log_ml},
            {"posterior", s.posterior},
            {"bf_log", bf}};
}

inline nlohmann::json to_json(const AllocationVector& a) { return {{"allocation", a.probs}}; }

}  // namespace brar
