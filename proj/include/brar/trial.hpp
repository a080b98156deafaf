#pragma once

// Event-sourced trial sessions: an append-only NDJSON log per trial is the
// only state; snapshots and evidence traces are derived by replaying it.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brar/policies.hpp"
#include "brar/rng.hpp"

namespace brar {

using nlohmann::json;

struct TrialConfig {
    std::string id;
    std::vector<std::string> arms;  // labels, control first
    PolicySpec policy;
    EvidenceConfig prior;
    std::uint64_t seed = 0;

    void validate() const {
        static const std::regex id_pattern("[A-Za-z0-9_-]{1,64}");
        detail::require(std::regex_match(id, id_pattern),
                        "trial id must be 1-64 characters from [A-Za-z0-9_-]");
        detail::require(arms.size() >= 2, "trial needs at least two arms");
        std::set<std::string> seen;
        for (const auto& a : arms) {
            detail::require(!a.empty(), "arm labels must be non-empty");
            detail::require(seen.insert(a).second, "arm labels must be unique");
        }
        policy.validate(arms.size());
        if (prior.beta) prior.beta->validate(arms.size());
    }
};

/// Serializes only the prior section the policy's engine uses.
inline json to_json(const TrialConfig& c) {
    json prior = json::object();
    const json full = to_json(c.prior);
    if (c.policy.method == Method::PointNullBinomial) {
        const auto beta = c.prior.beta_prior(c.arms.size());
        prior["beta"] = {{"a0", beta.a0}, {"b0", beta.b0}, {"a", beta.a}, {"b", beta.b}};
        prior["quad"] = full.at("quad");
    } else if (c.policy.method == Method::PointNullNormal) {
        prior["normal"] = full.at("normal");
        prior["mvn_tol"] = full.at("mvn_tol");
    }
    return {{"id", c.id}, {"arms", c.arms}, {"policy", to_json(c.policy)}, {"prior", prior}, {"seed", c.seed}};
}

/// Parses a trial configuration. A prior section for the other engine than
/// the policy uses (e.g. "normal" only, for an exact binomial policy) is
/// rejected as a method mismatch.
inline TrialConfig trial_config_from_json(const json& j) {
    try {
        TrialConfig c;
        c.id = j.value("id", std::string());
        c.arms = j.at("arms").get<std::vector<std::string>>();
        c.policy = policy_from_json(j.at("policy"));
        if (j.contains("prior")) {
            const auto& p = j.at("prior");
            const bool has_normal = p.contains("normal");
            const bool has_beta = p.contains("beta");
            if (c.policy.method == Method::PointNullBinomial)
                detail::require(has_beta || !has_normal, "prior: binomial policy needs a beta prior, got normal");
            if (c.policy.method == Method::PointNullNormal)
                detail::require(has_normal || !has_beta, "prior: normal policy needs a normal prior, got beta");
            c.prior = evidence_config_from_json(p);
        }
        c.seed = j.value("seed", std::uint64_t{0});
        return c;
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("trial config: ") + e.what());
    }
}

/// Evidence and next-patient allocation after a given number of outcomes.
struct TracePoint {
    std::size_t outcomes = 0;  // outcomes included
    std::optional<std::size_t> patient;  // patient whose outcome was last added
    std::optional<std::size_t> arm;
    std::optional<int> outcome;
    AllocationDecision decision;
};

inline json to_json(const TracePoint& t) {
    json j{{"outcomes", t.outcomes},
           {"patient", t.patient ? json(*t.patient) : json(nullptr)},
           {"arm", t.arm ? json(*t.arm) : json(nullptr)},
           {"outcome", t.outcome ? json(*t.outcome) : json(nullptr)},
           {"allocation", t.decision.allocation.probs},
           {"fallback", t.decision.fallback},
           {"warnings", t.decision.warnings}};
    j["evidence"] = t.decision.evidence ? to_json(*t.decision.evidence) : json(nullptr);
    return j;
}

struct DrawRecord {
    std::size_t patient;
    std::size_t arm;
    AllocationVector allocation;
    bool fallback;
    std::uint64_t rng_counter;
};

inline constexpr int kEventVersion = 1;

/// One trial, rebuilt from its event list. Mutation goes through
/// `check` (throws, no side effects) followed by `apply`, so a caller can
/// persist an event between the two.
class Trial {
public:
    static Trial from_events(std::span<const json> events) {
        detail::require(!events.empty(), "event log is empty");
        Trial t;
        for (const auto& e : events) {
            t.check(e);
            t.apply(e);
        }
        return t;
    }

    static json created_event(const TrialConfig& config, const std::string& ts) {
        config.validate();
        return {{"v", kEventVersion}, {"seq", 1}, {"ts", ts}, {"kind", "created"}, {"config", to_json(config)}};
    }

    const TrialConfig& config() const { return config_; }
    const std::vector<json>& events() const { return events_; }
    const std::vector<TracePoint>& trace() const { return trace_; }
    const std::vector<DrawRecord>& draws() const { return draws_; }
    const TrialState& state() const { return *state_; }

    std::size_t next_patient() const { return last_patient_ + 1; }

    std::vector<std::size_t> pending() const {
        std::vector<std::size_t> out;
        for (const auto& [p, arm] : unrecorded_) out.push_back(p);
        return out;
    }

    /// Allocation for `patient` given the outcomes recorded so far.
    AllocationDecision allocation_for(std::size_t patient) const {
        if (patient == state_->size() + 1 && !trace_.empty()) return trace_.back().decision;
        return next_allocation(*state_, config_.policy, config_.prior, derive_seed(config_.seed, patient), patient);
    }

    json draw_event(std::optional<std::size_t> patient, bool allow_pending, const std::string& ts) const {
        const std::size_t p = patient.value_or(next_patient());
        if (p != next_patient())
            throw Conflict("next patient to draw is " + std::to_string(next_patient()) + ", got " +
                           std::to_string(p));
        if (!unrecorded_.empty() && !allow_pending)
            throw Conflict("patient " + std::to_string(unrecorded_.begin()->first) +
                           " has no recorded outcome; draw with pending=true to proceed");
        const auto decision = allocation_for(p);
        CounterRng rng(config_.seed, p);
        const std::size_t arm = sample_arm(decision.allocation, rng.uniform());
        return {{"v", kEventVersion},      {"seq", events_.size() + 1}, {"ts", ts},
                {"kind", "allocation_drawn"}, {"patient", p},           {"arm", arm},
                {"allocation", decision.allocation.probs}, {"fallback", decision.fallback},
                {"rng_counter", p}};
    }

    json outcome_event(std::size_t patient, std::optional<std::size_t> arm, int outcome, bool external,
                       const std::string& ts) const {
        if (recorded_.contains(patient))
            throw Conflict("outcome for patient " + std::to_string(patient) + " already recorded");
        std::size_t resolved = 0;
        if (auto it = unrecorded_.find(patient); it != unrecorded_.end()) {
            resolved = it->second;
            if (arm && *arm != resolved)
                throw Conflict("patient " + std::to_string(patient) + " was allocated to arm " +
                               std::to_string(resolved));
        } else {
            detail::require(arm.has_value(), "arm is required for an externally assigned patient");
            resolved = *arm;
        }
        json e{{"v", kEventVersion}, {"seq", events_.size() + 1}, {"ts", ts},           {"kind", "outcome_recorded"},
               {"patient", patient},  {"arm", resolved},          {"outcome", outcome}, {"external", external}};
        check(e);
        return e;
    }

    json note_event(const std::string& text, const std::string& ts) const {
        return {{"v", kEventVersion}, {"seq", events_.size() + 1}, {"ts", ts}, {"kind", "note"}, {"text", text}};
    }

    /// Validates an event against the current state without changing it.
    void check(const json& e) const {
        try {
            detail::require(e.at("v").get<int>() == kEventVersion, "unsupported event version");
            const auto seq = e.at("seq").get<std::size_t>();
            if (seq != events_.size() + 1)
                throw Conflict("expected seq " + std::to_string(events_.size() + 1) + ", got " +
                               std::to_string(seq));
            const auto kind = e.at("kind").get<std::string>();
            if (events_.empty()) {
                detail::require(kind == "created", "first event must be 'created'");
                trial_config_from_json(e.at("config")).validate();
                return;
            }
            detail::require(kind != "created", "duplicate 'created' event");
            if (kind == "allocation_drawn") {
                const auto p = e.at("patient").get<std::size_t>();
                if (p != next_patient()) throw Conflict("allocation drawn out of patient order");
                const auto decision = allocation_for(p);
                CounterRng rng(config_.seed, e.at("rng_counter").get<std::uint64_t>());
                if (e.at("rng_counter").get<std::size_t>() != p ||
                    e.at("allocation").get<std::vector<double>>() != decision.allocation.probs ||
                    e.at("arm").get<std::size_t>() != sample_arm(decision.allocation, rng.uniform()))
                    throw InvalidArgument("allocation_drawn event does not match recomputation");
            } else if (kind == "outcome_recorded") {
                const auto p = e.at("patient").get<std::size_t>();
                const auto arm = e.at("arm").get<std::size_t>();
                const int outcome = e.at("outcome").get<int>();
                detail::require(arm < config_.arms.size(), "arm index out of range");
                detail::require(outcome == 0 || outcome == 1, "outcome must be 0 or 1");
                if (recorded_.contains(p)) throw Conflict("outcome for patient " + std::to_string(p) + " already recorded");
                if (!unrecorded_.empty()) {
                    if (p != unrecorded_.begin()->first)
                        throw Conflict("outcomes must be recorded in patient order; next is patient " +
                                       std::to_string(unrecorded_.begin()->first));
                    if (arm != unrecorded_.begin()->second) throw Conflict("arm does not match the drawn allocation");
                } else {
                    if (!e.value("external", false))
                        throw Conflict("no allocation drawn for patient " + std::to_string(p) +
                                       "; set external to record an externally assigned patient");
                    if (p != next_patient())
                        throw Conflict("next patient is " + std::to_string(next_patient()) + ", got " +
                                       std::to_string(p));
                }
            } else if (kind == "note") {
                e.at("text").get<std::string>();
            } else {
                throw InvalidArgument("unknown event kind '" + kind + "'");
            }
        } catch (const json::exception& ex) {
            throw InvalidArgument(std::string("malformed event: ") + ex.what());
        }
    }

    /// Applies an event that passed `check`.
    void apply(const json& e) {
        const auto kind = e.at("kind").get<std::string>();
        if (kind == "created") {
            config_ = trial_config_from_json(e.at("config"));
            state_.emplace(config_.arms.size());
            push_trace({}, {}, {});
        } else if (kind == "allocation_drawn") {
            const auto p = e.at("patient").get<std::size_t>();
            const auto arm = e.at("arm").get<std::size_t>();
            draws_.push_back({p, arm, {e.at("allocation").get<std::vector<double>>()}, e.at("fallback").get<bool>(),
                              e.at("rng_counter").get<std::uint64_t>()});
            unrecorded_[p] = arm;
            last_patient_ = p;
        } else if (kind == "outcome_recorded") {
            const auto p = e.at("patient").get<std::size_t>();
            const auto arm = e.at("arm").get<std::size_t>();
            const int outcome = e.at("outcome").get<int>();
            unrecorded_.erase(p);
            recorded_.insert(p);
            last_patient_ = std::max(last_patient_, p);
            state_->record(arm, outcome);
            push_trace(p, arm, outcome);
        }
        events_.push_back(e);
    }

    json snapshot(bool history = false) const {
        const auto counts = state_->counts();
        const auto& current = trace_.back();
        json j{{"id", config_.id},
               {"arms", config_.arms},
               {"policy", to_json(config_.policy)},
               {"policy_id", config_.policy.id()},
               {"seed", config_.seed},
               {"last_seq", events_.size()},
               {"next_patient", next_patient()},
               {"pending", pending()},
               {"outcomes_recorded", state_->size()},
               {"counts", {{"y", counts.y}, {"n", counts.n}}},
               {"allocation", current.decision.allocation.probs},
               {"fallback", current.decision.fallback},
               {"warnings", current.decision.warnings}};
        j["evidence"] = current.decision.evidence ? to_json(*current.decision.evidence) : json(nullptr);
        if (history) {
            json h = json::array();
            for (const auto& t : trace_) h.push_back(to_json(t));
            j["history"] = std::move(h);
            json d = json::array();
            for (const auto& r : draws_)
                d.push_back({{"patient", r.patient}, {"arm", r.arm}, {"allocation", r.allocation.probs},
                             {"fallback", r.fallback}, {"rng_counter", r.rng_counter}});
            j["draws"] = std::move(d);
        }
        return j;
    }

private:
    void push_trace(std::optional<std::size_t> patient, std::optional<std::size_t> arm, std::optional<int> outcome) {
        const std::size_t next = state_->size() + 1;
        trace_.push_back({state_->size(), patient, arm, outcome,
                          next_allocation(*state_, config_.policy, config_.prior, derive_seed(config_.seed, next),
                                          next)});
    }

    TrialConfig config_;
    std::optional<TrialState> state_;
    std::vector<json> events_;
    std::vector<TracePoint> trace_;
    std::vector<DrawRecord> draws_;
    std::map<std::size_t, std::size_t> unrecorded_;  // patient -> arm
    std::set<std::size_t> recorded_;
    std::size_t last_patient_ = 0;
};

// ---------------------------------------------------------------------------
// Persistence

using Clock = std::function<std::string()>;

/// ISO 8601 UTC timestamp with millisecond resolution.
inline std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

namespace detail {

inline void append_line(const std::filesystem::path& path, const std::string& line, bool create) {
    const int flags = O_WRONLY | O_APPEND | O_CLOEXEC | (create ? O_CREAT | O_EXCL : 0);
    const int fd = ::open(path.c_str(), flags, 0644);
    if (fd < 0) {
        if (create && errno == EEXIST) throw Conflict("trial already exists");
        throw std::runtime_error("cannot open event log " + path.string());
    }
    const std::string data = line + "\n";
    std::size_t written = 0;
    while (written < data.size()) {
        const auto n = ::write(fd, data.data() + written, data.size() - written);
        if (n < 0) {
            if (errno == EINTR) continue;
            ::close(fd);
            throw std::runtime_error("write failed on event log " + path.string());
        }
        written += static_cast<std::size_t>(n);
    }
    const int synced = ::fsync(fd);
    ::close(fd);
    if (synced != 0) throw std::runtime_error("fsync failed on event log " + path.string());
}

inline std::vector<json> read_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("no event log at " + path.string());
    std::vector<json> events;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            events.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw InvalidArgument("corrupt event log line " + std::to_string(events.size() + 1) + ": " + e.what());
        }
    }
    return events;
}

}  // namespace detail

/// Trials stored as `<dir>/<id>.ndjson`. Writes to one trial are serialized
/// by a per-trial lock; reads share it. Loaded trials are cached in memory.
class TrialStore {
public:
    explicit TrialStore(std::filesystem::path dir, Clock clock = utc_now)
        : dir_(std::move(dir)), clock_(std::move(clock)) {
        std::filesystem::create_directories(dir_);
    }

    const std::filesystem::path& dir() const { return dir_; }

    std::filesystem::path log_path(const std::string& id) const { return dir_ / (id + ".ndjson"); }

    /// Creates a trial; a missing id is generated from the configuration.
    json create(json config) {
        if (!config.contains("id") || config.at("id").get<std::string>().empty()) config["id"] = generate_id();
        const auto cfg = trial_config_from_json(config);
        const auto event = Trial::created_event(cfg, clock_());
        std::lock_guard lock(map_mutex_);
        if (cache_.contains(cfg.id)) throw Conflict("trial '" + cfg.id + "' already exists");
        detail::append_line(log_path(cfg.id), event.dump(), true);
        auto entry = std::make_unique<Entry>();
        entry->trial = Trial::from_events(std::span<const json>(&event, 1));
        auto snap = entry->trial.snapshot();
        cache_.emplace(cfg.id, std::move(entry));
        return snap;
    }

    json draw(const std::string& id, std::optional<std::size_t> patient = {}, bool allow_pending = false) {
        auto& e = open(id);
        std::unique_lock lock(e.mutex);
        const auto event = e.trial.draw_event(patient, allow_pending, clock_());
        commit(e, id, event);
        const auto& d = e.trial.draws().back();
        return {{"patient", d.patient},
                {"arm", d.arm},
                {"arm_label", e.trial.config().arms[d.arm]},
                {"allocation", d.allocation.probs},
                {"fallback", d.fallback},
                {"seq", event.at("seq")}};
    }

    json record(const std::string& id, std::size_t patient, std::optional<std::size_t> arm, int outcome,
                bool external = false) {
        auto& e = open(id);
        std::unique_lock lock(e.mutex);
        const auto event = e.trial.outcome_event(patient, arm, outcome, external, clock_());
        commit(e, id, event);
        return e.trial.snapshot();
    }

    json note(const std::string& id, const std::string& text) {
        auto& e = open(id);
        std::unique_lock lock(e.mutex);
        const auto event = e.trial.note_event(text, clock_());
        commit(e, id, event);
        return event;
    }

    json status(const std::string& id, bool history = false) {
        auto& e = open(id);
        std::shared_lock lock(e.mutex);
        return e.trial.snapshot(history);
    }

    json config(const std::string& id) {
        auto& e = open(id);
        std::shared_lock lock(e.mutex);
        return to_json(e.trial.config());
    }

    std::vector<json> events(const std::string& id) {
        auto& e = open(id);
        std::shared_lock lock(e.mutex);
        return e.trial.events();
    }

    /// Snapshot rebuilt from the log on disk, bypassing the cache.
    json replay_snapshot(const std::string& id, bool history = true) const {
        const auto events = detail::read_log(log_path(id));
        return Trial::from_events(events).snapshot(history);
    }

private:
    struct Entry {
        std::shared_mutex mutex;
        Trial trial;
    };

    Entry& open(const std::string& id) {
        std::lock_guard lock(map_mutex_);
        if (auto it = cache_.find(id); it != cache_.end()) return *it->second;
        static const std::regex id_pattern("[A-Za-z0-9_-]{1,64}");
        if (!std::regex_match(id, id_pattern) || !std::filesystem::exists(log_path(id)))
            throw NotFound("trial '" + id + "' not found");
        auto entry = std::make_unique<Entry>();
        entry->trial = Trial::from_events(detail::read_log(log_path(id)));
        return *cache_.emplace(id, std::move(entry)).first->second;
    }

    void commit(Entry& e, const std::string& id, const json& event) {
        e.trial.check(event);
        detail::append_line(log_path(id), event.dump(), false);
        e.trial.apply(event);
    }

    std::string generate_id() {
        std::lock_guard lock(map_mutex_);
        for (std::size_t k = 1;; ++k) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "trial-%04zu", k);
            if (!cache_.contains(buf) && !std::filesystem::exists(log_path(buf))) return buf;
        }
    }

    std::filesystem::path dir_;
    Clock clock_;
    std::mutex map_mutex_;
    std::map<std::string, std::unique_ptr<Entry>> cache_;
};

// ---------------------------------------------------------------------------
// ECMO replay

/// Patient sequence of the ECMO trial: ECMO survived, control died, then ten
/// ECMO survivors. Arm 0 is conventional therapy, arm 1 ECMO.
inline const std::vector<Observation>& ecmo_sequence() {
    static const std::vector<Observation> seq = [] {
        std::vector<Observation> s{{1, 1}, {0, 0}};
        for (int k = 0; k < 10; ++k) s.push_back({1, 1});
        return s;
    }();
    return seq;
}

enum class EcmoMethod { Exact, Normal };

struct EcmoTracePoint {
    std::string method;  // "exact", "normal" or "rpw"
    double p_null = 0.0;  // NaN for rpw
    std::size_t patient = 0;  // outcomes included; 0 = before the first patient
    std::optional<std::size_t> arm;
    std::optional<int> outcome;
    double pi_ecmo = 0.5;  // allocation to ECMO for the next patient
    double pr_minus = std::numeric_limits<double>::quiet_NaN();  // NaN when no evidence
    double pr_null = std::numeric_limits<double>::quiet_NaN();
    double pr_plus = std::numeric_limits<double>::quiet_NaN();
};

inline TrialConfig ecmo_config(EcmoMethod method, double p_null) {
    TrialConfig c;
    c.id = "ecmo";
    c.arms = {"conventional", "ECMO"};
    c.policy.method = method == EcmoMethod::Exact ? Method::PointNullBinomial : Method::PointNullNormal;
    c.policy.estimator = NormalEstimator::Yates;
    c.policy.p_null = p_null;
    return c;
}

/// Replays the ECMO sequence through an in-memory trial per p_null value,
/// and once more under randomized play-the-winner.
inline std::vector<EcmoTracePoint> replay_ecmo(std::span<const double> p_null_grid, EcmoMethod method,
                                               bool include_rpw = true) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto run = [&](TrialConfig cfg, const std::string& label, double p_null, std::vector<EcmoTracePoint>& out) {
        const std::string ts = "1970-01-01T00:00:00.000Z";
        std::vector<json> events{Trial::created_event(cfg, ts)};
        Trial trial = Trial::from_events(events);
        std::size_t patient = 0;
        for (const auto& obs : ecmo_sequence()) {
            const auto e = trial.outcome_event(++patient, obs.arm, obs.outcome, true, ts);
            trial.apply(e);
        }
        for (const auto& t : trial.trace()) {
            EcmoTracePoint p{label, p_null, t.outcomes, t.arm, t.outcome, t.decision.allocation[1], nan, nan, nan};
            if (t.decision.evidence) {
                p.pr_minus = t.decision.evidence->posterior[0];
                p.pr_null = t.decision.evidence->posterior[1];
                p.pr_plus = t.decision.evidence->posterior[2];
            }
            out.push_back(p);
        }
    };

    std::vector<EcmoTracePoint> out;
    const std::string label = method == EcmoMethod::Exact ? "exact" : "normal";
    for (double p0 : p_null_grid) run(ecmo_config(method, p0), label, p0, out);
    if (include_rpw) {
        auto cfg = ecmo_config(method, 1.0);
        cfg.policy = PolicySpec{};
        cfg.policy.method = Method::Rpw;
        run(cfg, "rpw", nan, out);
    }
    return out;
}

inline std::string ecmo_csv(const std::vector<EcmoTracePoint>& trace) {
    auto num = [](double x) { return std::isnan(x) ? std::string() : json(x).dump(); };
    std::string out = "method,p_null,patient,arm,outcome,pi_ecmo,pr_h_minus,pr_h0,pr_h_plus\n";
    for (const auto& t : trace) {
        out += t.method + "," + num(t.p_null) + "," + std::to_string(t.patient) + "," +
               (t.arm ? std::to_string(*t.arm) : "") + "," + (t.outcome ? std::to_string(*t.outcome) : "") + "," +
               num(t.pi_ecmo) + "," + num(t.pr_minus) + "," + num(t.pr_null) + "," + num(t.pr_plus) + "\n";
    }
    return out;
}

}  // namespace brar
