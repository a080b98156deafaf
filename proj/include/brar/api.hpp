#pragma once

// Transport-independent JSON API over a TrialStore. Errors are returned as
// {"code", "message"} bodies with a matching HTTP status.

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "brar/trial.hpp"

namespace brar {

struct ApiResponse {
    int status = 200;
    json body;
};

inline ApiResponse api_error(int status, const std::string& code, const std::string& message) {
    return {status, {{"code", code}, {"message", message}}};
}

class TrialApi {
public:
    explicit TrialApi(TrialStore& store) : store_(store) {}

    /// Routes:
    ///   GET  /healthz
    ///   POST /trials                         body: trial config
    ///   GET  /trials/{id}
    ///   POST /trials/{id}/draw               body: {"patient"?, "pending"?}
    ///   POST /trials/{id}/outcomes           body: {"patient", "outcome", "arm"?, "external"?}
    ///   GET  /trials/{id}/evidence?history=true
    ///   GET  /trials/{id}/events
    ApiResponse handle(const std::string& method, const std::string& path,
                       const std::map<std::string, std::string>& query, const std::string& body) {
        try {
            return route(method, split(path), query, body);
        } catch (const InvalidArgument& e) {
            return api_error(400, "validation", e.what());
        } catch (const CovarianceError& e) {
            return api_error(400, "validation", e.what());
        } catch (const DegeneratePrior& e) {
            return api_error(400, "validation", e.what());
        } catch (const json::exception& e) {
            return api_error(400, "validation", e.what());
        } catch (const NotFound& e) {
            return api_error(404, "not_found", e.what());
        } catch (const Conflict& e) {
            return api_error(409, "conflict", e.what());
        } catch (const std::exception& e) {
            return api_error(500, "internal", e.what());
        }
    }

private:
    static std::vector<std::string> split(const std::string& path) {
        std::vector<std::string> parts;
        std::string cur;
        for (char c : path) {
            if (c == '/') {
                if (!cur.empty()) parts.push_back(std::move(cur));
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (!cur.empty()) parts.push_back(std::move(cur));
        return parts;
    }

    static json parse_body(const std::string& body) {
        if (body.empty()) return json::object();
        json j;
        try {
            j = json::parse(body);
        } catch (const json::parse_error& e) {
            throw InvalidArgument(std::string("request body is not valid JSON: ") + e.what());
        }
        detail::require(j.is_object(), "request body must be a JSON object");
        return j;
    }

    static bool flag(const std::map<std::string, std::string>& query, const std::string& key) {
        const auto it = query.find(key);
        return it != query.end() && (it->second == "true" || it->second == "1");
    }

    static int parse_outcome(const json& j) {
        const auto& o = j.at("outcome");
        if (o.is_boolean()) return o.get<bool>() ? 1 : 0;
        const int v = o.get<int>();
        detail::require(v == 0 || v == 1, "outcome must be 0 or 1");
        return v;
    }

    ApiResponse route(const std::string& method, const std::vector<std::string>& p,
                      const std::map<std::string, std::string>& query, const std::string& body) {
        if (p.size() == 1 && p[0] == "healthz") {
            if (method != "GET") return not_allowed();
            return {200, {{"status", "ok"}}};
        }
        if (p.empty() || p[0] != "trials") return api_error(404, "not_found", "no such route");

        if (p.size() == 1) {
            if (method != "POST") return not_allowed();
            return {201, store_.create(parse_body(body))};
        }
        const std::string& id = p[1];
        if (p.size() == 2) {
            if (method != "GET") return not_allowed();
            auto snap = store_.status(id, flag(query, "history"));
            snap["config"] = store_.config(id);
            return {200, snap};
        }
        if (p.size() != 3) return api_error(404, "not_found", "no such route");

        const std::string& action = p[2];
        if (action == "draw") {
            if (method != "POST") return not_allowed();
            const auto j = parse_body(body);
            std::optional<std::size_t> patient;
            if (j.contains("patient") && !j.at("patient").is_null()) patient = j.at("patient").get<std::size_t>();
            return {200, store_.draw(id, patient, j.value("pending", false))};
        }
        if (action == "outcomes") {
            if (method != "POST") return not_allowed();
            const auto j = parse_body(body);
            std::optional<std::size_t> arm;
            if (j.contains("arm") && !j.at("arm").is_null()) arm = j.at("arm").get<std::size_t>();
            return {200, store_.record(id, j.at("patient").get<std::size_t>(), arm, parse_outcome(j),
                                       j.value("external", false))};
        }
        if (action == "evidence") {
            if (method != "GET") return not_allowed();
            return {200, store_.status(id, flag(query, "history"))};
        }
        if (action == "events") {
            if (method != "GET") return not_allowed();
            return {200, store_.events(id)};
        }
        return api_error(404, "not_found", "no such route");
    }

    static ApiResponse not_allowed() { return api_error(405, "method_not_allowed", "method not allowed"); }

    TrialStore& store_;
};

}  // namespace brar
