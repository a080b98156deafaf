#pragma once

// Binds TrialApi to a cpp-httplib server.

#include <map>
#include <string>

#include <httplib.h>

#include "brar/api.hpp"

namespace brar {

inline void bind_routes(httplib::Server& server, TrialApi& api) {
    auto dispatch = [&api](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query[k] = v;
        const auto out = api.handle(req.method, req.path, query, req.body);
        res.status = out.status;
        res.set_content(out.body.dump(), "application/json");
    };
    server.Get(".*", dispatch);
    server.Post(".*", dispatch);
    server.Put(".*", dispatch);
    server.Delete(".*", dispatch);
    server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
}

}  // namespace brar
