// Command-line front end: evidence calculators, simulation grid runner,
// trial session management, ECMO replay and the HTTP service.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "brar/brar.hpp"
#include "brar/http.hpp"

namespace {

using brar::json;

json read_json(const std::string& path) {
    std::string text;
    if (path == "-") {
        text.assign(std::istreambuf_iterator<char>(std::cin), {});
    } else {
        std::ifstream in(path);
        if (!in) throw brar::InvalidArgument("cannot read " + path);
        text.assign(std::istreambuf_iterator<char>(in), {});
    }
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw brar::InvalidArgument(path + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw brar::InvalidArgument("cannot write " + path);
    out << text;
}

brar::Vector to_vector(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const brar::Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

brar::Matrix to_matrix(const json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    brar::detail::require(!rows.empty(), "matrix must be non-empty");
    brar::Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        brar::detail::require(rows[r].size() == rows[0].size(), "matrix rows differ in length");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

std::optional<brar::AllocationVector> parse_baseline(const json& j, std::size_t treatments) {
    if (!j.contains("baseline") || j.at("baseline").is_null()) return std::nullopt;
    const auto& b = j.at("baseline");
    if (b.is_string()) {
        const auto name = b.get<std::string>();
        if (name == "equal") return brar::AllocationVector::equal(treatments + 1);
        if (name == "dunnett") return brar::dunnett_baseline(treatments);
        throw brar::InvalidArgument("baseline must be 'equal', 'dunnett' or a probability vector");
    }
    brar::AllocationVector v{b.get<std::vector<double>>()};
    v.validate();
    return v;
}

// ---------------------------------------------------------------------------

json run_normal(const json& in) {
    brar::MultiEffectEstimate est{to_vector(in.at("theta_hat")), to_matrix(in.at("cov"))};
    const auto k = est.treatments();
    brar::MvnPrior prior = brar::MvnPrior::equicorrelated(k);
    if (in.contains("prior")) {
        const auto& p = in.at("prior");
        if (p.contains("mean")) prior.mean = to_vector(p.at("mean"));
        if (p.contains("cov")) prior.cov = to_matrix(p.at("cov"));
    }
    const double p_null = in.value("p_null", 0.5);
    brar::NormalEngineOptions opt;
    opt.seed = in.value("seed", std::uint64_t{0});
    opt.mvn_tol = in.value("mvn_tol", opt.mvn_tol);
    const auto r = brar::multi_group_allocation(est, prior, p_null, opt,
                                                parse_baseline(in, static_cast<std::size_t>(k)));
    json out = to_json(r.evidence);
    out["prior"] = r.prior.ordered();
    out["allocation"] = r.allocation.probs;
    out["warnings"] = r.warnings;
    out["converged"] = r.converged;
    return out;
}

struct BinomialRun {
    brar::BinomialData data;
    brar::BinomialRarResult result;
};

BinomialRun run_binomial(const json& in) {
    BinomialRun run;
    run.data = {in.at("y").get<std::vector<int>>(), in.at("n").get<std::vector<int>>()};
    run.data.validate();
    auto prior = brar::BetaPriorSet::uniform(run.data.arms());
    prior.a0 = in.value("a0", 1.0);
    prior.b0 = in.value("b0", 1.0);
    if (in.contains("a")) prior.a = in.at("a").get<std::vector<double>>();
    if (in.contains("b")) prior.b = in.at("b").get<std::vector<double>>();
    run.result = brar::brar_binomial(run.data, prior, in.value("p_null", 0.5), {},
                                     parse_baseline(in, run.data.arms() - 1));
    return run;
}

json binomial_json(const BinomialRun& run) {
    json out = to_json(run.result.evidence);
    out["data"] = {{"y", run.data.y}, {"n", run.data.n}};
    out["prior"] = run.result.prior.ordered();
    out["allocation"] = run.result.allocation.probs;
    out["converged"] = run.result.converged;
    return out;
}

std::string binomial_report(const BinomialRun& run) {
    const auto& ev = run.result.evidence;
    const auto labels = brar::hypothesis_labels(ev.treatments());
    const std::size_t arms = run.data.arms();
    std::vector<std::string> arm_names{"Control"};
    for (std::size_t a = 1; a < arms; ++a) arm_names.push_back("Treatment " + std::to_string(a));

    std::ostringstream out;
    char buf[128];
    out << "DATA\n";
    std::snprintf(buf, sizeof buf, "%-12s %6s %6s %10s\n", "", "Events", "Trials", "Proportion");
    out << buf;
    for (std::size_t a = 0; a < arms; ++a) {
        const double prop = run.data.n[a] > 0 ? static_cast<double>(run.data.y[a]) / run.data.n[a] : 0.0;
        std::snprintf(buf, sizeof buf, "%-12s %6d %6d %10.3f\n", arm_names[a].c_str(), run.data.y[a],
                      run.data.n[a], prop);
        out << buf;
    }

    auto row = [&](const std::vector<std::string>& head, const std::vector<double>& v, const char* fmt) {
        std::string h, line;
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, fmt, v[i]);
            const std::size_t w = std::max(head[i].size(), std::string(buf).size());
            h += std::string(w - head[i].size() + 1, ' ') + head[i];
            line += std::string(w - std::string(buf).size() + 1, ' ') + buf;
        }
        out << h << "\n" << line << "\n";
    };

    out << "\nPRIOR PROBABILITIES\n";
    row(labels, run.result.prior.ordered(), "%.3f");

    out << "\nBAYES FACTORS (BF_ij)\n";
    std::snprintf(buf, sizeof buf, "%-4s", "");
    out << buf;
    for (const auto& l : labels) {
        std::snprintf(buf, sizeof buf, " %9s", l.c_str());
        out << buf;
    }
    out << "\n";
    for (std::size_t j = 0; j < labels.size(); ++j) {
        std::snprintf(buf, sizeof buf, "%-4s", labels[j].c_str());
        out << buf;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            std::snprintf(buf, sizeof buf, " %9.4g", ev.bf(j, i));
            out << buf;
        }
        out << "\n";
    }

    out << "\nPOSTERIOR PROBABILITIES\n";
    row(labels, ev.posterior, "%.5f");

    out << "\nRANDOMIZATION PROBABILITIES\n";
    row(arm_names, run.result.allocation.probs, "%.3f");
    if (!run.result.converged) out << "\nwarning: quadrature did not reach tolerance\n";
    return out.str();
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw brar::InvalidArgument("--pnull: cannot parse '" + item + "'");
        }
        brar::detail::require(out.back() >= 0.0 && out.back() <= 1.0, "--pnull values must lie in [0, 1]");
    }
    brar::detail::require(!out.empty(), "--pnull: empty list");
    return out;
}

int fail(int code, const std::string& kind, const std::string& message) {
    std::cerr << json{{"code", kind}, {"message", message}}.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point-null Bayesian response-adaptive randomization"};
    app.require_subcommand(1);

    // brar-normal
    auto* normal = app.add_subcommand("brar-normal", "Evidence and allocation from normal effect estimates");
    std::string normal_input = "-";
    normal->add_option("-i,--input", normal_input, "JSON input file, '-' for stdin");

    // brar-binomial
    auto* binomial = app.add_subcommand("brar-binomial", "Exact evidence and allocation for binary outcomes");
    std::string binomial_input = "-";
    bool binomial_json_out = false;
    binomial->add_option("-i,--input", binomial_input, "JSON input file, '-' for stdin");
    binomial->add_flag("--json", binomial_json_out, "Machine-readable output");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Run a simulation grid");
    std::string grid_path, sim_out = "results.csv";
    std::optional<std::size_t> nsim;
    std::optional<std::uint64_t> sim_seed;
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    simulate->add_option("--grid", grid_path, "Grid JSON file")->required();
    simulate->add_option("--nsim", nsim, "Repetitions per condition (overrides the grid)");
    simulate->add_option("--seed", sim_seed, "Master seed (overrides the grid)");
    simulate->add_option("--out", sim_out, "CSV output; a JSON mirror is written next to it");
    simulate->add_option("--workers", workers, "Worker threads");

    // trial
    auto* trial = app.add_subcommand("trial", "Manage trial sessions");
    trial->require_subcommand(1);
    std::string trial_dir = "trials", trial_id;
    auto add_common = [&](CLI::App* c, bool need_id) {
        c->add_option("--dir", trial_dir, "Event log directory");
        if (need_id) c->add_option("--id", trial_id, "Trial id")->required();
    };
    auto* t_create = trial->add_subcommand("create", "Create a trial from a JSON configuration");
    std::string config_path = "-";
    add_common(t_create, false);
    t_create->add_option("-c,--config", config_path, "Configuration file, '-' for stdin");
    t_create->add_option("--id", trial_id, "Trial id (overrides the configuration)");

    auto* t_draw = trial->add_subcommand("draw", "Draw the next patient's arm");
    std::optional<std::size_t> draw_patient;
    bool draw_pending = false;
    add_common(t_draw, true);
    t_draw->add_option("--patient", draw_patient, "Patient number (defaults to the next one)");
    t_draw->add_flag("--pending", draw_pending, "Allow drawing while earlier outcomes are outstanding");

    auto* t_record = trial->add_subcommand("record", "Record a patient's outcome");
    std::size_t rec_patient = 0;
    int rec_outcome = 0;
    std::optional<std::size_t> rec_arm;
    bool rec_external = false;
    add_common(t_record, true);
    t_record->add_option("--patient", rec_patient, "Patient number")->required();
    t_record->add_option("--outcome", rec_outcome, "1 = success, 0 = failure")->required()->check(CLI::Range(0, 1));
    t_record->add_option("--arm", rec_arm, "Arm index (required with --external)");
    t_record->add_flag("--external", rec_external, "Patient was assigned outside the service");

    auto* t_status = trial->add_subcommand("status", "Print the current snapshot");
    bool status_history = false;
    add_common(t_status, true);
    t_status->add_flag("--history", status_history, "Include per-patient evidence traces");

    auto* t_export = trial->add_subcommand("export", "Write the event log");
    std::string export_out;
    add_common(t_export, true);
    t_export->add_option("--out", export_out, "Output file (default stdout)");

    // ecmo-replay
    auto* ecmo = app.add_subcommand("ecmo-replay", "Replay the ECMO trial sequence");
    std::string pnull_text = "0,0.25,0.5,0.75,1", ecmo_method = "exact", ecmo_out;
    bool no_rpw = false;
    ecmo->add_option("--pnull", pnull_text, "Comma-separated prior probabilities of H0");
    ecmo->add_option("--method", ecmo_method, "exact or normal")->check(CLI::IsMember({"exact", "normal"}));
    ecmo->add_option("--out", ecmo_out, "CSV output (default stdout)");
    ecmo->add_flag("--no-rpw", no_rpw, "Omit the play-the-winner comparator");

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the trial HTTP API");
    std::string host = "127.0.0.1";
    int port = 8080;
    add_common(serve, false);
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*normal) {
            std::cout << run_normal(read_json(normal_input)).dump(2) << "\n";
        } else if (*binomial) {
            const auto run = run_binomial(read_json(binomial_input));
            if (binomial_json_out)
                std::cout << binomial_json(run).dump(2) << "\n";
            else
                std::cout << binomial_report(run);
        } else if (*simulate) {
            const auto conditions = brar::expand_grid(read_json(grid_path), nsim, sim_seed);
            const auto rows = brar::run_grid_to_files(conditions, workers, sim_out);
            std::cerr << "wrote " << rows.size() << " rows to " << sim_out << "\n";
        } else if (*trial) {
            brar::TrialStore store(trial_dir);
            json out;
            if (*t_create) {
                auto cfg = read_json(config_path);
                if (!trial_id.empty()) cfg["id"] = trial_id;
                out = store.create(cfg);
            } else if (*t_draw) {
                out = store.draw(trial_id, draw_patient, draw_pending);
            } else if (*t_record) {
                out = store.record(trial_id, rec_patient, rec_arm, rec_outcome, rec_external);
            } else if (*t_status) {
                out = store.status(trial_id, status_history);
            } else if (*t_export) {
                std::string text;
                for (const auto& e : store.events(trial_id)) text += e.dump() + "\n";
                write_text(export_out, text);
                return 0;
            }
            std::cout << out.dump(2) << "\n";
        } else if (*ecmo) {
            const auto grid = parse_grid(pnull_text);
            const auto method = ecmo_method == "exact" ? brar::EcmoMethod::Exact : brar::EcmoMethod::Normal;
            write_text(ecmo_out, brar::ecmo_csv(brar::replay_ecmo(grid, method, !no_rpw)));
        } else if (*serve) {
            brar::TrialStore store(trial_dir);
            brar::TrialApi api(store);
            httplib::Server server;
            brar::bind_routes(server, api);
            std::cerr << "listening on " << host << ":" << port << "\n";
            if (!server.listen(host, port)) return fail(1, "internal", "cannot bind " + host + ":" + std::to_string(port));
        }
    } catch (const brar::InvalidArgument& e) {
        return fail(2, "validation", e.what());
    } catch (const brar::CovarianceError& e) {
        return fail(2, "validation", e.what());
    } catch (const brar::DegeneratePrior& e) {
        return fail(2, "validation", e.what());
    } catch (const json::exception& e) {
        return fail(2, "validation", e.what());
    } catch (const brar::NotFound& e) {
        return fail(3, "not_found", e.what());
    } catch (const brar::Conflict& e) {
        return fail(4, "conflict", e.what());
    } catch (const std::exception& e) {
        return fail(1, "internal", e.what());
    }
    return 0;
}
