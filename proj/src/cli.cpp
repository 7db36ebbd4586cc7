#include "cift/cli.hpp"

#include "cift/config.hpp"
#include "cift/error.hpp"
#include "cift/orchestrator.hpp"
#include "cift/report.hpp"
#include "cift/service.hpp"
#include "cift/util.hpp"

#include "CLI11.hpp"

#include <csignal>
#include <chrono>
#include <iostream>
#include <thread>

namespace cift {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::atomic<bool>& cli_stop_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

namespace {

extern "C" void on_stop_signal(int) { cli_stop_flag().store(true); }

void install_stop_handlers() {
    struct sigaction sa {};
    sa.sa_handler = on_stop_signal;
    sigemptyset(&sa.sa_mask);
    ::sigaction(SIGINT, &sa, nullptr);
    ::sigaction(SIGTERM, &sa, nullptr);
}

std::string dump(const json& j, bool pretty = true) {
    return j.dump(pretty ? 2 : -1, ' ', false, json::error_handler_t::replace);
}

std::string batch_id_for(const std::string& explicit_id, const fs::path& path) {
    return explicit_id.empty() ? path.stem().string() : explicit_id;
}

json status_json(const EngineConfig& cfg) {
    const auto st = load_registry(cfg.root);
    json versions = json::object();
    for (const auto& [role, vs] : st.versions) {
        json counts = json::object();
        for (const auto& [v, m] : vs) counts[to_string(m.status)] = counts.value(to_string(m.status), 0) + 1;
        versions[to_string(role)] = counts;
    }
    json last = nullptr;
    const auto audit = cfg.root / "audit.jsonl";
    if (fs::exists(audit)) {
        auto records = read_audit_log(audit);
        if (!records.empty()) {
            const auto& r = records.back();
            last = {{"cycle_id", r.cycle_id}, {"batch_id", r.batch_id}, {"decision", to_string(r.decision)},
                    {"candidate_version", r.candidate_version ? json(*r.candidate_version) : json(nullptr)}};
        }
    }
    return {{"root", cfg.root.string()},
            {"deployed_version", st.current_version(Role::deployed)},
            {"proxy_version", st.current_version(Role::proxy)},
            {"generation", st.generation},
            {"versions", versions},
            {"last_cycle", last}};
}

}  // namespace

int command_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Continual instruction-tuning engine", "cift"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path = "cift.json";
    app.add_option("--config", config_path, "Engine config file (JSON)");

    std::string batch_path, batch_id, out_path, host, role_name = "deployed";
    bool once = false, as_json = false;
    int port = -1;
    std::int64_t version = -1;

    auto* init = app.add_subcommand("init", "Create the registry with version-0 models");
    auto* ingest = app.add_subcommand("ingest", "Validate a batch and queue it in the watch directory");
    ingest->add_option("--batch", batch_path, "Batch JSONL file")->required();
    ingest->add_option("--batch-id", batch_id, "Batch id (default: file stem)");
    auto* score = app.add_subcommand("score", "Filter a batch and write scored pairs without training");
    score->add_option("--batch", batch_path, "Batch JSONL file")->required();
    score->add_option("--batch-id", batch_id, "Batch id (default: file stem)");
    score->add_option("--out", out_path, "Scored JSONL output (default: <root>/scored/<batch>.scored.jsonl)");
    auto* cycle = app.add_subcommand("cycle", "Run one update cycle on a batch");
    cycle->add_option("--batch", batch_path, "Batch JSONL file")->required();
    cycle->add_option("--batch-id", batch_id, "Batch id (default: file stem)");
    auto* daemon = app.add_subcommand("daemon", "Process batches arriving in the watch directory");
    daemon->add_flag("--once", once, "Exit when no batches are pending");
    auto* serve = app.add_subcommand("serve", "Run the inference service");
    serve->add_option("--host", host, "Bind address (default from config)");
    serve->add_option("--port", port, "Port (default from config; 0 picks a free one)");
    auto* rollback = app.add_subcommand("rollback", "Make a previously promoted version current again");
    rollback->add_option("--version", version, "Target version")->required();
    rollback->add_option("--role", role_name, "deployed or proxy")->check(CLI::IsMember({"deployed", "proxy"}));
    auto* status = app.add_subcommand("status", "Show current versions and the last cycle");
    status->add_flag("--json", as_json, "Machine-readable output");
    auto* report = app.add_subcommand("report", "Funnel, histogram and version report");
    report->add_flag("--json", as_json, "Machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return 1;
    }

    try {
        const EngineConfig cfg = load_config(config_path);

        if (init->parsed()) {
            auto reg = init_registry(cfg);
            out << dump({{"root", cfg.root.string()},
                         {"deployed_version", reg.state().current_version(Role::deployed)},
                         {"proxy_version", reg.state().current_version(Role::proxy)}})
                << "\n";
            return 0;
        }
        if (ingest->parsed()) {
            const auto id = batch_id_for(batch_id, batch_path);
            auto batch = load_batch(batch_path, id);
            fs::create_directories(cfg.watch_dir);
            const auto dest = cfg.watch_dir / (id + ".jsonl");
            if (fs::exists(dest)) throw Error(ErrorCode::conflict, "batch " + id + " is already queued at " + dest.string());
            write_batch(batch, dest);
            out << dump({{"batch_id", id}, {"pairs", batch.size()}, {"queued", dest.string()}}) << "\n";
            return 0;
        }
        if (score->parsed()) {
            const auto id = batch_id_for(batch_id, batch_path);
            const auto batch = load_batch(batch_path, id);
            const auto st = load_registry(cfg.root);
            const auto pv = st.current_version(Role::proxy);
            auto model = deserialize(read_artifact(st, Role::proxy, pv));
            model.set_version(std::string(to_string(Role::proxy)) + "@" + std::to_string(pv));
            const NGramBackend proxy(std::move(model));
            const auto result = run_pipeline(batch, cfg.filter, proxy, HashedTrigramEmbedder(cfg.embedder_dimension));
            std::vector<ScoredPair> all = result.kept;
            all.insert(all.end(), result.rejected.begin(), result.rejected.end());
            const fs::path dest = out_path.empty() ? cfg.root / "scored" / (id + ".scored.jsonl") : fs::path(out_path);
            if (!dest.parent_path().empty()) fs::create_directories(dest.parent_path());
            write_file_atomic(dest, scored_jsonl(all, cfg.filter.length_unit));
            out << dump({{"batch_id", id},
                         {"proxy_version", proxy.version()},
                         {"funnel", to_json(result.funnel)},
                         {"kept", result.kept.size()},
                         {"rejected", result.rejected.size()},
                         {"out", dest.string()}})
                << "\n";
            return 0;
        }
        if (cycle->parsed()) {
            const auto batch = load_batch(batch_path, batch_id_for(batch_id, batch_path));
            auto ctx = CycleContext::open(cfg);
            const auto rec = run_cycle(ctx, batch);
            out << dump(to_json(rec)) << "\n";
            if (!rec.error.empty()) {
                err << "cycle " << rec.cycle_id << " ended without a decision: " << rec.error << "\n";
                return 2;
            }
            return 0;
        }
        if (daemon->parsed()) {
            install_stop_handlers();
            auto ctx = CycleContext::open(cfg);
            DaemonOptions opts{cfg.watch_dir, cfg.poll_interval_ms, once};
            const auto n = run_daemon(ctx, opts, cli_stop_flag(), [&](const CycleRecord& r) {
                out << dump(to_json(r), false) << std::endl;
            });
            err << "processed " << n << " batch file(s)\n";
            return 0;
        }
        if (serve->parsed()) {
            install_stop_handlers();
            InferenceService service(cfg.root, admin_token(cfg.service));
            service.load_current();
            ServiceServer server(service, host.empty() ? cfg.service.host : host, port < 0 ? cfg.service.port : port);
            out << dump({{"listening", (host.empty() ? cfg.service.host : host) + ":" + std::to_string(server.port())}},
                        false)
                << std::endl;
            while (!cli_stop_flag().load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
            server.stop();
            return 0;
        }
        if (rollback->parsed()) {
            const Role role = role_from_string(role_name);
            {
                auto reg = Registry::open(cfg.root);
                reg.rollback(role, version);
            }
            if (role == Role::deployed && !cfg.service.url.empty()) {
                try {
                    HttpServiceNotifier(cfg.service.url, admin_token(cfg.service)).rolled_back(version);
                } catch (const std::exception& e) {
                    err << "warning: registry rolled back but the service was not notified: " << e.what() << "\n";
                }
            }
            out << dump(status_json(cfg)) << "\n";
            return 0;
        }
        if (status->parsed()) {
            const auto s = status_json(cfg);
            if (as_json) {
                out << dump(s) << "\n";
            } else {
                out << "registry:         " << s["root"].get<std::string>() << "\n"
                    << "deployed version: " << s["deployed_version"] << "\n"
                    << "proxy version:    " << s["proxy_version"] << "\n"
                    << "generation:       " << s["generation"] << "\n"
                    << "last cycle:       " << (s["last_cycle"].is_null() ? "none" : dump(s["last_cycle"], false))
                    << "\n";
            }
            return 0;
        }
        if (report->parsed()) {
            const auto doc = render_report(cfg.root / "audit.jsonl", cfg.root);
            for (const auto& w : doc.warnings) err << "warning: " << w << "\n";
            if (as_json) out << dump(to_json(doc)) << "\n";
            else out << render_text(doc);
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.is_user_error() ? 1 : 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace cift
