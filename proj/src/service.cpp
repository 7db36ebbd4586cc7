#include "cift/service.hpp"

#include "cift/error.hpp"
#include "cift/util.hpp"

#include "httplib.h"

#include <cmath>
#include <fstream>

namespace cift {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kMaxCompletionTokens = 4096;

Reply error_reply(int status, const std::string& message) { return {status, {{"error", message}}}; }

int status_for(const Error& e) {
    switch (e.code()) {
        case ErrorCode::invalid_input: return 400;
        case ErrorCode::not_found: return 404;
        case ErrorCode::conflict:
        case ErrorCode::corrupt: return 409;
        default: return 500;
    }
}

json last_audit_summary(const fs::path& root) {
    std::ifstream in(root / "audit.jsonl", std::ios::binary);
    std::string line, last;
    while (std::getline(in, line)) {
        if (!trim(line).empty()) last = line;
    }
    if (last.empty()) return nullptr;
    json j = json::parse(last, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return nullptr;
    return {{"cycle_id", j.value("cycle_id", "")},
            {"batch_id", j.value("batch_id", "")},
            {"decision", j.value("decision", "")},
            {"candidate_version", j.value("candidate_version", json(nullptr))},
            {"finished_at", j.value("finished_at", "")}};
}

}  // namespace

InferenceService::InferenceService(fs::path registry_root, std::string admin_token)
    : root_(std::move(registry_root)), admin_token_(std::move(admin_token)) {}

void InferenceService::refresh_metadata(ServingSnapshot& s) const {
    if (root_.empty()) return;
    try {
        s.proxy_version = load_registry(root_).current_version(Role::proxy);
    } catch (const std::exception&) {
        s.proxy_version.reset();
    }
    s.last_cycle = last_audit_summary(root_);
}

void InferenceService::publish(std::shared_ptr<const ServingSnapshot> next) {
    std::lock_guard lock(mu_);
    snapshot_ = std::move(next);
}

std::shared_ptr<const ServingSnapshot> InferenceService::snapshot() const {
    std::lock_guard lock(mu_);
    return snapshot_;
}

void InferenceService::load_current() {
    std::lock_guard swap_lock(swap_mu_);
    const auto st = load_registry(root_);
    const auto v = st.current_version(Role::deployed);
    auto next = std::make_shared<ServingSnapshot>();
    next->model = std::make_shared<const NGramModel>(deserialize(read_artifact(st, Role::deployed, v)));
    next->version = v;
    if (auto cur = snapshot()) next->epoch = cur->epoch;
    refresh_metadata(*next);
    publish(std::move(next));
}

std::uint64_t InferenceService::hot_swap(std::int64_t version, std::string_view artifact, std::string_view expected_digest) {
    std::lock_guard swap_lock(swap_mu_);
    if (sha256_hex(artifact) != expected_digest) {
        throw Error(ErrorCode::conflict, "artifact for version " + std::to_string(version) + " fails its digest check");
    }
    std::shared_ptr<const NGramModel> model;
    try {
        model = std::make_shared<const NGramModel>(deserialize(artifact));
    } catch (const Error& e) {
        throw Error(ErrorCode::conflict, "artifact for version " + std::to_string(version) + " is invalid: " + e.what());
    }
    for (double lp : model->token_logprobs("smoke", "test")) {
        if (!std::isfinite(lp)) throw Error(ErrorCode::conflict, "model version " + std::to_string(version) + " failed smoke scoring");
    }
    auto next = std::make_shared<ServingSnapshot>();
    next->model = std::move(model);
    next->version = version;
    const auto cur = snapshot();
    next->epoch = cur ? cur->epoch + 1 : 1;
    refresh_metadata(*next);
    const auto epoch = next->epoch;
    publish(std::move(next));
    return epoch;
}

std::uint64_t InferenceService::swap_to_registry_version(std::int64_t version) {
    if (root_.empty()) throw Error(ErrorCode::conflict, "service has no registry configured");
    const auto st = load_registry(root_);
    const auto current = st.current_version(Role::deployed);
    if (current != version) {
        throw Error(ErrorCode::conflict, "registry's current deployed version is " + std::to_string(current) +
                                             ", not " + std::to_string(version));
    }
    const auto& m = st.manifest(Role::deployed, version);
    return hot_swap(version, read_file(root_ / m.artifact_path), m.content_digest);
}

Reply InferenceService::handle_complete(const json& req) const {
    const auto snap = snapshot();
    if (!snap) return error_reply(503, "no model loaded yet");
    if (!req.is_object() || !req.contains("prompt") || !req["prompt"].is_string()) {
        return error_reply(400, "request needs a string 'prompt'");
    }
    SamplingOptions opts;
    try {
        opts.max_tokens = req.value("max_tokens", std::size_t{64});
        opts.temperature = req.value("temperature", 1.0);
        opts.seed = req.value("seed", std::uint64_t{0});
        opts.greedy = req.value("greedy", false);
        if (req.contains("stop") && !req["stop"].is_null()) {
            const auto stop = req["stop"].get<std::string>();
            if (stop.size() != 1) return error_reply(400, "'stop' must be a single byte");
            opts.stop_byte = static_cast<std::uint8_t>(stop[0]);
        }
    } catch (const json::exception&) {
        return error_reply(400, "malformed completion parameters");
    }
    if (opts.max_tokens > kMaxCompletionTokens) return error_reply(400, "max_tokens exceeds 4096");
    if (!opts.greedy && !(opts.temperature > 0)) return error_reply(400, "temperature must be positive");
    try {
        auto text = sample(*snap->model, req["prompt"].get_ref<const std::string&>(), opts);
        return {200, {{"text", text}, {"model_version", snap->version}, {"epoch", snap->epoch}}};
    } catch (const Error& e) {
        return error_reply(status_for(e), e.what());
    }
}

Reply InferenceService::handle_logprobs(const json& req) const {
    const auto snap = snapshot();
    if (!snap) return error_reply(503, "no model loaded yet");
    if (!req.is_object() || !req.contains("target") || !req["target"].is_string()) {
        return error_reply(400, "request needs a string 'target'");
    }
    const std::string prefix = req.value("prefix", "");
    try {
        return {200,
                {{"logprobs", snap->model->token_logprobs(prefix, req["target"].get<std::string>())},
                 {"model_version", std::string(to_string(Role::deployed)) + "@" + std::to_string(snap->version)}}};
    } catch (const Error& e) {
        return error_reply(status_for(e), e.what());
    }
}

Reply InferenceService::handle_status() const {
    const auto snap = snapshot();
    if (!snap) {
        return {200, {{"deployed_version", nullptr}, {"proxy_version", nullptr}, {"epoch", 0}, {"last_cycle", nullptr},
                      {"model_loaded", false}}};
    }
    return {200,
            {{"deployed_version", snap->version},
             {"proxy_version", snap->proxy_version ? json(*snap->proxy_version) : json(nullptr)},
             {"epoch", snap->epoch},
             {"last_cycle", snap->last_cycle},
             {"model_loaded", true}}};
}

Reply InferenceService::handle_admin_swap(std::string_view token, const json& req) {
    if (admin_token_.empty()) return error_reply(403, "admin endpoints are disabled (no admin token configured)");
    if (token != admin_token_) return error_reply(401, "bad or missing X-Admin-Token");
    if (!req.is_object() || !req.contains("version") || !req["version"].is_number_integer()) {
        return error_reply(400, "request needs an integer 'version'");
    }
    const auto version = req["version"].get<std::int64_t>();
    try {
        const auto epoch = swap_to_registry_version(version);
        return {200, {{"deployed_version", version}, {"epoch", epoch}}};
    } catch (const Error& e) {
        return error_reply(status_for(e), e.what());
    }
}

// ---------------------------------------------------------------------------

ServiceServer::ServiceServer(InferenceService& service, const std::string& host, int port)
    : server_(std::make_unique<httplib::Server>()) {
    auto send = [](httplib::Response& res, const Reply& r) {
        res.status = r.status;
        res.set_content(r.body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
    };
    auto parse = [](const httplib::Request& req) { return json::parse(req.body, nullptr, false); };
    auto bad_json = [send](httplib::Response& res) { send(res, error_reply(400, "body is not valid JSON")); };

    server_->Post("/v1/complete", [&service, send, parse, bad_json](const httplib::Request& req, httplib::Response& res) {
        auto j = parse(req);
        if (j.is_discarded()) return bad_json(res);
        send(res, service.handle_complete(j));
    });
    server_->Post("/v1/logprobs", [&service, send, parse, bad_json](const httplib::Request& req, httplib::Response& res) {
        auto j = parse(req);
        if (j.is_discarded()) return bad_json(res);
        send(res, service.handle_logprobs(j));
    });
    server_->Get("/v1/status", [&service, send](const httplib::Request&, httplib::Response& res) {
        send(res, service.handle_status());
    });
    for (const char* path : {"/admin/promote", "/admin/rollback"}) {
        server_->Post(path, [&service, send, parse, bad_json](const httplib::Request& req, httplib::Response& res) {
            auto j = parse(req);
            if (j.is_discarded()) return bad_json(res);
            send(res, service.handle_admin_swap(req.get_header_value("X-Admin-Token"), j));
        });
    }

    if (port == 0) {
        port_ = server_->bind_to_any_port(host);
    } else {
        port_ = server_->bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw Error(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

ServiceServer::~ServiceServer() { stop(); }

void ServiceServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace cift
