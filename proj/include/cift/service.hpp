#pragma once

// HTTP inference over the current deployed model. A request takes one
// immutable snapshot at start and finishes on it; swaps publish a new
// snapshot after the model has been loaded and smoke-scored.

#include "cift/lm.hpp"
#include "cift/registry.hpp"

#include "json.hpp"

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace cift {

struct ServingSnapshot {
    std::shared_ptr<const NGramModel> model;
    std::int64_t version = 0;
    std::uint64_t epoch = 0;
    std::optional<std::int64_t> proxy_version;
    nlohmann::json last_cycle;  // summary of the latest audit record, or null
};

/// Result of an HTTP-shaped call: status code plus JSON body.
struct Reply {
    int status = 200;
    nlohmann::json body;
};

class InferenceService {
public:
    /// `registry_root` empty means swaps only through hot_swap().
    explicit InferenceService(std::filesystem::path registry_root = {}, std::string admin_token = {});

    /// Loads the registry's current deployed model (startup path). Epoch stays 0.
    void load_current();

    /// Verifies the digest, deserializes and smoke-scores off-path, then
    /// publishes. Throws Error(conflict) and keeps the old model on failure.
    /// Returns the new epoch.
    std::uint64_t hot_swap(std::int64_t version, std::string_view artifact, std::string_view expected_digest);

    /// Swap to `version` if it is the registry's current deployed version.
    std::uint64_t swap_to_registry_version(std::int64_t version);

    std::shared_ptr<const ServingSnapshot> snapshot() const;

    Reply handle_complete(const nlohmann::json& request) const;
    Reply handle_logprobs(const nlohmann::json& request) const;
    Reply handle_status() const;
    /// Shared body of /admin/promote and /admin/rollback.
    Reply handle_admin_swap(std::string_view token, const nlohmann::json& request);

private:
    void publish(std::shared_ptr<const ServingSnapshot> next);
    void refresh_metadata(ServingSnapshot& s) const;

    std::filesystem::path root_;
    std::string admin_token_;
    mutable std::mutex mu_;  // guards snapshot_ pointer only
    std::shared_ptr<const ServingSnapshot> snapshot_;
    std::mutex swap_mu_;  // serializes swaps
};

/// Binds the service's routes on host:port (0 picks a free port) and serves
/// on a background thread until stop().
class ServiceServer {
public:
    ServiceServer(InferenceService& service, const std::string& host, int port);
    ~ServiceServer();
    ServiceServer(const ServiceServer&) = delete;
    ServiceServer& operator=(const ServiceServer&) = delete;

    int port() const noexcept { return port_; }
    void stop();

private:
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

}  // namespace cift
