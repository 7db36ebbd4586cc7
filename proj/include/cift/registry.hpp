#pragma once

// Versioned checkpoint store. Layout under the root:
//
//   artifacts/<role>/<version>.bin   immutable model bytes
//   manifests/<seq>.json             append-only event records
//   index.json                       atomically replaced; current versions + max seq
//   index.prev.json                  previous index generation (recovery)
//
// A mutation is committed when index.json is replaced. Manifests with a seq
// above the index's max_seq belong to an interrupted operation; the next
// writer renames them to <seq>.json.aborted and never reuses their seq or
// version numbers.

#include "cift/util.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cift {

enum class Role { deployed, proxy };
enum class Status { candidate, promoted, rejected, retired };

const char* to_string(Role r) noexcept;
const char* to_string(Status s) noexcept;
Role role_from_string(std::string_view s);
Status status_from_string(std::string_view s);

inline constexpr int kRegistryFormatVersion = 1;

struct CheckpointManifest {
    std::int64_t version = 0;
    std::optional<std::int64_t> parent;
    Role role = Role::deployed;
    Status status = Status::candidate;
    std::string artifact_path;  // relative to the registry root
    nlohmann::json metrics = nlohmann::json::object();
    std::string created_at;
    std::string content_digest;  // sha256 hex

    friend bool operator==(const CheckpointManifest&, const CheckpointManifest&) = default;
};

struct RegistryEvent {
    std::uint64_t seq = 0;
    std::string kind;  // init | register | promote | reject | rollback
    Role role = Role::deployed;
    std::int64_t version = 0;
    std::optional<std::int64_t> previous;  // current version before promote/rollback
    std::string created_at;

    friend bool operator==(const RegistryEvent&, const RegistryEvent&) = default;
};

struct RegistryState {
    std::filesystem::path root;
    std::uint64_t generation = 0;
    std::uint64_t max_seq = 0;
    /// Latest manifest per (role, version).
    std::map<Role, std::map<std::int64_t, CheckpointManifest>> versions;
    std::map<Role, std::int64_t> current;
    std::vector<RegistryEvent> history;

    std::int64_t current_version(Role role) const;
    const CheckpointManifest& manifest(Role role, std::int64_t version) const;
    const CheckpointManifest* find(Role role, std::int64_t version) const;

    friend bool operator==(const RegistryState&, const RegistryState&) = default;
};

/// Read-only snapshot of a committed registry. Verifies the digests of the
/// current artifacts. Falls back to index.prev.json when index.json is corrupt.
RegistryState load_registry(const std::filesystem::path& root);

/// Reads and digest-checks an artifact of a loaded snapshot.
std::string read_artifact(const RegistryState& state, Role role, std::int64_t version);

/// The single writer. Holds an exclusive lock on the root for its lifetime.
class Registry {
public:
    /// Creates the layout and registers version 0 of each role as promoted.
    static Registry init(const std::filesystem::path& root, std::string_view deployed_artifact,
                         std::string_view proxy_artifact, nlohmann::json metrics = nlohmann::json::object());
    /// Loads and recovers from any interrupted operation.
    static Registry open(const std::filesystem::path& root);

    Registry(Registry&&) noexcept;
    Registry& operator=(Registry&&) noexcept;
    ~Registry();

    const RegistryState& state() const noexcept { return state_; }
    /// False after a failed write; the handle must be reopened.
    bool usable() const noexcept { return !broken_; }

    std::int64_t register_candidate(Role role, std::string_view artifact, nlohmann::json metrics = nlohmann::json::object(),
                                    std::optional<std::int64_t> parent = std::nullopt);
    const RegistryState& promote(Role role, std::int64_t version);
    /// Promotes one candidate per role in a single commit.
    const RegistryState& promote_together(const std::vector<std::pair<Role, std::int64_t>>& targets);
    const RegistryState& reject(Role role, std::int64_t version);
    /// Makes a previously promoted version current again. Rolling back to the
    /// current version is a no-op.
    const RegistryState& rollback(Role role, std::int64_t version);

    std::string read_artifact(Role role, std::int64_t version) const;

    /// Test seam: invoked at every durable-write kill point.
    void set_kill_hook(KillPointHook hook) { hook_ = std::move(hook); }

private:
    Registry(RegistryState state, int lock_fd);

    void check_usable() const;
    void commit(std::vector<std::pair<RegistryEvent, CheckpointManifest>> changes);
    std::int64_t next_version(Role role) const;

    RegistryState state_;
    int lock_fd_ = -1;
    std::uint64_t next_seq_ = 1;
    std::map<Role, std::int64_t> floor_version_;  // highest version number ever seen on disk
    KillPointHook hook_;
    bool broken_ = false;
};

nlohmann::json to_json(const CheckpointManifest& m);
nlohmann::json to_json(const RegistryState& s);

}  // namespace cift
