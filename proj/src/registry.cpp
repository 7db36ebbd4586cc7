#include "cift/registry.hpp"

#include "cift/error.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <set>

namespace cift {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Role r) noexcept { return r == Role::deployed ? "deployed-model" : "proxy-model"; }

const char* to_string(Status s) noexcept {
    switch (s) {
        case Status::candidate: return "candidate";
        case Status::promoted: return "promoted";
        case Status::rejected: return "rejected";
        case Status::retired: return "retired";
    }
    return "?";
}

Role role_from_string(std::string_view s) {
    if (s == "deployed-model" || s == "deployed") return Role::deployed;
    if (s == "proxy-model" || s == "proxy") return Role::proxy;
    throw Error(ErrorCode::invalid_input, "unknown role '" + std::string(s) + "'");
}

Status status_from_string(std::string_view s) {
    for (auto st : {Status::candidate, Status::promoted, Status::rejected, Status::retired}) {
        if (s == to_string(st)) return st;
    }
    throw Error(ErrorCode::corrupt, "unknown status '" + std::string(s) + "'");
}

std::int64_t RegistryState::current_version(Role role) const {
    auto it = current.find(role);
    if (it == current.end()) throw Error(ErrorCode::not_found, std::string("no current ") + to_string(role));
    return it->second;
}

const CheckpointManifest* RegistryState::find(Role role, std::int64_t version) const {
    auto r = versions.find(role);
    if (r == versions.end()) return nullptr;
    auto v = r->second.find(version);
    return v == r->second.end() ? nullptr : &v->second;
}

const CheckpointManifest& RegistryState::manifest(Role role, std::int64_t version) const {
    const auto* m = find(role, version);
    if (!m) {
        throw Error(ErrorCode::not_found, std::string("unknown ") + to_string(role) + " version " + std::to_string(version));
    }
    return *m;
}

json to_json(const CheckpointManifest& m) {
    return {{"version", m.version},
            {"parent", m.parent ? json(*m.parent) : json(nullptr)},
            {"role", to_string(m.role)},
            {"status", to_string(m.status)},
            {"artifact_path", m.artifact_path},
            {"metrics", m.metrics},
            {"created_at", m.created_at},
            {"content_digest", m.content_digest}};
}

namespace {

CheckpointManifest manifest_from_json(const json& j) {
    CheckpointManifest m;
    m.version = j.at("version").get<std::int64_t>();
    if (!j.at("parent").is_null()) m.parent = j["parent"].get<std::int64_t>();
    m.role = role_from_string(j.at("role").get<std::string>());
    m.status = status_from_string(j.at("status").get<std::string>());
    m.artifact_path = j.at("artifact_path").get<std::string>();
    m.metrics = j.at("metrics");
    m.created_at = j.at("created_at").get<std::string>();
    m.content_digest = j.at("content_digest").get<std::string>();
    return m;
}

json event_to_json(const RegistryEvent& e) {
    return {{"seq", e.seq},
            {"kind", e.kind},
            {"role", to_string(e.role)},
            {"version", e.version},
            {"previous", e.previous ? json(*e.previous) : json(nullptr)},
            {"created_at", e.created_at}};
}

RegistryEvent event_from_json(const json& j) {
    RegistryEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.kind = j.at("kind").get<std::string>();
    e.role = role_from_string(j.at("role").get<std::string>());
    e.version = j.at("version").get<std::int64_t>();
    if (!j.at("previous").is_null()) e.previous = j["previous"].get<std::int64_t>();
    e.created_at = j.at("created_at").get<std::string>();
    return e;
}

/// Adds a sha256 "checksum" over the document's canonical dump.
std::string sealed_dump(json doc) {
    doc.erase("checksum");
    doc["checksum"] = sha256_hex(doc.dump());
    return doc.dump(2) + "\n";
}

std::optional<json> parse_sealed(const std::string& bytes) {
    json doc = json::parse(bytes, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("checksum") || !doc["checksum"].is_string()) {
        return std::nullopt;
    }
    auto claimed = doc["checksum"].get<std::string>();
    doc.erase("checksum");
    if (sha256_hex(doc.dump()) != claimed) return std::nullopt;
    if (!doc.contains("format_version") || doc["format_version"] != kRegistryFormatVersion) return std::nullopt;
    return doc;
}

fs::path manifest_path(const fs::path& root, std::uint64_t seq) {
    return root / "manifests" / (std::to_string(seq) + ".json");
}

std::string artifact_rel(Role role, std::int64_t version) {
    return std::string("artifacts/") + to_string(role) + "/" + std::to_string(version) + ".bin";
}

std::optional<std::uint64_t> parse_number(std::string_view s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

/// Applies one event record to the state being replayed.
void apply(RegistryState& st, const RegistryEvent& e, const CheckpointManifest& m) {
    auto& versions = st.versions[e.role];
    auto retire = [&](std::optional<std::int64_t> v) {
        if (v && *v != e.version) {
            auto it = versions.find(*v);
            if (it != versions.end()) it->second.status = Status::retired;
        }
    };
    if (e.kind == "init" || e.kind == "register") {
        versions[e.version] = m;
        if (e.kind == "init") st.current[e.role] = e.version;
    } else if (e.kind == "promote" || e.kind == "rollback") {
        retire(e.previous);
        versions[e.version] = m;
        st.current[e.role] = e.version;
    } else if (e.kind == "reject") {
        versions[e.version] = m;
    } else {
        throw Error(ErrorCode::corrupt, "unknown registry event '" + e.kind + "'");
    }
    st.history.push_back(e);
}

struct IndexDoc {
    std::uint64_t generation = 0;
    std::uint64_t max_seq = 0;
    std::map<Role, std::int64_t> current;
};

std::optional<IndexDoc> read_index(const fs::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const Error&) {
        return std::nullopt;
    }
    auto doc = parse_sealed(bytes);
    if (!doc) return std::nullopt;
    try {
        IndexDoc idx;
        idx.generation = doc->at("generation").get<std::uint64_t>();
        idx.max_seq = doc->at("max_seq").get<std::uint64_t>();
        for (auto it = doc->at("current").begin(); it != doc->at("current").end(); ++it) {
            idx.current[role_from_string(it.key())] = it.value().get<std::int64_t>();
        }
        return idx;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::string index_bytes(const RegistryState& st) {
    json cur = json::object();
    for (auto [role, v] : st.current) cur[to_string(role)] = v;
    return sealed_dump({{"format_version", kRegistryFormatVersion},
                        {"generation", st.generation},
                        {"max_seq", st.max_seq},
                        {"current", cur}});
}

std::string manifest_bytes(const RegistryEvent& e, const CheckpointManifest& m) {
    return sealed_dump({{"format_version", kRegistryFormatVersion}, {"event", event_to_json(e)}, {"manifest", to_json(m)}});
}

/// Replays committed manifests for one index generation; nullopt when the
/// generation is inconsistent with the manifests on disk.
std::optional<RegistryState> replay(const fs::path& root, const IndexDoc& idx, std::string* why) {
    RegistryState st;
    st.root = root;
    st.generation = idx.generation;
    st.max_seq = idx.max_seq;
    std::vector<std::uint64_t> seqs;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root / "manifests", ec)) {
        const auto name = entry.path().filename().string();
        if (name.size() <= 5 || name.substr(name.size() - 5) != ".json") continue;
        auto n = parse_number(std::string_view(name).substr(0, name.size() - 5));
        if (n && *n <= idx.max_seq) seqs.push_back(*n);
    }
    if (ec) {
        *why = "cannot list manifests: " + ec.message();
        return std::nullopt;
    }
    std::sort(seqs.begin(), seqs.end());
    for (auto seq : seqs) {
        std::optional<json> doc;
        try {
            doc = parse_sealed(read_file(manifest_path(root, seq)));
        } catch (const Error&) {
        }
        if (!doc) {
            *why = "manifest " + std::to_string(seq) + " is corrupt";
            return std::nullopt;
        }
        try {
            auto e = event_from_json(doc->at("event"));
            auto m = manifest_from_json(doc->at("manifest"));
            if (e.seq != seq) {
                *why = "manifest " + std::to_string(seq) + " carries seq " + std::to_string(e.seq);
                return std::nullopt;
            }
            apply(st, e, m);
        } catch (const std::exception& ex) {
            *why = "manifest " + std::to_string(seq) + ": " + ex.what();
            return std::nullopt;
        }
    }
    if (st.current != idx.current) {
        *why = "index current versions disagree with manifests";
        return std::nullopt;
    }
    return st;
}

void verify_digest(const fs::path& root, const CheckpointManifest& m, const std::string& bytes) {
    if (sha256_hex(bytes) != m.content_digest) {
        throw Error(ErrorCode::corrupt, std::string("artifact digest mismatch for ") + to_string(m.role) + " version " +
                                            std::to_string(m.version) + " (" + (root / m.artifact_path).string() + ")");
    }
}

std::string read_verified(const fs::path& root, const CheckpointManifest& m) {
    std::string bytes;
    try {
        bytes = read_file(root / m.artifact_path);
    } catch (const Error&) {
        throw Error(ErrorCode::corrupt, std::string("artifact missing for ") + to_string(m.role) + " version " +
                                            std::to_string(m.version));
    }
    verify_digest(root, m, bytes);
    return bytes;
}

int acquire_lock(const fs::path& root) {
    const auto path = root / "writer.lock";
    int fd = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd < 0) throw Error(ErrorCode::io, "cannot open " + path.string());
    if (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd);
        throw Error(ErrorCode::conflict, "registry at " + root.string() + " is held by another writer");
    }
    return fd;
}

}  // namespace

RegistryState load_registry(const fs::path& root) {
    const auto primary = root / "index.json";
    const auto previous = root / "index.prev.json";
    if (!fs::exists(primary) && !fs::exists(previous)) {
        throw Error(ErrorCode::not_found, "no registry at " + root.string());
    }
    std::string why = "index.json unreadable";
    std::optional<RegistryState> st;
    if (auto idx = read_index(primary)) st = replay(root, *idx, &why);
    if (!st) {
        std::string why_prev = "index.prev.json unreadable";
        if (auto idx = read_index(previous)) st = replay(root, *idx, &why_prev);
        if (!st) throw Error(ErrorCode::corrupt, "registry at " + root.string() + " is corrupt: " + why + "; " + why_prev);
    }
    for (auto [role, v] : st->current) read_verified(root, st->manifest(role, v));
    return *st;
}

std::string read_artifact(const RegistryState& state, Role role, std::int64_t version) {
    return read_verified(state.root, state.manifest(role, version));
}

// ---------------------------------------------------------------------------

Registry::Registry(RegistryState state, int lock_fd) : state_(std::move(state)), lock_fd_(lock_fd) {}

Registry::Registry(Registry&& other) noexcept
    : state_(std::move(other.state_)),
      lock_fd_(std::exchange(other.lock_fd_, -1)),
      next_seq_(other.next_seq_),
      floor_version_(std::move(other.floor_version_)),
      hook_(std::move(other.hook_)),
      broken_(other.broken_) {}

Registry& Registry::operator=(Registry&& other) noexcept {
    if (this != &other) {
        if (lock_fd_ >= 0) ::close(lock_fd_);
        state_ = std::move(other.state_);
        lock_fd_ = std::exchange(other.lock_fd_, -1);
        next_seq_ = other.next_seq_;
        floor_version_ = std::move(other.floor_version_);
        hook_ = std::move(other.hook_);
        broken_ = other.broken_;
    }
    return *this;
}

Registry::~Registry() {
    if (lock_fd_ >= 0) ::close(lock_fd_);
}

Registry Registry::init(const fs::path& root, std::string_view deployed_artifact, std::string_view proxy_artifact,
                        json metrics) {
    if (deployed_artifact.empty() || proxy_artifact.empty()) {
        throw Error(ErrorCode::invalid_input, "baseline artifacts must be nonempty");
    }
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw Error(ErrorCode::io, "cannot create registry root " + root.string() + ": " + ec.message());
    if (fs::exists(root / "index.json") || fs::exists(root / "index.prev.json")) {
        throw Error(ErrorCode::conflict, "a registry already exists at " + root.string());
    }
    if (fs::exists(root / "manifests") && !fs::is_empty(root / "manifests")) {
        throw Error(ErrorCode::conflict, "incompatible layout at " + root.string() + " (manifests without an index)");
    }
    int fd = acquire_lock(root);
    Registry reg(RegistryState{}, fd);
    reg.state_.root = root;
    const auto at = now_iso8601();
    std::uint64_t seq = 0;
    for (auto [role, bytes] : {std::pair{Role::deployed, deployed_artifact}, std::pair{Role::proxy, proxy_artifact}}) {
        fs::create_directories(root / "artifacts" / to_string(role));
        fs::create_directories(root / "manifests");
        CheckpointManifest m;
        m.version = 0;
        m.role = role;
        m.status = Status::promoted;
        m.artifact_path = artifact_rel(role, 0);
        m.metrics = metrics;
        m.created_at = at;
        m.content_digest = sha256_hex(bytes);
        write_file_atomic(root / m.artifact_path, bytes);
        RegistryEvent e{++seq, "init", role, 0, std::nullopt, at};
        write_file_atomic(manifest_path(root, seq), manifest_bytes(e, m));
        apply(reg.state_, e, m);
        reg.floor_version_[role] = 0;
    }
    reg.state_.max_seq = seq;
    reg.state_.generation = 1;
    write_file_atomic(root / "index.json", index_bytes(reg.state_));
    reg.next_seq_ = seq + 1;
    return reg;
}

Registry Registry::open(const fs::path& root) {
    int fd = acquire_lock(root);
    Registry reg(RegistryState{}, fd);
    reg.state_ = load_registry(root);

    std::uint64_t max_seen = reg.state_.max_seq;
    std::error_code ec;
    for (const auto& entry : fs::directory_iterator(root / "manifests", ec)) {
        const auto name = entry.path().filename().string();
        if (name.ends_with(".tmp")) {
            fs::remove(entry.path(), ec);
            continue;
        }
        const auto stem = name.substr(0, name.find('.'));
        auto n = parse_number(stem);
        if (!n) continue;
        max_seen = std::max(max_seen, *n);
        if (name == stem + ".json" && *n > reg.state_.max_seq) {
            auto aborted = entry.path();
            aborted += ".aborted";
            fs::rename(entry.path(), aborted);
        }
    }
    reg.next_seq_ = max_seen + 1;

    for (auto role : {Role::deployed, Role::proxy}) {
        std::int64_t floor = -1;
        for (const auto& [v, m] : reg.state_.versions[role]) floor = std::max(floor, v);
        for (const auto& entry : fs::directory_iterator(root / "artifacts" / to_string(role), ec)) {
            const auto name = entry.path().filename().string();
            if (name.ends_with(".tmp")) {
                fs::remove(entry.path(), ec);
                continue;
            }
            if (auto n = parse_number(name.substr(0, name.find('.')))) {
                floor = std::max(floor, static_cast<std::int64_t>(*n));
            }
        }
        reg.floor_version_[role] = floor;
    }
    if (fs::exists(root / "index.json.tmp")) fs::remove(root / "index.json.tmp", ec);
    if (fs::exists(root / "index.prev.json.tmp")) fs::remove(root / "index.prev.json.tmp", ec);
    return reg;
}

void Registry::check_usable() const {
    if (broken_) {
        throw Error(ErrorCode::conflict, "registry handle is unusable after a failed write; reopen it");
    }
}

std::int64_t Registry::next_version(Role role) const {
    std::int64_t v = -1;
    if (auto it = floor_version_.find(role); it != floor_version_.end()) v = it->second;
    if (auto it = state_.versions.find(role); it != state_.versions.end() && !it->second.empty()) {
        v = std::max(v, it->second.rbegin()->first);
    }
    return v + 1;
}

void Registry::commit(std::vector<std::pair<RegistryEvent, CheckpointManifest>> changes) {
    try {
        RegistryState next = state_;
        const auto at = now_iso8601();
        std::uint64_t seq = next_seq_;
        for (auto& [event, manifest] : changes) {
            event.seq = seq++;
            event.created_at = at;
            apply(next, event, manifest);
        }
        next.max_seq = seq - 1;
        next.generation = state_.generation + 1;

        for (const auto& [event, manifest] : changes) {
            write_file_atomic(manifest_path(state_.root, event.seq), manifest_bytes(event, manifest), hook_, "manifest");
        }
        write_file_atomic(state_.root / "index.prev.json", index_bytes(state_), hook_, "index_prev");
        write_file_atomic(state_.root / "index.json", index_bytes(next), hook_, "index");
        if (hook_) hook_("commit.done");
        state_ = std::move(next);
        next_seq_ = seq;
    } catch (...) {
        broken_ = true;
        throw;
    }
}

std::int64_t Registry::register_candidate(Role role, std::string_view artifact, json metrics,
                                          std::optional<std::int64_t> parent) {
    check_usable();
    if (artifact.empty()) throw Error(ErrorCode::invalid_input, "candidate artifact is empty");
    const auto version = next_version(role);
    CheckpointManifest m;
    m.version = version;
    m.parent = parent;
    m.role = role;
    m.status = Status::candidate;
    m.artifact_path = artifact_rel(role, version);
    m.metrics = std::move(metrics);
    m.created_at = now_iso8601();
    m.content_digest = sha256_hex(artifact);
    const auto path = state_.root / m.artifact_path;
    if (fs::exists(path)) {
        throw Error(ErrorCode::conflict, "artifact already exists: " + path.string());
    }
    try {
        fs::create_directories(path.parent_path());
        write_file_atomic(path, artifact, hook_, "artifact");
    } catch (...) {
        broken_ = true;
        throw;
    }
    floor_version_[role] = version;
    commit({{RegistryEvent{0, "register", role, version, std::nullopt, {}}, m}});
    return version;
}

const RegistryState& Registry::promote(Role role, std::int64_t version) { return promote_together({{role, version}}); }

const RegistryState& Registry::promote_together(const std::vector<std::pair<Role, std::int64_t>>& targets) {
    check_usable();
    std::vector<std::pair<RegistryEvent, CheckpointManifest>> changes;
    std::set<Role> seen;
    for (const auto& [role, version] : targets) {
        if (!seen.insert(role).second) {
            throw Error(ErrorCode::invalid_input, "cannot promote two " + std::string(to_string(role)) + " versions at once");
        }
        CheckpointManifest m = state_.manifest(role, version);
        if (m.status != Status::candidate) {
            throw Error(ErrorCode::conflict, "cannot promote " + std::string(to_string(role)) + " version " +
                                                 std::to_string(version) + " with status " + to_string(m.status));
        }
        m.status = Status::promoted;
        changes.push_back({RegistryEvent{0, "promote", role, version, state_.current_version(role), {}}, m});
    }
    if (changes.empty()) return state_;
    commit(std::move(changes));
    return state_;
}

const RegistryState& Registry::reject(Role role, std::int64_t version) {
    check_usable();
    CheckpointManifest m = state_.manifest(role, version);
    if (m.status != Status::candidate) {
        throw Error(ErrorCode::conflict, "cannot reject " + std::string(to_string(role)) + " version " +
                                             std::to_string(version) + " with status " + to_string(m.status));
    }
    m.status = Status::rejected;
    commit({{RegistryEvent{0, "reject", role, version, std::nullopt, {}}, m}});
    return state_;
}

const RegistryState& Registry::rollback(Role role, std::int64_t version) {
    check_usable();
    CheckpointManifest m = state_.manifest(role, version);
    const auto previous = state_.current_version(role);
    if (version == previous) return state_;
    if (m.status != Status::promoted && m.status != Status::retired) {
        throw Error(ErrorCode::conflict, "cannot roll back to " + std::string(to_string(role)) + " version " +
                                             std::to_string(version) + " with status " + to_string(m.status));
    }
    read_verified(state_.root, m);
    m.status = Status::promoted;
    commit({{RegistryEvent{0, "rollback", role, version, previous, {}}, m}});
    return state_;
}

std::string Registry::read_artifact(Role role, std::int64_t version) const {
    return read_verified(state_.root, state_.manifest(role, version));
}

json to_json(const RegistryState& s) {
    json versions = json::object();
    for (const auto& [role, vs] : s.versions) {
        json arr = json::array();
        for (const auto& [v, m] : vs) arr.push_back(to_json(m));
        versions[to_string(role)] = arr;
    }
    json current = json::object();
    for (auto [role, v] : s.current) current[to_string(role)] = v;
    json history = json::array();
    for (const auto& e : s.history) history.push_back(event_to_json(e));
    return {{"format_version", kRegistryFormatVersion},
            {"root", s.root.string()},
            {"generation", s.generation},
            {"max_seq", s.max_seq},
            {"current", current},
            {"versions", versions},
            {"history", history}};
}

}  // namespace cift
