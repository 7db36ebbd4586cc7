#pragma once

// Engine configuration file (JSON). Relative paths resolve against the
// directory holding the config file.

#include "cift/corpus.hpp"
#include "cift/evaluation.hpp"
#include "cift/filtering.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace cift {

struct LmSpec {
    int order = 3;
    double alpha = 1.0;
};

struct TrainerConfig {
    enum class Kind { builtin, external } kind = Kind::builtin;
    /// Shell command with {train_file}, {base_artifact} and {out_artifact} placeholders.
    std::string command;
    double timeout_seconds = 600;
};

struct MixingConfig {
    Ratio ratio{1, 1};
    std::filesystem::path general_pool;
    std::uint64_t seed = 0;
    /// When set, the general pool is filtered with these thresholds first.
    std::optional<FilterConfig> filter;
};

struct ValidationConfig {
    std::filesystem::path path;
    PromotionPolicy policy;
    /// Judge-mode backend: empty for the built-in mock, else a judge base URL.
    std::string judge_url;
    double judge_timeout_seconds = 30;
};

struct ServiceConfig {
    /// Base URL the orchestrator notifies; empty disables notification.
    std::string url;
    std::string host = "127.0.0.1";
    int port = 8080;
    /// Environment variable holding the shared admin secret.
    std::string admin_token_env = "CIFT_ADMIN_TOKEN";
};

struct EngineConfig {
    std::filesystem::path root = "registry";
    FilterConfig filter;
    std::size_t embedder_dimension = 256;
    std::optional<MixingConfig> mixing;
    TrainerConfig trainer;
    LmSpec deployed_lm{3, 1.0};
    LmSpec proxy_lm{3, 1.0};
    /// Batch JSONL used to train the version-0 models at init; none means untrained.
    std::optional<std::filesystem::path> baseline_corpus;
    ValidationConfig validation;
    GenerationConfig generation;
    ServiceConfig service;
    std::filesystem::path watch_dir = "incoming";
    int poll_interval_ms = 1000;

    void validate() const;
};

EngineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
EngineConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const EngineConfig& c);

/// Reads the admin token from the configured environment variable ("" if unset).
std::string admin_token(const ServiceConfig& c);

}  // namespace cift
