#pragma once

// One update cycle per arriving batch: filter with the current proxy, mix in
// general data, train a candidate, evaluate it against the deployed model,
// then promote (with proxy co-update) or discard.

#include "cift/config.hpp"
#include "cift/evaluation.hpp"
#include "cift/filtering.hpp"
#include "cift/registry.hpp"

#include "json.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cift {

struct PhaseTimings {
    double load_ms = 0, filter_ms = 0, mix_ms = 0, train_ms = 0, eval_ms = 0, commit_ms = 0, total_ms = 0;
};

struct CycleRecord {
    std::string cycle_id;
    std::string batch_id;
    Funnel funnel;
    std::size_t after_mixing = 0;
    std::string proxy_version;
    std::int64_t deployed_version = 0;
    std::optional<std::int64_t> candidate_version;
    std::optional<EvalOutcome> candidate_eval;
    std::optional<EvalOutcome> deployed_eval;
    std::optional<double> candidate_bleu, candidate_rouge_l;
    std::optional<JudgeTally> judge;
    Decision decision = Decision::no_decision;
    std::optional<std::int64_t> new_proxy_version;
    /// Set when the cycle failed (decision is then no-decision).
    std::string error;
    /// Set when the service could not be notified of a promotion.
    std::string service_error;
    /// IFD histogram of scored pairs: ten bins over [0, 1) and one for >= 1.
    std::vector<std::size_t> ifd_histogram;
    PhaseTimings timings;
    std::string started_at, finished_at;
};

nlohmann::json to_json(const CycleRecord& r);
CycleRecord cycle_record_from_json(const nlohmann::json& j);
/// The record without wall-clock fields, for determinism comparisons.
nlohmann::json deterministic_view(const CycleRecord& r);

std::vector<CycleRecord> read_audit_log(const std::filesystem::path& path);

/// Orchestrator-side client of the inference service's admin surface.
class ServiceNotifier {
public:
    virtual ~ServiceNotifier() = default;
    virtual void promoted(std::int64_t version) = 0;
    virtual void rolled_back(std::int64_t version) = 0;
};

class HttpServiceNotifier final : public ServiceNotifier {
public:
    HttpServiceNotifier(std::string base_url, std::string admin_token, double timeout_seconds = 30);
    void promoted(std::int64_t version) override;
    void rolled_back(std::int64_t version) override;

private:
    void post(const std::string& path, std::int64_t version);
    std::string base_url_, token_;
    double timeout_seconds_;
};

/// Produces candidate artifact bytes from the base artifact and training sequences.
using TrainerFn = std::function<std::string(const std::string& base_artifact, const std::vector<std::string>& sequences)>;

/// Runs an external trainer command: writes the sequences as JSONL
/// {"text": ...} to {train_file}, the base to {base_artifact}, and reads
/// {out_artifact} back. Files live in `work_dir`.
std::string external_train(const TrainerConfig& hook, const std::string& base_artifact,
                           const std::vector<std::string>& sequences, const std::filesystem::path& work_dir);

/// Adds the sequences' counts to a serialized n-gram model.
std::string builtin_train(const std::string& base_artifact, const std::vector<std::string>& sequences);

struct CycleContext {
    EngineConfig config;
    Registry registry;
    std::shared_ptr<ServiceNotifier> notifier;  // may be null
    /// Overrides the trainer from the config (test seam).
    TrainerFn trainer;
    /// Overrides the judge from the config (test seam).
    std::shared_ptr<Judge> judge;

    /// Opens the registry at config.root and wires the notifier from the config.
    static CycleContext open(EngineConfig config);
};

/// Builds the version-0 models described by the config and initializes the registry.
Registry init_registry(const EngineConfig& config);

/// Never throws for cycle-level failures: they come back as a no-decision
/// record with `error` set. The record is appended to <root>/audit.jsonl and
/// the scored pairs written to <root>/cycles/<cycle_id>.scored.jsonl.
CycleRecord run_cycle(CycleContext& ctx, const Batch& batch);

/// Appends a record for a batch that could not be loaded.
CycleRecord record_failed_batch(CycleContext& ctx, const std::string& batch_id, const std::string& error);

struct DaemonOptions {
    std::filesystem::path watch_dir;
    int poll_interval_ms = 1000;
    /// Return once the directory has no pending files.
    bool once = false;
};

/// Processes *.jsonl files in lexicographic order, moving each to done/ or
/// failed/. Checks `stop` between cycles and while idle. Returns the number
/// of files processed.
std::size_t run_daemon(CycleContext& ctx, const DaemonOptions& options, const std::atomic<bool>& stop,
                       const std::function<void(const CycleRecord&)>& on_record = {});

}  // namespace cift
