#pragma once

// Operator report derived from the audit log and the registry.

#include "cift/filtering.hpp"
#include "cift/orchestrator.hpp"
#include "cift/registry.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cift {

struct ReportRow {
    std::string cycle_id;
    std::string batch_id;
    Funnel funnel;
    std::size_t after_mixing = 0;
    /// Percentage of input pairs removed by filtering; unset for an empty batch.
    std::optional<double> reduction_pct;
    Decision decision = Decision::no_decision;
    std::optional<std::int64_t> candidate_version;
    std::optional<double> candidate_accuracy, deployed_accuracy;
    std::string error;
};

struct ReportDocument {
    std::vector<ReportRow> cycles;
    /// Bin labels shared by all histograms.
    std::vector<std::string> ifd_bins;
    std::vector<std::vector<std::size_t>> ifd_histograms;  // per cycle
    std::vector<std::size_t> ifd_total;
    std::vector<RegistryEvent> timeline;
    std::map<std::string, std::size_t> decisions;
    std::vector<std::string> warnings;
};

ReportDocument render_report(const std::filesystem::path& audit_log, const std::filesystem::path& registry_root);

/// "66.7%" style, one decimal.
std::string format_percent(double pct);

nlohmann::json to_json(const ReportDocument& doc);
std::string render_text(const ReportDocument& doc);

}  // namespace cift
