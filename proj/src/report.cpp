#include "cift/report.hpp"

#include "cift/error.hpp"

#include <cstdio>
#include <sstream>

namespace cift {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<std::string> bin_labels() {
    std::vector<std::string> out;
    char buf[32];
    for (int i = 0; i < 10; ++i) {
        std::snprintf(buf, sizeof buf, "[%.1f,%.1f)", i / 10.0, (i + 1) / 10.0);
        out.emplace_back(buf);
    }
    out.emplace_back(">=1.0");
    return out;
}

std::string cell(const std::optional<double>& v, bool pct = false) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, pct ? "%.1f%%" : "%.3f", pct ? *v * 100.0 : *v);
    return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

}  // namespace

std::string format_percent(double pct) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", pct);
    return buf;
}

ReportDocument render_report(const fs::path& audit_log, const fs::path& registry_root) {
    ReportDocument doc;
    doc.ifd_bins = bin_labels();
    doc.ifd_total.assign(doc.ifd_bins.size(), 0);
    std::vector<CycleRecord> records;
    if (fs::exists(audit_log)) {
        records = read_audit_log(audit_log);
    } else {
        doc.warnings.push_back("no audit log at " + audit_log.string());
    }
    for (const auto& r : records) {
        ReportRow row;
        row.cycle_id = r.cycle_id;
        row.batch_id = r.batch_id;
        row.funnel = r.funnel;
        row.after_mixing = r.after_mixing;
        if (r.funnel.input > 0) {
            row.reduction_pct = 100.0 * static_cast<double>(r.funnel.input - r.funnel.after_top_k) /
                                static_cast<double>(r.funnel.input);
        }
        row.decision = r.decision;
        row.candidate_version = r.candidate_version;
        if (r.candidate_eval) row.candidate_accuracy = r.candidate_eval->accuracy();
        if (r.deployed_eval) row.deployed_accuracy = r.deployed_eval->accuracy();
        row.error = r.error;
        doc.cycles.push_back(row);
        auto hist = r.ifd_histogram;
        hist.resize(doc.ifd_bins.size(), 0);
        for (std::size_t i = 0; i < hist.size(); ++i) doc.ifd_total[i] += hist[i];
        doc.ifd_histograms.push_back(std::move(hist));
        doc.decisions[to_string(r.decision)]++;
    }
    try {
        doc.timeline = load_registry(registry_root).history;
    } catch (const Error& e) {
        doc.warnings.push_back(std::string("registry unavailable: ") + e.what());
    }
    return doc;
}

json to_json(const ReportDocument& doc) {
    json cycles = json::array();
    for (std::size_t i = 0; i < doc.cycles.size(); ++i) {
        const auto& r = doc.cycles[i];
        json funnel = to_json(r.funnel);
        funnel["after_mixing"] = r.after_mixing;
        cycles.push_back({{"cycle_id", r.cycle_id},
                          {"batch_id", r.batch_id},
                          {"funnel", funnel},
                          {"reduction_pct", r.reduction_pct ? json(*r.reduction_pct) : json(nullptr)},
                          {"reduction", r.reduction_pct ? json(format_percent(*r.reduction_pct)) : json(nullptr)},
                          {"decision", to_string(r.decision)},
                          {"candidate_version", r.candidate_version ? json(*r.candidate_version) : json(nullptr)},
                          {"candidate_accuracy", r.candidate_accuracy ? json(*r.candidate_accuracy) : json(nullptr)},
                          {"deployed_accuracy", r.deployed_accuracy ? json(*r.deployed_accuracy) : json(nullptr)},
                          {"error", r.error},
                          {"ifd_histogram", doc.ifd_histograms[i]}});
    }
    json timeline = json::array();
    for (const auto& e : doc.timeline) {
        timeline.push_back({{"seq", e.seq},
                            {"kind", e.kind},
                            {"role", to_string(e.role)},
                            {"version", e.version},
                            {"previous", e.previous ? json(*e.previous) : json(nullptr)},
                            {"created_at", e.created_at}});
    }
    return {{"cycles", cycles},
            {"ifd_bins", doc.ifd_bins},
            {"ifd_total", doc.ifd_total},
            {"timeline", timeline},
            {"decisions", doc.decisions},
            {"warnings", doc.warnings}};
}

std::string render_text(const ReportDocument& doc) {
    std::ostringstream out;
    out << "Cycles\n";
    if (doc.cycles.empty()) out << "  (none)\n";
    else {
        out << "  " << pad("cycle", 7) << pad("batch", 16) << pad("in", 7) << pad("length", 8) << pad("divers", 8)
            << pad("ifd", 7) << pad("top-k", 7) << pad("mixed", 7) << pad("reduced", 9) << pad("cand", 8)
            << pad("deployed", 10) << "decision\n";
        for (const auto& r : doc.cycles) {
            out << "  " << pad(r.cycle_id, 7) << pad(r.batch_id, 16) << pad(std::to_string(r.funnel.input), 7)
                << pad(std::to_string(r.funnel.after_length), 8) << pad(std::to_string(r.funnel.after_diversity), 8)
                << pad(std::to_string(r.funnel.after_ifd), 7) << pad(std::to_string(r.funnel.after_top_k), 7)
                << pad(std::to_string(r.after_mixing), 7)
                << pad(r.reduction_pct ? format_percent(*r.reduction_pct) : "-", 9)
                << pad(cell(r.candidate_accuracy, true), 8) << pad(cell(r.deployed_accuracy, true), 10)
                << to_string(r.decision);
            if (!r.error.empty()) out << " (" << r.error << ")";
            out << "\n";
        }
    }
    out << "\nIFD histogram (all cycles)\n";
    std::size_t peak = 0;
    for (auto c : doc.ifd_total) peak = std::max(peak, c);
    for (std::size_t i = 0; i < doc.ifd_bins.size(); ++i) {
        const std::size_t bar = peak == 0 ? 0 : (doc.ifd_total[i] * 40 + peak - 1) / peak;
        out << "  " << pad(doc.ifd_bins[i], 11) << pad(std::to_string(doc.ifd_total[i]), 7) << std::string(bar, '#')
            << "\n";
    }
    out << "\nVersion timeline\n";
    if (doc.timeline.empty()) out << "  (none)\n";
    for (const auto& e : doc.timeline) {
        out << "  #" << pad(std::to_string(e.seq), 5) << pad(e.kind, 10) << pad(to_string(e.role), 15) << "v"
            << e.version;
        if (e.previous) out << " (was v" << *e.previous << ")";
        out << "  " << e.created_at << "\n";
    }
    out << "\nDecisions\n";
    if (doc.decisions.empty()) out << "  (none)\n";
    for (const auto& [d, n] : doc.decisions) out << "  " << pad(d, 13) << n << "\n";
    for (const auto& w : doc.warnings) out << "\nwarning: " << w << "\n";
    return out.str();
}

}  // namespace cift
