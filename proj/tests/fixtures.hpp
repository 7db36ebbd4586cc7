#pragma once

// Desk-scale environment: an English general-domain baseline, a Chinese
// medical validation set and seeded synthetic batches.

#include "cift/config.hpp"
#include "cift/corpus.hpp"
#include "cift/orchestrator.hpp"
#include "cift/registry.hpp"
#include "cift/util.hpp"

#include "test_support.hpp"

#include <fstream>

namespace fixtures {

struct EnvOptions {
    bool mixing = true;
    bool init = true;
    std::vector<std::string> validation_diagnoses;  // empty = all built-in
};

class Env {
public:
    explicit Env(EnvOptions opts = {}) {
        cift::SynthProfile general;
        general.domain = cift::SynthDomain::general;
        cift::write_batch(cift::synth_batch(100, 200, general, "baseline"), dir / "baseline.jsonl");
        cift::write_batch(cift::synth_batch(101, 400, general, "general"), dir / "general.jsonl");
        cift::write_validation(cift::synth_validation(9, 40, opts.validation_diagnoses), dir / "validation.jsonl");
        config = cift::config_from_json(base_json(opts.mixing), dir.path());
        if (opts.init) cift::init_registry(config);
    }

    static nlohmann::json base_json(bool mixing) {
        nlohmann::json j = {
            {"root", "registry"},
            {"filter", {{"length_min", 60}, {"diversity_min", 0.5}, {"ifd_min", 0.6}}},
            {"lm", {{"deployed", {{"order", 8}, {"alpha", 1.0}}}, {"proxy", {{"order", 3}, {"alpha", 1.0}}}}},
            {"baseline_corpus", "baseline.jsonl"},
            {"validation", {{"path", "validation.jsonl"}}},
            {"watch_dir", "incoming"},
            {"poll_interval_ms", 50}};
        if (mixing) j["mixing"] = {{"ratio", "1:1"}, {"general_pool", "general.jsonl"}, {"seed", 7}};
        return j;
    }

    std::filesystem::path write_config(const nlohmann::json& j, const std::string& name = "cift.json") const {
        const auto p = dir / name;
        std::ofstream(p) << j.dump(2);
        return p;
    }

    cift::Batch batch(std::uint64_t seed, std::size_t n, const std::string& id,
                      std::vector<std::string> diagnoses = {}) const {
        cift::SynthProfile p;
        p.diagnoses = std::move(diagnoses);
        return cift::synth_batch(seed, n, p, id);
    }

    cift::CycleContext context() const { return cift::CycleContext::open(config); }

    /// Digests of the current artifacts plus the current versions.
    std::string fingerprint() const {
        const auto st = cift::load_registry(config.root);
        std::string out;
        for (auto role : {cift::Role::deployed, cift::Role::proxy}) {
            const auto v = st.current_version(role);
            out += std::string(cift::to_string(role)) + "@" + std::to_string(v) + ":" +
                   cift::sha256_hex(cift::read_artifact(st, role, v)) + ";";
        }
        return out;
    }

    testing_support::TempDir dir;
    cift::EngineConfig config;
};

}  // namespace fixtures
