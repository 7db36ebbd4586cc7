// Writes a self-contained demo workspace: baseline and general pools, a
// validation set, a few medical batches and a matching cift.json.

#include "cift/corpus.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic demo workspace for cift", "cift-synth"};
    fs::path out = "demo";
    std::uint64_t seed = 1;
    std::size_t batches = 3, batch_size = 120, validation = 40;
    app.add_option("--out", out, "Output directory");
    app.add_option("--seed", seed, "Base seed");
    app.add_option("--batches", batches, "Number of medical batches");
    app.add_option("--batch-size", batch_size, "Pairs per batch");
    app.add_option("--validation", validation, "Validation cases");
    CLI11_PARSE(app, argc, argv);

    try {
        fs::create_directories(out / "batches");
        cift::SynthProfile general;
        general.domain = cift::SynthDomain::general;
        cift::write_batch(cift::synth_batch(seed * 1000 + 1, 200, general, "baseline"), out / "baseline.jsonl");
        cift::write_batch(cift::synth_batch(seed * 1000 + 2, 400, general, "general"), out / "general.jsonl");
        cift::write_validation(cift::synth_validation(seed * 1000 + 3, validation), out / "validation.jsonl");
        cift::SynthProfile medical;
        medical.duplicate_fraction = 0.1;
        medical.short_fraction = 0.1;
        medical.repetitive_fraction = 0.05;
        for (std::size_t i = 0; i < batches; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "batch-%03zu", i + 1);
            cift::write_batch(cift::synth_batch(seed * 1000 + 10 + i, batch_size, medical, id),
                              out / "batches" / (std::string(id) + ".jsonl"));
        }
        const nlohmann::json cfg = {
            {"root", "registry"},
            {"filter", {{"length_min", 60}, {"diversity_min", 0.5}, {"ifd_min", 0.6}}},
            {"lm", {{"deployed", {{"order", 8}, {"alpha", 1.0}}}, {"proxy", {{"order", 3}, {"alpha", 1.0}}}}},
            {"baseline_corpus", "baseline.jsonl"},
            {"mixing", {{"ratio", "1:1"}, {"general_pool", "general.jsonl"}, {"seed", seed}}},
            {"validation", {{"path", "validation.jsonl"}}},
            {"watch_dir", "incoming"},
            {"service", {{"url", "http://127.0.0.1:8080"}, {"port", 8080}}}};
        std::ofstream(out / "cift.json") << cfg.dump(2) << "\n";
        std::cout << "wrote demo workspace to " << out.string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
