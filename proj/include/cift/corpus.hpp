#pragma once

// Instruction-response batches: ingestion, sentence segmentation, synthetic
// fixtures and general-data mixing.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cift {

struct InstructionPair {
    std::string id;
    std::string instruction;
    std::string response;
    std::string batch_id;
    std::map<std::string, std::string> meta;

    friend bool operator==(const InstructionPair&, const InstructionPair&) = default;
};

struct Batch {
    std::string batch_id;
    std::vector<InstructionPair> pairs;

    std::size_t size() const noexcept { return pairs.size(); }
    friend bool operator==(const Batch&, const Batch&) = default;
};

struct SentenceSplitRules {
    /// Each entry is one UTF-8 encoded code point.
    std::vector<std::string> terminators{".", "!", "?", "。", "！", "？", ";", "；"};
    std::size_t min_sentence_chars = 2;

    void validate() const;
};

/// Parses one JSON object per line. Any malformed line rejects the whole batch
/// with an error listing every bad line number (1-based). Blank lines are
/// skipped.
Batch parse_batch(std::istream& in, const std::string& batch_id);
Batch load_batch(const std::filesystem::path& path, const std::string& batch_id);

std::string serialize_batch(const Batch& batch);
void write_batch(const Batch& batch, const std::filesystem::path& path);

std::vector<std::string> split_sentences(std::string_view text,
                                         const SentenceSplitRules& rules = {});

enum class SynthDomain { medical, general };

struct SynthProfile {
    SynthDomain domain = SynthDomain::medical;
    std::size_t min_sentences = 3;
    std::size_t max_sentences = 8;
    /// Fraction of items rewritten as copies of an earlier item (meta["dup_of"]).
    double duplicate_fraction = 0.0;
    /// Fraction of items with a single-sentence response.
    double short_fraction = 0.0;
    /// Fraction of items whose response repeats one sentence.
    double repetitive_fraction = 0.0;
    /// Restrict medical items to these diagnosis names (empty = built-in list).
    std::vector<std::string> diagnoses;
};

Batch synth_batch(std::uint64_t seed, std::size_t n, const SynthProfile& profile = {},
                  const std::string& batch_id = "synth");

struct ValidationCase {
    std::string instruction;
    std::string truth;
};

/// Held-out diagnosis cases drawn from the same templates as the medical
/// profile.
std::vector<ValidationCase> synth_validation(std::uint64_t seed, std::size_t n,
                                             const std::vector<std::string>& diagnoses = {});

/// Built-in medical diagnosis names used by the synthetic fixtures.
const std::vector<std::string>& builtin_diagnoses();

std::vector<ValidationCase> load_validation(const std::filesystem::path& path);
void write_validation(const std::vector<ValidationCase>& cases, const std::filesystem::path& path);

struct Ratio {
    std::uint64_t num = 1;
    std::uint64_t den = 1;
};

/// Ratio in "a:b" form, or a plain non-negative integer.
Ratio parse_ratio(std::string_view text);

/// All domain pairs plus a seeded uniform sample of round(ratio * |domain|)
/// general pairs, spread evenly through the domain pairs. General ids get a
/// "g:" prefix; meta carries "source" and "origin_batch".
Batch mix_batches(const Batch& domain, const Batch& general, Ratio ratio, std::uint64_t seed);

}  // namespace cift
