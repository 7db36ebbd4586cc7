#pragma once

// Three-stage data filter: response length, intra-response semantic
// diversity, then instruction-following difficulty (IFD) under a proxy LM.

#include "cift/corpus.hpp"
#include "cift/lm.hpp"

#include "json.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cift {

enum class LengthUnit { characters, sentences };
enum class DiversityMode { verbatim, mean_pairwise };

struct FilterConfig {
    double length_min = 800;
    LengthUnit length_unit = LengthUnit::characters;
    double diversity_min = 0.5;
    double ifd_min = 0.6;
    DiversityMode diversity_mode = DiversityMode::verbatim;
    std::optional<std::size_t> top_k;
    /// Joined between instruction and response when conditioning.
    std::string separator = "\n";
    SentenceSplitRules sentence_rules;

    void validate() const;
};

enum class Verdict { pass, reject_length, reject_diversity, reject_ifd_low, reject_ifd_anomalous, reject_top_k };

const char* to_string(Verdict v) noexcept;
Verdict verdict_from_string(std::string_view s);

struct ScoredPair {
    InstructionPair pair;
    double length = 0;
    std::size_t sentence_count = 0;
    std::optional<double> diversity;
    std::optional<double> ppl_cond;
    std::optional<double> ppl_uncond;
    std::optional<double> ifd;
    Verdict verdict = Verdict::pass;
    std::string proxy_version;

    friend bool operator==(const ScoredPair&, const ScoredPair&) = default;
};

struct Funnel {
    std::size_t input = 0;
    std::size_t after_length = 0;
    std::size_t after_diversity = 0;
    std::size_t after_ifd = 0;
    std::size_t after_top_k = 0;

    friend bool operator==(const Funnel&, const Funnel&) = default;
};

struct PipelineResult {
    /// Input order, or IFD-descending order when top_k is set.
    std::vector<ScoredPair> kept;
    /// Input order.
    std::vector<ScoredPair> rejected;
    Funnel funnel;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<double> embed(std::string_view sentence) const = 0;
};

/// Bag of hashed character trigrams, L2-normalized. Sentences shorter than
/// three code points hash as a single gram.
class HashedTrigramEmbedder final : public Embedder {
public:
    explicit HashedTrigramEmbedder(std::size_t dimension = 256, std::uint64_t seed = 0x5eedULL);

    std::size_t dimension() const override { return dimension_; }
    std::vector<double> embed(std::string_view sentence) const override;

private:
    std::size_t dimension_;
    std::uint64_t seed_;
};

/// Cosine similarity; 0 when either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

double length_of(const InstructionPair& pair, LengthUnit unit, const SentenceSplitRules& rules = {});

/// 1.0 for fewer than two sentences. Result clamped to [0, 1].
double diversity_score(std::span<const std::vector<double>> embeddings, DiversityMode mode);
double diversity_score(std::span<const std::string> sentences, const Embedder& embedder, DiversityMode mode);

struct IfdScore {
    double ppl_cond;
    double ppl_uncond;
    double ifd;
};

IfdScore ifd_score(const LMBackend& proxy, const InstructionPair& pair, std::string_view separator = "\n");

/// True iff ifd_min <= ifd < 1.
bool ifd_in_band(double ifd, double ifd_min) noexcept;

PipelineResult run_pipeline(const Batch& batch, const FilterConfig& config, const LMBackend& proxy,
                            const Embedder& embedder);

struct FieldStats {
    std::size_t count = 0;
    std::optional<double> min, max, mean, p50, p90, p99;
};

struct ScoreReport {
    std::size_t count = 0;
    FieldStats length, diversity, ppl_cond, ppl_uncond, ifd;
    std::map<std::string, std::size_t> verdicts;
    Funnel funnel;
};

ScoreReport score_report(std::span<const ScoredPair> scored);

// JSON surfaces

nlohmann::json to_json(const ScoredPair& s, LengthUnit unit);
ScoredPair scored_pair_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Funnel& f);
Funnel funnel_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScoreReport& r);
nlohmann::json to_json(const FilterConfig& c);
FilterConfig filter_config_from_json(const nlohmann::json& j);

/// One ScoredPair JSON object per line, kept then rejected order preserved.
std::string scored_jsonl(std::span<const ScoredPair> scored, LengthUnit unit);

}  // namespace cift
