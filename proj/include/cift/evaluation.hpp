#pragma once

// Candidate-vs-deployed evaluation: exact-match diagnosis accuracy with a
// correct/wrong/fault partition, BLEU, ROUGE-L, pairwise judging and the
// promotion decision.

#include "cift/corpus.hpp"
#include "cift/lm.hpp"

#include "json.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cift {

struct EvalOutcome {
    std::size_t correct = 0;
    std::size_t wrong = 0;
    std::size_t fault = 0;
    std::size_t total = 0;

    /// correct/total; 0 for an empty set.
    double accuracy() const noexcept {
        return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    }
    friend bool operator==(const EvalOutcome&, const EvalOutcome&) = default;
};

/// NFC normalization followed by whitespace trim.
std::string normalize_text(std::string_view text);

/// The "diagnosis" string of a JSON-object output, normalized. nullopt means a
/// fault case (unparseable, wrong shape, or empty diagnosis).
std::optional<std::string> extract_diagnosis(std::string_view model_output);

EvalOutcome exact_match_eval(std::span<const std::string> outputs, std::span<const std::string> truths);

enum class Tokenization { character, whitespace };

std::vector<std::string> tokenize(std::string_view text, Tokenization mode);

/// Unsmoothed BLEU with brevity penalty. The n-gram order is capped at the
/// shorter token count so identical short texts still score 1.
double bleu(std::string_view candidate, std::string_view reference, std::size_t max_n = 4,
            Tokenization mode = Tokenization::character);

/// LCS-based F1.
double rouge_l(std::string_view candidate, std::string_view reference, Tokenization mode = Tokenization::character);

// Pairwise judging ------------------------------------------------------------

/// Raw judgement in the positions the judge was shown.
struct Judgement {
    enum class Pick { a, b, tie } pick = Pick::tie;
    std::string rationale;
};

class Judge {
public:
    virtual ~Judge() = default;
    virtual Judgement judge(std::string_view instruction, std::string_view response_a,
                            std::string_view response_b) = 0;
};

/// Scores each response against an answer key: 2 for an exact diagnosis
/// match, 1 if the key appears anywhere, 0 otherwise.
class MockJudge final : public Judge {
public:
    /// Maps instruction -> expected answer; `fallback_key` is used otherwise.
    explicit MockJudge(std::map<std::string, std::string> keys = {}, std::string fallback_key = {});

    Judgement judge(std::string_view instruction, std::string_view response_a, std::string_view response_b) override;

private:
    int score(std::string_view response, const std::string& key) const;

    std::map<std::string, std::string> keys_;
    std::string fallback_;
};

/// POST /v1/judge {"instruction","response_a","response_b"} ->
/// {"winner":"a"|"b"|"tie","rationale"}.
class HttpJudge final : public Judge {
public:
    explicit HttpJudge(std::string base_url, double timeout_seconds = 30.0);
    Judgement judge(std::string_view instruction, std::string_view response_a, std::string_view response_b) override;

private:
    std::string base_url_;
    double timeout_seconds_;
};

enum class Winner { candidate, deployed, tie };
const char* to_string(Winner w) noexcept;

struct JudgeVerdict {
    Winner winner = Winner::tie;
    std::string rationale;
};

/// Asks the judge in both orders; any disagreement is a tie.
JudgeVerdict judge_compare(Judge& judge, std::string_view instruction, std::string_view candidate_response,
                           std::string_view deployed_response);

struct JudgeTally {
    std::size_t candidate_wins = 0;
    std::size_t deployed_wins = 0;
    std::size_t ties = 0;
    std::size_t total() const noexcept { return candidate_wins + deployed_wins + ties; }
};

// Promotion -------------------------------------------------------------------

enum class Decision { promote, reject, no_decision };
const char* to_string(Decision d) noexcept;

struct PromotionPolicy {
    enum class Mode { accuracy, judge } mode = Mode::accuracy;
    double min_margin = 0.0;

    void validate() const;
};

/// Promote iff candidate accuracy > deployed accuracy + margin. Empty sets and
/// ties reject. Throws if the totals differ.
Decision decide_promotion(const EvalOutcome& candidate, const EvalOutcome& deployed, const PromotionPolicy& policy);
/// Promote iff the candidate won strictly more comparisons.
Decision decide_promotion(const JudgeTally& tally, const PromotionPolicy& policy);

// Model evaluation ----------------------------------------------------------

struct GenerationConfig {
    std::size_t max_tokens = 96;
    double temperature = 0.7;
    bool greedy = true;
    std::uint64_t seed = 0;
    std::optional<std::uint8_t> stop_byte = static_cast<std::uint8_t>('\n');
};

struct ModelEvaluation {
    std::vector<std::string> outputs;
    EvalOutcome outcome;
    double mean_bleu = 0.0;
    double mean_rouge_l = 0.0;
};

/// Generates one output per case from instruction ⧺ separator (case i uses
/// seed + i) and scores it against the truth.
ModelEvaluation evaluate_model(const NGramModel& model, std::span<const ValidationCase> cases,
                               const GenerationConfig& generation, std::string_view separator = "\n");

nlohmann::json to_json(const EvalOutcome& e);

}  // namespace cift
