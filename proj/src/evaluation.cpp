#include "cift/evaluation.hpp"

#include "cift/error.hpp"
#include "cift/util.hpp"

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <cmath>
#include <map>

namespace cift {

using nlohmann::json;

std::string normalize_text(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw Error(ErrorCode::unsupported, "ICU NFC normalizer unavailable");
    icu::UnicodeString src = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    icu::UnicodeString dst = nfc->normalize(src, status);
    if (U_FAILURE(status)) throw Error(ErrorCode::invalid_input, "NFC normalization failed");
    std::string out;
    dst.toUTF8String(out);
    return trim(out);
}

std::optional<std::string> extract_diagnosis(std::string_view model_output) {
    json doc = json::parse(trim(model_output), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
    auto it = doc.find("diagnosis");
    if (it == doc.end() || !it->is_string()) return std::nullopt;
    std::string d = normalize_text(it->get_ref<const std::string&>());
    if (d.empty()) return std::nullopt;
    return d;
}

EvalOutcome exact_match_eval(std::span<const std::string> outputs, std::span<const std::string> truths) {
    if (outputs.size() != truths.size()) {
        throw Error(ErrorCode::invalid_input, "exact-match evaluation needs aligned lists (" +
                                                  std::to_string(outputs.size()) + " outputs, " +
                                                  std::to_string(truths.size()) + " truths)");
    }
    EvalOutcome e;
    e.total = outputs.size();
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        auto d = extract_diagnosis(outputs[i]);
        if (!d) ++e.fault;
        else if (*d == normalize_text(truths[i])) ++e.correct;
        else ++e.wrong;
    }
    return e;
}

std::vector<std::string> tokenize(std::string_view text, Tokenization mode) {
    std::vector<std::string> out;
    if (mode == Tokenization::character) {
        for (auto cp : utf8_codepoints(text)) {
            if (!is_space_codepoint(cp)) out.emplace_back(cp);
        }
        return out;
    }
    std::string cur;
    for (auto cp : utf8_codepoints(text)) {
        if (is_space_codepoint(cp)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.append(cp);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace {

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                          toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

}  // namespace

double bleu(std::string_view candidate, std::string_view reference, std::size_t max_n, Tokenization mode) {
    if (max_n == 0) throw Error(ErrorCode::invalid_input, "BLEU max_n must be >= 1");
    auto cand = tokenize(candidate, mode);
    auto ref = tokenize(reference, mode);
    if (cand.empty() || ref.empty()) return 0.0;
    const std::size_t order = std::min({max_n, cand.size(), ref.size()});
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= order; ++n) {
        auto cc = ngram_counts(cand, n);
        auto rc = ngram_counts(ref, n);
        std::size_t clipped = 0, total = 0;
        for (const auto& [gram, c] : cc) {
            total += c;
            auto it = rc.find(gram);
            if (it != rc.end()) clipped += std::min(c, it->second);
        }
        if (clipped == 0) return 0.0;
        log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
    }
    const double c = static_cast<double>(cand.size());
    const double r = static_cast<double>(ref.size());
    const double bp = std::min(1.0, std::exp(1.0 - r / c));
    return bp * std::exp(log_sum / static_cast<double>(order));
}

double rouge_l(std::string_view candidate, std::string_view reference, Tokenization mode) {
    auto cand = tokenize(candidate, mode);
    auto ref = tokenize(reference, mode);
    if (cand.empty() || ref.empty()) return 0.0;
    std::vector<std::size_t> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
    for (std::size_t i = 1; i <= cand.size(); ++i) {
        for (std::size_t j = 1; j <= ref.size(); ++j) {
            cur[j] = cand[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[ref.size()]);
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(cand.size());
    const double r = lcs / static_cast<double>(ref.size());
    return 2.0 * p * r / (p + r);
}

// ---------------------------------------------------------------------------

MockJudge::MockJudge(std::map<std::string, std::string> keys, std::string fallback_key)
    : keys_(std::move(keys)), fallback_(std::move(fallback_key)) {}

int MockJudge::score(std::string_view response, const std::string& key) const {
    if (key.empty()) return 0;
    auto d = extract_diagnosis(response);
    if (d && *d == normalize_text(key)) return 2;
    return response.find(key) != std::string_view::npos ? 1 : 0;
}

Judgement MockJudge::judge(std::string_view instruction, std::string_view response_a, std::string_view response_b) {
    auto it = keys_.find(std::string(instruction));
    const std::string& key = it == keys_.end() ? fallback_ : it->second;
    const int a = score(response_a, key);
    const int b = score(response_b, key);
    Judgement j;
    j.pick = a > b ? Judgement::Pick::a : (b > a ? Judgement::Pick::b : Judgement::Pick::tie);
    j.rationale = "key match score a=" + std::to_string(a) + " b=" + std::to_string(b);
    return j;
}

const char* to_string(Winner w) noexcept {
    switch (w) {
        case Winner::candidate: return "candidate";
        case Winner::deployed: return "deployed";
        case Winner::tie: return "tie";
    }
    return "?";
}

JudgeVerdict judge_compare(Judge& judge, std::string_view instruction, std::string_view candidate_response,
                           std::string_view deployed_response) {
    using Pick = Judgement::Pick;
    const auto forward = judge.judge(instruction, candidate_response, deployed_response);
    const auto swapped = judge.judge(instruction, deployed_response, candidate_response);
    JudgeVerdict v;
    if (forward.pick == Pick::a && swapped.pick == Pick::b) {
        v.winner = Winner::candidate;
    } else if (forward.pick == Pick::b && swapped.pick == Pick::a) {
        v.winner = Winner::deployed;
    } else {
        v.winner = Winner::tie;
    }
    v.rationale = forward.rationale;
    if (!swapped.rationale.empty() && swapped.rationale != forward.rationale) {
        v.rationale += (v.rationale.empty() ? "" : " | swapped: ") + swapped.rationale;
    }
    return v;
}

const char* to_string(Decision d) noexcept {
    switch (d) {
        case Decision::promote: return "promote";
        case Decision::reject: return "reject";
        case Decision::no_decision: return "no-decision";
    }
    return "?";
}

void PromotionPolicy::validate() const {
    if (!std::isfinite(min_margin) || min_margin < 0.0) {
        throw Error(ErrorCode::invalid_input, "promotion min_margin must be finite and >= 0");
    }
}

Decision decide_promotion(const EvalOutcome& candidate, const EvalOutcome& deployed, const PromotionPolicy& policy) {
    policy.validate();
    if (candidate.total != deployed.total) {
        throw Error(ErrorCode::invalid_input, "candidate and deployed were evaluated on different sets (" +
                                                  std::to_string(candidate.total) + " vs " +
                                                  std::to_string(deployed.total) + " cases)");
    }
    if (candidate.total == 0) return Decision::reject;
    return candidate.accuracy() > deployed.accuracy() + policy.min_margin ? Decision::promote : Decision::reject;
}

Decision decide_promotion(const JudgeTally& tally, const PromotionPolicy& policy) {
    policy.validate();
    if (tally.total() == 0) return Decision::reject;
    return tally.candidate_wins > tally.deployed_wins ? Decision::promote : Decision::reject;
}

ModelEvaluation evaluate_model(const NGramModel& model, std::span<const ValidationCase> cases,
                               const GenerationConfig& generation, std::string_view separator) {
    ModelEvaluation ev;
    std::vector<std::string> truths;
    ev.outputs.reserve(cases.size());
    double bleu_sum = 0, rouge_sum = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        SamplingOptions opts;
        opts.max_tokens = generation.max_tokens;
        opts.temperature = generation.temperature;
        opts.greedy = generation.greedy;
        opts.seed = generation.seed + i;
        opts.stop_byte = generation.stop_byte;
        std::string prompt = cases[i].instruction;
        prompt.append(separator);
        ev.outputs.push_back(sample(model, prompt, opts));
        truths.push_back(cases[i].truth);
        auto d = extract_diagnosis(ev.outputs.back());
        const std::string& hyp = d ? *d : ev.outputs.back();
        bleu_sum += bleu(hyp, cases[i].truth);
        rouge_sum += rouge_l(hyp, cases[i].truth);
    }
    ev.outcome = exact_match_eval(ev.outputs, truths);
    if (!cases.empty()) {
        ev.mean_bleu = bleu_sum / static_cast<double>(cases.size());
        ev.mean_rouge_l = rouge_sum / static_cast<double>(cases.size());
    }
    return ev;
}

json to_json(const EvalOutcome& e) {
    return {{"correct", e.correct}, {"wrong", e.wrong}, {"fault", e.fault}, {"total", e.total},
            {"accuracy", e.accuracy()}};
}

}  // namespace cift
