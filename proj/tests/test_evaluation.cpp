#include "cift/error.hpp"
#include "cift/evaluation.hpp"
#include "cift/util.hpp"

#include "oracles.hpp"

#include "httplib.h"

#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <thread>

using namespace cift;

namespace {

std::string diag(const std::string& d) { return "{\"diagnosis\":\"" + d + "\"}"; }

/// Independent clipped-precision BLEU over whitespace tokens.
double bleu_oracle(const std::vector<std::string>& c, const std::vector<std::string>& r, std::size_t max_n) {
    if (c.empty() || r.empty()) return 0;
    const std::size_t order = std::min({max_n, c.size(), r.size()});
    double prod = 1;
    for (std::size_t n = 1; n <= order; ++n) {
        std::vector<std::vector<std::string>> cg, rg;
        for (std::size_t i = 0; i + n <= c.size(); ++i) cg.emplace_back(c.begin() + i, c.begin() + i + n);
        for (std::size_t i = 0; i + n <= r.size(); ++i) rg.emplace_back(r.begin() + i, r.begin() + i + n);
        std::vector<bool> used(rg.size(), false);
        std::size_t hit = 0;
        for (const auto& g : cg) {
            for (std::size_t k = 0; k < rg.size(); ++k) {
                if (!used[k] && rg[k] == g) {
                    used[k] = true;
                    ++hit;
                    break;
                }
            }
        }
        if (hit == 0) return 0;
        prod *= static_cast<double>(hit) / static_cast<double>(cg.size());
    }
    const double bp = c.size() >= r.size() ? 1.0 : std::exp(1.0 - static_cast<double>(r.size()) / c.size());
    return bp * std::pow(prod, 1.0 / order);
}

/// Exponential LCS by subset enumeration, for short token lists.
std::size_t lcs_oracle(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::size_t best = 0;
    for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
        std::vector<std::string> sub;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (mask & (1u << i)) sub.push_back(a[i]);
        }
        std::size_t j = 0;
        for (const auto& t : b) {
            if (j < sub.size() && sub[j] == t) ++j;
        }
        if (j == sub.size()) best = std::max(best, sub.size());
    }
    return best;
}

std::vector<std::string> random_tokens(Rng& rng, std::size_t max_len) {
    std::vector<std::string> out(rng.below(max_len + 1));
    for (auto& t : out) t = std::string(1, static_cast<char>('a' + rng.below(4)));
    return out;
}

std::string join(const std::vector<std::string>& t) {
    std::string s;
    for (const auto& x : t) s += (s.empty() ? "" : " ") + x;
    return s;
}

class ScriptedJudge final : public Judge {
public:
    explicit ScriptedJudge(std::function<Judgement::Pick(std::string_view, std::string_view)> f) : f_(std::move(f)) {}
    Judgement judge(std::string_view, std::string_view a, std::string_view b) override { return {f_(a, b), "scripted"}; }

private:
    std::function<Judgement::Pick(std::string_view, std::string_view)> f_;
};

}  // namespace

TEST(ExtractDiagnosis, WellFormed) {
    EXPECT_EQ(extract_diagnosis(R"({"diagnosis":"flu","evidence":"..."})"), "flu");
    EXPECT_EQ(extract_diagnosis("  {\"diagnosis\": \"  肺炎 \"}\n"), "肺炎");
}

TEST(ExtractDiagnosis, Faults) {
    EXPECT_FALSE(extract_diagnosis("the diagnosis is flu"));
    EXPECT_FALSE(extract_diagnosis(R"({"diagnosis": 42})"));
    EXPECT_FALSE(extract_diagnosis(R"({"diagnosis": ""})"));
    EXPECT_FALSE(extract_diagnosis(R"({"diagnosis": "   "})"));
    EXPECT_FALSE(extract_diagnosis(R"(["flu"])"));
    EXPECT_FALSE(extract_diagnosis(R"({"disease": "flu"})"));
    EXPECT_FALSE(extract_diagnosis(""));
    EXPECT_FALSE(extract_diagnosis("\xff\xfe"));
    EXPECT_FALSE(extract_diagnosis(R"({"diagnosis":"flu"} trailing)"));
}

TEST(ExtractDiagnosis, NfcNormalization) {
    // "é" precomposed vs "e" + combining acute.
    EXPECT_EQ(extract_diagnosis(diag("caf\xc3\xa9")), extract_diagnosis(diag("cafe\xcc\x81")));
    EXPECT_EQ(normalize_text("cafe\xcc\x81"), "caf\xc3\xa9");
}

TEST(ExactMatch, AllCorrect) {
    std::vector<std::string> truths = {"flu", "肺炎", "caf\xc3\xa9"};
    std::vector<std::string> outputs = {diag("flu"), diag("肺炎"), diag("cafe\xcc\x81")};
    auto e = exact_match_eval(outputs, truths);
    EXPECT_EQ(e.correct, 3u);
    EXPECT_EQ(e.fault, 0u);
    EXPECT_DOUBLE_EQ(e.accuracy(), 1.0);
}

TEST(ExactMatch, NoCaseFolding) {
    std::vector<std::string> truths = {"Flu"};
    std::vector<std::string> outputs = {diag("flu")};
    EXPECT_EQ(exact_match_eval(outputs, truths).wrong, 1u);
}

TEST(ExactMatch, EmptyAndMismatch) {
    auto e = exact_match_eval({}, {});
    EXPECT_EQ(e.total, 0u);
    EXPECT_EQ(e.accuracy(), 0.0);
    std::vector<std::string> one = {"a"};
    EXPECT_THROW(exact_match_eval(one, {}), Error);
}

TEST(ExactMatch, TableCounts) {
    std::vector<std::string> outputs, truths;
    for (int i = 0; i < 302; ++i) outputs.push_back(diag("A")), truths.push_back("A");
    for (int i = 0; i < 106; ++i) outputs.push_back(diag("B")), truths.push_back("A");
    for (int i = 0; i < 21; ++i) outputs.push_back("not json"), truths.push_back("A");
    auto e = exact_match_eval(outputs, truths);
    EXPECT_EQ(e, (EvalOutcome{302, 106, 21, 429}));
    EXPECT_NEAR(e.accuracy(), 0.704, 5e-4);
}

TEST(ExactMatch, TrichotomyPartition) {
    Rng rng(21);
    const std::vector<std::string> kinds = {"flu", "cold", "the diagnosis is flu", R"({"diagnosis":1})", ""};
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::string> outputs, truths;
        std::size_t correct = 0, wrong = 0, fault = 0;
        for (std::size_t i = 0, n = rng.below(30); i < n; ++i) {
            const auto k = rng.below(kinds.size());
            truths.push_back("flu");
            if (k < 2) {
                outputs.push_back(diag(kinds[k]));
                (k == 0 ? correct : wrong)++;
            } else {
                outputs.push_back(kinds[k]);
                ++fault;
            }
        }
        auto e = exact_match_eval(outputs, truths);
        ASSERT_EQ(e.correct + e.wrong + e.fault, e.total);
        ASSERT_EQ(e, (EvalOutcome{correct, wrong, fault, outputs.size()}));
        ASSERT_GE(e.accuracy(), 0.0);
        ASSERT_LE(e.accuracy(), 1.0);
    }
}

TEST(Bleu, HandCountedExample) {
    EXPECT_NEAR(bleu("a b c", "a b d", 2, Tokenization::whitespace), std::sqrt(2.0 / 3.0 * 0.5), 1e-12);
    EXPECT_NEAR(bleu("a b c", "a b d", 2, Tokenization::character), std::sqrt(2.0 / 3.0 * 0.5), 1e-12);
}

TEST(Bleu, IdentityDisjointAndEmpty) {
    EXPECT_DOUBLE_EQ(bleu("急性支气管炎", "急性支气管炎"), 1.0);
    EXPECT_DOUBLE_EQ(bleu("肺炎", "肺炎"), 1.0);
    EXPECT_DOUBLE_EQ(bleu("abc", "xyz"), 0.0);
    EXPECT_DOUBLE_EQ(bleu("", "abc"), 0.0);
    EXPECT_DOUBLE_EQ(bleu("   ", "abc"), 0.0);
    EXPECT_THROW(bleu("a", "a", 0), Error);
}

TEST(Bleu, BrevityPenalty) {
    // One-token candidate against a two-token reference: precision 1, BP e^(1-2).
    EXPECT_NEAR(bleu("a", "a b", 4, Tokenization::whitespace), std::exp(-1.0), 1e-12);
    EXPECT_DOUBLE_EQ(bleu("a b c", "a b", 1, Tokenization::whitespace), 2.0 / 3.0);
}

TEST(Bleu, MatchesOracleAndStaysInRange) {
    Rng rng(22);
    for (int trial = 0; trial < 2000; ++trial) {
        auto c = random_tokens(rng, 8), r = random_tokens(rng, 8);
        const std::size_t n = 1 + rng.below(4);
        const double got = bleu(join(c), join(r), n, Tokenization::whitespace);
        ASSERT_NEAR(got, bleu_oracle(c, r, n), 1e-12) << join(c) << " | " << join(r);
        ASSERT_GE(got, 0.0);
        ASSERT_LE(got, 1.0);
    }
}

TEST(RougeL, HandCountedExample) {
    EXPECT_NEAR(rouge_l("a b c d", "a c d", Tokenization::whitespace), 6.0 / 7.0, 1e-12);
    EXPECT_DOUBLE_EQ(rouge_l("肺炎", "肺炎"), 1.0);
    EXPECT_DOUBLE_EQ(rouge_l("ab", "cd"), 0.0);
    EXPECT_DOUBLE_EQ(rouge_l("", ""), 0.0);
}

TEST(RougeL, MatchesOracleSymmetricAndInRange) {
    Rng rng(23);
    for (int trial = 0; trial < 2000; ++trial) {
        auto c = random_tokens(rng, 9), r = random_tokens(rng, 9);
        const double got = rouge_l(join(c), join(r), Tokenization::whitespace);
        const double lcs = static_cast<double>(lcs_oracle(c, r));
        const double want = lcs == 0 ? 0 : 2 * lcs / static_cast<double>(c.size() + r.size());
        ASSERT_NEAR(got, want, 1e-12);
        ASSERT_NEAR(got, rouge_l(join(r), join(c), Tokenization::whitespace), 1e-12);
        ASSERT_GE(got, 0.0);
        ASSERT_LE(got, 1.0);
    }
}

TEST(Tokenize, Modes) {
    EXPECT_EQ(tokenize("肺 炎a", Tokenization::character), (std::vector<std::string>{"肺", "炎", "a"}));
    EXPECT_EQ(tokenize("  ab　cd ", Tokenization::whitespace), (std::vector<std::string>{"ab", "cd"}));
}

TEST(Judge, IdenticalResponsesTie) {
    MockJudge judge({}, "flu");
    EXPECT_EQ(judge_compare(judge, "q", diag("flu"), diag("flu")).winner, Winner::tie);
    EXPECT_EQ(judge_compare(judge, "q", "x", "x").winner, Winner::tie);
}

TEST(Judge, MockPrefersKeyMatch) {
    MockJudge judge(std::map<std::string, std::string>{{"q", "flu"}});
    EXPECT_EQ(judge_compare(judge, "q", "I think flu", "a cold").winner, Winner::candidate);
    EXPECT_EQ(judge_compare(judge, "q", "a cold", "I think flu").winner, Winner::deployed);
    EXPECT_EQ(judge_compare(judge, "q", diag("flu"), "I think flu").winner, Winner::candidate);
    EXPECT_EQ(judge_compare(judge, "other", diag("flu"), "nothing").winner, Winner::tie);
}

TEST(Judge, PositionBiasedJudgeYieldsTie) {
    ScriptedJudge always_a([](std::string_view, std::string_view) { return Judgement::Pick::a; });
    EXPECT_EQ(judge_compare(always_a, "q", "x", "y").winner, Winner::tie);
    ScriptedJudge always_b([](std::string_view, std::string_view) { return Judgement::Pick::b; });
    EXPECT_EQ(judge_compare(always_b, "q", "x", "y").winner, Winner::tie);
}

TEST(Judge, ConsistentJudgeIsOrderInvariant) {
    ScriptedJudge longer([](std::string_view a, std::string_view b) {
        return a.size() > b.size() ? Judgement::Pick::a : a.size() < b.size() ? Judgement::Pick::b : Judgement::Pick::tie;
    });
    Rng rng(24);
    for (int trial = 0; trial < 200; ++trial) {
        auto x = oracle::random_text(rng, 0, 5), y = oracle::random_text(rng, 0, 5);
        auto fwd = judge_compare(longer, "q", x, y).winner;
        auto rev = judge_compare(longer, "q", y, x).winner;
        const Winner mirrored = fwd == Winner::candidate ? Winner::deployed : fwd == Winner::deployed ? Winner::candidate
                                                                                                      : Winner::tie;
        ASSERT_EQ(rev, mirrored);
    }
}

TEST(HttpJudge, SpeaksProtocol) {
    httplib::Server srv;
    std::atomic<int> calls{0};
    srv.Post("/v1/judge", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        ++calls;
        const bool a_flu = body.at("response_a").get<std::string>().find("flu") != std::string::npos;
        res.set_content(nlohmann::json{{"winner", a_flu ? "a" : "b"}, {"rationale", "r"}}.dump(), "application/json");
    });
    const int port = srv.bind_to_any_port("127.0.0.1");
    std::thread t([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    HttpJudge judge("http://127.0.0.1:" + std::to_string(port), 5.0);
    EXPECT_EQ(judge.judge("q", "flu", "cold").pick, Judgement::Pick::a);
    EXPECT_EQ(judge_compare(judge, "q", "cold", "flu").winner, Winner::deployed);
    EXPECT_EQ(calls.load(), 3);
    srv.stop();
    t.join();
}

TEST(HttpJudge, ErrorsPropagate) {
    httplib::Server srv;
    srv.Post("/v1/judge", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"winner":"maybe"})", "application/json");
    });
    const int port = srv.bind_to_any_port("127.0.0.1");
    std::thread t([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    HttpJudge bad("http://127.0.0.1:" + std::to_string(port), 5.0);
    EXPECT_THROW(bad.judge("q", "a", "b"), Error);
    srv.stop();
    t.join();
    HttpJudge gone("http://127.0.0.1:" + std::to_string(port), 1.0);
    try {
        gone.judge("q", "a", "b");
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::backend);
    }
}

TEST(DecidePromotion, Examples) {
    PromotionPolicy p;
    EXPECT_EQ(decide_promotion(EvalOutcome{302, 106, 21, 429}, EvalOutcome{290, 104, 35, 429}, p), Decision::promote);
    EXPECT_EQ(decide_promotion(EvalOutcome{300, 0, 129, 429}, EvalOutcome{300, 129, 0, 429}, p), Decision::reject);
    EXPECT_EQ(decide_promotion(EvalOutcome{70, 30, 0, 100}, EvalOutcome{71, 29, 0, 100}, p), Decision::reject);
    EXPECT_EQ(decide_promotion(EvalOutcome{}, EvalOutcome{}, p), Decision::reject);
    EXPECT_THROW(decide_promotion(EvalOutcome{1, 0, 0, 1}, EvalOutcome{1, 0, 0, 2}, p), Error);
}

TEST(DecidePromotion, Margin) {
    PromotionPolicy p;
    p.min_margin = 0.05;
    EXPECT_EQ(decide_promotion(EvalOutcome{74, 26, 0, 100}, EvalOutcome{70, 30, 0, 100}, p), Decision::reject);
    EXPECT_EQ(decide_promotion(EvalOutcome{76, 24, 0, 100}, EvalOutcome{70, 30, 0, 100}, p), Decision::promote);
    p.min_margin = -1;
    EXPECT_THROW(decide_promotion(EvalOutcome{}, EvalOutcome{}, p), Error);
}

TEST(DecidePromotion, Antisymmetric) {
    Rng rng(25);
    PromotionPolicy p;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.below(20);
        EvalOutcome a{rng.below(n + 1), 0, 0, n}, b{rng.below(n + 1), 0, 0, n};
        a.wrong = n - a.correct;
        b.wrong = n - b.correct;
        auto ab = decide_promotion(a, b, p), ba = decide_promotion(b, a, p);
        if (a.correct == b.correct) {
            ASSERT_EQ(ab, Decision::reject);
            ASSERT_EQ(ba, Decision::reject);
        } else {
            ASSERT_NE(ab, ba);
        }
    }
}

TEST(DecidePromotion, JudgeMode) {
    PromotionPolicy p;
    p.mode = PromotionPolicy::Mode::judge;
    EXPECT_EQ(decide_promotion(JudgeTally{3, 2, 5}, p), Decision::promote);
    EXPECT_EQ(decide_promotion(JudgeTally{2, 2, 5}, p), Decision::reject);
    EXPECT_EQ(decide_promotion(JudgeTally{}, p), Decision::reject);
}

TEST(EvaluateModel, GreedyOutputsAreScored) {
    std::vector<ValidationCase> cases = {{"症状A", "肺炎"}, {"症状B", "胃炎"}};
    std::vector<std::string> corpus = {"症状A\n{\"diagnosis\":\"肺炎\"}\n", "症状B\n{\"diagnosis\":\"胃炎\"}\n"};
    // History must reach back past `{"diagnosis":"` to the distinguishing prompt byte.
    auto model = train(NGramModel(20, 0.01), corpus);
    auto ev = evaluate_model(model, cases, GenerationConfig{});
    ASSERT_EQ(ev.outputs.size(), 2u);
    EXPECT_EQ(ev.outputs[0], "{\"diagnosis\":\"肺炎\"}");
    EXPECT_EQ(ev.outcome, (EvalOutcome{2, 0, 0, 2}));
    EXPECT_DOUBLE_EQ(ev.mean_bleu, 1.0);
    EXPECT_DOUBLE_EQ(ev.mean_rouge_l, 1.0);
    auto again = evaluate_model(model, cases, GenerationConfig{});
    EXPECT_EQ(again.outputs, ev.outputs);
    auto untrained = evaluate_model(NGramModel(3), cases, GenerationConfig{});
    EXPECT_EQ(untrained.outcome.fault, 2u);
}
