#include "cift/corpus.hpp"
#include "cift/error.hpp"
#include "cift/util.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace cift;

namespace {

Batch parse(const std::string& text, const std::string& id = "b") {
    std::istringstream in(text);
    return parse_batch(in, id);
}

std::string strip_ws(const std::string& s) {
    std::string out;
    for (auto cp : utf8_codepoints(s)) {
        if (!is_space_codepoint(cp)) out.append(cp);
    }
    return out;
}

}  // namespace

TEST(LoadBatch, SynthesizesSequentialIds) {
    auto b = parse(R"({"instruction":"a","response":"x"}
{"instruction":"b","response":"y"}
{"instruction":"c","response":"z","meta":{"k":"v"}}
)");
    ASSERT_EQ(b.size(), 3u);
    EXPECT_EQ(b.pairs[0].id, "0");
    EXPECT_EQ(b.pairs[1].id, "1");
    EXPECT_EQ(b.pairs[2].id, "2");
    EXPECT_EQ(b.pairs[2].meta.at("k"), "v");
    EXPECT_EQ(b.pairs[1].batch_id, "b");
}

TEST(LoadBatch, MalformedLineRejectsWholeBatch) {
    std::string text;
    for (int i = 0; i < 10; ++i) {
        text += i == 4 ? "{not json\n" : R"({"instruction":"i","response":"r"})" "\n";
    }
    try {
        parse(text);
        FAIL() << "expected error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::invalid_input);
        std::string what = e.what();
        EXPECT_NE(what.find("1 bad line(s) [5]"), std::string::npos) << what;
    }
}

TEST(LoadBatch, ReportsEveryBadLine) {
    try {
        parse(R"({"instruction":"i"}
{"instruction":"i","response":"r"}
[1,2]
{"instruction":"i","response":""}
)");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("3 bad line(s) [1,3,4]"), std::string::npos) << e.what();
    }
}

TEST(LoadBatch, DuplicateIdsRejected) {
    EXPECT_THROW(parse(R"({"id":"x","instruction":"i","response":"r"}
{"id":"x","instruction":"j","response":"s"})"),
                 Error);
}

TEST(LoadBatch, EmptyFileIsEmptyBatch) {
    auto b = parse("");
    EXPECT_EQ(b.size(), 0u);
}

TEST(LoadBatch, MissingFileIsNotFound) {
    try {
        load_batch("/nonexistent/batch.jsonl", "b");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::not_found);
    }
}

TEST(LoadBatch, RoundTripProperty) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SynthProfile profile;
        profile.domain = seed % 2 ? SynthDomain::general : SynthDomain::medical;
        profile.duplicate_fraction = 0.2;
        auto b = synth_batch(seed, 1 + seed * 3, profile, "rt");
        b.pairs[0].meta["quote\"s"] = "line\nbreak";
        auto back = parse(serialize_batch(b), "rt");
        EXPECT_EQ(back, b) << "seed " << seed;
    }
}

TEST(SplitSentences, TwoTerminators) {
    EXPECT_EQ(split_sentences("A. B!"), (std::vector<std::string>{"A.", "B!"}));
}

TEST(SplitSentences, TrailingFragment) { EXPECT_EQ(split_sentences("abc"), (std::vector<std::string>{"abc"})); }

TEST(SplitSentences, CjkTerminators) {
    EXPECT_EQ(split_sentences("好。行！"), (std::vector<std::string>{"好。", "行！"}));
}

TEST(SplitSentences, EmptyText) {
    EXPECT_TRUE(split_sentences("").empty());
    EXPECT_TRUE(split_sentences("   \n").empty());
}

TEST(SplitSentences, ShortSentencesMergeIntoPreceding) {
    // "?!" produces a 1-char "!" fragment that joins the sentence before it.
    EXPECT_EQ(split_sentences("Really?! Yes."), (std::vector<std::string>{"Really?!", "Yes."}));
    EXPECT_EQ(split_sentences("Ok. . Fine."), (std::vector<std::string>{"Ok. .", "Fine."}));
}

TEST(SplitSentences, LeadingShortSentenceJoinsNext) {
    SentenceSplitRules rules;
    rules.min_sentence_chars = 3;
    EXPECT_EQ(split_sentences("A. Bcd.", rules), (std::vector<std::string>{"A. Bcd."}));
}

TEST(SplitSentences, NeverDropsNonWhitespace) {
    Rng rng(42);
    const std::vector<std::string> alphabet = {"a", "b", " ", ".", "!", "。", "好", "\n", "?"};
    for (int trial = 0; trial < 500; ++trial) {
        std::string text;
        std::size_t n = rng.below(40);
        for (std::size_t i = 0; i < n; ++i) text += alphabet[rng.below(alphabet.size())];
        auto sentences = split_sentences(text);
        std::string joined;
        for (const auto& s : sentences) {
            EXPECT_EQ(s, trim(s));
            EXPECT_FALSE(s.empty());
            joined += s;
        }
        EXPECT_EQ(strip_ws(joined), strip_ws(text)) << "text: " << text;
    }
}

TEST(SplitSentences, RejectsEmptyTerminatorSet) {
    SentenceSplitRules rules;
    rules.terminators.clear();
    EXPECT_THROW(split_sentences("a. b.", rules), Error);
}

TEST(SynthBatch, DeterministicForSeed) {
    EXPECT_EQ(serialize_batch(synth_batch(1, 5)), serialize_batch(synth_batch(1, 5)));
    EXPECT_NE(serialize_batch(synth_batch(1, 5)), serialize_batch(synth_batch(2, 5)));
}

TEST(SynthBatch, DuplicateFractionIsExact) {
    SynthProfile profile;
    profile.duplicate_fraction = 0.5;
    auto b = synth_batch(7, 10, profile);
    std::size_t dups = 0;
    for (const auto& p : b.pairs) {
        if (auto it = p.meta.find("dup_of"); it != p.meta.end()) {
            ++dups;
            const auto& src = b.pairs.at(std::stoul(it->second));
            EXPECT_LT(std::stoul(it->second), std::stoul(p.id));
            EXPECT_EQ(src.response, p.response);
            EXPECT_EQ(src.instruction, p.instruction);
        }
    }
    EXPECT_EQ(dups, 5u);
}

TEST(SynthBatch, EmptyBatch) { EXPECT_EQ(synth_batch(3, 0).size(), 0u); }

TEST(SynthBatch, MedicalResponsesCarryDiagnosisLine) {
    auto b = synth_batch(11, 20);
    for (const auto& p : b.pairs) {
        EXPECT_EQ(p.response.rfind("{\"diagnosis\":\"" + p.meta.at("diagnosis") + "\"}\n", 0), 0u);
    }
}

TEST(MixBatches, OneToOne) {
    SynthProfile general;
    general.domain = SynthDomain::general;
    auto d = synth_batch(1, 100, {}, "dom");
    auto g = synth_batch(2, 500, general, "gen");
    auto mixed = mix_batches(d, g, parse_ratio("1:1"), 9);
    ASSERT_EQ(mixed.size(), 200u);
    std::size_t from_domain = 0, from_general = 0;
    for (const auto& p : mixed.pairs) {
        EXPECT_EQ(p.batch_id, "dom");
        (p.meta.at("source") == "domain" ? from_domain : from_general)++;
    }
    EXPECT_EQ(from_domain, 100u);
    EXPECT_EQ(from_general, 100u);
    // Interleaved, not appended.
    EXPECT_EQ(mixed.pairs[0].meta.at("source"), "domain");
    EXPECT_EQ(mixed.pairs[1].meta.at("source"), "general");
    EXPECT_EQ(serialize_batch(mixed), serialize_batch(mix_batches(d, g, parse_ratio("1:1"), 9)));
}

TEST(MixBatches, ZeroRatioLeavesDomainUnchanged) {
    SynthProfile general;
    general.domain = SynthDomain::general;
    auto d = synth_batch(1, 10);
    EXPECT_EQ(mix_batches(d, synth_batch(2, 5, general), parse_ratio("0"), 1), d);
}

TEST(MixBatches, ShortfallNamesTheGap) {
    SynthProfile general;
    general.domain = SynthDomain::general;
    try {
        mix_batches(synth_batch(1, 10), synth_batch(2, 5, general), Ratio{1, 1}, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("shortfall 5"), std::string::npos) << e.what();
    }
}

TEST(ParseRatio, Forms) {
    auto r = parse_ratio("2:3");
    EXPECT_EQ(r.num, 2u);
    EXPECT_EQ(r.den, 3u);
    EXPECT_EQ(parse_ratio("1").den, 1u);
    EXPECT_THROW(parse_ratio("1:0"), Error);
    EXPECT_THROW(parse_ratio("x"), Error);
}
