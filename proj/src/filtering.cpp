#include "cift/filtering.hpp"

#include "cift/error.hpp"
#include "cift/util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

namespace cift {

using nlohmann::json;

void FilterConfig::validate() const {
    if (!(length_min >= 0) || !std::isfinite(length_min)) {
        throw Error(ErrorCode::invalid_input, "length_min must be a finite value >= 0");
    }
    if (!(diversity_min >= 0.0 && diversity_min <= 1.0)) {
        throw Error(ErrorCode::invalid_input, "diversity_min must lie in [0, 1]");
    }
    if (!(ifd_min > 0.0 && ifd_min < 1.0)) throw Error(ErrorCode::invalid_input, "ifd_min must lie in (0, 1)");
    sentence_rules.validate();
}

const char* to_string(Verdict v) noexcept {
    switch (v) {
        case Verdict::pass: return "pass";
        case Verdict::reject_length: return "reject(length)";
        case Verdict::reject_diversity: return "reject(diversity)";
        case Verdict::reject_ifd_low: return "reject(ifd-low)";
        case Verdict::reject_ifd_anomalous: return "reject(ifd-anomalous)";
        case Verdict::reject_top_k: return "reject(top-k)";
    }
    return "?";
}

Verdict verdict_from_string(std::string_view s) {
    for (auto v : {Verdict::pass, Verdict::reject_length, Verdict::reject_diversity, Verdict::reject_ifd_low,
                   Verdict::reject_ifd_anomalous, Verdict::reject_top_k}) {
        if (s == to_string(v)) return v;
    }
    throw Error(ErrorCode::invalid_input, "unknown verdict '" + std::string(s) + "'");
}

HashedTrigramEmbedder::HashedTrigramEmbedder(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
    if (dimension == 0) throw Error(ErrorCode::invalid_input, "embedding dimension must be positive");
}

std::vector<double> HashedTrigramEmbedder::embed(std::string_view sentence) const {
    std::vector<double> v(dimension_, 0.0);
    const std::uint64_t basis = fnv1a64(std::to_string(seed_));
    auto cps = utf8_codepoints(sentence);
    auto bump = [&](std::string_view gram) { v[fnv1a64(gram, basis) % dimension_] += 1.0; };
    if (cps.empty()) return v;
    if (cps.size() < 3) {
        bump(sentence);
    } else {
        for (std::size_t i = 0; i + 3 <= cps.size(); ++i) {
            const char* b = cps[i].data();
            const char* e = cps[i + 2].data() + cps[i + 2].size();
            bump(std::string_view(b, static_cast<std::size_t>(e - b)));
        }
    }
    double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm > 0) {
        for (auto& x : v) x /= norm;
    }
    return v;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::invalid_input, "embedding dimensions differ");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

double length_of(const InstructionPair& pair, LengthUnit unit, const SentenceSplitRules& rules) {
    if (unit == LengthUnit::sentences) return static_cast<double>(split_sentences(pair.response, rules).size());
    return static_cast<double>(utf8_length(pair.response));
}

double diversity_score(std::span<const std::vector<double>> embeddings, DiversityMode mode) {
    const std::size_t m = embeddings.size();
    if (m <= 1) return 1.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t l = k + 1; l < m; ++l) sum += cosine(embeddings[k], embeddings[l]);
    }
    const double md = static_cast<double>(m);
    const double norm = mode == DiversityMode::verbatim ? md * (md - 1.0) : md * (md - 1.0) / 2.0;
    return std::clamp(1.0 - sum / norm, 0.0, 1.0);
}

double diversity_score(std::span<const std::string> sentences, const Embedder& embedder, DiversityMode mode) {
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(sentences.size());
    for (const auto& s : sentences) embeddings.push_back(embedder.embed(s));
    return diversity_score(embeddings, mode);
}

IfdScore ifd_score(const LMBackend& proxy, const InstructionPair& pair, std::string_view separator) {
    if (pair.response.empty()) throw Error(ErrorCode::invalid_input, "IFD is undefined for an empty response");
    std::string prefix = pair.instruction;
    prefix.append(separator);
    IfdScore s;
    s.ppl_cond = perplexity(proxy, prefix, pair.response);
    s.ppl_uncond = perplexity(proxy, "", pair.response);
    s.ifd = s.ppl_cond / s.ppl_uncond;
    return s;
}

bool ifd_in_band(double ifd, double ifd_min) noexcept { return ifd >= ifd_min && ifd < 1.0; }

PipelineResult run_pipeline(const Batch& batch, const FilterConfig& config, const LMBackend& proxy,
                            const Embedder& embedder) {
    config.validate();
    PipelineResult result;
    result.funnel.input = batch.size();
    const std::string proxy_version = proxy.version();

    std::vector<ScoredPair> survivors;
    for (const auto& pair : batch.pairs) {
        ScoredPair s;
        s.pair = pair;
        s.proxy_version = proxy_version;
        auto sentences = split_sentences(pair.response, config.sentence_rules);
        s.sentence_count = sentences.size();
        s.length = config.length_unit == LengthUnit::sentences ? static_cast<double>(sentences.size())
                                                               : static_cast<double>(utf8_length(pair.response));
        if (!(s.length >= config.length_min)) {
            s.verdict = Verdict::reject_length;
            result.rejected.push_back(std::move(s));
            continue;
        }
        ++result.funnel.after_length;

        s.diversity = diversity_score(sentences, embedder, config.diversity_mode);
        if (!(*s.diversity >= config.diversity_min)) {
            s.verdict = Verdict::reject_diversity;
            result.rejected.push_back(std::move(s));
            continue;
        }
        ++result.funnel.after_diversity;

        auto score = ifd_score(proxy, pair, config.separator);
        s.ppl_cond = score.ppl_cond;
        s.ppl_uncond = score.ppl_uncond;
        s.ifd = score.ifd;
        const bool pathological = !std::isfinite(score.ifd) || !(score.ppl_cond > 0) || !(score.ppl_uncond > 0);
        if (pathological || score.ifd >= 1.0 || score.ifd < 0.0) {
            s.verdict = Verdict::reject_ifd_anomalous;
            result.rejected.push_back(std::move(s));
            continue;
        }
        if (score.ifd < config.ifd_min) {
            s.verdict = Verdict::reject_ifd_low;
            result.rejected.push_back(std::move(s));
            continue;
        }
        ++result.funnel.after_ifd;
        survivors.push_back(std::move(s));
    }

    if (config.top_k && survivors.size() > *config.top_k) {
        std::stable_sort(survivors.begin(), survivors.end(),
                         [](const ScoredPair& a, const ScoredPair& b) { return *a.ifd > *b.ifd; });
        // Cut-off pairs keep their input position among the rejected list.
        std::vector<ScoredPair> cut(std::make_move_iterator(survivors.begin() + static_cast<std::ptrdiff_t>(*config.top_k)),
                                    std::make_move_iterator(survivors.end()));
        survivors.resize(*config.top_k);
        for (auto& s : cut) s.verdict = Verdict::reject_top_k;
        std::vector<ScoredPair> merged;
        merged.reserve(result.rejected.size() + cut.size());
        std::unordered_map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < batch.pairs.size(); ++i) index.emplace(batch.pairs[i].id, i);
        auto position = [&](const ScoredPair& s) { return index.at(s.pair.id); };
        std::sort(cut.begin(), cut.end(), [&](const auto& a, const auto& b) { return position(a) < position(b); });
        std::merge(std::make_move_iterator(result.rejected.begin()), std::make_move_iterator(result.rejected.end()),
                   std::make_move_iterator(cut.begin()), std::make_move_iterator(cut.end()), std::back_inserter(merged),
                   [&](const auto& a, const auto& b) { return position(a) < position(b); });
        result.rejected = std::move(merged);
    } else if (config.top_k) {
        std::stable_sort(survivors.begin(), survivors.end(),
                         [](const ScoredPair& a, const ScoredPair& b) { return *a.ifd > *b.ifd; });
    }
    result.funnel.after_top_k = survivors.size();
    result.kept = std::move(survivors);
    return result;
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

FieldStats stats_of(std::vector<double> values) {
    FieldStats st;
    st.count = values.size();
    if (values.empty()) return st;
    std::sort(values.begin(), values.end());
    st.min = values.front();
    st.max = values.back();
    double sum = 0;
    for (double v : values) sum += v;
    st.mean = sum / static_cast<double>(values.size());
    // Nearest-rank percentile.
    auto pct = [&](double p) {
        auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
        return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
    };
    st.p50 = pct(50);
    st.p90 = pct(90);
    st.p99 = pct(99);
    return st;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json to_json(const FieldStats& s) {
    return {{"count", s.count}, {"min", opt(s.min)}, {"max", opt(s.max)}, {"mean", opt(s.mean)},
            {"p50", opt(s.p50)}, {"p90", opt(s.p90)}, {"p99", opt(s.p99)}};
}

std::optional<double> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<double>();
}

}  // namespace

ScoreReport score_report(std::span<const ScoredPair> scored) {
    ScoreReport r;
    r.count = scored.size();
    std::vector<double> len, div, pc, pu, ifd;
    for (const auto& s : scored) {
        len.push_back(s.length);
        if (s.diversity) div.push_back(*s.diversity);
        if (s.ppl_cond) pc.push_back(*s.ppl_cond);
        if (s.ppl_uncond) pu.push_back(*s.ppl_uncond);
        if (s.ifd && std::isfinite(*s.ifd)) ifd.push_back(*s.ifd);
        ++r.verdicts[to_string(s.verdict)];
    }
    r.length = stats_of(std::move(len));
    r.diversity = stats_of(std::move(div));
    r.ppl_cond = stats_of(std::move(pc));
    r.ppl_uncond = stats_of(std::move(pu));
    r.ifd = stats_of(std::move(ifd));
    auto n = [&](Verdict v) {
        auto it = r.verdicts.find(to_string(v));
        return it == r.verdicts.end() ? std::size_t{0} : it->second;
    };
    r.funnel.input = r.count;
    r.funnel.after_length = r.count - n(Verdict::reject_length);
    r.funnel.after_diversity = r.funnel.after_length - n(Verdict::reject_diversity);
    r.funnel.after_ifd = r.funnel.after_diversity - n(Verdict::reject_ifd_low) - n(Verdict::reject_ifd_anomalous);
    r.funnel.after_top_k = n(Verdict::pass);
    return r;
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const ScoredPair& s, LengthUnit unit) {
    json j = {{"id", s.pair.id},
              {"batch_id", s.pair.batch_id},
              {"instruction", s.pair.instruction},
              {"response", s.pair.response},
              {"meta", s.pair.meta},
              {"length", s.length},
              {"length_unit", unit == LengthUnit::characters ? "characters" : "sentences"},
              {"sentence_count", s.sentence_count},
              {"diversity", opt(s.diversity)},
              {"ppl_cond", opt(s.ppl_cond)},
              {"ppl_uncond", opt(s.ppl_uncond)},
              {"ifd", s.ifd && std::isfinite(*s.ifd) ? json(*s.ifd) : json(nullptr)},
              {"verdict", to_string(s.verdict)},
              {"proxy_version", s.proxy_version}};
    return j;
}

ScoredPair scored_pair_from_json(const json& j) {
    ScoredPair s;
    s.pair.id = j.at("id").get<std::string>();
    s.pair.batch_id = j.at("batch_id").get<std::string>();
    s.pair.instruction = j.at("instruction").get<std::string>();
    s.pair.response = j.at("response").get<std::string>();
    if (j.contains("meta")) s.pair.meta = j["meta"].get<std::map<std::string, std::string>>();
    s.length = j.at("length").get<double>();
    s.sentence_count = j.at("sentence_count").get<std::size_t>();
    s.diversity = opt_from(j, "diversity");
    s.ppl_cond = opt_from(j, "ppl_cond");
    s.ppl_uncond = opt_from(j, "ppl_uncond");
    s.ifd = opt_from(j, "ifd");
    s.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    s.proxy_version = j.at("proxy_version").get<std::string>();
    return s;
}

json to_json(const Funnel& f) {
    return {{"in", f.input},
            {"after_length", f.after_length},
            {"after_diversity", f.after_diversity},
            {"after_ifd", f.after_ifd},
            {"after_top_k", f.after_top_k}};
}

Funnel funnel_from_json(const json& j) {
    Funnel f;
    f.input = j.at("in").get<std::size_t>();
    f.after_length = j.at("after_length").get<std::size_t>();
    f.after_diversity = j.at("after_diversity").get<std::size_t>();
    f.after_ifd = j.at("after_ifd").get<std::size_t>();
    f.after_top_k = j.at("after_top_k").get<std::size_t>();
    return f;
}

json to_json(const ScoreReport& r) {
    return {{"count", r.count},
            {"length", to_json(r.length)},
            {"diversity", to_json(r.diversity)},
            {"ppl_cond", to_json(r.ppl_cond)},
            {"ppl_uncond", to_json(r.ppl_uncond)},
            {"ifd", to_json(r.ifd)},
            {"verdicts", r.verdicts},
            {"funnel", to_json(r.funnel)}};
}

json to_json(const FilterConfig& c) {
    return {{"length_min", c.length_min},
            {"length_unit", c.length_unit == LengthUnit::characters ? "characters" : "sentences"},
            {"diversity_min", c.diversity_min},
            {"ifd_min", c.ifd_min},
            {"diversity_mode", c.diversity_mode == DiversityMode::verbatim ? "verbatim" : "mean-pairwise"},
            {"top_k", c.top_k ? json(*c.top_k) : json(nullptr)},
            {"separator", c.separator},
            {"sentence", {{"terminators", c.sentence_rules.terminators},
                          {"min_sentence_chars", c.sentence_rules.min_sentence_chars}}}};
}

FilterConfig filter_config_from_json(const json& j) {
    FilterConfig c;
    if (!j.is_object()) throw Error(ErrorCode::invalid_input, "filter config must be a JSON object");
    static const std::set<std::string> known = {"length_min", "length_unit", "diversity_min", "ifd_min",
                                                "diversity_mode", "top_k", "separator", "sentence"};
    for (const auto& [k, _] : j.items())
        if (!known.count(k)) throw Error(ErrorCode::invalid_input, "unknown key '" + k + "' in filter config");
    try {
        if (j.contains("length_min")) c.length_min = j["length_min"].get<double>();
        if (j.contains("length_unit")) {
            auto u = j["length_unit"].get<std::string>();
            if (u == "characters") c.length_unit = LengthUnit::characters;
            else if (u == "sentences") c.length_unit = LengthUnit::sentences;
            else throw Error(ErrorCode::invalid_input, "length_unit must be 'characters' or 'sentences'");
        }
        if (j.contains("diversity_min")) c.diversity_min = j["diversity_min"].get<double>();
        if (j.contains("ifd_min")) c.ifd_min = j["ifd_min"].get<double>();
        if (j.contains("diversity_mode")) {
            auto m = j["diversity_mode"].get<std::string>();
            if (m == "verbatim") c.diversity_mode = DiversityMode::verbatim;
            else if (m == "mean-pairwise") c.diversity_mode = DiversityMode::mean_pairwise;
            else throw Error(ErrorCode::invalid_input, "diversity_mode must be 'verbatim' or 'mean-pairwise'");
        }
        if (j.contains("top_k") && !j["top_k"].is_null()) c.top_k = j["top_k"].get<std::size_t>();
        if (j.contains("separator")) c.separator = j["separator"].get<std::string>();
        if (j.contains("sentence")) {
            const auto& s = j["sentence"];
            for (const auto& [k, _] : s.items())
                if (k != "terminators" && k != "min_sentence_chars")
                    throw Error(ErrorCode::invalid_input, "unknown key '" + k + "' in filter sentence rules");
            if (s.contains("terminators")) c.sentence_rules.terminators = s["terminators"].get<std::vector<std::string>>();
            if (s.contains("min_sentence_chars")) c.sentence_rules.min_sentence_chars = s["min_sentence_chars"].get<std::size_t>();
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_input, std::string("bad filter config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string scored_jsonl(std::span<const ScoredPair> scored, LengthUnit unit) {
    std::string out;
    for (const auto& s : scored) {
        out += to_json(s, unit).dump(-1, ' ', false, json::error_handler_t::replace);
        out += '\n';
    }
    return out;
}

}  // namespace cift
