#include "cift/corpus.hpp"

#include "cift/error.hpp"
#include "cift/util.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace cift {

using nlohmann::json;

void SentenceSplitRules::validate() const {
    if (terminators.empty()) {
        throw Error(ErrorCode::invalid_input, "sentence rules need at least one terminator");
    }
    for (const auto& t : terminators) {
        if (utf8_codepoints(t).size() != 1) {
            throw Error(ErrorCode::invalid_input, "terminator must be a single code point: '" + t + "'");
        }
    }
}

Batch parse_batch(std::istream& in, const std::string& batch_id) {
    Batch batch;
    batch.batch_id = batch_id;
    std::vector<std::size_t> bad_lines;
    std::string first_reason;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& why) {
        bad_lines.push_back(line_no);
        if (first_reason.empty()) first_reason = "line " + std::to_string(line_no) + ": " + why;
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            fail("not a JSON object");
            continue;
        }
        auto instr = doc.find("instruction");
        auto resp = doc.find("response");
        if (instr == doc.end() || !instr->is_string()) {
            fail("missing string field 'instruction'");
            continue;
        }
        if (resp == doc.end() || !resp->is_string() || resp->get_ref<const std::string&>().empty()) {
            fail("missing nonempty string field 'response'");
            continue;
        }
        InstructionPair pair;
        pair.instruction = instr->get<std::string>();
        pair.response = resp->get<std::string>();
        pair.batch_id = batch_id;
        if (auto id = doc.find("id"); id != doc.end()) {
            if (!id->is_string() || id->get_ref<const std::string&>().empty()) {
                fail("'id' must be a nonempty string");
                continue;
            }
            pair.id = id->get<std::string>();
        } else {
            pair.id = std::to_string(batch.pairs.size());
        }
        if (auto meta = doc.find("meta"); meta != doc.end()) {
            if (!meta->is_object()) {
                fail("'meta' must be an object of strings");
                continue;
            }
            bool ok = true;
            for (auto it = meta->begin(); it != meta->end(); ++it) {
                if (!it.value().is_string()) {
                    ok = false;
                    break;
                }
                pair.meta[it.key()] = it.value().get<std::string>();
            }
            if (!ok) {
                fail("'meta' values must be strings");
                continue;
            }
        }
        if (!seen_ids.insert(pair.id).second) {
            fail("duplicate id '" + pair.id + "'");
            continue;
        }
        batch.pairs.push_back(std::move(pair));
    }
    if (!bad_lines.empty()) {
        std::ostringstream msg;
        msg << "malformed batch '" << batch_id << "': " << bad_lines.size() << " bad line(s) [";
        for (std::size_t i = 0; i < bad_lines.size(); ++i) msg << (i ? "," : "") << bad_lines[i];
        msg << "]; first: " << first_reason;
        throw Error(ErrorCode::invalid_input, msg.str());
    }
    return batch;
}

Batch load_batch(const std::filesystem::path& path, const std::string& batch_id) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::not_found, "cannot open batch file " + path.string());
    return parse_batch(in, batch_id);
}

std::string serialize_batch(const Batch& batch) {
    std::string out;
    for (const auto& p : batch.pairs) {
        json doc = {{"id", p.id}, {"instruction", p.instruction}, {"response", p.response}};
        if (!p.meta.empty()) doc["meta"] = p.meta;
        out += doc.dump(-1, ' ', false, json::error_handler_t::replace);
        out += '\n';
    }
    return out;
}

void write_batch(const Batch& batch, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_batch(batch));
}

std::vector<std::string> split_sentences(std::string_view text, const SentenceSplitRules& rules) {
    rules.validate();
    auto cps = utf8_codepoints(text);
    auto is_term = [&](std::string_view cp) {
        return std::find(rules.terminators.begin(), rules.terminators.end(), cp) != rules.terminators.end();
    };

    // Raw spans [begin, end) in code point indices, ending after each
    // terminator; a trailing fragment forms the last span.
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t start = 0;
    for (std::size_t i = 0; i < cps.size(); ++i) {
        if (is_term(cps[i])) {
            spans.emplace_back(start, i + 1);
            start = i + 1;
        }
    }
    if (start < cps.size()) spans.emplace_back(start, cps.size());

    auto slice = [&](std::size_t b, std::size_t e) {
        if (b >= e) return std::string();
        const char* s = cps[b].data();
        const char* t = cps[e - 1].data() + cps[e - 1].size();
        return trim(std::string_view(s, static_cast<std::size_t>(t - s)));
    };

    std::vector<std::pair<std::size_t, std::size_t>> merged;
    bool pending_short = false;  // first sentence too short, waiting for a successor
    for (auto [b, e] : spans) {
        std::string s = slice(b, e);
        if (s.empty()) {
            if (!merged.empty()) merged.back().second = e;
            continue;
        }
        if (pending_short) {
            merged.back().second = e;
            pending_short = utf8_length(slice(merged.back().first, e)) < rules.min_sentence_chars;
            continue;
        }
        if (utf8_length(s) < rules.min_sentence_chars) {
            if (merged.empty()) {
                merged.emplace_back(b, e);
                pending_short = true;
            } else {
                merged.back().second = e;
            }
            continue;
        }
        merged.emplace_back(b, e);
    }

    std::vector<std::string> out;
    out.reserve(merged.size());
    for (auto [b, e] : merged) {
        std::string s = slice(b, e);
        if (!s.empty()) out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

namespace {

struct Disease {
    std::string name;
    std::vector<std::string> symptoms;
    std::vector<std::string> tests;
    std::vector<std::string> treatments;
};

const std::vector<Disease>& disease_table() {
    static const std::vector<Disease> table = {
        {"流行性感冒", {"发热", "咳嗽", "肌肉酸痛", "乏力", "咽痛"}, {"血常规", "流感抗原检测"}, {"奥司他韦", "对症退热"}},
        {"支气管哮喘", {"喘息", "胸闷", "呼吸困难", "夜间咳嗽"}, {"肺功能检查", "支气管激发试验"}, {"吸入糖皮质激素", "支气管扩张剂"}},
        {"偏头痛", {"单侧搏动性头痛", "恶心", "畏光", "畏声"}, {"头颅核磁共振", "神经系统查体"}, {"曲普坦类药物", "规律作息"}},
        {"急性胃炎", {"上腹痛", "恶心", "呕吐", "食欲不振"}, {"胃镜检查", "腹部超声"}, {"质子泵抑制剂", "清淡饮食"}},
        {"缺铁性贫血", {"乏力", "面色苍白", "头晕", "心悸"}, {"血清铁蛋白", "血常规"}, {"口服铁剂", "补充维生素C"}},
        {"社区获得性肺炎", {"发热", "咳痰", "胸痛", "呼吸急促"}, {"胸部CT", "痰培养"}, {"经验性抗生素", "吸氧支持"}},
        {"2型糖尿病", {"多饮", "多尿", "体重下降", "视物模糊"}, {"空腹血糖", "糖化血红蛋白"}, {"二甲双胍", "饮食控制"}},
        {"高血压病", {"头晕", "头痛", "耳鸣", "颈部僵硬"}, {"动态血压监测", "心电图"}, {"钙通道阻滞剂", "低盐饮食"}},
    };
    return table;
}

Disease disease_for(const std::string& name) {
    for (const auto& d : disease_table()) {
        if (d.name == name) return d;
    }
    // Unknown diagnosis names borrow a generic symptom profile.
    return {name, {"发热", "乏力", "疼痛", "不适"}, {"血常规", "影像学检查"}, {"对症治疗", "随访观察"}};
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& items) {
    return items[rng.below(items.size())];
}

std::string medical_instruction(Rng& rng, const Disease& d) {
    static const std::vector<std::string> sexes = {"男", "女"};
    const int age = 18 + static_cast<int>(rng.below(62));
    const auto& s1 = pick(rng, d.symptoms);
    const auto& s2 = pick(rng, d.symptoms);
    const int days = 1 + static_cast<int>(rng.below(14));
    switch (rng.below(3)) {
        case 0:
            return "患者" + pick(rng, sexes) + "，" + std::to_string(age) + "岁，主诉" + s1 + "伴" + s2 +
                   std::to_string(days) + "天。请以JSON格式给出诊断。";
        case 1:
            return "一名" + std::to_string(age) + "岁" + pick(rng, sexes) + "性患者近" + std::to_string(days) +
                   "天出现" + s1 + "和" + s2 + "。请以JSON格式给出诊断。";
        default:
            return "就诊记录：" + s1 + "、" + s2 + "，病程" + std::to_string(days) + "天，年龄" +
                   std::to_string(age) + "岁。请以JSON格式给出诊断。";
    }
}

std::string medical_sentence(Rng& rng, const Disease& d) {
    const auto& sym = pick(rng, d.symptoms);
    const auto& table = disease_table();
    const auto& other = table[rng.below(table.size())].name;
    switch (rng.below(10)) {
        case 0: return "患者出现" + sym + "，持续" + std::to_string(1 + rng.below(14)) + "天。";
        case 1: return sym + "是" + d.name + "的常见表现。";
        case 2: return "结合" + sym + "与" + pick(rng, d.symptoms) + "，考虑" + d.name + "可能性大。";
        case 3: return "需与" + other + "进行鉴别。";
        case 4: return "建议完善" + pick(rng, d.tests) + "以明确诊断。";
        case 5: return "治疗上可给予" + pick(rng, d.treatments) + "。";
        case 6: return "嘱患者注意休息并定期复查。";
        case 7: return "若" + sym + "加重应及时就医。";
        case 8: return "既往史无特殊，否认药物过敏。";
        default: return "体格检查提示生命体征平稳，" + sym + "明显。";
    }
}

const std::vector<std::string>& general_topics() {
    static const std::vector<std::string> topics = {
        "photosynthesis", "the water cycle", "compound interest", "a binary search", "plate tectonics",
        "vaccination", "a hash table", "inflation", "the immune system", "solar panels",
        "recycling", "a thermostat", "supply and demand", "ocean tides", "public key cryptography",
    };
    return topics;
}

std::string general_instruction(Rng& rng, const std::string& topic) {
    switch (rng.below(4)) {
        case 0: return "Explain how " + topic + " works.";
        case 1: return "Give a short overview of " + topic + ".";
        case 2: return "Why does " + topic + " matter in everyday life?";
        default: return "Describe " + topic + " to a curious student.";
    }
}

std::string general_sentence(Rng& rng, const std::string& topic) {
    static const std::vector<std::string> adjectives = {"simple", "useful", "subtle", "important", "practical"};
    static const std::vector<std::string> verbs = {"balances", "transforms", "connects", "measures", "limits"};
    switch (rng.below(8)) {
        case 0: return "At its core, " + topic + " is a " + pick(rng, adjectives) + " idea.";
        case 1: return "It " + pick(rng, verbs) + " inputs and outputs in a predictable way.";
        case 2: return "Many people meet " + topic + " without noticing it.";
        case 3: return "A common example helps make " + topic + " concrete.";
        case 4: return "Experts study how it " + pick(rng, verbs) + " related systems.";
        case 5: return "Small changes can have " + pick(rng, adjectives) + " effects over time.";
        case 6: return "Understanding the basics avoids common mistakes.";
        default: return "In short, " + topic + " is worth learning about.";
    }
}

std::size_t count_for(double fraction, std::size_t n) {
    if (fraction <= 0.0) return 0;
    return std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
}

}  // namespace

const std::vector<std::string>& builtin_diagnoses() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& d : disease_table()) v.push_back(d.name);
        return v;
    }();
    return names;
}

Batch synth_batch(std::uint64_t seed, std::size_t n, const SynthProfile& profile, const std::string& batch_id) {
    if (profile.min_sentences == 0 || profile.max_sentences < profile.min_sentences) {
        throw Error(ErrorCode::invalid_input, "synth profile needs 1 <= min_sentences <= max_sentences");
    }
    Rng rng(seed);
    const auto& diagnoses = profile.diagnoses.empty() ? builtin_diagnoses() : profile.diagnoses;

    // Pick which positions are duplicates, short, or repetitive up front so the
    // counts are exact.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<std::size_t> dup_positions;
    const std::size_t n_dup = n > 1 ? std::min(count_for(profile.duplicate_fraction, n), n - 1) : 0;
    if (n_dup > 0) {
        std::vector<std::size_t> candidates(order.begin() + 1, order.end());
        rng.shuffle(candidates);
        dup_positions.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n_dup));
    }
    std::vector<char> is_dup(n, 0), is_short(n, 0), is_rep(n, 0);
    for (auto p : dup_positions) is_dup[p] = 1;
    {
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < n; ++i) {
            if (!is_dup[i]) rest.push_back(i);
        }
        rng.shuffle(rest);
        const std::size_t n_short = std::min(count_for(profile.short_fraction, n), rest.size());
        const std::size_t n_rep = std::min(count_for(profile.repetitive_fraction, n), rest.size() - n_short);
        for (std::size_t i = 0; i < n_short; ++i) is_short[rest[i]] = 1;
        for (std::size_t i = n_short; i < n_short + n_rep; ++i) is_rep[rest[i]] = 1;
    }

    Batch batch;
    batch.batch_id = batch_id;
    batch.pairs.reserve(n);
    std::vector<std::size_t> originals;
    for (std::size_t i = 0; i < n; ++i) {
        InstructionPair pair;
        pair.id = std::to_string(i);
        pair.batch_id = batch_id;
        if (is_dup[i]) {
            std::size_t src = originals[rng.below(originals.size())];
            pair.instruction = batch.pairs[src].instruction;
            pair.response = batch.pairs[src].response;
            pair.meta = batch.pairs[src].meta;
            pair.meta["dup_of"] = batch.pairs[src].id;
            batch.pairs.push_back(std::move(pair));
            continue;
        }
        const std::size_t span = profile.max_sentences - profile.min_sentences + 1;
        std::size_t m = is_short[i] ? 1 : profile.min_sentences + rng.below(span);
        std::string body;
        if (profile.domain == SynthDomain::medical) {
            Disease d = disease_for(pick(rng, diagnoses));
            pair.instruction = medical_instruction(rng, d);
            pair.meta["diagnosis"] = d.name;
            std::string first = medical_sentence(rng, d);
            for (std::size_t k = 0; k < m; ++k) body += is_rep[i] ? first : (k == 0 ? first : medical_sentence(rng, d));
            pair.response = "{\"diagnosis\":\"" + d.name + "\"}\n" + body;
        } else {
            const auto& topic = pick(rng, general_topics());
            pair.instruction = general_instruction(rng, topic);
            std::string first = general_sentence(rng, topic);
            for (std::size_t k = 0; k < m; ++k) {
                if (k) body += ' ';
                body += is_rep[i] ? first : (k == 0 ? first : general_sentence(rng, topic));
            }
            pair.response = body;
        }
        if (is_short[i]) pair.meta["quality"] = "short";
        if (is_rep[i]) pair.meta["quality"] = "repetitive";
        originals.push_back(i);
        batch.pairs.push_back(std::move(pair));
    }
    return batch;
}

std::vector<ValidationCase> synth_validation(std::uint64_t seed, std::size_t n,
                                             const std::vector<std::string>& diagnoses) {
    Rng rng(seed);
    const auto& names = diagnoses.empty() ? builtin_diagnoses() : diagnoses;
    std::vector<ValidationCase> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Disease d = disease_for(names[i % names.size()]);
        out.push_back({medical_instruction(rng, d), d.name});
    }
    return out;
}

std::vector<ValidationCase> load_validation(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::not_found, "cannot open validation file " + path.string());
    std::vector<ValidationCase> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("instruction") ||
            !doc["instruction"].is_string() || !doc.contains("truth") || !doc["truth"].is_string()) {
            throw Error(ErrorCode::invalid_input, "validation file " + path.string() + " line " +
                                                      std::to_string(line_no) +
                                                      ": expected {\"instruction\": string, \"truth\": string}");
        }
        out.push_back({doc["instruction"].get<std::string>(), doc["truth"].get<std::string>()});
    }
    return out;
}

void write_validation(const std::vector<ValidationCase>& cases, const std::filesystem::path& path) {
    std::string out;
    for (const auto& c : cases) {
        out += json{{"instruction", c.instruction}, {"truth", c.truth}}.dump();
        out += '\n';
    }
    write_file_atomic(path, out);
}

Ratio parse_ratio(std::string_view text) {
    auto parse_uint = [&](std::string_view s) {
        if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            throw Error(ErrorCode::invalid_input, "invalid ratio '" + std::string(text) + "'");
        }
        return std::stoull(std::string(s));
    };
    auto colon = text.find(':');
    if (colon == std::string_view::npos) return {parse_uint(text), 1};
    Ratio r{parse_uint(text.substr(0, colon)), parse_uint(text.substr(colon + 1))};
    if (r.den == 0) throw Error(ErrorCode::invalid_input, "ratio denominator must be positive");
    return r;
}

Batch mix_batches(const Batch& domain, const Batch& general, Ratio ratio, std::uint64_t seed) {
    if (ratio.den == 0) throw Error(ErrorCode::invalid_input, "ratio denominator must be positive");
    const std::uint64_t d = domain.size();
    // round half up of num*d/den
    const std::uint64_t need = (2 * ratio.num * d + ratio.den) / (2 * ratio.den);
    if (need == 0) return domain;
    if (general.size() < need) {
        throw Error(ErrorCode::invalid_input, "general pool too small for mixing: need " + std::to_string(need) +
                                                  ", have " + std::to_string(general.size()) + " (shortfall " +
                                                  std::to_string(need - general.size()) + ")");
    }

    std::vector<std::size_t> idx(general.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = 0; i < need; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    }
    idx.resize(need);
    std::sort(idx.begin(), idx.end());

    Batch out;
    out.batch_id = domain.batch_id;
    out.pairs.reserve(d + need);
    auto tag = [&](InstructionPair p, const char* source, const std::string& origin) {
        p.meta["source"] = source;
        p.meta["origin_batch"] = origin;
        p.batch_id = out.batch_id;
        return p;
    };
    // Merge by fractional position: domain i at (2i+1)/2D, general j at (2j+1)/2G.
    std::size_t i = 0, j = 0;
    while (i < d || j < need) {
        bool take_domain = j >= need || (i < d && (2 * i + 1) * need <= (2 * j + 1) * d);
        if (take_domain) {
            out.pairs.push_back(tag(domain.pairs[i], "domain", domain.batch_id));
            ++i;
        } else {
            InstructionPair g = general.pairs[idx[j]];
            g.meta["origin_id"] = g.id;
            g.id = "g:" + g.id;
            out.pairs.push_back(tag(std::move(g), "general", general.batch_id));
            ++j;
        }
    }
    return out;
}

}  // namespace cift
