#include "cift/config.hpp"

#include "cift/error.hpp"
#include "cift/util.hpp"

#include <cstdlib>
#include <set>

namespace cift {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) throw Error(ErrorCode::invalid_input, "unknown key '" + k + "' in " + where);
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

LmSpec lm_from_json(const json& j) {
    reject_unknown(j, {"order", "alpha"}, "lm spec");
    LmSpec s;
    s.order = j.value("order", s.order);
    s.alpha = j.value("alpha", s.alpha);
    return s;
}

std::string ratio_text(Ratio r) { return std::to_string(r.num) + ":" + std::to_string(r.den); }

}  // namespace

void EngineConfig::validate() const {
    filter.validate();
    if (mixing && mixing->filter) mixing->filter->validate();
    validation.policy.validate();
    if (embedder_dimension == 0) throw Error(ErrorCode::invalid_input, "embedder dimension must be positive");
    for (const auto& s : {deployed_lm, proxy_lm}) {
        if (s.order < 1 || s.order > 64 || !(s.alpha > 0)) {
            throw Error(ErrorCode::invalid_input, "lm order must be in [1,64] and alpha > 0");
        }
    }
    if (trainer.kind == TrainerConfig::Kind::external && trainer.command.empty()) {
        throw Error(ErrorCode::invalid_input, "external trainer needs a command");
    }
    if (!(trainer.timeout_seconds > 0)) throw Error(ErrorCode::invalid_input, "trainer timeout must be positive");
    if (poll_interval_ms <= 0) throw Error(ErrorCode::invalid_input, "poll_interval_ms must be positive");
    if (service.port < 0 || service.port > 65535) throw Error(ErrorCode::invalid_input, "service port out of range");
}

EngineConfig config_from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw Error(ErrorCode::invalid_input, "config must be a JSON object");
    EngineConfig c;
    try {
        reject_unknown(j, {"root", "filter", "embedder", "mixing", "trainer", "lm", "baseline_corpus", "validation",
                           "generation", "service", "watch_dir", "poll_interval_ms"},
                       "config");
        c.root = resolve(base_dir, j.value("root", c.root.string()));
        if (j.contains("filter")) c.filter = filter_config_from_json(j["filter"]);
        if (j.contains("embedder")) {
            reject_unknown(j["embedder"], {"kind", "dimension"}, "embedder");
            if (j["embedder"].value("kind", "hashed-trigram") != "hashed-trigram") {
                throw Error(ErrorCode::invalid_input, "embedder kind must be 'hashed-trigram'");
            }
            c.embedder_dimension = j["embedder"].value("dimension", c.embedder_dimension);
        }
        if (j.contains("mixing") && !j["mixing"].is_null()) {
            const auto& m = j["mixing"];
            reject_unknown(m, {"ratio", "general_pool", "seed", "filter"}, "mixing");
            MixingConfig mc;
            if (m.contains("ratio")) {
                mc.ratio = m["ratio"].is_string() ? parse_ratio(m["ratio"].get<std::string>())
                                                  : Ratio{m["ratio"].get<std::uint64_t>(), 1};
            }
            mc.general_pool = resolve(base_dir, m.at("general_pool").get<std::string>());
            mc.seed = m.value("seed", mc.seed);
            if (m.contains("filter") && !m["filter"].is_null()) mc.filter = filter_config_from_json(m["filter"]);
            c.mixing = mc;
        }
        if (j.contains("trainer")) {
            const auto& t = j["trainer"];
            reject_unknown(t, {"kind", "command", "timeout_seconds"}, "trainer");
            const auto kind = t.value("kind", "builtin");
            if (kind == "builtin") c.trainer.kind = TrainerConfig::Kind::builtin;
            else if (kind == "external") c.trainer.kind = TrainerConfig::Kind::external;
            else throw Error(ErrorCode::invalid_input, "trainer kind must be 'builtin' or 'external'");
            c.trainer.command = t.value("command", "");
            c.trainer.timeout_seconds = t.value("timeout_seconds", c.trainer.timeout_seconds);
        }
        if (j.contains("lm")) {
            reject_unknown(j["lm"], {"deployed", "proxy"}, "lm");
            if (j["lm"].contains("deployed")) c.deployed_lm = lm_from_json(j["lm"]["deployed"]);
            if (j["lm"].contains("proxy")) c.proxy_lm = lm_from_json(j["lm"]["proxy"]);
        }
        if (j.contains("baseline_corpus") && !j["baseline_corpus"].is_null()) {
            c.baseline_corpus = resolve(base_dir, j["baseline_corpus"].get<std::string>());
        }
        if (j.contains("validation")) {
            const auto& v = j["validation"];
            reject_unknown(v, {"path", "mode", "min_margin", "judge_url", "judge_timeout_seconds"}, "validation");
            c.validation.path = resolve(base_dir, v.at("path").get<std::string>());
            const auto mode = v.value("mode", "accuracy");
            if (mode == "accuracy") c.validation.policy.mode = PromotionPolicy::Mode::accuracy;
            else if (mode == "judge") c.validation.policy.mode = PromotionPolicy::Mode::judge;
            else throw Error(ErrorCode::invalid_input, "validation mode must be 'accuracy' or 'judge'");
            c.validation.policy.min_margin = v.value("min_margin", 0.0);
            c.validation.judge_url = v.value("judge_url", "");
            c.validation.judge_timeout_seconds = v.value("judge_timeout_seconds", c.validation.judge_timeout_seconds);
        }
        if (j.contains("generation")) {
            const auto& g = j["generation"];
            reject_unknown(g, {"max_tokens", "temperature", "greedy", "seed", "stop_byte"}, "generation");
            c.generation.max_tokens = g.value("max_tokens", c.generation.max_tokens);
            c.generation.temperature = g.value("temperature", c.generation.temperature);
            c.generation.greedy = g.value("greedy", c.generation.greedy);
            c.generation.seed = g.value("seed", c.generation.seed);
            if (g.contains("stop_byte")) {
                if (g["stop_byte"].is_null()) c.generation.stop_byte.reset();
                else c.generation.stop_byte = g["stop_byte"].get<std::uint8_t>();
            }
        }
        if (j.contains("service")) {
            const auto& s = j["service"];
            reject_unknown(s, {"url", "host", "port", "admin_token_env"}, "service");
            c.service.url = s.value("url", "");
            c.service.host = s.value("host", c.service.host);
            c.service.port = s.value("port", c.service.port);
            c.service.admin_token_env = s.value("admin_token_env", c.service.admin_token_env);
        }
        c.watch_dir = resolve(base_dir, j.value("watch_dir", c.watch_dir.string()));
        c.poll_interval_ms = j.value("poll_interval_ms", c.poll_interval_ms);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::invalid_input, std::string("bad config: ") + e.what());
    }
    c.validate();
    return c;
}

EngineConfig load_config(const fs::path& path) {
    const auto text = read_file(path);
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::invalid_input, "config " + path.string() + " is not valid JSON");
    return config_from_json(j, fs::absolute(path).parent_path());
}

json to_json(const EngineConfig& c) {
    json j;
    j["root"] = c.root.string();
    j["filter"] = to_json(c.filter);
    j["embedder"] = {{"kind", "hashed-trigram"}, {"dimension", c.embedder_dimension}};
    if (c.mixing) {
        j["mixing"] = {{"ratio", ratio_text(c.mixing->ratio)},
                       {"general_pool", c.mixing->general_pool.string()},
                       {"seed", c.mixing->seed},
                       {"filter", c.mixing->filter ? to_json(*c.mixing->filter) : json(nullptr)}};
    }
    j["trainer"] = {{"kind", c.trainer.kind == TrainerConfig::Kind::builtin ? "builtin" : "external"},
                    {"command", c.trainer.command},
                    {"timeout_seconds", c.trainer.timeout_seconds}};
    j["lm"] = {{"deployed", {{"order", c.deployed_lm.order}, {"alpha", c.deployed_lm.alpha}}},
               {"proxy", {{"order", c.proxy_lm.order}, {"alpha", c.proxy_lm.alpha}}}};
    if (c.baseline_corpus) j["baseline_corpus"] = c.baseline_corpus->string();
    j["validation"] = {{"path", c.validation.path.string()},
                       {"mode", c.validation.policy.mode == PromotionPolicy::Mode::accuracy ? "accuracy" : "judge"},
                       {"min_margin", c.validation.policy.min_margin},
                       {"judge_url", c.validation.judge_url},
                       {"judge_timeout_seconds", c.validation.judge_timeout_seconds}};
    j["generation"] = {{"max_tokens", c.generation.max_tokens},
                       {"temperature", c.generation.temperature},
                       {"greedy", c.generation.greedy},
                       {"seed", c.generation.seed},
                       {"stop_byte", c.generation.stop_byte ? json(*c.generation.stop_byte) : json(nullptr)}};
    j["service"] = {{"url", c.service.url},
                    {"host", c.service.host},
                    {"port", c.service.port},
                    {"admin_token_env", c.service.admin_token_env}};
    j["watch_dir"] = c.watch_dir.string();
    j["poll_interval_ms"] = c.poll_interval_ms;
    return j;
}

std::string admin_token(const ServiceConfig& c) {
    const char* v = std::getenv(c.admin_token_env.c_str());
    return v ? std::string(v) : std::string();
}

}  // namespace cift
