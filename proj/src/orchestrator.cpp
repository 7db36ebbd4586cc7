#include "cift/orchestrator.hpp"

#include "cift/error.hpp"
#include "cift/lm.hpp"
#include "cift/util.hpp"

#include "httplib.h"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

namespace cift {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <class T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <class T>
std::optional<T> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<T>();
}

json tally_json(const JudgeTally& t) {
    return {{"candidate_wins", t.candidate_wins}, {"deployed_wins", t.deployed_wins}, {"ties", t.ties}};
}

EvalOutcome outcome_from_json(const json& j) {
    return {j.at("correct").get<std::size_t>(), j.at("wrong").get<std::size_t>(), j.at("fault").get<std::size_t>(),
            j.at("total").get<std::size_t>()};
}

Decision decision_from_string(const std::string& s) {
    if (s == "promote") return Decision::promote;
    if (s == "reject") return Decision::reject;
    if (s == "no-decision") return Decision::no_decision;
    throw Error(ErrorCode::invalid_input, "unknown decision '" + s + "'");
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

std::string substitute(std::string cmd, const std::string& key, const std::string& value) {
    for (auto pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size())) {
        cmd.replace(pos, key.size(), value);
    }
    return cmd;
}

std::size_t audit_line_count(const fs::path& path) {
    std::ifstream in(path);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !trim(line).empty();
    return n;
}

std::string next_cycle_id(const fs::path& root) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", audit_line_count(root / "audit.jsonl") + 1);
    return buf;
}

void append_audit(const fs::path& root, const CycleRecord& rec) {
    const auto path = root / "audit.jsonl";
    const std::string line = to_json(rec).dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw Error(ErrorCode::io, "cannot open audit log " + path.string());
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
        auto n = ::write(fd, p, left);
        if (n < 0) {
            ::close(fd);
            throw Error(ErrorCode::io, "cannot append to audit log " + path.string());
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
}

std::vector<std::size_t> ifd_histogram(const PipelineResult& r) {
    std::vector<std::size_t> bins(11, 0);
    auto add = [&](const ScoredPair& s) {
        if (!s.ifd || std::isnan(*s.ifd)) return;
        const double v = *s.ifd;
        bins[v >= 1.0 ? 10 : static_cast<std::size_t>(std::clamp(std::floor(v * 10.0), 0.0, 9.0))]++;
    };
    for (const auto& s : r.kept) add(s);
    for (const auto& s : r.rejected) add(s);
    return bins;
}

NGramModel load_labelled(const std::string& bytes, Role role, std::int64_t version) {
    auto m = deserialize(bytes);
    m.set_version(std::string(to_string(role)) + "@" + std::to_string(version));
    return m;
}

Batch kept_batch(const std::string& id, const std::vector<ScoredPair>& kept) {
    Batch b{id, {}};
    for (const auto& s : kept) b.pairs.push_back(s.pair);
    return b;
}

void run_cycle_body(CycleContext& ctx, const Batch& batch, CycleRecord& rec) {
    const auto& cfg = ctx.config;
    auto& reg = ctx.registry;
    const auto root = cfg.root;

    auto t = Clock::now();
    if (!reg.usable()) throw Error(ErrorCode::conflict, "registry handle is unusable; reopen it");
    if (cfg.validation.path.empty()) throw Error(ErrorCode::invalid_input, "no validation set configured");
    const auto cases = load_validation(cfg.validation.path);
    const auto proxy_v = reg.state().current_version(Role::proxy);
    const auto deployed_v = reg.state().current_version(Role::deployed);
    const std::string proxy_bytes = reg.read_artifact(Role::proxy, proxy_v);
    const std::string deployed_bytes = reg.read_artifact(Role::deployed, deployed_v);
    const NGramBackend proxy(load_labelled(proxy_bytes, Role::proxy, proxy_v));
    const NGramModel deployed = load_labelled(deployed_bytes, Role::deployed, deployed_v);
    rec.proxy_version = proxy.version();
    rec.deployed_version = deployed_v;
    rec.timings.load_ms = ms_since(t);

    t = Clock::now();
    const HashedTrigramEmbedder embedder(cfg.embedder_dimension);
    const auto result = run_pipeline(batch, cfg.filter, proxy, embedder);
    rec.funnel = result.funnel;
    rec.ifd_histogram = ifd_histogram(result);
    {
        std::vector<ScoredPair> all = result.kept;
        all.insert(all.end(), result.rejected.begin(), result.rejected.end());
        fs::create_directories(root / "cycles");
        write_file_atomic(root / "cycles" / (rec.cycle_id + ".scored.jsonl"), scored_jsonl(all, cfg.filter.length_unit));
    }
    rec.timings.filter_ms = ms_since(t);
    if (result.kept.empty()) {
        rec.decision = Decision::reject;
        return;
    }

    t = Clock::now();
    Batch training = kept_batch(batch.batch_id, result.kept);
    if (cfg.mixing) {
        Batch general = load_batch(cfg.mixing->general_pool, "general");
        if (cfg.mixing->filter) general = kept_batch("general", run_pipeline(general, *cfg.mixing->filter, proxy, embedder).kept);
        training = mix_batches(training, general, cfg.mixing->ratio, cfg.mixing->seed);
    }
    rec.after_mixing = training.size();
    std::vector<std::string> sequences;
    sequences.reserve(training.size());
    for (const auto& p : training.pairs) sequences.push_back(p.instruction + cfg.filter.separator + p.response);
    rec.timings.mix_ms = ms_since(t);

    t = Clock::now();
    std::string candidate_bytes;
    if (ctx.trainer) {
        candidate_bytes = ctx.trainer(deployed_bytes, sequences);
    } else if (cfg.trainer.kind == TrainerConfig::Kind::builtin) {
        candidate_bytes = builtin_train(deployed_bytes, sequences);
    } else {
        candidate_bytes = external_train(cfg.trainer, deployed_bytes, sequences, root / "work" / rec.cycle_id);
    }
    const NGramModel candidate = deserialize(candidate_bytes);
    const json metrics = {{"cycle_id", rec.cycle_id}, {"batch_id", rec.batch_id}, {"training_pairs", training.size()}};
    rec.candidate_version = reg.register_candidate(Role::deployed, candidate_bytes, metrics, deployed_v);
    rec.timings.train_ms = ms_since(t);

    t = Clock::now();
    try {
        const auto ce = evaluate_model(candidate, cases, cfg.generation, cfg.filter.separator);
        const auto de = evaluate_model(deployed, cases, cfg.generation, cfg.filter.separator);
        rec.candidate_eval = ce.outcome;
        rec.deployed_eval = de.outcome;
        rec.candidate_bleu = ce.mean_bleu;
        rec.candidate_rouge_l = ce.mean_rouge_l;
        if (cfg.validation.policy.mode == PromotionPolicy::Mode::judge) {
            std::shared_ptr<Judge> judge = ctx.judge;
            if (!judge && cfg.validation.judge_url.empty()) {
                std::map<std::string, std::string> keys;
                for (const auto& c : cases) keys[c.instruction] = c.truth;
                judge = std::make_shared<MockJudge>(std::move(keys));
            } else if (!judge) {
                judge = std::make_shared<HttpJudge>(cfg.validation.judge_url, cfg.validation.judge_timeout_seconds);
            }
            JudgeTally tally;
            for (std::size_t i = 0; i < cases.size(); ++i) {
                switch (judge_compare(*judge, cases[i].instruction, ce.outputs[i], de.outputs[i]).winner) {
                    case Winner::candidate: ++tally.candidate_wins; break;
                    case Winner::deployed: ++tally.deployed_wins; break;
                    case Winner::tie: ++tally.ties; break;
                }
            }
            rec.judge = tally;
            rec.decision = decide_promotion(tally, cfg.validation.policy);
        } else {
            rec.decision = decide_promotion(ce.outcome, de.outcome, cfg.validation.policy);
        }
    } catch (const std::exception& e) {
        rec.timings.eval_ms = ms_since(t);
        rec.decision = Decision::no_decision;
        rec.error = std::string("evaluation failed: ") + e.what();
        return;
    }
    rec.timings.eval_ms = ms_since(t);

    t = Clock::now();
    if (rec.decision == Decision::promote) {
        // The proxy learns the same training set; both promotions land in one
        // commit so the two roles never drift apart after a crash.
        const std::string new_proxy = builtin_train(proxy_bytes, sequences);
        const auto pv = reg.register_candidate(Role::proxy, new_proxy, {{"cycle_id", rec.cycle_id}}, proxy_v);
        reg.promote_together({{Role::deployed, *rec.candidate_version}, {Role::proxy, pv}});
        rec.new_proxy_version = pv;
        if (ctx.notifier) {
            try {
                ctx.notifier->promoted(*rec.candidate_version);
            } catch (const std::exception& e) {
                rec.service_error = e.what();
            }
        }
    } else {
        reg.reject(Role::deployed, *rec.candidate_version);
    }
    rec.timings.commit_ms = ms_since(t);
}

}  // namespace

json to_json(const CycleRecord& r) {
    json funnel = to_json(r.funnel);
    funnel["after_mixing"] = r.after_mixing;
    json candidate = nullptr, deployed = nullptr;
    if (r.candidate_eval) {
        candidate = to_json(*r.candidate_eval);
        candidate["bleu"] = opt(r.candidate_bleu);
        candidate["rouge_l"] = opt(r.candidate_rouge_l);
    }
    if (r.deployed_eval) deployed = to_json(*r.deployed_eval);
    return {{"cycle_id", r.cycle_id},
            {"batch_id", r.batch_id},
            {"funnel", funnel},
            {"proxy_version", r.proxy_version},
            {"deployed_version", r.deployed_version},
            {"candidate_version", opt(r.candidate_version)},
            {"candidate", candidate},
            {"deployed", deployed},
            {"judge", r.judge ? tally_json(*r.judge) : json(nullptr)},
            {"decision", to_string(r.decision)},
            {"new_proxy_version", opt(r.new_proxy_version)},
            {"error", r.error},
            {"service_error", r.service_error},
            {"ifd_histogram", r.ifd_histogram},
            {"timings_ms",
             {{"load", r.timings.load_ms},
              {"filter", r.timings.filter_ms},
              {"mix", r.timings.mix_ms},
              {"train", r.timings.train_ms},
              {"eval", r.timings.eval_ms},
              {"commit", r.timings.commit_ms},
              {"total", r.timings.total_ms}}},
            {"started_at", r.started_at},
            {"finished_at", r.finished_at}};
}

CycleRecord cycle_record_from_json(const json& j) {
    try {
        CycleRecord r;
        r.cycle_id = j.at("cycle_id").get<std::string>();
        r.batch_id = j.at("batch_id").get<std::string>();
        r.funnel = funnel_from_json(j.at("funnel"));
        r.after_mixing = j.at("funnel").value("after_mixing", std::size_t{0});
        r.proxy_version = j.value("proxy_version", "");
        r.deployed_version = j.value("deployed_version", std::int64_t{0});
        r.candidate_version = opt_from<std::int64_t>(j, "candidate_version");
        if (j.contains("candidate") && !j["candidate"].is_null()) {
            r.candidate_eval = outcome_from_json(j["candidate"]);
            r.candidate_bleu = opt_from<double>(j["candidate"], "bleu");
            r.candidate_rouge_l = opt_from<double>(j["candidate"], "rouge_l");
        }
        if (j.contains("deployed") && !j["deployed"].is_null()) r.deployed_eval = outcome_from_json(j["deployed"]);
        if (j.contains("judge") && !j["judge"].is_null()) {
            const auto& t = j["judge"];
            r.judge = JudgeTally{t.at("candidate_wins").get<std::size_t>(), t.at("deployed_wins").get<std::size_t>(),
                                 t.at("ties").get<std::size_t>()};
        }
        r.decision = decision_from_string(j.at("decision").get<std::string>());
        r.new_proxy_version = opt_from<std::int64_t>(j, "new_proxy_version");
        r.error = j.value("error", "");
        r.service_error = j.value("service_error", "");
        r.ifd_histogram = j.value("ifd_histogram", std::vector<std::size_t>{});
        if (j.contains("timings_ms")) {
            const auto& t = j["timings_ms"];
            r.timings = {t.value("load", 0.0),  t.value("filter", 0.0), t.value("mix", 0.0),  t.value("train", 0.0),
                         t.value("eval", 0.0),  t.value("commit", 0.0), t.value("total", 0.0)};
        }
        r.started_at = j.value("started_at", "");
        r.finished_at = j.value("finished_at", "");
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::corrupt, std::string("malformed cycle record: ") + e.what());
    }
}

json deterministic_view(const CycleRecord& r) {
    json j = to_json(r);
    j.erase("timings_ms");
    j.erase("started_at");
    j.erase("finished_at");
    return j;
}

std::vector<CycleRecord> read_audit_log(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::not_found, "no audit log at " + path.string());
    std::vector<CycleRecord> out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw Error(ErrorCode::corrupt, "audit log line " + std::to_string(line_no) + " is not valid JSON");
        }
        out.push_back(cycle_record_from_json(j));
    }
    return out;
}

// ---------------------------------------------------------------------------

HttpServiceNotifier::HttpServiceNotifier(std::string base_url, std::string admin_token, double timeout_seconds)
    : base_url_(std::move(base_url)), token_(std::move(admin_token)), timeout_seconds_(timeout_seconds) {}

void HttpServiceNotifier::promoted(std::int64_t version) { post("/admin/promote", version); }
void HttpServiceNotifier::rolled_back(std::int64_t version) { post("/admin/rollback", version); }

void HttpServiceNotifier::post(const std::string& path, std::int64_t version) {
    httplib::Client client(base_url_);
    const auto secs = static_cast<time_t>(timeout_seconds_);
    const auto usecs = static_cast<time_t>((timeout_seconds_ - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    httplib::Headers headers{{"X-Admin-Token", token_}};
    auto res = client.Post(path, headers, json{{"version", version}}.dump(), "application/json");
    if (!res) throw Error(ErrorCode::backend, "service " + base_url_ + " unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw Error(ErrorCode::backend, "service " + path + " returned HTTP " + std::to_string(res->status) + ": " + res->body);
    }
}

// ---------------------------------------------------------------------------

std::string builtin_train(const std::string& base_artifact, const std::vector<std::string>& sequences) {
    return serialize(train(deserialize(base_artifact), sequences));
}

std::string external_train(const TrainerConfig& hook, const std::string& base_artifact,
                           const std::vector<std::string>& sequences, const fs::path& work_dir) {
    if (hook.command.empty()) throw Error(ErrorCode::invalid_input, "external trainer has no command");
    fs::create_directories(work_dir);
    const auto train_file = work_dir / "train.jsonl";
    const auto base_file = work_dir / "base.bin";
    const auto out_file = work_dir / "out.bin";
    const auto log_file = work_dir / "trainer.log";
    std::string lines;
    for (const auto& s : sequences) lines += json{{"text", s}}.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
    write_file_atomic(train_file, lines);
    write_file_atomic(base_file, base_artifact);
    std::error_code ec;
    fs::remove(out_file, ec);

    std::string cmd = hook.command;
    cmd = substitute(cmd, "{train_file}", shell_quote(train_file.string()));
    cmd = substitute(cmd, "{base_artifact}", shell_quote(base_file.string()));
    cmd = substitute(cmd, "{out_artifact}", shell_quote(out_file.string()));

    const pid_t pid = ::fork();
    if (pid < 0) throw Error(ErrorCode::backend, "fork failed for trainer");
    if (pid == 0) {
        ::setpgid(0, 0);
        int fd = ::open(log_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd >= 0) {
            ::dup2(fd, 1);
            ::dup2(fd, 2);
            ::close(fd);
        }
        ::execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::setpgid(pid, pid);
    const auto deadline = Clock::now() + std::chrono::duration<double>(hook.timeout_seconds);
    int status = 0;
    for (;;) {
        const pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) break;
        if (r < 0 && errno != EINTR) throw Error(ErrorCode::backend, "waitpid failed for trainer");
        if (Clock::now() >= deadline) {
            ::kill(-pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            throw Error(ErrorCode::timeout, "trainer timed out after " + std::to_string(hook.timeout_seconds) + " s");
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        const std::string how = WIFEXITED(status) ? "exited with status " + std::to_string(WEXITSTATUS(status))
                                                  : "was killed by signal " + std::to_string(WTERMSIG(status));
        throw Error(ErrorCode::backend, "trainer " + how + " (log: " + log_file.string() + ")");
    }
    if (!fs::exists(out_file)) throw Error(ErrorCode::backend, "trainer produced no output artifact");
    auto bytes = read_file(out_file);
    if (bytes.empty()) throw Error(ErrorCode::backend, "trainer produced an empty artifact");
    return bytes;
}

// ---------------------------------------------------------------------------

CycleContext CycleContext::open(EngineConfig config) {
    auto reg = Registry::open(config.root);
    CycleContext ctx{std::move(config), std::move(reg), nullptr, {}, nullptr};
    if (!ctx.config.service.url.empty()) {
        ctx.notifier = std::make_shared<HttpServiceNotifier>(ctx.config.service.url, admin_token(ctx.config.service));
    }
    return ctx;
}

Registry init_registry(const EngineConfig& config) {
    NGramModel deployed(config.deployed_lm.order, config.deployed_lm.alpha, "baseline");
    NGramModel proxy(config.proxy_lm.order, config.proxy_lm.alpha, "baseline");
    if (config.baseline_corpus) {
        const auto batch = load_batch(*config.baseline_corpus, "baseline");
        std::vector<std::string> seqs;
        for (const auto& p : batch.pairs) seqs.push_back(p.instruction + config.filter.separator + p.response);
        deployed = train(std::move(deployed), seqs);
        proxy = train(std::move(proxy), seqs);
    }
    return Registry::init(config.root, serialize(deployed), serialize(proxy),
                          {{"source", config.baseline_corpus ? config.baseline_corpus->filename().string() : "untrained"}});
}

CycleRecord run_cycle(CycleContext& ctx, const Batch& batch) {
    const auto t0 = Clock::now();
    CycleRecord rec;
    rec.batch_id = batch.batch_id;
    rec.cycle_id = next_cycle_id(ctx.config.root);
    rec.started_at = now_iso8601();
    rec.funnel.input = batch.size();
    try {
        run_cycle_body(ctx, batch, rec);
    } catch (const std::exception& e) {
        rec.decision = Decision::no_decision;
        rec.error = e.what();
    }
    rec.timings.total_ms = ms_since(t0);
    rec.finished_at = now_iso8601();
    append_audit(ctx.config.root, rec);
    return rec;
}

CycleRecord record_failed_batch(CycleContext& ctx, const std::string& batch_id, const std::string& error) {
    CycleRecord rec;
    rec.batch_id = batch_id;
    rec.cycle_id = next_cycle_id(ctx.config.root);
    rec.started_at = rec.finished_at = now_iso8601();
    rec.decision = Decision::no_decision;
    rec.error = error;
    if (ctx.registry.usable()) rec.deployed_version = ctx.registry.state().current_version(Role::deployed);
    append_audit(ctx.config.root, rec);
    return rec;
}

std::size_t run_daemon(CycleContext& ctx, const DaemonOptions& options, const std::atomic<bool>& stop,
                       const std::function<void(const CycleRecord&)>& on_record) {
    const auto& dir = options.watch_dir;
    fs::create_directories(dir / "done");
    fs::create_directories(dir / "failed");
    std::size_t processed = 0;
    while (!stop.load()) {
        std::vector<fs::path> pending;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_regular_file() && e.path().extension() == ".jsonl") pending.push_back(e.path());
        }
        std::sort(pending.begin(), pending.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
        if (pending.empty()) {
            if (options.once) break;
            const auto until = Clock::now() + std::chrono::milliseconds(options.poll_interval_ms);
            while (!stop.load() && Clock::now() < until) std::this_thread::sleep_for(std::chrono::milliseconds(20));
            continue;
        }
        for (const auto& file : pending) {
            if (stop.load()) break;
            if (!ctx.registry.usable()) {
                { Registry released = std::move(ctx.registry); }
                ctx.registry = Registry::open(ctx.config.root);
            }
            const auto batch_id = file.stem().string();
            CycleRecord rec;
            try {
                rec = run_cycle(ctx, load_batch(file, batch_id));
            } catch (const Error& e) {
                if (e.code() == ErrorCode::io) throw;
                rec = record_failed_batch(ctx, batch_id, e.what());
            }
            const auto target = dir / (rec.error.empty() ? "done" : "failed") / file.filename();
            fs::rename(file, target);
            ++processed;
            if (on_record) on_record(rec);
        }
    }
    return processed;
}

}  // namespace cift
