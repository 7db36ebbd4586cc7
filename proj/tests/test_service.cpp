#include "cift/error.hpp"
#include "cift/lm.hpp"
#include "cift/orchestrator.hpp"
#include "cift/service.hpp"

#include "fixtures.hpp"

#include "httplib.h"

#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <set>
#include <thread>

using namespace cift;
using fixtures::Env;
using json = nlohmann::json;

namespace {

const std::string kToken = "s3cret";

std::string model_bytes(const std::string& text, int order = 3) {
    return serialize(train(NGramModel(order), std::vector<std::string>{text}));
}

/// Registry with version 1 registered as a deployed candidate.
struct ServiceEnv {
    Env env{{.mixing = false}};
    std::int64_t v1 = 0;
    ServiceEnv() {
        auto reg = Registry::open(env.config.root);
        v1 = reg.register_candidate(Role::deployed, model_bytes("version one text", 4));
    }
    void promote_v1() {
        auto reg = Registry::open(env.config.root);
        reg.promote(Role::deployed, v1);
    }
    void rollback_to(std::int64_t v) {
        auto reg = Registry::open(env.config.root);
        reg.rollback(Role::deployed, v);
    }
};

httplib::Result post(int port, const std::string& path, const json& body, const std::string& token = "") {
    httplib::Client c("127.0.0.1", port);
    httplib::Headers h;
    if (!token.empty()) h.emplace("X-Admin-Token", token);
    return c.Post(path, h, body.dump(), "application/json");
}

}  // namespace

TEST(Service, UnavailableBeforeFirstLoad) {
    InferenceService svc;
    EXPECT_EQ(svc.handle_complete({{"prompt", "x"}}).status, 503);
    const auto s = svc.handle_status();
    EXPECT_EQ(s.status, 200);
    EXPECT_TRUE(s.body["deployed_version"].is_null());
    EXPECT_EQ(s.body["epoch"], 0);
}

TEST(Service, StatusAfterInitAndPromote) {
    ServiceEnv se;
    InferenceService svc(se.env.config.root, kToken);
    svc.load_current();
    auto s = svc.handle_status().body;
    EXPECT_EQ(s["deployed_version"], 0);
    EXPECT_EQ(s["epoch"], 0);
    EXPECT_EQ(s["proxy_version"], 0);
    se.promote_v1();
    ASSERT_EQ(svc.handle_admin_swap(kToken, {{"version", se.v1}}).status, 200);
    s = svc.handle_status().body;
    EXPECT_EQ(s["deployed_version"], 1);
    EXPECT_EQ(s["epoch"], 1);
}

TEST(Service, CompletionBasics) {
    ServiceEnv se;
    InferenceService svc(se.env.config.root, kToken);
    svc.load_current();
    auto r = svc.handle_complete({{"prompt", "Why"}, {"max_tokens", 0}});
    EXPECT_EQ(r.status, 200);
    EXPECT_EQ(r.body["text"], "");
    EXPECT_EQ(r.body["model_version"], 0);
    const json req = {{"prompt", "Why does"}, {"max_tokens", 20}, {"temperature", 0.8}, {"seed", 5}};
    EXPECT_EQ(svc.handle_complete(req).body["text"], svc.handle_complete(req).body["text"]);
    EXPECT_EQ(svc.handle_complete({{"max_tokens", 3}}).status, 400);
    EXPECT_EQ(svc.handle_complete({{"prompt", 3}}).status, 400);
    EXPECT_EQ(svc.handle_complete({{"prompt", "x"}, {"max_tokens", "many"}}).status, 400);
    EXPECT_EQ(svc.handle_complete({{"prompt", "x"}, {"temperature", 0.0}}).status, 400);
    EXPECT_EQ(svc.handle_complete({{"prompt", "x"}, {"max_tokens", 100000}}).status, 400);
}

TEST(Service, HotSwapChecks) {
    InferenceService svc;
    const auto a = model_bytes("aaaa"), b = model_bytes("bbbb");
    EXPECT_EQ(svc.hot_swap(3, a, sha256_hex(a)), 1u);
    try {
        svc.hot_swap(4, b, sha256_hex(a));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::conflict);
    }
    const std::string junk = "not a model";
    EXPECT_THROW(svc.hot_swap(4, junk, sha256_hex(junk)), Error);
    EXPECT_EQ(svc.snapshot()->version, 3);
    EXPECT_EQ(svc.snapshot()->epoch, 1u);
    svc.hot_swap(4, b, sha256_hex(b));
    svc.hot_swap(5, a, sha256_hex(a));
    EXPECT_EQ(svc.snapshot()->epoch, 3u);
    EXPECT_EQ(svc.snapshot()->version, 5);
}

TEST(Service, AdminAuthAndRegistryAgreement) {
    ServiceEnv se;
    InferenceService svc(se.env.config.root, kToken);
    svc.load_current();
    EXPECT_EQ(svc.handle_admin_swap("", {{"version", 1}}).status, 401);
    EXPECT_EQ(svc.handle_admin_swap("wrong", {{"version", 1}}).status, 401);
    EXPECT_EQ(svc.handle_admin_swap(kToken, {{"version", "1"}}).status, 400);
    // Not yet promoted in the registry: the service refuses to self-promote.
    EXPECT_EQ(svc.handle_admin_swap(kToken, {{"version", 1}}).status, 409);
    InferenceService no_admin(se.env.config.root);
    EXPECT_EQ(no_admin.handle_admin_swap("", {{"version", 0}}).status, 403);
}

TEST(Service, CorruptArtifactRefusedOldKeepsServing) {
    ServiceEnv se;
    InferenceService svc(se.env.config.root, kToken);
    svc.load_current();
    se.promote_v1();
    {
        std::fstream f(se.env.config.root / "artifacts/deployed-model/1.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(20);
        f.put('\x7f');
    }
    const auto r = svc.handle_admin_swap(kToken, {{"version", 1}});
    EXPECT_EQ(r.status, 409);
    EXPECT_TRUE(r.body.contains("error"));
    EXPECT_EQ(svc.handle_status().body["deployed_version"], 0);
    EXPECT_EQ(svc.handle_complete({{"prompt", "x"}, {"max_tokens", 2}}).status, 200);
}

TEST(ServiceHttp, Endpoints) {
    ServiceEnv se;
    InferenceService svc(se.env.config.root, kToken);
    svc.load_current();
    ServiceServer server(svc, "127.0.0.1", 0);
    const int port = server.port();

    auto r = post(port, "/v1/complete", {{"prompt", "Why"}, {"max_tokens", 5}, {"seed", 1}});
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(json::parse(r->body)["model_version"], 0);

    httplib::Client c("127.0.0.1", port);
    auto bad = c.Post("/v1/complete", "{nope", "application/json");
    EXPECT_EQ(bad->status, 400);
    EXPECT_TRUE(json::parse(bad->body).contains("error"));
    EXPECT_EQ(post(port, "/v1/complete", json::object())->status, 400);

    r = post(port, "/admin/promote", {{"version", 1}});
    EXPECT_EQ(r->status, 401);
    se.promote_v1();
    r = post(port, "/admin/promote", {{"version", 1}}, kToken);
    EXPECT_EQ(r->status, 200) << r->body;
    auto st = json::parse(c.Get("/v1/status")->body);
    EXPECT_EQ(st["deployed_version"], 1);
    EXPECT_EQ(st["epoch"], 1);

    se.rollback_to(0);
    r = post(port, "/admin/rollback", {{"version", 0}}, kToken);
    EXPECT_EQ(r->status, 200) << r->body;
    st = json::parse(c.Get("/v1/status")->body);
    EXPECT_EQ(st["deployed_version"], 0);
    EXPECT_EQ(st["epoch"], 2);
    r = post(port, "/v1/complete", {{"prompt", "x"}, {"max_tokens", 1}});
    EXPECT_EQ(json::parse(r->body)["model_version"], 0);
}

TEST(ServiceHttp, LogprobsMatchModelAndFeedHttpBackend) {
    InferenceService svc;
    const auto bytes = model_bytes("abcabcabd", 2);
    svc.hot_swap(7, bytes, sha256_hex(bytes));
    ServiceServer server(svc, "127.0.0.1", 0);
    HttpLMBackend remote("http://127.0.0.1:" + std::to_string(server.port()), 5);
    const auto local = deserialize(bytes).token_logprobs("ab", "cab");
    const auto got = remote.token_logprobs("ab", "cab");
    ASSERT_EQ(got.size(), local.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_DOUBLE_EQ(got[i], local[i]);
    EXPECT_EQ(remote.version(), "deployed-model@7");
}

TEST(ServiceHttp, SwapUnderConcurrentLoad) {
    InferenceService svc;
    const auto old_bytes = model_bytes("old model data", 3);
    const auto new_bytes = model_bytes("new model data", 3);
    svc.hot_swap(1, old_bytes, sha256_hex(old_bytes));
    ServiceServer server(svc, "127.0.0.1", 0);
    const int port = server.port();

    std::atomic<int> failures{0}, torn{0};
    std::atomic<bool> swapped{false};
    std::mutex mu;
    std::multiset<std::int64_t> versions;
    std::vector<std::thread> clients;
    for (int i = 0; i < 50; ++i) {
        clients.emplace_back([&, i] {
            httplib::Client c("127.0.0.1", port);
            c.set_read_timeout(30, 0);
            auto r = c.Post("/v1/complete", json{{"prompt", "model"}, {"max_tokens", 200}, {"seed", i}}.dump(),
                            "application/json");
            if (!r || r->status != 200) {
                ++failures;
                return;
            }
            auto body = json::parse(r->body, nullptr, false);
            if (body.is_discarded() || !body.contains("text")) {
                ++failures;
                return;
            }
            std::lock_guard lock(mu);
            versions.insert(body["model_version"].get<std::int64_t>());
        });
    }
    std::thread poller([&] {
        httplib::Client c("127.0.0.1", port);
        for (int i = 0; i < 40; ++i) {
            auto r = c.Get("/v1/status");
            if (!r) {
                ++failures;
                continue;
            }
            auto s = json::parse(r->body);
            const auto v = s["deployed_version"].get<std::int64_t>();
            const auto e = s["epoch"].get<std::uint64_t>();
            if (!((v == 1 && e == 1) || (v == 2 && e == 2))) ++torn;
        }
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
    svc.hot_swap(2, new_bytes, sha256_hex(new_bytes));
    swapped = true;
    for (auto& t : clients) t.join();
    poller.join();
    EXPECT_EQ(failures.load(), 0);
    EXPECT_EQ(torn.load(), 0);
    EXPECT_EQ(versions.size(), 50u);
    for (auto v : versions) EXPECT_TRUE(v == 1 || v == 2);
    // After the swap every new request sees the new version.
    auto r = post(port, "/v1/complete", {{"prompt", "x"}, {"max_tokens", 1}});
    EXPECT_EQ(json::parse(r->body)["model_version"], 2);
}
