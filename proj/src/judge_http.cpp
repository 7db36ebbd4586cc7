#include "cift/error.hpp"
#include "cift/evaluation.hpp"

#include "httplib.h"

namespace cift {

HttpJudge::HttpJudge(std::string base_url, double timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

Judgement HttpJudge::judge(std::string_view instruction, std::string_view response_a, std::string_view response_b) {
    httplib::Client client(base_url_);
    const auto secs = static_cast<time_t>(timeout_seconds_);
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    nlohmann::json body = {{"instruction", std::string(instruction)},
                           {"response_a", std::string(response_a)},
                           {"response_b", std::string(response_b)}};
    auto res = client.Post("/v1/judge", body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace),
                           "application/json");
    if (!res) throw Error(ErrorCode::backend, "judge " + base_url_ + " unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error(ErrorCode::backend, "judge returned HTTP " + std::to_string(res->status));
    auto doc = nlohmann::json::parse(res->body, nullptr, false);
    if (!doc.is_object() || !doc.contains("winner") || !doc["winner"].is_string()) {
        throw Error(ErrorCode::backend, "judge returned a malformed body");
    }
    Judgement j;
    const auto w = doc["winner"].get<std::string>();
    if (w == "a") j.pick = Judgement::Pick::a;
    else if (w == "b") j.pick = Judgement::Pick::b;
    else if (w == "tie") j.pick = Judgement::Pick::tie;
    else throw Error(ErrorCode::backend, "judge returned unknown winner '" + w + "'");
    if (doc.contains("rationale") && doc["rationale"].is_string()) j.rationale = doc["rationale"].get<std::string>();
    return j;
}

}  // namespace cift
