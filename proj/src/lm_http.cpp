#include "cift/error.hpp"
#include "cift/lm.hpp"

#include "httplib.h"
#include "json.hpp"

#include <cmath>

namespace cift {

HttpLMBackend::HttpLMBackend(std::string base_url, double timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

std::vector<double> HttpLMBackend::token_logprobs(std::string_view prefix, std::string_view target) const {
    if (target.empty()) throw Error(ErrorCode::invalid_input, "perplexity is undefined for an empty target");
    httplib::Client client(base_url_);
    const auto secs = static_cast<time_t>(timeout_seconds_);
    const auto usecs = static_cast<time_t>((timeout_seconds_ - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    nlohmann::json body = {{"prefix", std::string(prefix)}, {"target", std::string(target)}};
    auto res = client.Post("/v1/logprobs", body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace),
                           "application/json");
    if (!res) {
        throw Error(ErrorCode::backend, "logprob backend " + base_url_ + " unreachable: " + httplib::to_string(res.error()));
    }
    auto doc = nlohmann::json::parse(res->body, nullptr, false);
    if (res->status < 200 || res->status >= 300) {
        std::string why = (doc.is_object() && doc.contains("error") && doc["error"].is_string())
                              ? doc["error"].get<std::string>()
                              : res->body;
        throw Error(ErrorCode::backend, "logprob backend returned HTTP " + std::to_string(res->status) + ": " + why);
    }
    if (!doc.is_object() || !doc.contains("logprobs") || !doc["logprobs"].is_array()) {
        throw Error(ErrorCode::backend, "logprob backend returned a malformed body");
    }
    std::vector<double> out;
    out.reserve(doc["logprobs"].size());
    for (const auto& v : doc["logprobs"]) {
        // null encodes a non-finite value; pathological scores surface as NaN
        // and are classified downstream.
        out.push_back(v.is_number() ? v.get<double>() : std::nan(""));
    }
    if (doc.contains("model_version") && doc["model_version"].is_string()) {
        last_version_ = doc["model_version"].get<std::string>();
    }
    return out;
}

std::string HttpLMBackend::version() const { return last_version_.empty() ? base_url_ : last_version_; }

void HttpLMBackend::train(std::span<const std::string>) {
    throw Error(ErrorCode::unsupported, "remote logprob backends are trained out of band");
}

std::string HttpLMBackend::snapshot() const {
    throw Error(ErrorCode::unsupported, "remote logprob backends cannot be snapshotted");
}

void HttpLMBackend::restore(std::string_view) {
    throw Error(ErrorCode::unsupported, "remote logprob backends cannot be restored");
}

}  // namespace cift
