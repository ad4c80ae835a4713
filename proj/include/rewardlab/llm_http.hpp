#pragma once

// Live chat-completion backend. Separated from llm.hpp so that only targets
// that actually speak HTTP pull in cpp-httplib.

#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rewardlab/llm.hpp"

namespace rewardlab::llm {

struct HttpBackendConfig {
    std::string base_url;  // scheme://host[:port]
    std::string path = "/v1/chat/completions";
    std::string api_key;
    int max_attempts = 3;
    int initial_backoff_ms = 1000;
    int timeout_s = 120;
};

// Standard chat-completion wire protocol: request body carries model,
// messages[{role, content}], temperature; the reply is read from the first
// choice's message content. Bounded retries with exponential backoff.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {}

    std::string complete(const CompletionRequest& request, std::string_view context) override {
        nlohmann::json body;
        body["model"] = request.model;
        body["temperature"] = request.temperature;
        nlohmann::json msgs = nlohmann::json::array();
        for (const auto& m : request.messages)
            msgs.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
        body["messages"] = msgs;
        const std::string payload = body.dump();

        std::string last_error;
        int backoff_ms = config_.initial_backoff_ms;
        for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            if (attempt > 1) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
                backoff_ms *= 2;
            }
            httplib::Client client(config_.base_url);
            client.set_connection_timeout(config_.timeout_s);
            client.set_read_timeout(config_.timeout_s);
            httplib::Headers headers;
            if (!config_.api_key.empty())
                headers.emplace("Authorization", "Bearer " + config_.api_key);
            auto res = client.Post(config_.path, headers, payload, "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
                continue;
            }
            nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
            if (reply.is_discarded()) {
                last_error = "unparseable response body";
                continue;
            }
            try {
                return reply.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const std::exception& ex) {
                last_error = std::string("unexpected response shape: ") + ex.what();
            }
        }
        throw NetworkError("chat completion failed after " +
                           std::to_string(config_.max_attempts) + " attempts (" +
                           std::string(context) + "): " + last_error);
    }

    std::string_view name() const override { return "http"; }

private:
    HttpBackendConfig config_;
};

}  // namespace rewardlab::llm
