#pragma once

#include <atomic>
#include <charconv>
#include <cstdint>
#include <deque>
#include <fstream>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace rewardlab::llm {

enum class Role { System, User, Assistant };

inline std::string_view to_string(Role r) {
    switch (r) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "?";
}

inline Role role_from_string(std::string_view s) {
    if (s == "system") return Role::System;
    if (s == "user") return Role::User;
    if (s == "assistant") return Role::Assistant;
    throw std::invalid_argument("unknown chat role: " + std::string(s));
}

struct ChatMessage {
    Role role = Role::User;
    std::string content;
    bool operator==(const ChatMessage&) const = default;
};

struct CompletionRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 1.0;
};

// Stable hash of (model, messages, temperature); the replay key. FNV-1a over
// a canonical byte serialization, rendered as 16 hex digits.
inline std::string fingerprint(const CompletionRequest& request) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](std::string_view bytes) {
        for (unsigned char c : bytes) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
    };
    feed(request.model);
    feed("\x1e");
    for (const auto& m : request.messages) {
        feed(to_string(m.role));
        feed("\x1f");
        feed(m.content);
        feed("\x1e");
    }
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, request.temperature);
    feed(std::string_view(buf, static_cast<std::size_t>(ptr - buf)));

    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ReplayMiss : std::runtime_error {
    explicit ReplayMiss(const std::string& what) : std::runtime_error(what) {}
};

struct NetworkError : std::runtime_error {
    explicit NetworkError(const std::string& what) : std::runtime_error(what) {}
};

struct TranscriptError : std::runtime_error {
    explicit TranscriptError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Transcript (line-delimited JSON records)
// ---------------------------------------------------------------------------

struct TranscriptEntry {
    std::string fingerprint;
    std::string model;
    double temperature = 1.0;
    std::vector<ChatMessage> messages;
    std::string response;
    bool operator==(const TranscriptEntry&) const = default;
};

class Transcript {
public:
    void append(TranscriptEntry entry) { entries_.push_back(std::move(entry)); }
    const std::vector<TranscriptEntry>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    bool operator==(const Transcript&) const = default;

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw TranscriptError("cannot open for writing: " + path);
        for (const auto& e : entries_) {
            nlohmann::json j;
            j["fingerprint"] = e.fingerprint;
            j["model"] = e.model;
            j["temperature"] = e.temperature;
            nlohmann::json msgs = nlohmann::json::array();
            for (const auto& m : e.messages)
                msgs.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
            j["messages"] = msgs;
            j["response"] = e.response;
            out << j.dump() << '\n';
        }
        if (!out) throw TranscriptError("write failed: " + path);
    }

    static Transcript load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw TranscriptError("cannot open for reading: " + path);
        Transcript t;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                throw TranscriptError(path + ": malformed record at line " +
                                      std::to_string(line_no));
            try {
                TranscriptEntry e;
                e.fingerprint = j.at("fingerprint").get<std::string>();
                e.model = j.at("model").get<std::string>();
                e.temperature = j.at("temperature").get<double>();
                for (const auto& m : j.at("messages")) {
                    e.messages.push_back({role_from_string(m.at("role").get<std::string>()),
                                          m.at("content").get<std::string>()});
                }
                e.response = j.at("response").get<std::string>();
                t.append(std::move(e));
            } catch (const std::exception& ex) {
                throw TranscriptError(path + ": malformed record at line " +
                                      std::to_string(line_no) + " (" + ex.what() + ")");
            }
        }
        return t;
    }

private:
    std::vector<TranscriptEntry> entries_;
};

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const CompletionRequest& request, std::string_view context) = 0;
    virtual std::string_view name() const = 0;
};

// Scripted FIFO queue of responses; requests are answered in order.
class MockBackend : public Backend {
public:
    MockBackend() = default;
    explicit MockBackend(std::vector<std::string> responses)
        : queue_(responses.begin(), responses.end()) {}

    void push(std::string response) { queue_.push_back(std::move(response)); }
    std::size_t remaining() const { return queue_.size(); }

    std::string complete(const CompletionRequest&, std::string_view context) override {
        if (queue_.empty())
            throw std::runtime_error("mock backend script exhausted (" + std::string(context) +
                                     ")");
        std::string response = std::move(queue_.front());
        queue_.pop_front();
        return response;
    }

    std::string_view name() const override { return "mock"; }

private:
    std::deque<std::string> queue_;
};

// Exact-match replay keyed by request fingerprint. Repeated identical
// requests are replayed in recorded order (per-fingerprint FIFO).
class ReplayBackend : public Backend {
public:
    explicit ReplayBackend(Transcript transcript) : transcript_(std::move(transcript)) {
        for (std::size_t i = 0; i < transcript_.entries().size(); ++i)
            queues_[transcript_.entries()[i].fingerprint].push_back(i);
    }

    std::string complete(const CompletionRequest& request, std::string_view context) override {
        std::string fp = fingerprint(request);
        auto it = queues_.find(fp);
        if (it == queues_.end() || it->second.empty())
            throw ReplayMiss("replay miss for fingerprint " + fp + " (" + std::string(context) +
                             ")");
        std::size_t index = it->second.front();
        it->second.pop_front();
        return transcript_.entries()[index].response;
    }

    std::string_view name() const override { return "replay"; }

private:
    Transcript transcript_;
    std::unordered_map<std::string, std::deque<std::size_t>> queues_;
};

// ---------------------------------------------------------------------------
// Gateway: counting, validation, recording
// ---------------------------------------------------------------------------

class Gateway {
public:
    explicit Gateway(std::unique_ptr<Backend> backend) : backend_(std::move(backend)) {}

    // When set, every completed call is appended (thread-safe).
    void record_to(Transcript* transcript) { recorder_ = transcript; }

    std::string complete(const CompletionRequest& request, std::string_view context = {}) {
        if (request.messages.empty())
            throw std::invalid_argument("completion request has no messages");
        for (const auto& m : request.messages) {
            if (m.role != Role::Assistant && m.content.empty())
                throw std::invalid_argument("empty content in user/system message");
        }
        if (request.temperature < 0.0 || request.temperature > 2.0)
            throw std::invalid_argument("temperature out of range [0, 2]");

        ++calls_;
        std::string response;
        {
            std::lock_guard<std::mutex> lock(backend_mutex_);
            response = backend_->complete(request, context);
        }
        if (recorder_) {
            std::lock_guard<std::mutex> lock(record_mutex_);
            recorder_->append({fingerprint(request), request.model, request.temperature,
                               request.messages, response});
        }
        return response;
    }

    int calls() const { return calls_.load(); }
    std::string_view backend_name() const { return backend_->name(); }

private:
    std::unique_ptr<Backend> backend_;
    Transcript* recorder_ = nullptr;
    std::mutex backend_mutex_;
    std::mutex record_mutex_;
    std::atomic<int> calls_{0};
};

}  // namespace rewardlab::llm
