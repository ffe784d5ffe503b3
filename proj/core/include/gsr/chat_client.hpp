#pragma once

#include <gsr/error.hpp>

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <string>

namespace gsr {

// Name of the environment variable holding the bearer token for the chat
// endpoint. The token is read at request time and never logged.
inline constexpr const char* kChatTokenEnv = "GSR_CHAT_API_KEY";

struct ChatSettings {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string model = "gpt-4";
    double temperature = 0.0;
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{500};
    double backoff_factor = 2.0;
    std::chrono::milliseconds timeout{60'000};
    int max_in_flight = 4;
};

struct ChatReply {
    std::string text;
    std::size_t prompt_chars = 0;
    std::size_t response_chars = 0;
};

class ChatError : public Error {
public:
    // status 0 means no HTTP response was received.
    ChatError(const std::string& what, int status, bool transport_failure)
        : Error(what), status_(status), transport_failure_(transport_failure) {}

    int status() const noexcept { return status_; }
    // True when the endpoint could not be reached at all after all retries.
    bool transport_failure() const noexcept { return transport_failure_; }

private:
    int status_;
    bool transport_failure_;
};

class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual ChatReply complete(const std::string& prompt) = 0;
};

// OpenAI-compatible POST {base_url}/chat/completions with one user message.
// Transport failures, 429 and 5xx are retried with exponential backoff.
class HttpChatClient final : public ChatClient {
public:
    explicit HttpChatClient(ChatSettings settings);
    ChatReply complete(const std::string& prompt) override;

    const ChatSettings& settings() const noexcept { return settings_; }

private:
    ChatReply attempt(const std::string& body, int& status, bool& transport_failed,
                      std::string& detail);

    ChatSettings settings_;
    std::string scheme_host_port_;
    std::string path_prefix_;

    std::mutex mu_;
    std::condition_variable cv_;
    int in_flight_ = 0;
};

// Answers every prompt through a callback. Used for hermetic runs.
class StubChatClient final : public ChatClient {
public:
    using Responder = std::function<std::string(const std::string& prompt)>;
    explicit StubChatClient(Responder responder) : responder_(std::move(responder)) {}

    ChatReply complete(const std::string& prompt) override {
        std::string text = responder_(prompt);
        const std::size_t n = text.size();
        return {std::move(text), prompt.size(), n};
    }

private:
    Responder responder_;
};

// Request body for one chat completion; exposed for tests.
std::string chat_request_body(const ChatSettings& settings, const std::string& prompt);
// Extracts choices[0].message.content; throws ChatError on malformed JSON.
std::string parse_chat_response(const std::string& body);

} // namespace gsr
