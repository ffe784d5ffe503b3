#include <gsr/chat_client.hpp>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <cstdlib>
#include <thread>

namespace gsr {

namespace {

bool retryable_status(int status) { return status == 429 || status >= 500; }

} // namespace

std::string chat_request_body(const ChatSettings& settings, const std::string& prompt) {
    nlohmann::json body = {
        {"model", settings.model},
        {"temperature", settings.temperature},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
    };
    return body.dump();
}

std::string parse_chat_response(const std::string& body) {
    try {
        const auto j = nlohmann::json::parse(body);
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_null()) return {};
        return content.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ChatError(std::string("malformed chat completion response: ") + e.what(), 200,
                        false);
    }
}

HttpChatClient::HttpChatClient(ChatSettings settings) : settings_(std::move(settings)) {
    const std::string& url = settings_.base_url;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("chat base_url must include a scheme: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    if (settings_.max_in_flight < 1) settings_.max_in_flight = 1;
}

ChatReply HttpChatClient::attempt(const std::string& body, int& status, bool& transport_failed,
                                  std::string& detail) {
    httplib::Client cli(scheme_host_port_);
    cli.set_connection_timeout(settings_.timeout);
    cli.set_read_timeout(settings_.timeout);
    cli.set_write_timeout(settings_.timeout);

    httplib::Headers headers;
    if (const char* token = std::getenv(kChatTokenEnv); token != nullptr && *token != '\0') {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    auto res = cli.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
    if (!res) {
        status = 0;
        transport_failed = true;
        detail = httplib::to_string(res.error());
        return {};
    }
    status = res->status;
    transport_failed = false;
    if (status != 200) {
        detail = res->body.substr(0, 200);
        return {};
    }
    std::string text = parse_chat_response(res->body);
    return {std::move(text), 0, 0};
}

ChatReply HttpChatClient::complete(const std::string& prompt) {
    {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return in_flight_ < settings_.max_in_flight; });
        ++in_flight_;
    }
    struct Release {
        HttpChatClient* self;
        ~Release() {
            {
                std::lock_guard lock(self->mu_);
                --self->in_flight_;
            }
            self->cv_.notify_one();
        }
    } release{this};

    const std::string body = chat_request_body(settings_, prompt);
    auto backoff = settings_.initial_backoff;
    int status = 0;
    bool transport_failed = false;
    std::string detail;
    for (int attempt_no = 0;; ++attempt_no) {
        ChatReply reply = attempt(body, status, transport_failed, detail);
        if (!transport_failed && status == 200) {
            reply.prompt_chars = prompt.size();
            reply.response_chars = reply.text.size();
            return reply;
        }
        const bool retry = transport_failed || retryable_status(status);
        if (!retry || attempt_no >= settings_.max_retries) break;
        spdlog::warn("chat request failed (status {}, {}); retrying in {} ms", status, detail,
                     backoff.count());
        std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(
            static_cast<long long>(std::llround(backoff.count() * settings_.backoff_factor)));
    }
    throw ChatError("chat completion failed after " + std::to_string(settings_.max_retries + 1) +
                        " attempt(s): status " + std::to_string(status) + " " + detail,
                    status, transport_failed);
}

} // namespace gsr
