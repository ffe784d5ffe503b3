#pragma once

// Local OpenAI-style chat endpoint for tests. `reply` sees the prompt and
// returns (status, content); non-200 statuses are sent with an error body.

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <functional>
#include <string>
#include <thread>
#include <utility>

namespace gsr::testing {

class StubServer {
public:
    using Reply = std::function<std::pair<int, std::string>(const std::string& prompt)>;

    explicit StubServer(Reply reply) : reply_(std::move(reply)) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
            ++requests_;
            last_auth_ = req.get_header_value("Authorization");
            const auto body = nlohmann::json::parse(req.body);
            const std::string prompt = body["messages"][0]["content"];
            last_prompt_ = prompt;
            auto [status, content] = reply_(prompt);
            res.status = status;
            if (status != 200) {
                res.set_content(R"({"error":"stub"})", "application/json");
                return;
            }
            const nlohmann::json out = {
                {"choices", nlohmann::json::array({{{"message", {{"role", "assistant"},
                                                                 {"content", content}}}}})}};
            res.set_content(out.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    StubServer(const StubServer&) = delete;
    StubServer& operator=(const StubServer&) = delete;

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
    int requests() const { return requests_; }
    const std::string& last_prompt() const { return last_prompt_; }
    const std::string& last_auth() const { return last_auth_; }

private:
    Reply reply_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::atomic<int> requests_{0};
    std::string last_prompt_;
    std::string last_auth_;
};

} // namespace gsr::testing
