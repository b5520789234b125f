#pragma once

#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>

#include "mmem/backends/backend.hpp"

namespace mmem {

struct RemoteConfig {
    std::string endpoint;  // base URL, e.g. https://api.example.com/v1
    std::string chat_model;
    std::string embedding_model;
    std::string api_key;   // resolved secret, never logged
    int timeout_seconds = 120;
    int max_in_flight = 4;
    bool multimodal = true;
};

// Chat-completions style client:
//   POST {endpoint}/chat/completions  {"model", "messages":[{"role":"user","content":...}]}
//   POST {endpoint}/embeddings        {"model", "input"}
// 429, 5xx and connection failures are retryable; other 4xx are not.
class RemoteBackend : public ModelBackend {
public:
    explicit RemoteBackend(RemoteConfig config);
    ~RemoteBackend() override;

    std::string chat(const ChatRequest& request) override;
    Vector embed_text(std::string_view text) override;
    BackendInfo info() const override;

    // Request bodies, exposed for wire-format tests.
    static std::string chat_body(const RemoteConfig& config, const ChatRequest& request);
    static std::string embedding_body(const RemoteConfig& config, std::string_view text);

private:
    std::string post(const std::string& path, const std::string& body);

    RemoteConfig config_;
    std::string scheme_host_;
    std::string base_path_;
    std::mutex mu_;
    std::condition_variable cv_;
    int in_flight_ = 0;
};

}  // namespace mmem
