#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "mmem/backends/remote.hpp"

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mmem/error.hpp"
#include "mmem/util/digest.hpp"

namespace mmem {

using nlohmann::json;

namespace {

// Frame locators that name local files are inlined as data URIs; anything
// else is passed through as a URL.
std::string frame_url(const std::string& locator) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(locator, ec)) return locator;
    std::ifstream in(locator, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto bytes = ss.str();
    const auto ext = std::filesystem::path(locator).extension().string();
    const std::string mime = (ext == ".png") ? "image/png" : "image/jpeg";
    return "data:" + mime + ";base64," +
           base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

}  // namespace

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.endpoint, m, url)) {
        throw Error(ErrorCode::Configuration, "remote endpoint must be an http(s) URL: " + config_.endpoint);
    }
    scheme_host_ = m[1].str();
    base_path_ = m[2].matched ? m[2].str() : "";
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
    if (config_.max_in_flight < 1) config_.max_in_flight = 1;
}

RemoteBackend::~RemoteBackend() = default;

std::string RemoteBackend::chat_body(const RemoteConfig& config, const ChatRequest& request) {
    json content;
    if (request.frames.empty()) {
        content = request.prompt;
    } else {
        content = json::array();
        content.push_back({{"type", "text"}, {"text", request.prompt}});
        for (const auto& f : request.frames) {
            content.push_back({{"type", "image_url"}, {"image_url", {{"url", frame_url(f.locator)}}}});
        }
    }
    return json{{"model", config.chat_model},
                {"messages", json::array({{{"role", "user"}, {"content", content}}})}}
        .dump();
}

std::string RemoteBackend::embedding_body(const RemoteConfig& config, std::string_view text) {
    return json{{"model", config.embedding_model}, {"input", text}}.dump();
}

std::string RemoteBackend::post(const std::string& path, const std::string& body) {
    {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return in_flight_ < config_.max_in_flight; });
        ++in_flight_;
    }
    struct Release {
        RemoteBackend* self;
        ~Release() {
            {
                std::lock_guard lock(self->mu_);
                --self->in_flight_;
            }
            self->cv_.notify_one();
        }
    } release{this};

    httplib::Client client(scheme_host_);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    auto res = client.Post(base_path_ + path, headers, body, "application/json");
    if (!res) {
        throw BackendError("transport failure to " + scheme_host_ + base_path_ + path + ": " +
                               httplib::to_string(res.error()),
                           true);
    }
    if (res->status == 429 || res->status >= 500) {
        throw BackendError("HTTP " + std::to_string(res->status) + " from " + path, true);
    }
    if (res->status < 200 || res->status >= 300) {
        throw BackendError("HTTP " + std::to_string(res->status) + " from " + path + ": " +
                               res->body.substr(0, 512),
                           false);
    }
    return res->body;
}

std::string RemoteBackend::chat(const ChatRequest& request) {
    if (!request.frames.empty() && !config_.multimodal) {
        throw Error(ErrorCode::Configuration, "remote chat model is configured text-only");
    }
    const auto body = post("/chat/completions", chat_body(config_, request));
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded()) throw BackendError("chat response is not JSON", false);
    try {
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_string()) return content.get<std::string>();
        std::string text;
        for (const auto& part : content)
            if (part.value("type", "") == "text") text += part.value("text", "");
        return text;
    } catch (const json::exception& e) {
        throw BackendError(std::string("unexpected chat response shape: ") + e.what(), false);
    }
}

Vector RemoteBackend::embed_text(std::string_view text) {
    const auto body = post("/embeddings", embedding_body(config_, text));
    auto j = json::parse(body, nullptr, false);
    if (j.is_discarded()) throw BackendError("embedding response is not JSON", false);
    try {
        return j.at("data").at(0).at("embedding").get<Vector>();
    } catch (const json::exception& e) {
        throw BackendError(std::string("unexpected embedding response shape: ") + e.what(), false);
    }
}

BackendInfo RemoteBackend::info() const {
    return {scheme_host_ + base_path_, "remote", config_.chat_model, config_.multimodal};
}

}  // namespace mmem
