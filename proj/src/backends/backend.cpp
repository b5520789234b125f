#include "mmem/backends/backend.hpp"

#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mmem/backends/templates.hpp"
#include "mmem/error.hpp"
#include "mmem/util/digest.hpp"

namespace mmem {

std::string request_digest(std::string_view template_id, const SlotValues& inputs,
                           std::span<const FramePayload> frames) {
    nlohmann::json j;
    j["template"] = template_id;
    j["inputs"] = inputs;
    auto fr = nlohmann::json::array();
    for (const auto& f : frames) fr.push_back({{"t", f.timestamp_ms}, {"locator", f.locator}});
    j["frames"] = std::move(fr);
    return sha256_hex(j.dump());
}

std::string complete(ModelBackend& backend, const PromptTemplate& tmpl, const SlotValues& inputs,
                     std::span<const FramePayload> frames, const RetryPolicy& retry) {
    if (!frames.empty() && !backend.info().multimodal) {
        throw Error(ErrorCode::Configuration,
                    "backend '" + backend.info().name + "' cannot take frame payloads");
    }
    ChatRequest request;
    request.template_id = tmpl.id();
    request.inputs = inputs;
    request.prompt = tmpl.render(inputs);
    request.frames.assign(frames.begin(), frames.end());

    for (int attempt = 0;; ++attempt) {
        try {
            auto response = backend.chat(request);
            spdlog::debug("dispatch {} -> {} bytes", request.template_id, response.size());
            return response;
        } catch (const BackendError& e) {
            if (!e.retryable() || attempt >= retry.max_retries) {
                if (e.retryable()) {
                    throw BackendError("giving up after " + std::to_string(attempt + 1) +
                                           " attempts: " + e.what(),
                                       false);
                }
                throw;
            }
            spdlog::warn("dispatch {} failed ({}), retrying", request.template_id, e.what());
            if (retry.backoff.count() > 0) std::this_thread::sleep_for(retry.backoff * (attempt + 1));
        }
    }
}

Vector embed(ModelBackend& backend, std::string_view text) {
    if (text.empty()) throw Error(ErrorCode::InvalidArgument, "cannot embed empty text");
    return normalized(backend.embed_text(text));
}

Vector EmbeddingCache::get(const std::string& text) {
    {
        std::lock_guard lock(mu_);
        auto it = cache_.find(text);
        if (it != cache_.end()) return it->second;
    }
    auto v = embed(*backend_, text);
    std::lock_guard lock(mu_);
    return cache_.emplace(text, std::move(v)).first->second;
}

BackendSet BackendSet::uniform(std::shared_ptr<ModelBackend> backend) {
    return BackendSet{backend, backend, backend, backend, backend};
}

}  // namespace mmem
