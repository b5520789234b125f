#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mmem/core/vector.hpp"

namespace mmem {

class PromptTemplate;

// Frames travel as references; payload bytes are the backend's business.
struct FramePayload {
    std::int64_t timestamp_ms = 0;
    std::string locator;

    bool operator==(const FramePayload&) const = default;
};

using SlotValues = std::map<std::string, std::string>;

struct ChatRequest {
    std::string template_id;
    SlotValues inputs;
    std::string prompt;
    std::vector<FramePayload> frames;
};

struct BackendInfo {
    std::string name;
    std::string kind;   // scripted | policy | remote | recording
    std::string model;
    bool multimodal = false;
};

// The model boundary. Implementations must be safe for concurrent calls.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    virtual std::string chat(const ChatRequest& request) = 0;
    // Raw embedding; callers go through embed() which validates and normalizes.
    virtual Vector embed_text(std::string_view text) = 0;
    virtual BackendInfo info() const = 0;
};

// Digest of (template id, filled inputs, frame locators); the key scripted
// fixtures and dispatch journals are indexed by.
std::string request_digest(std::string_view template_id, const SlotValues& inputs,
                           std::span<const FramePayload> frames = {});

struct RetryPolicy {
    int max_retries = 2;
    std::chrono::milliseconds backoff{0};
};

// Fills the template, dispatches, retries retryable failures. Frames require a
// multimodal backend (Configuration error otherwise).
std::string complete(ModelBackend& backend, const PromptTemplate& tmpl, const SlotValues& inputs,
                     std::span<const FramePayload> frames = {}, const RetryPolicy& retry = {});

// Unit-norm embedding of non-empty text.
Vector embed(ModelBackend& backend, std::string_view text);

// Memoizes embed() per text. Thread-safe.
class EmbeddingCache {
public:
    explicit EmbeddingCache(ModelBackend& backend) : backend_(&backend) {}

    Vector get(const std::string& text);
    ModelBackend& backend() const { return *backend_; }

private:
    ModelBackend* backend_;
    std::mutex mu_;
    std::unordered_map<std::string, Vector> cache_;
};

// Backend assignment per pipeline role. Any role may share a backend.
struct BackendSet {
    std::shared_ptr<ModelBackend> extractor;   // NER, triplets, summaries, consolidation judge
    std::shared_ptr<ModelBackend> embedder;
    std::shared_ptr<ModelBackend> retriever;   // agent decisions and reranking
    std::shared_ptr<ModelBackend> responder;
    std::shared_ptr<ModelBackend> describer;   // optional frame descriptions

    static BackendSet uniform(std::shared_ptr<ModelBackend> backend);
};

}  // namespace mmem
