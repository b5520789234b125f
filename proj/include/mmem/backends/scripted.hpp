#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "mmem/backends/backend.hpp"

namespace mmem {

inline constexpr std::size_t kScriptedEmbeddingDim = 64;

// Deterministic text -> unit sphere map: SHA-256 counter stream fed through Box-Muller.
Vector hash_embedding(std::string_view text, std::size_t dim = kScriptedEmbeddingDim,
                      std::uint64_t seed = 0);

// Fixture-driven backend. Chat responses are looked up by (template id,
// request digest); a miss is a non-retryable BackendError. Embeddings come
// from explicit overrides, else hash_embedding.
//
// Fixture file: one JSON object per line, the same shape the dispatch journal writes:
//   {"type":"chat","template":"ner","inputs":{"passage":"..."},"response":"..."}
//   {"type":"chat","template":"ner","digest":"<hex>","response":"..."}
//   {"type":"embed","text":"air conditioning","vector":[...]}
// With "inputs" the digest is computed on load.
class ScriptedBackend : public ModelBackend {
public:
    explicit ScriptedBackend(std::size_t dim = kScriptedEmbeddingDim, std::uint64_t seed = 0);

    static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path,
                                                      std::size_t dim = kScriptedEmbeddingDim,
                                                      std::uint64_t seed = 0);
    void load_file(const std::filesystem::path& path);

    void add_chat(std::string_view template_id, const SlotValues& inputs, std::string response,
                  std::span<const FramePayload> frames = {});
    void add_chat_digest(std::string_view template_id, std::string digest, std::string response);
    void add_embedding(std::string text, Vector vector);
    void set_multimodal(bool on) { multimodal_ = on; }

    std::string chat(const ChatRequest& request) override;
    Vector embed_text(std::string_view text) override;
    BackendInfo info() const override;

    std::size_t chat_entries() const { return responses_.size(); }

private:
    std::size_t dim_;
    std::uint64_t seed_;
    bool multimodal_ = true;
    std::map<std::pair<std::string, std::string>, std::string> responses_;
    std::map<std::string, Vector, std::less<>> embeddings_;
};

// Backend whose replies are computed by a caller-supplied deterministic policy.
// Used for oracle-scripted evaluation where canned lookups would be unwieldy.
class PolicyBackend : public ModelBackend {
public:
    using ChatPolicy = std::function<std::string(const ChatRequest&)>;
    using EmbedPolicy = std::function<Vector(std::string_view)>;

    explicit PolicyBackend(ChatPolicy chat, EmbedPolicy embed = {}, bool multimodal = true,
                           std::string name = "policy");

    std::string chat(const ChatRequest& request) override;
    Vector embed_text(std::string_view text) override;
    BackendInfo info() const override;

private:
    ChatPolicy chat_;
    EmbedPolicy embed_;
    bool multimodal_;
    std::string name_;
};

}  // namespace mmem
