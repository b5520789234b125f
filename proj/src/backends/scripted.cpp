#include "mmem/backends/scripted.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "mmem/error.hpp"
#include "mmem/util/digest.hpp"

namespace mmem {

Vector hash_embedding(std::string_view text, std::size_t dim, std::uint64_t seed) {
    if (dim == 0) throw Error(ErrorCode::InvalidArgument, "embedding dimension must be positive");
    Vector v;
    v.reserve(dim + 1);
    const std::string prefix = std::to_string(seed) + '\x1f' + std::string(text) + '\x1f';
    for (std::uint64_t block = 0; v.size() < dim; ++block) {
        Sha256 h;
        h.update(prefix);
        h.update(std::to_string(block));
        const auto d = h.digest();
        // 32 bytes -> four 53-bit uniforms in (0, 1) -> two Box-Muller pairs.
        double u[4];
        for (int k = 0; k < 4; ++k) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits = (bits << 8) | d[k * 8 + b];
            u[k] = (static_cast<double>(bits >> 11) + 0.5) / 9007199254740992.0;
        }
        for (int k = 0; k < 4 && v.size() < dim; k += 2) {
            const double r = std::sqrt(-2.0 * std::log(u[k]));
            const double theta = 2.0 * std::numbers::pi * u[k + 1];
            v.push_back(r * std::cos(theta));
            if (v.size() < dim) v.push_back(r * std::sin(theta));
        }
    }
    return normalized(v);
}

ScriptedBackend::ScriptedBackend(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path,
                                                            std::size_t dim, std::uint64_t seed) {
    auto b = std::make_shared<ScriptedBackend>(dim, seed);
    b->load_file(path);
    return b;
}

void ScriptedBackend::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Configuration, "cannot open fixture file " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw Error(ErrorCode::Configuration, "malformed fixture record at " + where);
        }
        try {
            const auto type = j.value("type", std::string("chat"));
            if (type == "chat") {
                const auto tmpl = j.at("template").get<std::string>();
                auto response = j.at("response").get<std::string>();
                if (j.contains("digest")) {
                    add_chat_digest(tmpl, j.at("digest").get<std::string>(), std::move(response));
                } else {
                    std::vector<FramePayload> frames;
                    if (j.contains("frames")) {
                        for (const auto& f : j.at("frames"))
                            frames.push_back({f.at("t").get<std::int64_t>(),
                                              f.at("locator").get<std::string>()});
                    }
                    add_chat(tmpl, j.at("inputs").get<SlotValues>(), std::move(response), frames);
                }
            } else if (type == "embed") {
                add_embedding(j.at("text").get<std::string>(), j.at("vector").get<Vector>());
            } else {
                throw Error(ErrorCode::Configuration, "unknown fixture record type '" + type + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::Configuration, "bad fixture record at " + where + ": " + e.what());
        }
    }
}

void ScriptedBackend::add_chat(std::string_view template_id, const SlotValues& inputs,
                               std::string response, std::span<const FramePayload> frames) {
    add_chat_digest(template_id, request_digest(template_id, inputs, frames), std::move(response));
}

void ScriptedBackend::add_chat_digest(std::string_view template_id, std::string digest,
                                      std::string response) {
    responses_.insert_or_assign({std::string(template_id), std::move(digest)}, std::move(response));
}

void ScriptedBackend::add_embedding(std::string text, Vector vector) {
    if (vector.size() != dim_) {
        throw Error(ErrorCode::DimensionMismatch, "fixture embedding for '" + text + "' has dimension " +
                                                      std::to_string(vector.size()));
    }
    embeddings_.insert_or_assign(std::move(text), std::move(vector));
}

std::string ScriptedBackend::chat(const ChatRequest& request) {
    const auto digest = request_digest(request.template_id, request.inputs, request.frames);
    auto it = responses_.find({request.template_id, digest});
    if (it == responses_.end()) {
        throw BackendError("no scripted response for template '" + request.template_id +
                               "' digest " + digest,
                           false);
    }
    return it->second;
}

Vector ScriptedBackend::embed_text(std::string_view text) {
    if (auto it = embeddings_.find(text); it != embeddings_.end()) return it->second;
    return hash_embedding(text, dim_, seed_);
}

BackendInfo ScriptedBackend::info() const { return {"scripted", "scripted", "fixture", multimodal_}; }

PolicyBackend::PolicyBackend(ChatPolicy chat, EmbedPolicy embed, bool multimodal, std::string name)
    : chat_(std::move(chat)), embed_(std::move(embed)), multimodal_(multimodal), name_(std::move(name)) {}

std::string PolicyBackend::chat(const ChatRequest& request) {
    if (!chat_) throw BackendError("policy backend has no chat policy", false);
    return chat_(request);
}

Vector PolicyBackend::embed_text(std::string_view text) {
    return embed_ ? embed_(text) : hash_embedding(text);
}

BackendInfo PolicyBackend::info() const { return {name_, "policy", "policy", multimodal_}; }

}  // namespace mmem
