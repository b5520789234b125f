#include "mmem/memories.hpp"

#include <algorithm>
#include <cctype>

#include "mmem/error.hpp"

namespace mmem {

std::string_view to_string(MemoryKind kind) {
    switch (kind) {
        case MemoryKind::Episodic: return "episodic";
        case MemoryKind::Semantic: return "semantic";
        case MemoryKind::Visual: return "visual";
    }
    return "unknown";
}

std::optional<MemoryKind> memory_kind_from_string(std::string_view text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "episodic") return MemoryKind::Episodic;
    if (lower == "semantic") return MemoryKind::Semantic;
    if (lower == "visual") return MemoryKind::Visual;
    return std::nullopt;
}

MemoryMask MemoryMask::parse(std::string_view text) {
    MemoryMask m{false, false, false};
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto next = text.find('+', pos);
        if (next == std::string_view::npos) next = text.size();
        const auto part = text.substr(pos, next - pos);
        bool* slot = nullptr;
        if (part == "E" || part == "e") slot = &m.episodic;
        else if (part == "S" || part == "s") slot = &m.semantic;
        else if (part == "V" || part == "v") slot = &m.visual;
        if (!slot || *slot) throw Error(ErrorCode::Configuration, "bad memory mask '" + std::string(text) + "'");
        *slot = true;
        pos = next + 1;
    }
    return m;
}

bool MemoryMask::has(MemoryKind kind) const {
    switch (kind) {
        case MemoryKind::Episodic: return episodic;
        case MemoryKind::Semantic: return semantic;
        case MemoryKind::Visual: return visual;
    }
    return false;
}

std::string MemoryMask::to_string() const {
    std::string out;
    auto add = [&](bool on, const char* tag) {
        if (!on) return;
        if (!out.empty()) out += '+';
        out += tag;
    };
    add(episodic, "E");
    add(semantic, "S");
    add(visual, "V");
    return out.empty() ? "none" : out;
}

bool Memories::has(MemoryKind kind) const {
    switch (kind) {
        case MemoryKind::Episodic: return episodic.has_value();
        case MemoryKind::Semantic: return semantic.has_value();
        case MemoryKind::Visual: return visual.has_value();
    }
    return false;
}

void Memories::require(const MemoryMask& mask) const {
    if (!mask.any()) throw Error(ErrorCode::Configuration, "memory mask enables nothing");
    for (auto k : {MemoryKind::Episodic, MemoryKind::Semantic, MemoryKind::Visual}) {
        if (mask.has(k) && !has(k)) {
            throw Error(ErrorCode::Configuration,
                        "mask " + mask.to_string() + " needs " + std::string(to_string(k)) +
                            " memory, which was not built");
        }
    }
}

void Memories::validate() const {
    config.validate();
    if (episodic) {
        if (!(episodic->config() == config)) {
            throw Error(ErrorCode::InternalConsistency, "episodic memory uses a different timescale config");
        }
        episodic->validate();
    }
    if (semantic) {
        const auto replayed = SemanticMemory::replay(semantic->journal());
        if (!(replayed.graph() == semantic->graph())) {
            throw Error(ErrorCode::InternalConsistency, "semantic graph differs from its journal replay");
        }
    }
    if (visual) {
        if (visual->visual_scale_ms() != config.visual_scale_ms) {
            throw Error(ErrorCode::InternalConsistency, "visual memory uses a different t_v");
        }
        visual->validate();
    }
}

}  // namespace mmem
