#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "mmem/core/time.hpp"
#include "mmem/episodic/episodic_memory.hpp"
#include "mmem/semantic/semantic_memory.hpp"
#include "mmem/visual/visual_memory.hpp"

namespace mmem {

enum class MemoryKind { Episodic, Semantic, Visual };

std::string_view to_string(MemoryKind kind);
// Accepts "episodic" / "semantic" / "visual" in any case; nullopt otherwise.
std::optional<MemoryKind> memory_kind_from_string(std::string_view text);

// Which memories a run may consult, written "E", "E+S", "E+S+V", ...
struct MemoryMask {
    bool episodic = true;
    bool semantic = true;
    bool visual = true;

    static MemoryMask all() { return {}; }
    static MemoryMask parse(std::string_view text);  // throws Configuration

    bool has(MemoryKind kind) const;
    bool any() const { return episodic || semantic || visual; }
    std::string to_string() const;

    bool operator==(const MemoryMask&) const = default;
};

// The three memories of one stream. A memory that was never built is absent.
struct Memories {
    TimescaleConfig config = TimescaleConfig::egocentric_defaults();
    std::optional<EpisodicMemory> episodic;
    std::optional<SemanticMemory> semantic;
    std::optional<VisualMemory> visual;

    bool has(MemoryKind kind) const;
    // Absent memories for kinds in the mask -> Configuration error.
    void require(const MemoryMask& mask) const;
    void validate() const;

    bool operator==(const Memories&) const = default;
};

}  // namespace mmem
