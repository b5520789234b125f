#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmem/backends/backend.hpp"
#include "mmem/backends/templates.hpp"
#include "mmem/core/time.hpp"
#include "mmem/graph/knowledge_graph.hpp"
#include "mmem/graph/ppr.hpp"

namespace mmem {

struct SemanticParams {
    std::size_t k = 10;
    double match_threshold = 0.6;       // consolidation candidate similarity
    double node_match_threshold = 0.8;  // query entity -> node seeding
    PprParams ppr;

    void validate() const;
    bool operator==(const SemanticParams&) const = default;
};

struct MatchPair {
    Triplet existing;
    Triplet incoming;
    double similarity = 0.0;

    bool operator==(const MatchPair&) const = default;
};

struct ConsolidationRecord {
    std::int64_t generation = 0;  // generation produced by this record
    std::vector<Triplet> incoming;
    std::vector<Triplet> removed;
    std::vector<Triplet> updated;
    std::vector<MatchPair> match_pairs;
    std::vector<std::vector<int>> evidence;  // aligned with incoming; may be empty

    bool operator==(const ConsolidationRecord&) const = default;
};

// The consolidated semantic graph plus the journal that produced it.
class SemanticMemory {
public:
    SemanticMemory() = default;

    // Rebuilds a memory by replaying records from empty. Throws
    // InternalConsistency if a record does not apply cleanly.
    static SemanticMemory replay(std::span<const ConsolidationRecord> journal);

    const KnowledgeGraph& graph() const { return graph_; }
    std::int64_t generation() const { return generation_; }
    const std::vector<ConsolidationRecord>& journal() const { return journal_; }

    // Applies next = (graph \ removed) ∪ updated and appends the record.
    // The record's generation must be generation() + 1 and removed must be a
    // subset of the current edges.
    void apply(ConsolidationRecord record);

    bool operator==(const SemanticMemory&) const = default;

private:
    KnowledgeGraph graph_;
    std::int64_t generation_ = 0;
    std::vector<ConsolidationRecord> journal_;
};

struct SemanticExtractionResult {
    std::vector<Triplet> triplets;
    std::vector<std::vector<int>> evidence;  // aligned with triplets
    std::size_t dropped = 0;                 // degenerate triplets discarded
};

// Infers long-term triplets from one window's captions. Provenance of every
// triplet is {window_id: window start}.
SemanticExtractionResult extract_semantic(std::span<const std::string> captions, const std::string& window_id,
                                          std::int64_t window_start_ms, ModelBackend& backend,
                                          const TemplateRegistry& templates = TemplateRegistry::standard());

// Pairs (existing, incoming) whose triplet texts embed with cosine >= threshold.
// Ordered by incoming position, then similarity desc, then existing key.
std::vector<MatchPair> match_candidates(const SemanticMemory& memory, std::span<const Triplet> incoming,
                                        double threshold, EmbeddingCache& embeddings);

struct ConsolidationStats {
    std::size_t judged = 0;
    std::size_t judge_fallbacks = 0;   // malformed decisions, incoming kept as-is
    std::size_t ignored_removals = 0;  // indices outside the matched set
};

// One consolidation step: match, judge each matched incoming triplet against
// its own matches, apply the set algebra, bump the generation.
SemanticMemory consolidate(const SemanticMemory& memory, std::span<const Triplet> incoming,
                           ModelBackend& judge, EmbeddingCache& embeddings, const SemanticParams& params = {},
                           std::vector<std::vector<int>> evidence = {}, ConsolidationStats* stats = nullptr,
                           const TemplateRegistry& templates = TemplateRegistry::standard());

// Windows of `window_ms` over the fine segments; each window's captions are
// extracted and consolidated in time order. Windows without captions are skipped.
SemanticMemory build_semantic(std::span<const Segment> fine_segments, std::int64_t window_ms,
                              ModelBackend& extractor, EmbeddingCache& embeddings,
                              const SemanticParams& params = {},
                              const TemplateRegistry& templates = TemplateRegistry::standard());

std::string semantic_window_id(const TimeRange& window);

struct SemanticRetrieval {
    std::vector<ScoredTriplet> triplets;
    std::vector<std::string> query_entities;
    bool no_seed = false;       // warning: nothing matched, result empty
    bool empty_memory = false;
};

// Seeds PPR at the query entities, scores edges by endpoint sum, keeps top k.
SemanticRetrieval semantic_retrieve(const SemanticMemory& memory, std::span<const std::string> query_entities,
                                    const SemanticParams& params, EmbeddingCache* embeddings);

// Same, running NER on the query first.
SemanticRetrieval semantic_retrieve(const SemanticMemory& memory, std::string_view query,
                                    const SemanticParams& params, ModelBackend& backend,
                                    EmbeddingCache* embeddings,
                                    const TemplateRegistry& templates = TemplateRegistry::standard());

}  // namespace mmem
