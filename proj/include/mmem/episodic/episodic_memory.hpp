#pragma once

#include <cstdint>
#include <map>
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

struct ScaleStore {
    KnowledgeGraph graph;
    std::map<std::string, Segment> segments;

    bool operator==(const ScaleStore&) const = default;
};

struct EpisodicParams {
    std::size_t k_per_scale = 5;
    std::size_t rerank_m = 3;
    double node_match_threshold = 0.8;
    std::size_t max_coarse_words = 500;
    PprParams ppr;

    void validate() const;
    bool operator==(const EpisodicParams&) const = default;
};

// One knowledge graph plus segment store per configured timescale.
class EpisodicMemory {
public:
    explicit EpisodicMemory(TimescaleConfig config);

    // Reassembles a memory from stored scales (snapshot load); validates.
    static EpisodicMemory from_parts(TimescaleConfig config,
                                     std::map<std::int64_t, ScaleStore> per_scale);

    const TimescaleConfig& config() const { return config_; }
    const std::map<std::int64_t, ScaleStore>& scales() const { return per_scale_; }
    const ScaleStore& scale(std::int64_t scale_ms) const;

    const Segment* find_segment(std::string_view id) const;
    std::size_t segment_count() const;
    std::size_t triplet_count() const;
    bool empty() const { return segment_count() == 0; }

    // Stores the segment and upserts its (already extracted) triplets into the
    // segment's scale. Provenance of every triplet must be exactly this segment.
    // Validates everything before mutating; throws on any violation.
    UpsertReport insert(const Segment& segment, std::span<const Triplet> triplets);

    // Throws InternalConsistency / InvalidArgument on a broken invariant.
    void validate() const;

    bool operator==(const EpisodicMemory&) const = default;

private:
    void check_segment(const Segment& segment) const;

    TimescaleConfig config_;
    std::map<std::int64_t, ScaleStore> per_scale_;
};

struct EpisodicExtraction {
    std::vector<std::string> entities;
    std::vector<Triplet> triplets;  // normalized, degenerate items dropped
    std::size_t dropped = 0;
};

// NER then triplet extraction on one caption. Provenance is the given segment.
EpisodicExtraction extract_episodic(const Segment& segment, ModelBackend& backend,
                                    const TemplateRegistry& templates = TemplateRegistry::standard());

struct IngestReport {
    std::string segment_id;
    std::int64_t scale_ms = 0;
    std::size_t entities = 0;
    std::size_t triplets = 0;
    UpsertReport upsert;
};

// Extracts and stores a captioned segment at any configured scale.
// Backend failures become IngestError; malformed output stays ParseError.
// The memory is unchanged on any error.
IngestReport ingest_segment(EpisodicMemory& memory, const Segment& segment, ModelBackend& backend,
                            const TemplateRegistry& templates = TemplateRegistry::standard());

// As ingest_segment, restricted to the unit scale t_0.
IngestReport ingest_fine_segment(EpisodicMemory& memory, const Segment& segment,
                                 ModelBackend& backend,
                                 const TemplateRegistry& templates = TemplateRegistry::standard());

// Extracts up to `parallelism` segments concurrently, then inserts in input order.
// Stops at the first failure; segments before it stay ingested.
std::vector<IngestReport> ingest_fine_segments(EpisodicMemory& memory,
                                               std::span<const Segment> segments,
                                               ModelBackend& backend, std::size_t parallelism = 1,
                                               const TemplateRegistry& templates = TemplateRegistry::standard());

std::string coarse_segment_id(std::int64_t scale_ms, const TimeRange& range);

// Fine captions under `range`, in time order. DependencyError lists uncovered gaps.
std::vector<Segment> constituent_captions(const EpisodicMemory& memory, const TimeRange& range);

// Summarizes the constituent unit-scale captions into one caption (at most
// max_coarse_words words) and ingests it at `scale_ms`.
IngestReport ingest_coarse_segment(EpisodicMemory& memory, std::int64_t scale_ms,
                                   const TimeRange& range, ModelBackend& backend,
                                   const EpisodicParams& params = {},
                                   const TemplateRegistry& templates = TemplateRegistry::standard());

// Builds every coarser scale over the span covered by unit-scale segments.
// Ranges with no fine coverage are skipped; already-built ranges are left alone.
std::vector<IngestReport> build_coarse_scales(EpisodicMemory& memory, ModelBackend& backend,
                                              const EpisodicParams& params = {},
                                              const TemplateRegistry& templates = TemplateRegistry::standard());

struct ScaleCandidate {
    Segment segment;
    std::int64_t scale_ms = 0;
    double relevance = 0.0;

    bool operator==(const ScaleCandidate&) const = default;
};

struct EpisodicRetrieval {
    std::map<std::int64_t, std::vector<ScaleCandidate>> by_scale;
    std::vector<std::int64_t> unseeded_scales;  // no query entity matched a node
    std::vector<std::string> query_entities;
    bool empty_memory = false;

    // All candidates, ordered by relevance across scales (ties: start, id).
    std::vector<ScaleCandidate> ranked() const;
};

// Query entities by NER; the whole query stands in when NER finds nothing.
std::vector<std::string> query_entities(std::string_view query, ModelBackend& backend,
                                        const TemplateRegistry& templates = TemplateRegistry::standard());

// Per-segment relevance: the summed PPR mass of entities the segment's triplets mention.
std::map<std::string, double> segment_relevance(const KnowledgeGraph& graph, const ScoreMap& node_scores);

// Per scale: seed PPR at matched query entities, rank segments by relevance,
// keep the top k_per_scale. `embeddings` enables similarity seeding.
EpisodicRetrieval episodic_retrieve(const EpisodicMemory& memory, std::string_view query,
                                    const EpisodicParams& params, ModelBackend& backend,
                                    EmbeddingCache* embeddings,
                                    const TemplateRegistry& templates = TemplateRegistry::standard());

struct RerankResult {
    std::vector<Segment> segments;
    bool fallback = false;       // backend produced no usable id
    std::vector<std::string> dropped_ids;
};

// Lets the backend pick and order the final m captions across scales.
RerankResult cross_scale_rerank(std::string_view query, std::span<const ScaleCandidate> candidates,
                                std::size_t m, ModelBackend& backend,
                                const TemplateRegistry& templates = TemplateRegistry::standard());

// "ID: ... | scale ... | start to end" block for the reranker prompt.
std::string render_rerank_captions(std::span<const ScaleCandidate> candidates);

std::string scale_label(std::int64_t scale_ms);

}  // namespace mmem
