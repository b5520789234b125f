#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmem/backends/backend.hpp"
#include "mmem/backends/templates.hpp"
#include "mmem/memories.hpp"

namespace mmem {

struct RetrievalAction {
    bool stop = true;
    MemoryKind kind = MemoryKind::Episodic;  // meaningful when searching
    std::string query;

    static RetrievalAction search(MemoryKind kind, std::string query);
    static RetrievalAction halt() { return {}; }

    bool operator==(const RetrievalAction&) const = default;
};

enum class EvidenceKind { Caption, Triplet, Frames };

std::string_view to_string(EvidenceKind kind);

struct EvidenceItem {
    EvidenceKind kind = EvidenceKind::Caption;
    std::string id;                  // segment id, triplet text, or visual segment / range label
    std::optional<TimeRange> range;  // temporal grounding; triplets have none
    std::int64_t scale_ms = 0;       // captions only
    std::string text;                // caption, triplet text, or frame description
    double score = 0.0;
    std::vector<FrameRef> frames;

    bool operator==(const EvidenceItem&) const = default;
};

struct RetrievalRound {
    int index = 0;
    RetrievalAction action;
    bool forced = false;    // budget marker: stop imposed without asking the model
    bool rejected = false;  // requested memory is disabled; nothing was dispatched
    std::vector<EvidenceItem> evidence;
    std::optional<std::string> error;
    std::vector<std::string> notes;
    std::optional<double> elapsed_ms;

    bool operator==(const RetrievalRound&) const = default;
};

enum class StopReason { ModelStop, BudgetExhausted };

std::string_view to_string(StopReason reason);

struct AgentTrace {
    std::string query;
    int budget = 5;
    MemoryMask mask;
    std::vector<RetrievalRound> rounds;  // search rounds, then one terminal stop round
    StopReason stop_reason = StopReason::ModelStop;
    bool degraded_decision = false;  // an unusable decision was read as stop
    bool frames_described = false;   // text-only responder saw descriptions instead of frames
    std::optional<char> answer;
    bool unanswered = false;

    std::size_t search_rounds() const;
    // Dispatched rounds per memory kind (the usage statistic); rejected rounds excluded.
    std::map<MemoryKind, std::size_t> usage() const;
    // Time ranges of all grounded evidence, in round order.
    std::vector<TimeRange> retrieved_ranges() const;
    // Ranges from the last search round that produced grounded evidence.
    std::vector<TimeRange> last_round_ranges() const;

    bool operator==(const AgentTrace&) const = default;
};

nlohmann::json trace_to_json(const AgentTrace& trace);
AgentTrace trace_from_json(const nlohmann::json& j);
// Canonical serialized form; identical traces give identical bytes.
std::string serialize_trace(const AgentTrace& trace);

// The round-history block shown to the retrieval agent and the responder.
std::string render_round_history(const std::vector<RetrievalRound>& rounds);
// Question / rounds / answer table for people.
std::string render_trace_table(const AgentTrace& trace, const std::map<char, std::string>& choices = {});

struct AgentConfig {
    int budget = 5;
    MemoryMask mask;
    EpisodicParams episodic;
    SemanticParams semantic;
    std::size_t visual_k = 3;
    std::size_t max_frames = kDefaultMaxFrames;
    bool record_timings = false;

    void validate() const;
};

struct Decision {
    RetrievalAction action;
    bool degraded = false;
    std::string detail;  // why a decision was degraded
};

// One agent decision given the query and the rounds so far. Unusable output
// (unparsable, unknown memory) becomes a degraded stop; backend failures propagate.
Decision decide(std::string_view query, const std::vector<RetrievalRound>& history, ModelBackend& backend,
                const TemplateRegistry& templates = TemplateRegistry::standard());

// Runs one retrieval action against the memories.
RetrievalRound dispatch(const RetrievalAction& action, std::string_view question, const Memories& memories,
                        const AgentConfig& config, const BackendSet& backends, EmbeddingCache& embeddings,
                        const TemplateRegistry& templates = TemplateRegistry::standard());

// Decide / dispatch until the model stops or the budget runs out.
AgentTrace run_agent(std::string_view query, const Memories& memories, const AgentConfig& config,
                     const BackendSet& backends, EmbeddingCache& embeddings,
                     const TemplateRegistry& templates = TemplateRegistry::standard());

// Picks a choice letter from the trace's evidence and records it in the trace.
// A single choice is answered without a backend call; an invalid letter gets
// one re-prompt before the trace is marked unanswered.
std::optional<char> respond(AgentTrace& trace, const std::map<char, std::string>& choices,
                            const BackendSet& backends,
                            const TemplateRegistry& templates = TemplateRegistry::standard());

std::string render_choices(const std::map<char, std::string>& choices);

}  // namespace mmem
