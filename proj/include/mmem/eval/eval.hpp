#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmem/agent/agent.hpp"
#include "mmem/memories.hpp"

namespace mmem {

struct EvalItem {
    std::string id;
    std::string question;
    std::map<char, std::string> choices;
    char gold = 'A';
    std::vector<TimeRange> gold_ranges;  // empty: item has no temporal annotation
    std::string category;

    void validate() const;
};

// Line-delimited records:
//   {"id", "question", "choices": {"A": ...}, "answer": "A",
//    "gold_ranges": [{"start_ms", "end_ms"} | "DAY X HH:MM:SS - DAY Y HH:MM:SS"], "category"}
std::vector<EvalItem> load_eval_items(const std::filesystem::path& path);
nlohmann::json eval_item_to_json(const EvalItem& item);

struct ItemResult {
    std::string id;
    std::string category;
    char gold = 'A';
    std::optional<char> answer;
    bool correct = false;
    std::optional<double> tiou;       // all retrieved ranges vs gold
    std::optional<double> tiou_last;  // last grounded round only
    bool failed = false;
    std::string error;
    AgentTrace trace;
    std::string trace_digest;  // sha256 of the serialized trace
};

struct CategoryScore {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    std::string mask;
    std::string fingerprint;
    nlohmann::json config;  // the fingerprinted parameters
    std::vector<ItemResult> items;  // sorted by id
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    std::map<std::string, CategoryScore> categories;
    std::optional<double> mean_tiou;
    std::optional<double> mean_tiou_last;
    std::size_t tiou_items = 0;
    std::map<MemoryKind, std::size_t> usage;
    std::map<MemoryKind, double> usage_share;
    std::size_t failures = 0;
};

struct EvalConfig {
    AgentConfig agent;
    std::size_t parallelism = 1;
};

// Retrieval-relevant parameters and backend identities, canonical JSON.
nlohmann::json fingerprint_config(const AgentConfig& config, const TimescaleConfig& timescales,
                                  const BackendSet& backends);
std::string fingerprint(const nlohmann::json& config);

// Scores one finished trace against its item.
ItemResult score_item(const EvalItem& item, AgentTrace trace);

// Pure fold over per-item results; sorts by id.
EvalReport fold_report(std::vector<ItemResult> results, std::string mask, nlohmann::json config);

// Runs the agent and responder on every item. Item failures are recorded as
// incorrect and flagged; the batch never aborts on them.
EvalReport run_eval(const std::vector<EvalItem>& items, const Memories& memories, const EvalConfig& config,
                    const BackendSet& backends, const TemplateRegistry& templates = TemplateRegistry::standard());

// Masks allowed in an ablation run: E, V, E+S, E+V, E+S+V.
bool is_ablation_mask(const MemoryMask& mask);

// One report per mask over the same items and memories. Every mask is checked
// against the built memories before anything runs.
std::vector<EvalReport> ablation_matrix(const std::vector<EvalItem>& items, const Memories& memories,
                                        const std::vector<MemoryMask>& masks, const EvalConfig& config,
                                        const BackendSet& backends,
                                        const TemplateRegistry& templates = TemplateRegistry::standard());

nlohmann::json report_to_json(const EvalReport& report);

// report.json, items.tsv, categories.tsv, usage.tsv and traces/<id>.json under dir.
void write_report(const EvalReport& report, const std::filesystem::path& dir);
// mask-by-metric table across several reports (ablation.tsv).
void write_ablation_table(const std::vector<EvalReport>& reports, const std::filesystem::path& dir);

std::string render_summary(const EvalReport& report);

}  // namespace mmem
