#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mmem/backends/backend.hpp"

namespace mmem {

enum class ResponseSchema {
    FreeText,
    IdArray,
    EntityList,
    TripleList,
    SemanticTriples,
    ConsolidationDecision,
    AgentDecision,
    AnswerLetter,
};

std::string_view to_string(ResponseSchema schema);
ResponseSchema response_schema_from_string(std::string_view text);

// Template ids shipped under prompts/.
namespace templates {
inline constexpr std::string_view kNer = "ner";
inline constexpr std::string_view kEpisodicTriples = "episodic_triples";
inline constexpr std::string_view kCoarseCaption = "coarse_caption";
inline constexpr std::string_view kRerank = "rerank";
inline constexpr std::string_view kSemanticTriples = "semantic_triples";
inline constexpr std::string_view kConsolidate = "consolidate";
inline constexpr std::string_view kRetrievalAgent = "retrieval_agent";
inline constexpr std::string_view kResponse = "response";
inline constexpr std::string_view kDescribeFrames = "describe_frames";
}  // namespace templates

// A prompt body with {{slot}} placeholders and the response shape it asks for.
class PromptTemplate {
public:
    PromptTemplate(std::string id, std::string body, ResponseSchema schema);

    const std::string& id() const { return id_; }
    const std::string& body() const { return body_; }
    const std::vector<std::string>& slots() const { return slots_; }
    ResponseSchema schema() const { return schema_; }

    // Throws InvalidArgument when a slot is missing or an input names no slot.
    std::string render(const SlotValues& inputs) const;

private:
    std::string id_;
    std::string body_;
    std::vector<std::string> slots_;
    ResponseSchema schema_;
};

class TemplateRegistry {
public:
    // Reads <dir>/templates.json and the body files it lists.
    static TemplateRegistry load_dir(const std::filesystem::path& dir);

    // $MMEM_PROMPT_DIR if set, else the directory configured at build time.
    static const TemplateRegistry& standard();
    static std::filesystem::path default_dir();

    void add(PromptTemplate tmpl);
    const PromptTemplate& get(std::string_view id) const;
    bool contains(std::string_view id) const;
    std::vector<std::string> ids() const;

private:
    std::map<std::string, PromptTemplate, std::less<>> templates_;
};

}  // namespace mmem
