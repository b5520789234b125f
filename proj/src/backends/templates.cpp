#include "mmem/backends/templates.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmem/error.hpp"

#ifndef MMEM_PROMPT_DIR
#define MMEM_PROMPT_DIR "prompts"
#endif

namespace mmem {

namespace {

constexpr std::pair<ResponseSchema, std::string_view> kSchemaNames[] = {
    {ResponseSchema::FreeText, "free_text"},
    {ResponseSchema::IdArray, "id_array"},
    {ResponseSchema::EntityList, "entity_list"},
    {ResponseSchema::TripleList, "triple_list"},
    {ResponseSchema::SemanticTriples, "semantic_triples"},
    {ResponseSchema::ConsolidationDecision, "consolidation_decision"},
    {ResponseSchema::AgentDecision, "agent_decision"},
    {ResponseSchema::AnswerLetter, "answer_letter"},
};

const std::regex& slot_pattern() {
    static const std::regex re(R"(\{\{([a-z_][a-z0-9_]*)\}\})");
    return re;
}

}  // namespace

std::string_view to_string(ResponseSchema schema) {
    for (const auto& [s, name] : kSchemaNames)
        if (s == schema) return name;
    return "unknown";
}

ResponseSchema response_schema_from_string(std::string_view text) {
    for (const auto& [s, name] : kSchemaNames)
        if (name == text) return s;
    throw Error(ErrorCode::Configuration, "unknown response schema: " + std::string(text));
}

PromptTemplate::PromptTemplate(std::string id, std::string body, ResponseSchema schema)
    : id_(std::move(id)), body_(std::move(body)), schema_(schema) {
    std::set<std::string> seen;
    for (auto it = std::sregex_iterator(body_.begin(), body_.end(), slot_pattern());
         it != std::sregex_iterator(); ++it) {
        auto name = (*it)[1].str();
        if (seen.insert(name).second) slots_.push_back(name);
    }
}

std::string PromptTemplate::render(const SlotValues& inputs) const {
    for (const auto& slot : slots_) {
        if (!inputs.contains(slot)) {
            throw Error(ErrorCode::InvalidArgument,
                        "template '" + id_ + "' slot '" + slot + "' is not filled");
        }
    }
    for (const auto& [name, _] : inputs) {
        if (std::find(slots_.begin(), slots_.end(), name) == slots_.end()) {
            throw Error(ErrorCode::InvalidArgument,
                        "template '" + id_ + "' has no slot named '" + name + "'");
        }
    }
    // Single pass so slot values containing "{{...}}" are never re-expanded.
    std::string out;
    out.reserve(body_.size());
    auto last = body_.cbegin();
    for (auto it = std::sregex_iterator(body_.begin(), body_.end(), slot_pattern());
         it != std::sregex_iterator(); ++it) {
        out.append(last, body_.cbegin() + it->position());
        out += inputs.at((*it)[1].str());
        last = body_.cbegin() + it->position() + it->length();
    }
    out.append(last, body_.cend());
    return out;
}

TemplateRegistry TemplateRegistry::load_dir(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "templates.json";
    std::ifstream in(manifest_path);
    if (!in) {
        throw Error(ErrorCode::Configuration,
                    "cannot open prompt manifest " + manifest_path.string());
    }
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Configuration,
                    "malformed prompt manifest " + manifest_path.string() + ": " + e.what());
    }
    TemplateRegistry reg;
    for (const auto& entry : manifest.at("templates")) {
        const auto id = entry.at("id").get<std::string>();
        const auto file = dir / entry.at("file").get<std::string>();
        std::ifstream body_in(file, std::ios::binary);
        if (!body_in) {
            throw Error(ErrorCode::Configuration, "cannot open prompt body " + file.string());
        }
        std::stringstream ss;
        ss << body_in.rdbuf();
        PromptTemplate tmpl(id, ss.str(),
                            response_schema_from_string(entry.at("schema").get<std::string>()));
        if (entry.contains("slots")) {
            auto declared = entry.at("slots").get<std::vector<std::string>>();
            auto found = tmpl.slots();
            std::sort(declared.begin(), declared.end());
            std::sort(found.begin(), found.end());
            if (declared != found) {
                throw Error(ErrorCode::Configuration,
                            "template '" + id + "' body slots differ from the manifest");
            }
        }
        reg.add(std::move(tmpl));
    }
    return reg;
}

std::filesystem::path TemplateRegistry::default_dir() {
    if (const char* env = std::getenv("MMEM_PROMPT_DIR"); env && *env) return env;
    return MMEM_PROMPT_DIR;
}

const TemplateRegistry& TemplateRegistry::standard() {
    static const TemplateRegistry reg = load_dir(default_dir());
    return reg;
}

void TemplateRegistry::add(PromptTemplate tmpl) {
    auto id = tmpl.id();
    templates_.insert_or_assign(std::move(id), std::move(tmpl));
}

const PromptTemplate& TemplateRegistry::get(std::string_view id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) {
        throw Error(ErrorCode::Configuration, "unknown prompt template: " + std::string(id));
    }
    return it->second;
}

bool TemplateRegistry::contains(std::string_view id) const { return templates_.find(id) != templates_.end(); }

std::vector<std::string> TemplateRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : templates_) out.push_back(id);
    return out;
}

}  // namespace mmem
