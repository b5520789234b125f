#include "mmem/backends/structured.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include <nlohmann/json.hpp>

#include "mmem/error.hpp"

namespace mmem {

using nlohmann::json;

namespace {

// End index (exclusive) of the bracketed value starting at `open`, honouring
// JSON strings; npos if it never closes.
std::size_t matching_close(std::string_view s, std::size_t open) {
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = open; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{' || c == '[') ++depth;
        else if (c == '}' || c == ']') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

enum class Shape { Object, Array };

template <class Accept>
std::optional<json> scan_json(std::string_view raw, Shape shape, Accept accept) {
    const char open = shape == Shape::Object ? '{' : '[';
    for (std::size_t pos = raw.find(open); pos != std::string_view::npos;
         pos = raw.find(open, pos + 1)) {
        const auto end = matching_close(raw, pos);
        if (end == std::string_view::npos) continue;
        auto j = json::parse(raw.substr(pos, end - pos), nullptr, false);
        if (j.is_discarded()) continue;
        if ((shape == Shape::Object && j.is_object()) || (shape == Shape::Array && j.is_array())) {
            if (accept(j)) return j;
        }
    }
    return std::nullopt;
}

[[noreturn]] void fail_parse(std::string_view what, std::string_view raw) {
    throw ParseError(std::string(what), std::string(raw), ErrorCode::Parse);
}

[[noreturn]] void fail_validation(std::string_view what, std::string_view raw) {
    throw ParseError(std::string(what), std::string(raw), ErrorCode::Validation);
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::optional<RawTriple> as_triple(const json& j) {
    if (!j.is_array() || j.size() != 3) return std::nullopt;
    for (const auto& x : j)
        if (!x.is_string()) return std::nullopt;
    return RawTriple{j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>()};
}

std::vector<std::string> strings_of(const json& arr, std::string_view raw, bool allow_numbers) {
    std::vector<std::string> out;
    for (const auto& x : arr) {
        if (x.is_string()) out.push_back(x.get<std::string>());
        else if (allow_numbers && x.is_number_integer()) out.push_back(std::to_string(x.get<long long>()));
        else fail_validation("expected an array of strings", raw);
    }
    return out;
}

std::vector<int> ints_of(const json& arr, std::string_view raw) {
    if (!arr.is_array()) fail_validation("expected an array of integers", raw);
    std::vector<int> out;
    for (const auto& x : arr) {
        if (!x.is_number_integer()) fail_validation("expected an array of integers", raw);
        out.push_back(x.get<int>());
    }
    return out;
}

auto any = [](const json&) { return true; };

IdArray parse_id_array(std::string_view raw) {
    auto j = scan_json(raw, Shape::Array, any);
    if (!j) fail_parse("no JSON array of ids in response", raw);
    return IdArray{strings_of(*j, raw, true)};
}

EntityList parse_entities(std::string_view raw) {
    if (auto obj = scan_json(raw, Shape::Object,
                             [](const json& j) { return j.contains("named_entities"); })) {
        const auto& arr = obj->at("named_entities");
        if (!arr.is_array()) fail_validation("named_entities must be an array", raw);
        return EntityList{strings_of(arr, raw, false)};
    }
    auto arr = scan_json(raw, Shape::Array, any);
    if (!arr) fail_parse("no entity list in response", raw);
    return EntityList{strings_of(*arr, raw, false)};
}

TripleList triples_from(const json& arr, std::string_view raw) {
    if (!arr.is_array()) fail_validation("triples must be an array", raw);
    TripleList out;
    for (const auto& item : arr) {
        if (auto t = as_triple(item)) out.triples.push_back(std::move(*t));
        else ++out.skipped;
    }
    return out;
}

TripleList parse_triples(std::string_view raw) {
    if (auto obj = scan_json(raw, Shape::Object, [](const json& j) { return j.contains("triples"); })) {
        return triples_from(obj->at("triples"), raw);
    }
    // A bare [[s,p,o], ...] list; a flat string array is not a triple list.
    auto arr = scan_json(raw, Shape::Array, [](const json& j) {
        return j.empty() || j.front().is_array();
    });
    if (!arr) fail_parse("no triple list in response", raw);
    return triples_from(*arr, raw);
}

SemanticExtraction parse_semantic(std::string_view raw) {
    auto obj = scan_json(raw, Shape::Object, [](const json& j) {
        return j.contains("semantic_triples") || j.contains("episodic_evidence");
    });
    if (!obj) fail_parse("no semantic extraction object in response", raw);
    if (!obj->contains("semantic_triples") || !obj->contains("episodic_evidence")) {
        fail_validation("semantic extraction needs both semantic_triples and episodic_evidence", raw);
    }
    const auto& triples = obj->at("semantic_triples");
    const auto& evidence = obj->at("episodic_evidence");
    if (!triples.is_array() || !evidence.is_array()) {
        fail_validation("semantic_triples and episodic_evidence must be arrays", raw);
    }
    if (triples.size() != evidence.size()) {
        fail_validation("semantic_triples and episodic_evidence differ in length", raw);
    }
    SemanticExtraction out;
    for (std::size_t i = 0; i < triples.size(); ++i) {
        auto t = as_triple(triples[i]);
        if (!t) fail_validation("semantic triple is not [subject, predicate, object]", raw);
        out.triples.push_back(std::move(*t));
        out.evidence.push_back(ints_of(evidence[i], raw));
    }
    return out;
}

ConsolidationDecision parse_consolidation(std::string_view raw) {
    auto obj = scan_json(raw, Shape::Object, [](const json& j) {
        return j.contains("updated_triple") || j.contains("triples_to_remove");
    });
    if (!obj) fail_parse("no consolidation decision in response", raw);
    if (!obj->contains("updated_triple") || !obj->contains("triples_to_remove")) {
        fail_validation("decision needs updated_triple and triples_to_remove", raw);
    }
    ConsolidationDecision out;
    const auto& upd = obj->at("updated_triple");
    if (upd.is_null() || (upd.is_array() && upd.empty())) {
        out.updated.reset();
    } else if (auto t = as_triple(upd)) {
        out.updated = std::move(*t);
    } else {
        fail_validation("updated_triple is not [subject, predicate, object]", raw);
    }
    out.remove = ints_of(obj->at("triples_to_remove"), raw);
    return out;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

AgentDecision parse_decision(std::string_view raw) {
    auto obj = scan_json(raw, Shape::Object, [](const json& j) { return j.contains("decision"); });
    if (!obj) fail_parse("no decision object in response", raw);
    const auto& d = obj->at("decision");
    if (!d.is_string()) fail_validation("decision must be a string", raw);
    const auto decision = lower(trim(d.get<std::string>()));
    AgentDecision out;
    if (decision == "answer") return out;
    if (decision != "search") fail_validation("decision must be search or answer", raw);
    if (!obj->contains("selected_memory") || !obj->at("selected_memory").is_object()) {
        fail_validation("search decision without selected_memory", raw);
    }
    const auto& sel = obj->at("selected_memory");
    if (!sel.contains("memory_type") || !sel.at("memory_type").is_string() ||
        !sel.contains("search_query") || !sel.at("search_query").is_string()) {
        fail_validation("selected_memory needs memory_type and search_query strings", raw);
    }
    out.search = true;
    out.memory_type = lower(trim(sel.at("memory_type").get<std::string>()));
    out.query = trim(sel.at("search_query").get<std::string>());
    if (out.memory_type != "episodic" && out.memory_type != "semantic" && out.memory_type != "visual") {
        fail_validation("unknown memory_type '" + out.memory_type + "'", raw);
    }
    if (out.query.empty()) fail_validation("empty search_query", raw);
    return out;
}

AnswerLetter parse_letter(std::string_view raw) {
    const auto text = trim(raw);
    std::smatch m;
    static const std::regex bare(R"(^\(?([A-Za-z])\)?[.:]?$)");
    static const std::regex stated(R"(answer\s*(?:is|:)?\s*:?\s*\(?([A-Z])\)?(?![A-Za-z]))",
                                   std::regex::icase);
    static const std::regex paren(R"(\(([A-Z])\))");
    static const std::regex token(R"((?:^|[^A-Za-z])([A-HJ-Z])(?![A-Za-z]))");
    if (std::regex_match(text, m, bare) || std::regex_search(text, m, stated) ||
        std::regex_search(text, m, paren) || std::regex_search(text, m, token)) {
        return AnswerLetter{static_cast<char>(std::toupper(static_cast<unsigned char>(m[1].str()[0])))};
    }
    fail_parse("no answer letter in response", raw);
}

}  // namespace

StructuredValue parse_structured(std::string_view raw, ResponseSchema schema) {
    switch (schema) {
        case ResponseSchema::FreeText: return FreeText{trim(raw)};
        case ResponseSchema::IdArray: return parse_id_array(raw);
        case ResponseSchema::EntityList: return parse_entities(raw);
        case ResponseSchema::TripleList: return parse_triples(raw);
        case ResponseSchema::SemanticTriples: return parse_semantic(raw);
        case ResponseSchema::ConsolidationDecision: return parse_consolidation(raw);
        case ResponseSchema::AgentDecision: return parse_decision(raw);
        case ResponseSchema::AnswerLetter: return parse_letter(raw);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown response schema");
}

namespace {

json triple_json(const RawTriple& t) { return json::array({t.subject, t.predicate, t.object}); }

struct Serializer {
    std::string operator()(const FreeText& v) const { return v.text; }
    std::string operator()(const IdArray& v) const { return json(v.ids).dump(); }
    std::string operator()(const EntityList& v) const {
        return json{{"named_entities", v.entities}}.dump();
    }
    std::string operator()(const TripleList& v) const {
        auto arr = json::array();
        for (const auto& t : v.triples) arr.push_back(triple_json(t));
        return json{{"triples", arr}}.dump();
    }
    std::string operator()(const SemanticExtraction& v) const {
        auto arr = json::array();
        for (const auto& t : v.triples) arr.push_back(triple_json(t));
        return json{{"semantic_triples", arr}, {"episodic_evidence", v.evidence}}.dump();
    }
    std::string operator()(const ConsolidationDecision& v) const {
        return json{{"updated_triple", v.updated ? triple_json(*v.updated) : json::array()},
                    {"triples_to_remove", v.remove}}
            .dump();
    }
    std::string operator()(const AgentDecision& v) const {
        if (!v.search) return json{{"decision", "answer"}}.dump();
        return json{{"decision", "search"},
                    {"selected_memory", {{"memory_type", v.memory_type}, {"search_query", v.query}}}}
            .dump();
    }
    std::string operator()(const AnswerLetter& v) const { return std::string(1, v.letter); }
};

}  // namespace

std::string serialize_structured(const StructuredValue& value) {
    return std::visit(Serializer{}, value);
}

}  // namespace mmem
