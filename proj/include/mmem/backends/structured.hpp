#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mmem/backends/templates.hpp"

namespace mmem {

struct RawTriple {
    std::string subject;
    std::string predicate;
    std::string object;

    bool operator==(const RawTriple&) const = default;
};

struct FreeText {
    static constexpr ResponseSchema kSchema = ResponseSchema::FreeText;
    std::string text;
    bool operator==(const FreeText&) const = default;
};

struct IdArray {
    static constexpr ResponseSchema kSchema = ResponseSchema::IdArray;
    std::vector<std::string> ids;
    bool operator==(const IdArray&) const = default;
};

struct EntityList {
    static constexpr ResponseSchema kSchema = ResponseSchema::EntityList;
    std::vector<std::string> entities;
    bool operator==(const EntityList&) const = default;
};

struct TripleList {
    static constexpr ResponseSchema kSchema = ResponseSchema::TripleList;
    std::vector<RawTriple> triples;
    std::size_t skipped = 0;  // items that were not [s, p, o] string triples
    bool operator==(const TripleList&) const = default;
};

struct SemanticExtraction {
    static constexpr ResponseSchema kSchema = ResponseSchema::SemanticTriples;
    std::vector<RawTriple> triples;
    std::vector<std::vector<int>> evidence;  // aligned with triples
    bool operator==(const SemanticExtraction&) const = default;
};

struct ConsolidationDecision {
    static constexpr ResponseSchema kSchema = ResponseSchema::ConsolidationDecision;
    std::optional<RawTriple> updated;  // empty list in the response drops the new triple
    std::vector<int> remove;
    bool operator==(const ConsolidationDecision&) const = default;
};

struct AgentDecision {
    static constexpr ResponseSchema kSchema = ResponseSchema::AgentDecision;
    bool search = false;
    std::string memory_type;  // episodic | semantic | visual when searching
    std::string query;
    bool operator==(const AgentDecision&) const = default;
};

struct AnswerLetter {
    static constexpr ResponseSchema kSchema = ResponseSchema::AnswerLetter;
    char letter = 'A';
    bool operator==(const AnswerLetter&) const = default;
};

using StructuredValue = std::variant<FreeText, IdArray, EntityList, TripleList, SemanticExtraction,
                                     ConsolidationDecision, AgentDecision, AnswerLetter>;

// Finds the first well-formed JSON value of the schema's shape anywhere in the
// text (prose or code fences around it are fine) and validates it.
// ParseError(Parse) when nothing parses; ParseError(Validation) on schema violations.
StructuredValue parse_structured(std::string_view raw, ResponseSchema schema);

template <class T>
T parse_as(std::string_view raw) {
    return std::get<T>(parse_structured(raw, T::kSchema));
}

// Canonical response text for a value; parse_structured inverts it.
std::string serialize_structured(const StructuredValue& value);

}  // namespace mmem
