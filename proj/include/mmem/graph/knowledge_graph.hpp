#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmem {

enum class TripletKind { Episodic, Semantic };

std::string_view to_string(TripletKind kind);
TripletKind triplet_kind_from_string(std::string_view text);

struct TripletKey {
    std::string subject;
    std::string predicate;
    std::string object;

    auto operator<=>(const TripletKey&) const = default;
};

// Segment id -> segment start, so ranking can break ties on provenance time
// without a lookup into the owning memory.
using Provenance = std::map<std::string, std::int64_t>;

struct Triplet {
    std::string subject;
    std::string predicate;
    std::string object;
    Provenance provenance;
    TripletKind kind = TripletKind::Episodic;

    TripletKey key() const { return {subject, predicate, object}; }

    // "subject predicate object", the text that gets embedded for matching.
    std::string text() const;

    // Earliest provenance start; INT64_MAX when provenance is empty.
    std::int64_t earliest_ms() const;

    bool operator==(const Triplet&) const = default;
};

// Lowercase, collapse whitespace, strip leading/trailing ASCII punctuation.
// Throws DegenerateEntity if nothing is left.
std::string normalize_entity(std::string_view surface);

// Lowercase and collapse whitespace; punctuation inside predicates is kept.
std::string normalize_predicate(std::string_view surface);

// Normalizes all three fields; throws DegenerateEntity on an empty endpoint or predicate.
Triplet make_triplet(std::string_view subject, std::string_view predicate, std::string_view object,
                     Provenance provenance = {}, TripletKind kind = TripletKind::Episodic);

struct UpsertItemError {
    std::size_t index = 0;
    std::string message;
};

struct UpsertReport {
    std::size_t inserted = 0;
    std::size_t merged = 0;
    std::vector<UpsertItemError> rejected;
};

// Entity nodes joined by (subject, predicate, object) edges. Nodes are exactly
// the endpoints of stored edges; duplicate keys merge provenance.
class KnowledgeGraph {
public:
    UpsertReport upsert(std::span<const Triplet> triplets);
    UpsertReport upsert(const Triplet& triplet) { return upsert(std::span(&triplet, 1)); }

    // Removes the edge and any endpoint left without edges. Returns false if absent.
    bool remove(const TripletKey& key);

    bool contains(const TripletKey& key) const { return edges_.contains(key); }
    const Triplet* find(const TripletKey& key) const;

    const std::map<TripletKey, Triplet>& edges() const { return edges_; }
    std::vector<std::string> nodes() const;
    bool has_node(std::string_view node) const;
    std::size_t node_count() const { return node_edges_.size(); }
    std::size_t edge_count() const { return edges_.size(); }
    bool empty() const { return edges_.empty(); }

    // Keys of edges touching the node (either endpoint).
    const std::set<TripletKey>& edges_of(const std::string& node) const;

    // Segment ids whose triplets mention the node.
    std::set<std::string> segments_of(const std::string& node) const;

    // Node -> segment ids, over every node with at least one provenance segment.
    std::map<std::string, std::set<std::string>> incidence() const;

    // Throws InternalConsistency if an internal index disagrees with the edge set.
    void validate() const;

    bool operator==(const KnowledgeGraph& other) const { return edges_ == other.edges_; }

private:
    std::map<TripletKey, Triplet> edges_;
    std::map<std::string, std::set<TripletKey>, std::less<>> node_edges_;
};

// Functional form: returns the updated graph, leaving the input untouched.
KnowledgeGraph upsert_triplets(KnowledgeGraph graph, std::span<const Triplet> triplets,
                               UpsertReport* report = nullptr);

}  // namespace mmem
