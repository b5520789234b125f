#include "mmem/graph/knowledge_graph.hpp"

#include <cctype>
#include <limits>

#include "mmem/error.hpp"

namespace mmem {

std::string_view to_string(TripletKind kind) {
    return kind == TripletKind::Episodic ? "episodic" : "semantic";
}

TripletKind triplet_kind_from_string(std::string_view text) {
    if (text == "episodic") return TripletKind::Episodic;
    if (text == "semantic") return TripletKind::Semantic;
    throw Error(ErrorCode::InvalidArgument, "unknown triplet kind: " + std::string(text));
}

std::string Triplet::text() const { return subject + " " + predicate + " " + object; }

std::int64_t Triplet::earliest_ms() const {
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (const auto& [id, start] : provenance) best = std::min(best, start);
    return best;
}

namespace {

std::string collapse_lower(std::string_view surface) {
    std::string out;
    out.reserve(surface.size());
    bool pending_space = false;
    for (unsigned char c : surface) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

std::string normalize_entity(std::string_view surface) {
    std::string s = collapse_lower(surface);
    std::size_t b = 0, e = s.size();
    // Stripping punctuation can expose whitespace ("' radio city"), so alternate.
    while (b < e && (is_ascii_punct(s[b]) || std::isspace(static_cast<unsigned char>(s[b])))) ++b;
    while (e > b &&
           (is_ascii_punct(s[e - 1]) || std::isspace(static_cast<unsigned char>(s[e - 1]))))
        --e;
    s = s.substr(b, e - b);
    if (s.empty()) {
        throw Error(ErrorCode::DegenerateEntity,
                    "entity is empty after normalization: '" + std::string(surface) + "'");
    }
    return s;
}

std::string normalize_predicate(std::string_view surface) { return collapse_lower(surface); }

Triplet make_triplet(std::string_view subject, std::string_view predicate, std::string_view object,
                     Provenance provenance, TripletKind kind) {
    Triplet t;
    t.subject = normalize_entity(subject);
    t.object = normalize_entity(object);
    t.predicate = normalize_predicate(predicate);
    if (t.predicate.empty()) {
        throw Error(ErrorCode::DegenerateEntity, "triplet predicate is empty");
    }
    t.provenance = std::move(provenance);
    t.kind = kind;
    return t;
}

UpsertReport KnowledgeGraph::upsert(std::span<const Triplet> triplets) {
    UpsertReport report;
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto& in = triplets[i];
        Triplet t;
        try {
            t = make_triplet(in.subject, in.predicate, in.object, in.provenance, in.kind);
        } catch (const Error& e) {
            report.rejected.push_back({i, e.what()});
            continue;
        }
        if (t.kind == TripletKind::Episodic && t.provenance.empty()) {
            report.rejected.push_back({i, "episodic triplet without provenance"});
            continue;
        }
        auto key = t.key();
        auto it = edges_.find(key);
        if (it != edges_.end()) {
            for (const auto& [id, start] : t.provenance) it->second.provenance.emplace(id, start);
            ++report.merged;
            continue;
        }
        node_edges_[t.subject].insert(key);
        node_edges_[t.object].insert(key);
        edges_.emplace(std::move(key), std::move(t));
        ++report.inserted;
    }
    return report;
}

bool KnowledgeGraph::remove(const TripletKey& key) {
    auto it = edges_.find(key);
    if (it == edges_.end()) return false;
    for (const auto* node : {&key.subject, &key.object}) {
        auto n = node_edges_.find(*node);
        if (n == node_edges_.end()) continue;
        n->second.erase(key);
        if (n->second.empty()) node_edges_.erase(n);
    }
    edges_.erase(it);
    return true;
}

const Triplet* KnowledgeGraph::find(const TripletKey& key) const {
    auto it = edges_.find(key);
    return it == edges_.end() ? nullptr : &it->second;
}

std::vector<std::string> KnowledgeGraph::nodes() const {
    std::vector<std::string> out;
    out.reserve(node_edges_.size());
    for (const auto& [node, _] : node_edges_) out.push_back(node);
    return out;
}

bool KnowledgeGraph::has_node(std::string_view node) const {
    return node_edges_.find(node) != node_edges_.end();
}

const std::set<TripletKey>& KnowledgeGraph::edges_of(const std::string& node) const {
    static const std::set<TripletKey> kEmpty;
    auto it = node_edges_.find(node);
    return it == node_edges_.end() ? kEmpty : it->second;
}

std::set<std::string> KnowledgeGraph::segments_of(const std::string& node) const {
    std::set<std::string> out;
    for (const auto& key : edges_of(node)) {
        for (const auto& [id, _] : edges_.at(key).provenance) out.insert(id);
    }
    return out;
}

std::map<std::string, std::set<std::string>> KnowledgeGraph::incidence() const {
    std::map<std::string, std::set<std::string>> out;
    for (const auto& [node, _] : node_edges_) {
        auto segs = segments_of(node);
        if (!segs.empty()) out.emplace(node, std::move(segs));
    }
    return out;
}

void KnowledgeGraph::validate() const {
    std::map<std::string, std::set<TripletKey>, std::less<>> expected;
    for (const auto& [key, t] : edges_) {
        if (t.key() != key) {
            throw Error(ErrorCode::InternalConsistency, "edge stored under a mismatched key");
        }
        if (key.subject.empty() || key.object.empty() || key.predicate.empty()) {
            throw Error(ErrorCode::InternalConsistency, "edge with an empty field");
        }
        expected[key.subject].insert(key);
        expected[key.object].insert(key);
    }
    if (expected != node_edges_) {
        throw Error(ErrorCode::InternalConsistency, "node index disagrees with edge set");
    }
}

KnowledgeGraph upsert_triplets(KnowledgeGraph graph, std::span<const Triplet> triplets,
                               UpsertReport* report) {
    auto r = graph.upsert(triplets);
    if (report) *report = std::move(r);
    return graph;
}

}  // namespace mmem
