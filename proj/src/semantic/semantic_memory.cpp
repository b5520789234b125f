#include "mmem/semantic/semantic_memory.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mmem/backends/structured.hpp"
#include "mmem/episodic/episodic_memory.hpp"
#include "mmem/error.hpp"

namespace mmem {

void SemanticParams::validate() const {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "semantic k must be >= 1");
    if (!(match_threshold > 0.0 && match_threshold <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "consolidation threshold must lie in (0, 1]");
    }
    if (!(node_match_threshold > 0.0 && node_match_threshold <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "node match threshold must lie in (0, 1]");
    }
    ppr.validate();
}

namespace {

std::set<TripletKey> keys_of(const KnowledgeGraph& g) {
    std::set<TripletKey> out;
    for (const auto& [k, _] : g.edges()) out.insert(k);
    return out;
}

}  // namespace

void SemanticMemory::apply(ConsolidationRecord record) {
    if (record.generation != generation_ + 1) {
        throw Error(ErrorCode::InternalConsistency,
                    "record generation " + std::to_string(record.generation) + " does not follow " +
                        std::to_string(generation_));
    }
    for (const auto& t : record.removed) {
        if (!graph_.contains(t.key())) {
            throw Error(ErrorCode::InternalConsistency, "removal of absent edge '" + t.text() + "'");
        }
    }
    for (const auto& t : record.updated) {
        if (t.kind != TripletKind::Semantic) {
            throw Error(ErrorCode::InternalConsistency, "non-semantic triplet in update: " + t.text());
        }
    }

    auto expected = keys_of(graph_);
    KnowledgeGraph next = graph_;
    for (const auto& t : record.removed) {
        next.remove(t.key());
        expected.erase(t.key());
    }
    const auto report = next.upsert(record.updated);
    if (!report.rejected.empty()) {
        throw Error(ErrorCode::InternalConsistency, "update rejected: " + report.rejected.front().message);
    }
    for (const auto& t : record.updated) expected.insert(t.key());
    if (keys_of(next) != expected) {
        throw Error(ErrorCode::InternalConsistency, "consolidation broke next = (prev \\ removed) ∪ updated");
    }

    graph_ = std::move(next);
    generation_ = record.generation;
    journal_.push_back(std::move(record));
}

SemanticMemory SemanticMemory::replay(std::span<const ConsolidationRecord> journal) {
    SemanticMemory m;
    for (const auto& r : journal) m.apply(r);
    return m;
}

std::string semantic_window_id(const TimeRange& window) {
    return "sem@" + std::to_string(window.start_ms) + "-" + std::to_string(window.end_ms);
}

SemanticExtractionResult extract_semantic(std::span<const std::string> captions, const std::string& window_id,
                                          std::int64_t window_start_ms, ModelBackend& backend,
                                          const TemplateRegistry& templates) {
    if (captions.empty()) throw Error(ErrorCode::InvalidArgument, "semantic extraction needs captions");
    std::string episodes;
    for (std::size_t i = 0; i < captions.size(); ++i) {
        episodes += std::to_string(i) + ". " + captions[i] + "\n";
    }
    const auto raw = complete(backend, templates.get(templates::kSemanticTriples), {{"episodes", episodes}});
    const auto parsed = parse_as<SemanticExtraction>(raw);

    SemanticExtractionResult out;
    const Provenance prov{{window_id, window_start_ms}};
    std::map<TripletKey, std::size_t> position;
    for (std::size_t i = 0; i < parsed.triples.size(); ++i) {
        const auto& r = parsed.triples[i];
        for (int e : parsed.evidence[i]) {
            if (e < 0 || static_cast<std::size_t>(e) >= captions.size()) {
                throw ParseError("evidence index " + std::to_string(e) + " is outside the window", raw,
                                 ErrorCode::Validation);
            }
        }
        Triplet t;
        try {
            t = make_triplet(r.subject, r.predicate, r.object, prov, TripletKind::Semantic);
        } catch (const Error&) {
            ++out.dropped;
            continue;
        }
        auto [it, fresh] = position.emplace(t.key(), out.triplets.size());
        if (fresh) {
            out.triplets.push_back(std::move(t));
            out.evidence.push_back(parsed.evidence[i]);
        } else {
            auto& ev = out.evidence[it->second];
            ev.insert(ev.end(), parsed.evidence[i].begin(), parsed.evidence[i].end());
            std::sort(ev.begin(), ev.end());
            ev.erase(std::unique(ev.begin(), ev.end()), ev.end());
        }
    }
    return out;
}

namespace {

struct IndexedMatch {
    std::size_t incoming = 0;
    MatchPair pair;
};

std::vector<IndexedMatch> indexed_matches(const SemanticMemory& memory, std::span<const Triplet> incoming,
                                          double threshold, EmbeddingCache& embeddings) {
    if (!(threshold > 0.0 && threshold <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "match threshold must lie in (0, 1]");
    }
    std::vector<IndexedMatch> out;
    if (memory.graph().empty() || incoming.empty()) return out;

    // Embed everything up front so a backend failure leaves no partial result.
    std::vector<std::pair<const Triplet*, Vector>> existing;
    for (const auto& [_, t] : memory.graph().edges()) existing.emplace_back(&t, embeddings.get(t.text()));
    std::vector<Vector> inc;
    for (const auto& t : incoming) inc.push_back(embeddings.get(t.text()));

    for (std::size_t i = 0; i < incoming.size(); ++i) {
        const auto text = incoming[i].text();
        std::vector<IndexedMatch> row;
        for (const auto& [e, v] : existing) {
            const double sim = (e->text() == text) ? 1.0 : unit_cosine(v, inc[i]);
            if (sim >= threshold) row.push_back({i, {*e, incoming[i], sim}});
        }
        std::stable_sort(row.begin(), row.end(), [](const IndexedMatch& a, const IndexedMatch& b) {
            return a.pair.similarity > b.pair.similarity;
        });
        out.insert(out.end(), row.begin(), row.end());
    }
    return out;
}

std::string triple_json(const Triplet& t) {
    return nlohmann::json::array({t.subject, t.predicate, t.object}).dump();
}

}  // namespace

std::vector<MatchPair> match_candidates(const SemanticMemory& memory, std::span<const Triplet> incoming,
                                        double threshold, EmbeddingCache& embeddings) {
    std::vector<MatchPair> out;
    for (auto& m : indexed_matches(memory, incoming, threshold, embeddings)) out.push_back(std::move(m.pair));
    return out;
}

SemanticMemory consolidate(const SemanticMemory& memory, std::span<const Triplet> incoming, ModelBackend& judge,
                           EmbeddingCache& embeddings, const SemanticParams& params,
                           std::vector<std::vector<int>> evidence, ConsolidationStats* stats,
                           const TemplateRegistry& templates) {
    params.validate();
    if (!evidence.empty() && evidence.size() != incoming.size()) {
        throw Error(ErrorCode::InvalidArgument, "evidence must align with incoming triplets");
    }
    for (const auto& t : incoming) {
        if (t.kind != TripletKind::Semantic) {
            throw Error(ErrorCode::InvalidArgument, "incoming triplet is not semantic: " + t.text());
        }
    }
    ConsolidationStats local;
    const auto matches = indexed_matches(memory, incoming, params.match_threshold, embeddings);

    ConsolidationRecord record;
    record.generation = memory.generation() + 1;
    record.incoming.assign(incoming.begin(), incoming.end());
    record.evidence = std::move(evidence);
    for (const auto& m : matches) record.match_pairs.push_back(m.pair);

    std::set<TripletKey> removed_keys;
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < incoming.size(); ++i) {
        std::vector<const MatchPair*> mine;
        while (cursor < matches.size() && matches[cursor].incoming == i) mine.push_back(&matches[cursor++].pair);
        if (mine.empty()) {
            record.updated.push_back(incoming[i]);
            continue;
        }

        std::string existing;
        for (std::size_t j = 0; j < mine.size(); ++j) {
            existing += std::to_string(j) + ". " + triple_json(mine[j]->existing) + "\n";
        }
        ++local.judged;
        const auto raw = complete(judge, templates.get(templates::kConsolidate),
                                  {{"new_triple", triple_json(incoming[i])}, {"existing_triples", existing}});
        ConsolidationDecision decision;
        std::optional<Triplet> updated;
        try {
            decision = parse_as<ConsolidationDecision>(raw);
            if (decision.updated) {
                updated = make_triplet(decision.updated->subject, decision.updated->predicate,
                                       decision.updated->object, incoming[i].provenance, TripletKind::Semantic);
            }
        } catch (const Error& e) {
            spdlog::warn("consolidation judge output unusable for '{}': {}", incoming[i].text(), e.what());
            ++local.judge_fallbacks;
            record.updated.push_back(incoming[i]);
            continue;
        }
        for (int r : decision.remove) {
            if (r < 0 || static_cast<std::size_t>(r) >= mine.size()) {
                spdlog::info("ignoring removal index {} for '{}' ({} matched)", r, incoming[i].text(), mine.size());
                ++local.ignored_removals;
                continue;
            }
            const auto& victim = mine[static_cast<std::size_t>(r)]->existing;
            if (removed_keys.insert(victim.key()).second) record.removed.push_back(victim);
        }
        if (updated) record.updated.push_back(std::move(*updated));
    }

    SemanticMemory next = memory;
    next.apply(std::move(record));
    if (stats) *stats = local;
    return next;
}

SemanticMemory build_semantic(std::span<const Segment> fine_segments, std::int64_t window_ms,
                              ModelBackend& extractor, EmbeddingCache& embeddings, const SemanticParams& params,
                              const TemplateRegistry& templates) {
    if (window_ms <= 0) throw Error(ErrorCode::InvalidArgument, "semantic window must be positive");
    std::vector<const Segment*> ordered;
    std::int64_t total = 0;
    for (const auto& s : fine_segments) {
        ordered.push_back(&s);
        total = std::max(total, s.range.end_ms);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const Segment* a, const Segment* b) { return std::tie(a->range, a->id) < std::tie(b->range, b->id); });

    SemanticMemory memory;
    if (ordered.empty()) return memory;
    for (const auto& window : partition_timeline(total, window_ms)) {
        std::vector<std::string> captions;
        for (const auto* s : ordered) {
            if (s->range.start_ms >= window.start_ms && s->range.start_ms < window.end_ms) {
                captions.push_back(s->caption);
            }
        }
        if (captions.empty()) continue;
        const auto id = semantic_window_id(window);
        SemanticExtractionResult ex;
        try {
            ex = extract_semantic(captions, id, window.start_ms, extractor, templates);
        } catch (const BackendError& e) {
            throw IngestError(id, "semantic window " + id + ": " + e.what());
        }
        if (ex.triplets.empty()) continue;
        memory = consolidate(memory, ex.triplets, extractor, embeddings, params, ex.evidence, nullptr, templates);
    }
    return memory;
}

SemanticRetrieval semantic_retrieve(const SemanticMemory& memory, std::span<const std::string> query_entities,
                                    const SemanticParams& params, EmbeddingCache* embeddings) {
    params.validate();
    SemanticRetrieval out;
    out.query_entities.assign(query_entities.begin(), query_entities.end());
    if (memory.graph().empty()) {
        out.empty_memory = true;
        return out;
    }
    Embedder embed;
    if (embeddings) embed = [embeddings](const std::string& s) { return embeddings->get(s); };
    const auto match = match_seed_nodes(memory.graph(), query_entities, embed, params.node_match_threshold);
    if (match.seeds.empty()) {
        spdlog::warn("semantic retrieval: no query entity matched a node");
        out.no_seed = true;
        return out;
    }
    const auto scores = ppr(memory.graph(), match.seeds, params.ppr);
    out.triplets = edge_scores(memory.graph(), scores.scores);
    if (out.triplets.size() > params.k) out.triplets.resize(params.k);
    return out;
}

SemanticRetrieval semantic_retrieve(const SemanticMemory& memory, std::string_view query,
                                    const SemanticParams& params, ModelBackend& backend,
                                    EmbeddingCache* embeddings, const TemplateRegistry& templates) {
    if (memory.graph().empty()) {
        SemanticRetrieval out;
        out.empty_memory = true;
        return out;
    }
    const auto entities = query_entities(query, backend, templates);
    return semantic_retrieve(memory, entities, params, embeddings);
}

}  // namespace mmem
