#include "mmem/episodic/episodic_memory.hpp"

#include <algorithm>
#include <future>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "mmem/backends/structured.hpp"
#include "mmem/error.hpp"

namespace mmem {

void EpisodicParams::validate() const {
    if (k_per_scale == 0) throw Error(ErrorCode::InvalidArgument, "k_per_scale must be >= 1");
    if (rerank_m == 0) throw Error(ErrorCode::InvalidArgument, "rerank m must be >= 1");
    if (!(node_match_threshold > 0.0 && node_match_threshold <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "node match threshold must lie in (0, 1]");
    }
    if (max_coarse_words == 0) throw Error(ErrorCode::InvalidArgument, "max_coarse_words must be >= 1");
    ppr.validate();
}

EpisodicMemory::EpisodicMemory(TimescaleConfig config) : config_(std::move(config)) {
    config_.validate();
    for (auto s : config_.scales_ms) per_scale_.emplace(s, ScaleStore{});
}

EpisodicMemory EpisodicMemory::from_parts(TimescaleConfig config,
                                          std::map<std::int64_t, ScaleStore> per_scale) {
    EpisodicMemory m(std::move(config));
    m.per_scale_ = std::move(per_scale);
    m.validate();
    return m;
}

const ScaleStore& EpisodicMemory::scale(std::int64_t scale_ms) const {
    auto it = per_scale_.find(scale_ms);
    if (it == per_scale_.end()) {
        throw Error(ErrorCode::InvalidArgument, "scale " + std::to_string(scale_ms) + " ms is not configured");
    }
    return it->second;
}

const Segment* EpisodicMemory::find_segment(std::string_view id) const {
    for (const auto& [_, store] : per_scale_) {
        auto it = store.segments.find(std::string(id));
        if (it != store.segments.end()) return &it->second;
    }
    return nullptr;
}

std::size_t EpisodicMemory::segment_count() const {
    std::size_t n = 0;
    for (const auto& [_, s] : per_scale_) n += s.segments.size();
    return n;
}

std::size_t EpisodicMemory::triplet_count() const {
    std::size_t n = 0;
    for (const auto& [_, s] : per_scale_) n += s.graph.edge_count();
    return n;
}

void EpisodicMemory::check_segment(const Segment& segment) const {
    if (!per_scale_.contains(segment.scale_ms)) {
        throw Error(ErrorCode::InvalidArgument, "segment '" + segment.id + "' has unconfigured scale " +
                                                    std::to_string(segment.scale_ms));
    }
    if (segment.id.empty()) throw Error(ErrorCode::InvalidArgument, "segment id is empty");
    if (!segment.range.valid()) {
        throw Error(ErrorCode::InvalidArgument, "segment '" + segment.id + "' has an invalid range");
    }
    if (segment.range.duration() > segment.scale_ms) {
        throw Error(ErrorCode::InvalidArgument,
                    "segment '" + segment.id + "' is longer than its scale");
    }
    if (segment.caption.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "segment '" + segment.id + "' has an empty caption");
    }
}

UpsertReport EpisodicMemory::insert(const Segment& segment, std::span<const Triplet> triplets) {
    check_segment(segment);
    if (find_segment(segment.id)) {
        throw Error(ErrorCode::InvalidArgument, "duplicate segment id '" + segment.id + "'");
    }
    const Provenance expected{{segment.id, segment.range.start_ms}};
    for (const auto& t : triplets) {
        if (t.provenance != expected || t.kind != TripletKind::Episodic) {
            throw Error(ErrorCode::InvalidArgument,
                        "triplet '" + t.text() + "' does not belong to segment '" + segment.id + "'");
        }
    }
    auto& store = per_scale_.at(segment.scale_ms);
    store.segments.emplace(segment.id, segment);
    return store.graph.upsert(triplets);
}

void EpisodicMemory::validate() const {
    config_.validate();
    std::set<std::int64_t> keys;
    for (const auto& [s, _] : per_scale_) keys.insert(s);
    if (keys != std::set<std::int64_t>(config_.scales_ms.begin(), config_.scales_ms.end())) {
        throw Error(ErrorCode::InternalConsistency, "episodic scales differ from the timescale config");
    }
    std::set<std::string> ids;
    for (const auto& [scale_ms, store] : per_scale_) {
        for (const auto& [id, seg] : store.segments) {
            if (seg.id != id || seg.scale_ms != scale_ms) {
                throw Error(ErrorCode::InternalConsistency, "segment '" + id + "' is filed under the wrong key");
            }
            check_segment(seg);
            if (!ids.insert(id).second) {
                throw Error(ErrorCode::InternalConsistency, "segment id '" + id + "' appears twice");
            }
        }
        store.graph.validate();
        for (const auto& [key, t] : store.graph.edges()) {
            if (t.kind != TripletKind::Episodic || t.provenance.empty()) {
                throw Error(ErrorCode::InternalConsistency, "episodic edge without provenance: " + t.text());
            }
            for (const auto& [sid, start] : t.provenance) {
                auto it = store.segments.find(sid);
                if (it == store.segments.end() || it->second.range.start_ms != start) {
                    throw Error(ErrorCode::InternalConsistency,
                                "edge '" + t.text() + "' cites unknown segment '" + sid + "'");
                }
            }
        }
    }
}

namespace {

std::string passage_of(const Segment& segment) {
    std::string p = segment.caption;
    if (segment.transcript && !segment.transcript->empty()) p += "\nTranscript: " + *segment.transcript;
    return p;
}

}  // namespace

EpisodicExtraction extract_episodic(const Segment& segment, ModelBackend& backend,
                                    const TemplateRegistry& templates) {
    EpisodicExtraction out;
    const auto passage = passage_of(segment);
    const auto ner_raw = complete(backend, templates.get(templates::kNer), {{"passage", passage}});
    out.entities = parse_as<EntityList>(ner_raw).entities;

    const auto entities_json = nlohmann::json{{"named_entities", out.entities}}.dump();
    const auto rdf_raw = complete(backend, templates.get(templates::kEpisodicTriples),
                                  {{"passage", passage}, {"named_entities", entities_json}});
    const auto parsed = parse_as<TripleList>(rdf_raw);
    out.dropped = parsed.skipped;

    const Provenance prov{{segment.id, segment.range.start_ms}};
    std::set<TripletKey> seen;
    for (const auto& raw : parsed.triples) {
        try {
            auto t = make_triplet(raw.subject, raw.predicate, raw.object, prov, TripletKind::Episodic);
            if (seen.insert(t.key()).second) out.triplets.push_back(std::move(t));
        } catch (const Error& e) {
            ++out.dropped;
            spdlog::debug("segment {}: dropped triplet: {}", segment.id, e.what());
        }
    }
    return out;
}

namespace {

template <class Fn>
auto guarded(const Segment& segment, Fn&& fn) {
    try {
        return fn();
    } catch (const BackendError& e) {
        throw IngestError(segment.id, "segment '" + segment.id + "': " + e.what());
    } catch (const ParseError& e) {
        throw ParseError("segment '" + segment.id + "': " + e.what(), e.raw(), e.code());
    }
}

IngestReport store_extraction(EpisodicMemory& memory, const Segment& segment,
                              const EpisodicExtraction& ex) {
    IngestReport r;
    r.segment_id = segment.id;
    r.scale_ms = segment.scale_ms;
    r.entities = ex.entities.size();
    r.triplets = ex.triplets.size();
    r.upsert = memory.insert(segment, ex.triplets);
    return r;
}

}  // namespace

IngestReport ingest_segment(EpisodicMemory& memory, const Segment& segment, ModelBackend& backend,
                            const TemplateRegistry& templates) {
    if (segment.caption.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "segment '" + segment.id + "' has an empty caption");
    }
    if (memory.find_segment(segment.id)) {
        throw Error(ErrorCode::InvalidArgument, "duplicate segment id '" + segment.id + "'");
    }
    auto ex = guarded(segment, [&] { return extract_episodic(segment, backend, templates); });
    return store_extraction(memory, segment, ex);
}

IngestReport ingest_fine_segment(EpisodicMemory& memory, const Segment& segment,
                                 ModelBackend& backend, const TemplateRegistry& templates) {
    if (segment.scale_ms != memory.config().fine_scale()) {
        throw Error(ErrorCode::InvalidArgument,
                    "segment '" + segment.id + "' is not at the unit scale");
    }
    return ingest_segment(memory, segment, backend, templates);
}

std::vector<IngestReport> ingest_fine_segments(EpisodicMemory& memory,
                                               std::span<const Segment> segments,
                                               ModelBackend& backend, std::size_t parallelism,
                                               const TemplateRegistry& templates) {
    parallelism = std::max<std::size_t>(1, parallelism);
    std::vector<IngestReport> reports;
    reports.reserve(segments.size());
    for (std::size_t begin = 0; begin < segments.size(); begin += parallelism) {
        const auto end = std::min(segments.size(), begin + parallelism);
        std::vector<std::future<EpisodicExtraction>> batch;
        for (std::size_t i = begin; i < end; ++i) {
            const auto& seg = segments[i];
            if (seg.scale_ms != memory.config().fine_scale()) {
                throw Error(ErrorCode::InvalidArgument, "segment '" + seg.id + "' is not at the unit scale");
            }
            if (seg.caption.find_first_not_of(" \t\r\n") == std::string::npos) {
                throw Error(ErrorCode::InvalidArgument, "segment '" + seg.id + "' has an empty caption");
            }
            auto launch = parallelism == 1 ? std::launch::deferred : std::launch::async;
            batch.push_back(std::async(launch, [&seg, &backend, &templates] {
                return guarded(seg, [&] { return extract_episodic(seg, backend, templates); });
            }));
        }
        for (std::size_t i = begin; i < end; ++i) {
            reports.push_back(store_extraction(memory, segments[i], batch[i - begin].get()));
        }
    }
    return reports;
}

std::string scale_label(std::int64_t scale_ms) {
    if (scale_ms % kHourMs == 0) return std::to_string(scale_ms / kHourMs) + "h";
    if (scale_ms % kMinuteMs == 0) return std::to_string(scale_ms / kMinuteMs) + "min";
    if (scale_ms % kSecondMs == 0) return std::to_string(scale_ms / kSecondMs) + "s";
    return std::to_string(scale_ms) + "ms";
}

std::string coarse_segment_id(std::int64_t scale_ms, const TimeRange& range) {
    return scale_label(scale_ms) + "@" + std::to_string(range.start_ms) + "-" + std::to_string(range.end_ms);
}

std::vector<Segment> constituent_captions(const EpisodicMemory& memory, const TimeRange& range) {
    const auto& fine = memory.scale(memory.config().fine_scale());
    std::vector<Segment> parts;
    for (const auto& [_, seg] : fine.segments) {
        if (range.covers(seg.range)) parts.push_back(seg);
    }
    std::sort(parts.begin(), parts.end(),
              [](const Segment& a, const Segment& b) { return std::tie(a.range, a.id) < std::tie(b.range, b.id); });
    std::vector<TimeGap> gaps;
    auto cursor = range.start_ms;
    for (const auto& p : parts) {
        if (p.range.start_ms > cursor) gaps.push_back({cursor, p.range.start_ms});
        cursor = std::max(cursor, p.range.end_ms);
    }
    if (cursor < range.end_ms) gaps.push_back({cursor, range.end_ms});
    if (!gaps.empty()) {
        std::ostringstream msg;
        msg << "missing unit-scale captions under [" << range.start_ms << ", " << range.end_ms << "):";
        for (const auto& g : gaps) msg << " [" << g.start_ms << ", " << g.end_ms << ")";
        throw DependencyError(msg.str(), std::move(gaps));
    }
    return parts;
}

namespace {

std::string truncate_words(const std::string& text, std::size_t max_words) {
    std::size_t words = 0;
    bool in_word = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const bool space = std::isspace(static_cast<unsigned char>(text[i]));
        if (!space && !in_word) {
            if (++words > max_words) return text.substr(0, text.find_last_not_of(" \t\r\n", i - 1) + 1);
        }
        in_word = !space;
    }
    return text;
}

}  // namespace

IngestReport ingest_coarse_segment(EpisodicMemory& memory, std::int64_t scale_ms,
                                   const TimeRange& range, ModelBackend& backend,
                                   const EpisodicParams& params, const TemplateRegistry& templates) {
    if (!memory.config().has_scale(scale_ms) || scale_ms == memory.config().fine_scale()) {
        throw Error(ErrorCode::InvalidArgument, "coarse ingest needs a configured scale above t_0");
    }
    if (!range.valid() || range.duration() > scale_ms) {
        throw Error(ErrorCode::InvalidArgument, "coarse range does not fit its scale");
    }
    const auto parts = constituent_captions(memory, range);

    std::string listing;
    for (const auto& p : parts) listing += "[" + format_day_range(p.range) + "] " + p.caption + "\n";

    Segment seg;
    seg.id = coarse_segment_id(scale_ms, range);
    seg.range = range;
    seg.scale_ms = scale_ms;
    auto summary = guarded(seg, [&] {
        return parse_as<FreeText>(
                   complete(backend, templates.get(templates::kCoarseCaption), {{"captions", listing}}))
            .text;
    });
    const auto truncated = truncate_words(summary, params.max_coarse_words);
    if (truncated.size() != summary.size()) {
        spdlog::warn("coarse caption {} exceeded {} words, truncated", seg.id, params.max_coarse_words);
    }
    seg.caption = truncated;
    if (seg.caption.empty()) throw IngestError(seg.id, "summarizer returned an empty caption for " + seg.id);
    return ingest_segment(memory, seg, backend, templates);
}

std::vector<IngestReport> build_coarse_scales(EpisodicMemory& memory, ModelBackend& backend,
                                              const EpisodicParams& params,
                                              const TemplateRegistry& templates) {
    std::vector<IngestReport> reports;
    const auto& fine = memory.scale(memory.config().fine_scale());
    if (fine.segments.empty()) return reports;
    std::int64_t total = 0;
    for (const auto& [_, seg] : fine.segments) total = std::max(total, seg.range.end_ms);

    for (auto scale_ms : memory.config().scales_ms) {
        if (scale_ms == memory.config().fine_scale()) continue;
        for (const auto& range : partition_timeline(total, scale_ms)) {
            if (memory.find_segment(coarse_segment_id(scale_ms, range))) continue;
            bool any = false;
            for (const auto& [_, seg] : fine.segments) {
                if (range.covers(seg.range)) {
                    any = true;
                    break;
                }
            }
            if (!any) continue;
            reports.push_back(ingest_coarse_segment(memory, scale_ms, range, backend, params, templates));
        }
    }
    return reports;
}

namespace {

bool candidate_before(const ScaleCandidate& a, const ScaleCandidate& b) {
    if (a.relevance != b.relevance) return a.relevance > b.relevance;
    if (a.segment.range.start_ms != b.segment.range.start_ms)
        return a.segment.range.start_ms < b.segment.range.start_ms;
    if (a.scale_ms != b.scale_ms) return a.scale_ms < b.scale_ms;
    return a.segment.id < b.segment.id;
}

}  // namespace

std::vector<ScaleCandidate> EpisodicRetrieval::ranked() const {
    std::vector<ScaleCandidate> all;
    for (const auto& [_, cands] : by_scale) all.insert(all.end(), cands.begin(), cands.end());
    std::sort(all.begin(), all.end(), candidate_before);
    return all;
}

std::vector<std::string> query_entities(std::string_view query, ModelBackend& backend,
                                        const TemplateRegistry& templates) {
    const auto raw = complete(backend, templates.get(templates::kNer), {{"passage", std::string(query)}});
    auto entities = parse_as<EntityList>(raw).entities;
    std::erase_if(entities, [](const std::string& e) {
        return e.find_first_not_of(" \t\r\n") == std::string::npos;
    });
    if (entities.empty()) entities.emplace_back(query);
    return entities;
}

std::map<std::string, double> segment_relevance(const KnowledgeGraph& graph, const ScoreMap& node_scores) {
    std::map<std::string, std::set<std::string>> nodes_of_segment;
    for (const auto& [key, t] : graph.edges()) {
        for (const auto& [sid, _] : t.provenance) {
            nodes_of_segment[sid].insert(key.subject);
            nodes_of_segment[sid].insert(key.object);
        }
    }
    std::map<std::string, double> out;
    for (const auto& [sid, nodes] : nodes_of_segment) {
        double sum = 0.0;
        for (const auto& n : nodes) {
            auto it = node_scores.find(n);
            if (it != node_scores.end()) sum += it->second;
        }
        out.emplace(sid, sum);
    }
    return out;
}

EpisodicRetrieval episodic_retrieve(const EpisodicMemory& memory, std::string_view query,
                                    const EpisodicParams& params, ModelBackend& backend,
                                    EmbeddingCache* embeddings, const TemplateRegistry& templates) {
    params.validate();
    EpisodicRetrieval out;
    if (memory.empty()) {
        out.empty_memory = true;
        return out;
    }
    out.query_entities = query_entities(query, backend, templates);
    Embedder embed;
    if (embeddings) embed = [embeddings](const std::string& s) { return embeddings->get(s); };

    for (const auto& [scale_ms, store] : memory.scales()) {
        auto& bucket = out.by_scale[scale_ms];
        if (store.graph.empty()) {
            out.unseeded_scales.push_back(scale_ms);
            continue;
        }
        const auto match = match_seed_nodes(store.graph, out.query_entities, embed, params.node_match_threshold);
        if (match.seeds.empty()) {
            out.unseeded_scales.push_back(scale_ms);
            continue;
        }
        const auto scores = ppr(store.graph, match.seeds, params.ppr);
        if (!scores.converged) {
            spdlog::warn("PPR at scale {} stopped after {} iterations (residual {:.3g})",
                         scale_label(scale_ms), scores.iterations, scores.residual);
        }
        for (const auto& [sid, rel] : segment_relevance(store.graph, scores.scores)) {
            if (!(rel > 0.0)) continue;
            auto seg = store.segments.find(sid);
            if (seg == store.segments.end()) continue;
            bucket.push_back({seg->second, scale_ms, rel});
        }
        std::sort(bucket.begin(), bucket.end(), candidate_before);
        if (bucket.size() > params.k_per_scale) bucket.resize(params.k_per_scale);
    }
    return out;
}

std::string render_rerank_captions(std::span<const ScaleCandidate> candidates) {
    std::string out;
    for (const auto& c : candidates) {
        out += "ID: " + c.segment.id + " | granularity: " + scale_label(c.scale_ms) + " | " +
               format_day_timestamp(c.segment.range.start_ms) + " to " +
               format_day_timestamp(c.segment.range.end_ms) + "\n" + c.segment.caption + "\n\n";
    }
    return out;
}

RerankResult cross_scale_rerank(std::string_view query, std::span<const ScaleCandidate> candidates,
                                std::size_t m, ModelBackend& backend, const TemplateRegistry& templates) {
    RerankResult out;
    if (candidates.empty() || m == 0) return out;
    if (candidates.size() == 1) {
        out.segments.push_back(candidates.front().segment);
        return out;
    }
    std::map<std::string, const ScaleCandidate*> by_id;
    for (const auto& c : candidates) by_id.emplace(c.segment.id, &c);

    const auto raw = complete(backend, templates.get(templates::kRerank),
                              {{"question", std::string(query)}, {"captions", render_rerank_captions(candidates)}});
    std::vector<std::string> ids;
    try {
        ids = parse_as<IdArray>(raw).ids;
    } catch (const ParseError& e) {
        spdlog::warn("reranker output unusable: {}", e.what());
    }
    std::set<std::string> taken;
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            out.dropped_ids.push_back(id);
            continue;
        }
        if (!taken.insert(id).second) continue;
        if (out.segments.size() < m) out.segments.push_back(it->second->segment);
    }
    if (!out.dropped_ids.empty()) {
        spdlog::info("reranker named {} unknown caption id(s)", out.dropped_ids.size());
    }
    if (out.segments.empty()) {
        out.fallback = true;
        std::vector<ScaleCandidate> all(candidates.begin(), candidates.end());
        std::sort(all.begin(), all.end(), candidate_before);
        for (std::size_t i = 0; i < all.size() && i < m; ++i) out.segments.push_back(all[i].segment);
    }
    return out;
}

}  // namespace mmem
