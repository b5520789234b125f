#include "mmem/agent/agent.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "mmem/backends/structured.hpp"
#include "mmem/error.hpp"

namespace mmem {

using nlohmann::json;

RetrievalAction RetrievalAction::search(MemoryKind kind, std::string query) {
    if (query.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "search action needs a non-empty query");
    }
    return {false, kind, std::move(query)};
}

std::string_view to_string(EvidenceKind kind) {
    switch (kind) {
        case EvidenceKind::Caption: return "caption";
        case EvidenceKind::Triplet: return "triplet";
        case EvidenceKind::Frames: return "frames";
    }
    return "unknown";
}

std::string_view to_string(StopReason reason) {
    return reason == StopReason::ModelStop ? "model-stop" : "budget-exhausted";
}

std::size_t AgentTrace::search_rounds() const {
    return static_cast<std::size_t>(
        std::count_if(rounds.begin(), rounds.end(), [](const RetrievalRound& r) { return !r.action.stop; }));
}

std::map<MemoryKind, std::size_t> AgentTrace::usage() const {
    std::map<MemoryKind, std::size_t> out{{MemoryKind::Episodic, 0}, {MemoryKind::Semantic, 0}, {MemoryKind::Visual, 0}};
    for (const auto& r : rounds)
        if (!r.action.stop && !r.rejected) ++out[r.action.kind];
    return out;
}

std::vector<TimeRange> AgentTrace::retrieved_ranges() const {
    std::vector<TimeRange> out;
    for (const auto& r : rounds)
        for (const auto& e : r.evidence)
            if (e.range) out.push_back(*e.range);
    return out;
}

std::vector<TimeRange> AgentTrace::last_round_ranges() const {
    for (auto it = rounds.rbegin(); it != rounds.rend(); ++it) {
        std::vector<TimeRange> out;
        for (const auto& e : it->evidence)
            if (e.range) out.push_back(*e.range);
        if (!out.empty()) return out;
    }
    return {};
}

namespace {

json evidence_to_json(const EvidenceItem& e) {
    json frames = json::array();
    for (const auto& f : e.frames) frames.push_back({{"t", f.timestamp_ms}, {"locator", f.locator}});
    json j{{"kind", to_string(e.kind)}, {"id", e.id},     {"text", e.text},
           {"score", e.score},          {"frames", frames}};
    if (e.range) {
        j["start_ms"] = e.range->start_ms;
        j["end_ms"] = e.range->end_ms;
    }
    if (e.kind == EvidenceKind::Caption) j["scale_ms"] = e.scale_ms;
    return j;
}

EvidenceItem evidence_from_json(const json& j) {
    EvidenceItem e;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "caption") e.kind = EvidenceKind::Caption;
    else if (kind == "triplet") e.kind = EvidenceKind::Triplet;
    else if (kind == "frames") e.kind = EvidenceKind::Frames;
    else throw Error(ErrorCode::Parse, "unknown evidence kind '" + kind + "'");
    e.id = j.at("id").get<std::string>();
    e.text = j.at("text").get<std::string>();
    e.score = j.at("score").get<double>();
    for (const auto& f : j.at("frames")) e.frames.push_back({f.at("t").get<std::int64_t>(), f.at("locator").get<std::string>()});
    if (j.contains("start_ms")) e.range = TimeRange::of(j.at("start_ms").get<std::int64_t>(), j.at("end_ms").get<std::int64_t>());
    if (j.contains("scale_ms")) e.scale_ms = j.at("scale_ms").get<std::int64_t>();
    return e;
}

}  // namespace

json trace_to_json(const AgentTrace& trace) {
    json rounds = json::array();
    for (const auto& r : trace.rounds) {
        json jr{{"index", r.index}, {"decision", r.action.stop ? "answer" : "search"}};
        if (!r.action.stop) {
            jr["memory"] = to_string(r.action.kind);
            jr["query"] = r.action.query;
        }
        if (r.forced) jr["forced"] = true;
        if (r.rejected) jr["rejected"] = true;
        json ev = json::array();
        for (const auto& e : r.evidence) ev.push_back(evidence_to_json(e));
        jr["evidence"] = ev;
        if (r.error) jr["error"] = *r.error;
        if (!r.notes.empty()) jr["notes"] = r.notes;
        if (r.elapsed_ms) jr["elapsed_ms"] = *r.elapsed_ms;
        rounds.push_back(std::move(jr));
    }
    return json{{"format", "mmem-trace/1"},
                {"query", trace.query},
                {"budget", trace.budget},
                {"mask", trace.mask.to_string()},
                {"rounds", rounds},
                {"stop_reason", to_string(trace.stop_reason)},
                {"degraded_decision", trace.degraded_decision},
                {"frames_described", trace.frames_described},
                {"answer", trace.answer ? json(std::string(1, *trace.answer)) : json(nullptr)},
                {"unanswered", trace.unanswered}};
}

AgentTrace trace_from_json(const json& j) {
    try {
        if (j.at("format") != "mmem-trace/1") throw Error(ErrorCode::UnsupportedVersion, "unknown trace format");
        AgentTrace t;
        t.query = j.at("query").get<std::string>();
        t.budget = j.at("budget").get<int>();
        t.mask = MemoryMask::parse(j.at("mask").get<std::string>());
        for (const auto& jr : j.at("rounds")) {
            RetrievalRound r;
            r.index = jr.at("index").get<int>();
            if (jr.at("decision") == "search") {
                const auto kind = memory_kind_from_string(jr.at("memory").get<std::string>());
                if (!kind) throw Error(ErrorCode::Parse, "unknown memory in trace");
                r.action = RetrievalAction{false, *kind, jr.at("query").get<std::string>()};
            }
            r.forced = jr.value("forced", false);
            r.rejected = jr.value("rejected", false);
            for (const auto& e : jr.at("evidence")) r.evidence.push_back(evidence_from_json(e));
            if (jr.contains("error")) r.error = jr.at("error").get<std::string>();
            if (jr.contains("notes")) r.notes = jr.at("notes").get<std::vector<std::string>>();
            if (jr.contains("elapsed_ms")) r.elapsed_ms = jr.at("elapsed_ms").get<double>();
            t.rounds.push_back(std::move(r));
        }
        const auto reason = j.at("stop_reason").get<std::string>();
        t.stop_reason = reason == "budget-exhausted" ? StopReason::BudgetExhausted : StopReason::ModelStop;
        t.degraded_decision = j.at("degraded_decision").get<bool>();
        t.frames_described = j.at("frames_described").get<bool>();
        if (!j.at("answer").is_null()) t.answer = j.at("answer").get<std::string>().at(0);
        t.unanswered = j.at("unanswered").get<bool>();
        return t;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("malformed trace: ") + e.what());
    }
}

std::string serialize_trace(const AgentTrace& trace) { return trace_to_json(trace).dump(2) + "\n"; }

namespace {

std::string render_item(const EvidenceItem& e) {
    switch (e.kind) {
        case EvidenceKind::Caption:
            return "[" + format_day_range(*e.range) + "] " + e.text;
        case EvidenceKind::Triplet:
            return "[" + e.text + "]";
        case EvidenceKind::Frames: {
            std::string out = "[" + (e.range ? format_day_range(*e.range) : e.id) + "] " +
                              std::to_string(e.frames.size()) + " frame(s)";
            if (!e.frames.empty()) {
                out += " at";
                for (const auto& f : e.frames) out += " " + format_day_timestamp(f.timestamp_ms);
            }
            if (!e.text.empty()) out += "\nFrame description: " + e.text;
            return out;
        }
    }
    return {};
}

std::string cap(std::string_view s) {
    std::string out(s);
    if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out;
}

}  // namespace

std::string render_round_history(const std::vector<RetrievalRound>& rounds) {
    std::string out;
    for (const auto& r : rounds) {
        if (r.action.stop) continue;
        out += "### Round " + std::to_string(r.index) + "\n";
        out += "Decision: search\n";
        out += "Memory: " + std::string(to_string(r.action.kind)) + "\n";
        out += "Search Query: " + r.action.query + "\n";
        if (r.error) {
            out += "Retrieved: (error) " + *r.error + "\n\n";
        } else if (r.evidence.empty()) {
            out += "Retrieved: (nothing found)\n\n";
        } else {
            out += "Retrieved:\n";
            for (const auto& e : r.evidence) out += render_item(e) + "\n";
            out += "\n";
        }
    }
    return out.empty() ? "(no rounds yet)\n" : out;
}

std::string render_choices(const std::map<char, std::string>& choices) {
    std::string out;
    for (const auto& [letter, text] : choices) out += std::string("(") + letter + ") " + text + "\n";
    return out;
}

std::string render_trace_table(const AgentTrace& trace, const std::map<char, std::string>& choices) {
    std::ostringstream out;
    auto row = [&](const std::string& label, const std::string& body) {
        std::istringstream lines(body);
        std::string line;
        bool first = true;
        while (std::getline(lines, line)) {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%-10s", first ? label.c_str() : "");
            out << buf << "| " << line << "\n";
            first = false;
        }
        if (first) out << label << "\n";
    };
    const std::string rule(72, '-');
    row("Question", trace.query);
    if (!choices.empty()) {
        std::string line;
        for (const auto& [l, t] : choices) line += std::string(line.empty() ? "" : " ") + "(" + l + ") " + t;
        row("", line);
    }
    out << rule << "\n";
    for (const auto& r : trace.rounds) {
        const auto label = "Round " + std::to_string(r.index);
        if (r.action.stop) {
            row(label, std::string("Decision: Answer") + (r.forced ? " (budget exhausted)" : ""));
        } else {
            std::string body = "Decision: Search // Memory: " + cap(to_string(r.action.kind)) + "\n" +
                               "Search Query: " + r.action.query + "\n";
            if (r.error) body += "Error: " + *r.error + "\n";
            if (!r.rejected) body += "Retrieved:\n";
            for (const auto& e : r.evidence) body += render_item(e) + "\n";
            row(label, body);
        }
        out << rule << "\n";
    }
    row("Response", trace.answer ? std::string(1, *trace.answer) : std::string("(unanswered)"));
    return out.str();
}

void AgentConfig::validate() const {
    if (budget < 1) throw Error(ErrorCode::Configuration, "agent budget must be >= 1");
    if (!mask.any()) throw Error(ErrorCode::Configuration, "memory mask enables nothing");
    if (visual_k == 0) throw Error(ErrorCode::Configuration, "visual_k must be >= 1");
    episodic.validate();
    semantic.validate();
}

Decision decide(std::string_view query, const std::vector<RetrievalRound>& history, ModelBackend& backend,
                const TemplateRegistry& templates) {
    Decision d;
    try {
        const auto raw = complete(backend, templates.get(templates::kRetrievalAgent),
                                  {{"query", std::string(query)}, {"round_history", render_round_history(history)}});
        const auto parsed = parse_as<AgentDecision>(raw);
        if (!parsed.search) return d;
        const auto kind = memory_kind_from_string(parsed.memory_type);
        if (!kind) throw ParseError("unknown memory type '" + parsed.memory_type + "'", raw, ErrorCode::Validation);
        d.action = RetrievalAction::search(*kind, parsed.query);
    } catch (const ParseError& e) {
        spdlog::warn("retrieval decision unusable, stopping: {}", e.what());
        d.action = RetrievalAction::halt();
        d.degraded = true;
        d.detail = e.what();
    }
    return d;
}

namespace {

void describe(EvidenceItem& item, std::string_view question, const BackendSet& backends,
              const TemplateRegistry& templates, std::vector<std::string>& notes) {
    if (item.frames.empty() || !backends.describer) return;
    if (!backends.describer->info().multimodal) {
        notes.push_back("describer is text-only; frames left undescribed");
        return;
    }
    std::vector<FramePayload> payload;
    for (const auto& f : item.frames) payload.push_back({f.timestamp_ms, f.locator});
    const auto raw = complete(*backends.describer, templates.get(templates::kDescribeFrames),
                              {{"time_range", format_day_range(*item.range)}, {"focus", std::string(question)}},
                              payload);
    item.text = parse_as<FreeText>(raw).text;
}

std::string join_scales(const std::vector<std::int64_t>& scales) {
    std::string out;
    for (auto s : scales) out += (out.empty() ? "" : ", ") + scale_label(s);
    return out;
}

void dispatch_episodic(RetrievalRound& round, const Memories& memories, const AgentConfig& config,
                       const BackendSet& backends, EmbeddingCache& embeddings, const TemplateRegistry& templates) {
    const auto& q = round.action.query;
    const auto result =
        episodic_retrieve(*memories.episodic, q, config.episodic, *backends.extractor, &embeddings, templates);
    if (result.empty_memory) {
        round.notes.push_back("episodic memory is empty");
        return;
    }
    if (!result.unseeded_scales.empty()) round.notes.push_back("unseeded scales: " + join_scales(result.unseeded_scales));
    const auto candidates = result.ranked();
    const auto rerank = cross_scale_rerank(q, candidates, config.episodic.rerank_m, *backends.retriever, templates);
    if (rerank.fallback) round.notes.push_back("reranker gave no usable ids; relevance order used");
    for (const auto& id : rerank.dropped_ids) round.notes.push_back("reranker named unknown id " + id);
    for (const auto& seg : rerank.segments) {
        EvidenceItem e;
        e.kind = EvidenceKind::Caption;
        e.id = seg.id;
        e.range = seg.range;
        e.scale_ms = seg.scale_ms;
        e.text = seg.caption;
        for (const auto& c : candidates)
            if (c.segment.id == seg.id) e.score = c.relevance;
        round.evidence.push_back(std::move(e));
    }
}

void dispatch_semantic(RetrievalRound& round, const Memories& memories, const AgentConfig& config,
                       const BackendSet& backends, EmbeddingCache& embeddings, const TemplateRegistry& templates) {
    const auto result = semantic_retrieve(*memories.semantic, round.action.query, config.semantic,
                                          *backends.extractor, &embeddings, templates);
    if (result.empty_memory) round.notes.push_back("semantic memory is empty");
    if (result.no_seed) round.notes.push_back("no query entity matched the semantic graph");
    for (const auto& st : result.triplets) {
        EvidenceItem e;
        e.kind = EvidenceKind::Triplet;
        e.id = st.triplet.text();
        e.text = st.triplet.subject + ", " + st.triplet.predicate + ", " + st.triplet.object;
        e.score = st.score;
        round.evidence.push_back(std::move(e));
    }
}

void dispatch_visual(RetrievalRound& round, std::string_view question, const Memories& memories,
                     const AgentConfig& config, const BackendSet& backends, EmbeddingCache& embeddings,
                     const TemplateRegistry& templates) {
    const auto& visual = *memories.visual;
    const auto& q = round.action.query;
    if (auto range = parse_day_range(q)) {
        round.notes.push_back("timestamp mode");
        EvidenceItem e;
        e.kind = EvidenceKind::Frames;
        e.id = format_day_range(*range);
        e.range = *range;
        e.frames = visual.timestamp_fetch(*range, config.max_frames);
        if (e.frames.empty()) {
            round.notes.push_back("no frames stored in range");
            return;
        }
        describe(e, question, backends, templates, round.notes);
        round.evidence.push_back(std::move(e));
        return;
    }
    round.notes.push_back("feature mode");
    const auto query_vector = embeddings.get(q);
    for (const auto& hit : visual.feature_search(query_vector, config.visual_k)) {
        EvidenceItem e;
        e.kind = EvidenceKind::Frames;
        e.id = hit.segment_id;
        e.range = hit.range;
        e.score = hit.similarity;
        e.frames = visual.timestamp_fetch(hit.range, config.max_frames);
        describe(e, question, backends, templates, round.notes);
        round.evidence.push_back(std::move(e));
    }
}

void check_backends(const BackendSet& b) {
    if (!b.extractor || !b.embedder || !b.retriever || !b.responder) {
        throw Error(ErrorCode::Configuration, "extractor, embedder, retriever and responder backends are required");
    }
}

}  // namespace

RetrievalRound dispatch(const RetrievalAction& action, std::string_view question, const Memories& memories,
                        const AgentConfig& config, const BackendSet& backends, EmbeddingCache& embeddings,
                        const TemplateRegistry& templates) {
    check_backends(backends);
    RetrievalRound round;
    round.action = action;
    if (action.stop) return round;
    try {
        if (!memories.has(action.kind)) {
            throw Error(ErrorCode::Configuration, std::string(to_string(action.kind)) + " memory was not built");
        }
        switch (action.kind) {
            case MemoryKind::Episodic: dispatch_episodic(round, memories, config, backends, embeddings, templates); break;
            case MemoryKind::Semantic: dispatch_semantic(round, memories, config, backends, embeddings, templates); break;
            case MemoryKind::Visual:
                dispatch_visual(round, question, memories, config, backends, embeddings, templates);
                break;
        }
    } catch (const std::exception& e) {
        spdlog::warn("{} retrieval failed: {}", to_string(action.kind), e.what());
        round.evidence.clear();
        round.error = e.what();
    }
    return round;
}

AgentTrace run_agent(std::string_view query, const Memories& memories, const AgentConfig& config,
                     const BackendSet& backends, EmbeddingCache& embeddings, const TemplateRegistry& templates) {
    config.validate();
    check_backends(backends);
    memories.require(config.mask);

    AgentTrace trace;
    trace.query = std::string(query);
    trace.budget = config.budget;
    trace.mask = config.mask;
    using clock = std::chrono::steady_clock;

    for (int i = 1;; ++i) {
        if (i > config.budget) {
            RetrievalRound stop;
            stop.index = i;
            stop.forced = true;
            trace.rounds.push_back(std::move(stop));
            trace.stop_reason = StopReason::BudgetExhausted;
            break;
        }
        const auto t0 = clock::now();
        auto d = decide(query, trace.rounds, *backends.retriever, templates);
        RetrievalRound round;
        if (d.action.stop) {
            round.index = i;
            if (d.degraded) {
                trace.degraded_decision = true;
                round.error = "degraded decision: " + d.detail;
            }
        } else if (!config.mask.has(d.action.kind)) {
            round.index = i;
            round.action = d.action;
            round.rejected = true;
            round.error = std::string(to_string(d.action.kind)) + " memory is disabled for this run; choose another";
        } else {
            round = dispatch(d.action, query, memories, config, backends, embeddings, templates);
            round.index = i;
        }
        if (config.record_timings) {
            round.elapsed_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        }
        const bool stop = round.action.stop;
        trace.rounds.push_back(std::move(round));
        if (stop) {
            trace.stop_reason = StopReason::ModelStop;
            break;
        }
    }
    return trace;
}

std::optional<char> respond(AgentTrace& trace, const std::map<char, std::string>& choices,
                            const BackendSet& backends, const TemplateRegistry& templates) {
    if (choices.empty()) throw Error(ErrorCode::InvalidArgument, "question has no choices");
    trace.answer.reset();
    trace.unanswered = false;
    if (choices.size() == 1) {
        trace.answer = choices.begin()->first;
        return trace.answer;
    }
    if (!backends.responder) throw Error(ErrorCode::Configuration, "no responder backend");
    auto& responder = *backends.responder;

    std::vector<FramePayload> frames;
    std::set<std::int64_t> seen;
    bool any_frames = false;
    for (const auto& r : trace.rounds)
        for (const auto& e : r.evidence)
            for (const auto& f : e.frames) {
                any_frames = true;
                if (seen.insert(f.timestamp_ms).second) frames.push_back({f.timestamp_ms, f.locator});
            }
    if (!responder.info().multimodal) {
        trace.frames_described = any_frames;
        frames.clear();
    }

    const auto& tmpl = templates.get(templates::kResponse);
    SlotValues inputs{{"question", trace.query},
                      {"choices", render_choices(choices)},
                      {"context", render_round_history(trace.rounds)}};
    auto attempt = [&](const SlotValues& in) -> std::optional<char> {
        try {
            const auto letter = parse_as<AnswerLetter>(complete(responder, tmpl, in, frames)).letter;
            if (choices.contains(letter)) return letter;
            spdlog::info("responder chose '{}', which is not a choice", letter);
        } catch (const ParseError& e) {
            spdlog::info("responder output has no answer letter: {}", e.what());
        }
        return std::nullopt;
    };
    auto letter = attempt(inputs);
    if (!letter) {
        std::string valid;
        for (const auto& [l, _] : choices) valid += std::string(valid.empty() ? "" : ", ") + l;
        inputs["question"] = trace.query + "\nAnswer with exactly one letter from: " + valid + ".";
        letter = attempt(inputs);
    }
    trace.answer = letter;
    trace.unanswered = !letter;
    return letter;
}

}  // namespace mmem
