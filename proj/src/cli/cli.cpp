#include "mmem/cli/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>
#include <set>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "mmem/backends/remote.hpp"
#include "mmem/backends/scripted.hpp"
#include "mmem/error.hpp"
#include "mmem/eval/eval.hpp"
#include "mmem/store/snapshot.hpp"
#include "mmem/util/digest.hpp"

namespace mmem::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::Configuration:
            return kConfigError;
        case ErrorCode::Backend:
        case ErrorCode::Ingest:
            return kBackendError;
        case ErrorCode::InternalConsistency:
            return kInternalError;
        default:
            return kInputError;
    }
}

std::int64_t parse_duration_ms(const json& value) {
    if (value.is_number_integer()) return value.get<std::int64_t>();
    if (!value.is_string()) throw Error(ErrorCode::Configuration, "duration must be a string or integer ms");
    static const std::regex re(R"(^\s*([0-9]+)\s*(ms|s|m|min|h)?\s*$)");
    const auto text = value.get<std::string>();
    std::smatch m;
    if (!std::regex_match(text, m, re)) throw Error(ErrorCode::Configuration, "bad duration '" + text + "'");
    const auto n = std::stoll(m[1].str());
    const auto unit = m[2].str();
    if (unit.empty() || unit == "ms") return n;
    if (unit == "s") return n * kSecondMs;
    if (unit == "m" || unit == "min") return n * kMinuteMs;
    return n * kHourMs;
}

void CliConfig::validate() const {
    timescales.validate();
    agent.validate();
    if (parallelism == 0) throw Error(ErrorCode::Configuration, "parallelism must be >= 1");
    for (const auto& [role, name] : roles) {
        static const std::set<std::string> known{"extractor", "embedder", "retriever", "responder", "describer"};
        if (!known.contains(role)) throw Error(ErrorCode::Configuration, "unknown backend role '" + role + "'");
        if (!backends.contains(name)) {
            throw Error(ErrorCode::Configuration, "role " + role + " names undefined backend '" + name + "'");
        }
    }
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

template <class T>
void read_opt(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

CliConfig load_cli_config(const std::optional<fs::path>& path) {
    CliConfig c;
    c.backends["scripted"] = json{{"type", "scripted"}};
    for (const auto* role : {"extractor", "embedder", "retriever", "responder", "describer"}) c.roles[role] = "scripted";
    if (!path) {
        c.validate();
        return c;
    }
    std::ifstream in(*path);
    if (!in) throw Error(ErrorCode::Configuration, "cannot open config " + path->string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::Configuration, "config is not a JSON object");
    c.base_dir = path->parent_path();
    try {
        if (j.contains("timescales")) {
            const auto& t = j.at("timescales");
            if (t.contains("scales")) {
                c.timescales.scales_ms.clear();
                for (const auto& s : t.at("scales")) c.timescales.scales_ms.push_back(parse_duration_ms(s));
            }
            if (t.contains("semantic_window")) c.timescales.semantic_scale_ms = parse_duration_ms(t.at("semantic_window"));
            if (t.contains("visual_segment")) c.timescales.visual_scale_ms = parse_duration_ms(t.at("visual_segment"));
        }
        if (j.contains("retrieval")) {
            const auto& r = j.at("retrieval");
            read_opt(r, "k_per_scale", c.agent.episodic.k_per_scale);
            read_opt(r, "rerank_m", c.agent.episodic.rerank_m);
            read_opt(r, "node_match_threshold", c.agent.episodic.node_match_threshold);
            read_opt(r, "node_match_threshold", c.agent.semantic.node_match_threshold);
            read_opt(r, "max_coarse_words", c.agent.episodic.max_coarse_words);
            read_opt(r, "semantic_k", c.agent.semantic.k);
            read_opt(r, "consolidation_threshold", c.agent.semantic.match_threshold);
            read_opt(r, "max_iters", c.agent.budget);
            read_opt(r, "visual_k", c.agent.visual_k);
            read_opt(r, "max_frames", c.agent.max_frames);
            if (r.contains("memories")) c.agent.mask = MemoryMask::parse(r.at("memories").get<std::string>());
            if (r.contains("ppr")) {
                PprParams p;
                read_opt(r.at("ppr"), "damping", p.damping);
                read_opt(r.at("ppr"), "tolerance", p.tolerance);
                read_opt(r.at("ppr"), "max_power_iters", p.max_power_iters);
                c.agent.episodic.ppr = p;
                c.agent.semantic.ppr = p;
            }
        }
        read_opt(j, "parallelism", c.parallelism);
        if (j.contains("backends")) {
            c.backends.clear();
            for (const auto& [name, spec] : j.at("backends").items()) c.backends[name] = spec;
        }
        if (j.contains("roles")) {
            for (const auto& [role, name] : j.at("roles").items()) c.roles[role] = name.get<std::string>();
        }
        if (j.contains("prompt_dir")) c.prompt_dir = resolve(c.base_dir, j.at("prompt_dir").get<std::string>());
        if (j.contains("dispatch_journal")) {
            c.dispatch_journal = resolve(c.base_dir, j.at("dispatch_journal").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Configuration, std::string("bad config value: ") + e.what());
    } catch (const Error& e) {
        throw Error(ErrorCode::Configuration, e.what());
    }
    c.validate();
    return c;
}

void apply_role_overrides(CliConfig& config, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == o.size()) {
            throw Error(ErrorCode::Configuration, "--backend-role expects role=name, got '" + o + "'");
        }
        config.roles[o.substr(0, eq)] = o.substr(eq + 1);
    }
    config.validate();
}

namespace {

std::shared_ptr<ModelBackend> make_backend(const CliConfig& c, const std::string& name) {
    const auto& spec = c.backends.at(name);
    const auto type = spec.value("type", std::string());
    try {
        if (type == "scripted") {
            auto b = std::make_shared<ScriptedBackend>(spec.value("embedding_dim", kScriptedEmbeddingDim),
                                                       spec.value("seed", std::uint64_t{0}));
            if (spec.contains("fixture")) {
                for (const auto& f : spec.at("fixture").is_array() ? spec.at("fixture") : json::array({spec.at("fixture")})) {
                    b->load_file(resolve(c.base_dir, f.get<std::string>()));
                }
            }
            b->set_multimodal(spec.value("multimodal", true));
            return b;
        }
        if (type == "remote") {
            RemoteConfig rc;
            rc.endpoint = spec.at("endpoint").get<std::string>();
            rc.chat_model = spec.value("chat_model", std::string());
            rc.embedding_model = spec.value("embedding_model", std::string());
            rc.timeout_seconds = spec.value("timeout_seconds", 120);
            rc.max_in_flight = spec.value("max_in_flight", 4);
            rc.multimodal = spec.value("multimodal", true);
            if (spec.contains("endpoint_env")) {
                if (const char* v = std::getenv(spec.at("endpoint_env").get<std::string>().c_str())) rc.endpoint = v;
            }
            if (spec.contains("api_key_env")) {
                const auto var = spec.at("api_key_env").get<std::string>();
                const char* key = std::getenv(var.c_str());
                if (!key) throw Error(ErrorCode::Configuration, "backend '" + name + "': environment variable " + var + " is unset");
                rc.api_key = key;
            }
            return std::make_shared<RemoteBackend>(rc);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Configuration, "backend '" + name + "': " + e.what());
    }
    throw Error(ErrorCode::Configuration, "backend '" + name + "' has unknown type '" + type + "'");
}

}  // namespace

ResolvedBackends make_backends(const CliConfig& config) {
    ResolvedBackends out;
    if (config.dispatch_journal) out.journal = std::make_shared<DispatchJournal>(*config.dispatch_journal);
    std::map<std::string, std::shared_ptr<ModelBackend>> built;
    auto get = [&](const std::string& role) -> std::shared_ptr<ModelBackend> {
        auto it = config.roles.find(role);
        if (it == config.roles.end()) return nullptr;
        auto& b = built[it->second];
        if (!b) {
            b = make_backend(config, it->second);
            if (out.journal) b = std::make_shared<RecordingBackend>(b, out.journal);
        }
        return b;
    };
    out.set.extractor = get("extractor");
    out.set.embedder = get("embedder");
    out.set.retriever = get("retriever");
    out.set.responder = get("responder");
    out.set.describer = get("describer");
    if (!out.set.extractor || !out.set.embedder || !out.set.retriever || !out.set.responder) {
        throw Error(ErrorCode::Configuration, "extractor, embedder, retriever and responder roles must be assigned");
    }
    return out;
}

namespace {

struct Common {
    std::optional<std::string> config_path;
    std::string memories;
    int max_iters = 0;
    std::vector<std::string> roles;
};

CliConfig resolve_config(const Common& common) {
    auto c = load_cli_config(common.config_path ? std::optional<fs::path>(*common.config_path) : std::nullopt);
    if (!common.memories.empty()) c.agent.mask = MemoryMask::parse(common.memories);
    if (common.max_iters > 0) c.agent.budget = common.max_iters;
    apply_role_overrides(c, common.roles);
    c.validate();
    return c;
}

const TemplateRegistry& templates_for(const CliConfig& c, std::optional<TemplateRegistry>& holder) {
    if (!c.prompt_dir) return TemplateRegistry::standard();
    holder = TemplateRegistry::load_dir(*c.prompt_dir);
    return *holder;
}

std::vector<Segment> read_segments(const fs::path& path, const TimescaleConfig& ts) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open segment file " + path.string());
    std::vector<Segment> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ParseError("malformed segment record at " + where, line);
        try {
            Segment s;
            s.id = j.at("id").get<std::string>();
            if (j.contains("range")) {
                auto r = parse_day_range(j.at("range").get<std::string>());
                if (!r) throw ParseError("bad range at " + where, line);
                s.range = *r;
            } else {
                s.range = TimeRange::of(j.at("start_ms").get<std::int64_t>(), j.at("end_ms").get<std::int64_t>());
            }
            s.scale_ms = j.contains("scale") ? parse_duration_ms(j.at("scale")) : ts.fine_scale();
            s.caption = j.at("caption").get<std::string>();
            if (j.contains("transcript")) s.transcript = j.at("transcript").get<std::string>();
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw ParseError("bad segment record at " + where + ": " + e.what(), line);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::Parse) throw;
            throw ParseError(std::string(e.what()) + " at " + where, line, ErrorCode::Validation);
        }
    }
    return out;
}

std::size_t feature_dim(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Configuration, "visual memory enabled but feature file is missing: " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        auto j = json::parse(line, nullptr, false);
        if (j.is_object() && j.contains("vector")) return decode_vector(j.at("vector").get<std::string>()).size();
    }
    return 0;
}

void print_counts(std::ostream& out, const Memories& m) {
    if (m.episodic) {
        for (const auto& [scale, store] : m.episodic->scales()) {
            out << "episodic " << scale_label(scale) << ": " << store.segments.size() << " segments, "
                << store.graph.edge_count() << " triplets, " << store.graph.node_count() << " entities\n";
        }
    }
    if (m.semantic) {
        out << "semantic: generation " << m.semantic->generation() << ", " << m.semantic->graph().edge_count()
            << " triplets\n";
    }
    if (m.visual) {
        out << "visual: " << m.visual->features().size() << " features (d=" << m.visual->dim() << "), "
            << m.visual->frames().size() << " frames\n";
    }
}

int cmd_ingest(const Common& common, const std::string& segments_path, const std::string& features_path,
               const std::string& frames_path, const std::string& snapshot, std::ostream& out, std::ostream& err) {
    auto c = resolve_config(common);
    std::optional<TemplateRegistry> holder;
    const auto& templates = templates_for(c, holder);
    const auto mask = c.agent.mask;
    if (mask.visual && features_path.empty()) {
        throw Error(ErrorCode::Configuration, "visual memory enabled (mask " + mask.to_string() + ") but no --features file");
    }
    auto backends = make_backends(c);

    std::vector<Segment> segments;
    if (!segments_path.empty()) segments = read_segments(segments_path, c.timescales);
    if ((mask.episodic || mask.semantic) && segments_path.empty()) {
        throw Error(ErrorCode::Configuration, "episodic/semantic memory enabled but no --segments file");
    }

    Memories m;
    m.config = c.timescales;
    std::vector<Segment> fine;
    std::set<std::int64_t> provided_scales;
    for (const auto& s : segments) {
        if (!c.timescales.has_scale(s.scale_ms)) {
            throw Error(ErrorCode::Validation, "segment '" + s.id + "' uses unconfigured scale " + std::to_string(s.scale_ms));
        }
        provided_scales.insert(s.scale_ms);
        if (s.scale_ms == c.timescales.fine_scale()) fine.push_back(s);
    }
    if (segments.empty() && !segments_path.empty()) err << "warning: no segments in " << segments_path << "\n";

    if (mask.episodic) {
        EpisodicMemory ep(c.timescales);
        ingest_fine_segments(ep, fine, *backends.set.extractor, c.parallelism, templates);
        for (const auto& s : segments)
            if (s.scale_ms != c.timescales.fine_scale()) ingest_segment(ep, s, *backends.set.extractor, templates);
        // Summarize coarse scales the input did not supply.
        std::int64_t total = 0;
        for (const auto& s : fine) total = std::max(total, s.range.end_ms);
        for (auto scale : c.timescales.scales_ms) {
            if (scale == c.timescales.fine_scale() || provided_scales.contains(scale) || total == 0) continue;
            for (const auto& range : partition_timeline(total, scale)) {
                bool any = false;
                for (const auto& s : fine) any = any || range.covers(s.range);
                if (any) ingest_coarse_segment(ep, scale, range, *backends.set.extractor, c.agent.episodic, templates);
            }
        }
        m.episodic = std::move(ep);
    }
    if (mask.semantic) {
        EmbeddingCache cache(*backends.set.embedder);
        m.semantic = build_semantic(fine, c.timescales.semantic_scale_ms, *backends.set.extractor, cache,
                                    c.agent.semantic, templates);
    }
    if (mask.visual) {
        const auto dim = feature_dim(features_path);
        VisualMemory v(c.timescales.visual_scale_ms, dim == 0 ? kScriptedEmbeddingDim : dim);
        load_features(v, features_path);
        if (!frames_path.empty()) load_frames(v, frames_path);
        if (v.features().empty()) err << "warning: no visual features in " << features_path << "\n";
        m.visual = std::move(v);
    }
    const auto digest = save_snapshot(m, snapshot);
    out << "snapshot " << snapshot << "\n" << "digest " << digest << "\n";
    print_counts(out, m);
    return kOk;
}

std::map<char, std::string> parse_choices(const std::vector<std::string>& raw) {
    std::map<char, std::string> out;
    char next = 'A';
    for (const auto& c : raw) {
        if (c.size() >= 2 && c[1] == '=' && std::isupper(static_cast<unsigned char>(c[0]))) {
            out[c[0]] = c.substr(2);
            next = static_cast<char>(c[0] + 1);
        } else {
            out[next++] = c;
        }
    }
    return out;
}

int cmd_query(const Common& common, const std::string& snapshot, const std::string& question,
              const std::vector<std::string>& raw_choices, const std::string& trace_out, std::ostream& out) {
    auto c = resolve_config(common);
    std::optional<TemplateRegistry> holder;
    const auto& templates = templates_for(c, holder);
    const auto memories = load_snapshot(snapshot);
    auto backends = make_backends(c);
    EmbeddingCache cache(*backends.set.embedder);
    const auto choices = parse_choices(raw_choices);

    auto trace = run_agent(question, memories, c.agent, backends.set, cache, templates);
    if (!choices.empty()) respond(trace, choices, backends.set, templates);
    save_trace(trace, trace_out);
    out << "config fingerprint " << fingerprint(fingerprint_config(c.agent, memories.config, backends.set)) << "\n";
    out << render_trace_table(trace, choices);
    out << "trace " << trace_out << "\n";
    return kOk;
}

int cmd_eval(const Common& common, const std::string& snapshot, const std::string& evalset,
             const std::string& report_dir, const std::vector<std::string>& ablation, std::ostream& out) {
    auto c = resolve_config(common);
    std::optional<TemplateRegistry> holder;
    const auto& templates = templates_for(c, holder);
    const auto memories = load_snapshot(snapshot);
    const auto items = load_eval_items(evalset);
    auto backends = make_backends(c);
    EvalConfig ec{c.agent, c.parallelism};

    if (ablation.empty()) {
        const auto report = run_eval(items, memories, ec, backends.set, templates);
        write_report(report, report_dir);
        out << render_summary(report);
    } else {
        std::vector<MemoryMask> masks;
        for (const auto& m : ablation) masks.push_back(MemoryMask::parse(m));
        const auto reports = ablation_matrix(items, memories, masks, ec, backends.set, templates);
        for (const auto& r : reports) {
            write_report(r, fs::path(report_dir) / r.mask);
            out << render_summary(r) << "\n";
        }
        write_ablation_table(reports, report_dir);
    }
    out << "reports " << report_dir << "\n";
    return kOk;
}

int cmd_inspect(const std::string& snapshot, const std::string& show_scale, bool show_semantic, std::ostream& out) {
    const auto m = load_snapshot(snapshot);
    out << "snapshot " << snapshot << "\ndigest " << snapshot_digest(snapshot) << "\n";
    out << "timescales:";
    for (auto s : m.config.scales_ms) out << " " << scale_label(s);
    out << " | semantic window " << scale_label(m.config.semantic_scale_ms) << " | visual segment "
        << scale_label(m.config.visual_scale_ms) << "\n";
    print_counts(out, m);
    if (!show_scale.empty() && m.episodic) {
        const auto scale = parse_duration_ms(json(show_scale));
        for (const auto& [_, t] : m.episodic->scale(scale).graph.edges()) {
            out << "  (" << t.subject << ", " << t.predicate << ", " << t.object << ")";
            for (const auto& [sid, _s] : t.provenance) out << " " << sid;
            out << "\n";
        }
    }
    if (show_semantic && m.semantic) {
        for (const auto& [_, t] : m.semantic->graph().edges()) {
            out << "  (" << t.subject << ", " << t.predicate << ", " << t.object << ")\n";
        }
    }
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multimodal memory engine for long-video question answering"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "Configuration file (JSON)");
        sub->add_option("--memories", common.memories, "Enable mask, e.g. E, E+S, E+S+V");
        sub->add_option("--max-iters", common.max_iters, "Retrieval budget N");
        sub->add_option("--backend-role", common.roles, "Role override role=backend (repeatable)");
    };
    std::string verbosity = "warn";
    app.add_option("--log-level", verbosity, "trace|debug|info|warn|error|off");

    std::string segments, features, frames, snapshot, question, trace_out = "trace.json", evalset,
                report_dir = "report", show_scale;
    std::vector<std::string> choices, ablation;
    bool show_semantic = false;

    auto* ingest = app.add_subcommand("ingest", "Build memories from ingest files and save a snapshot");
    add_common(ingest);
    ingest->add_option("--segments", segments, "Caption segments (JSONL)");
    ingest->add_option("--features", features, "Visual features (JSONL)");
    ingest->add_option("--frames", frames, "Frame manifest (JSONL)");
    ingest->add_option("--snapshot", snapshot, "Snapshot directory to write")->required();

    auto* query = app.add_subcommand("query", "Answer one question against a snapshot");
    add_common(query);
    query->add_option("--snapshot", snapshot, "Snapshot directory")->required();
    query->add_option("--question", question, "Question text")->required();
    query->add_option("--choice", choices, "Choice, 'A=text' or plain text (repeatable)");
    query->add_option("--trace-out", trace_out, "Where to write the machine-readable trace");

    auto* eval = app.add_subcommand("eval", "Evaluate an item set against a snapshot");
    add_common(eval);
    eval->add_option("--snapshot", snapshot, "Snapshot directory")->required();
    eval->add_option("--evalset", evalset, "Eval items (JSONL)")->required();
    eval->add_option("--report-dir", report_dir, "Report output directory");
    eval->add_option("--ablation", ablation, "Masks to compare (repeatable or comma separated)")->delimiter(',');

    auto* inspect = app.add_subcommand("inspect", "Summarize a snapshot");
    inspect->add_option("--snapshot", snapshot, "Snapshot directory")->required();
    inspect->add_option("--triplets", show_scale, "List episodic triplets at this scale (e.g. 30s)");
    inspect->add_flag("--semantic", show_semantic, "List semantic triplets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        spdlog::set_level(spdlog::level::from_str(verbosity));
        if (*ingest) return cmd_ingest(common, segments, features, frames, snapshot, out, err);
        if (*query) return cmd_query(common, snapshot, question, choices, trace_out, out);
        if (*eval) return cmd_eval(common, snapshot, evalset, report_dir, ablation, out);
        if (*inspect) return cmd_inspect(snapshot, show_scale, show_semantic, out);
    } catch (const DependencyError& e) {
        err << "error (dependency): " << e.what() << "\n";
        return kInputError;
    } catch (const Error& e) {
        err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kInternalError;
    }
    return kUsage;
}

}  // namespace mmem::cli
