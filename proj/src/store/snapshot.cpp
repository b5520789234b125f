#include "mmem/store/snapshot.hpp"

#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <system_error>

#include <unistd.h>

#include "mmem/error.hpp"
#include "mmem/util/digest.hpp"

namespace mmem {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "mmem-snapshot";
constexpr const char* kManifest = "MANIFEST.json";

std::string jsonl(const std::vector<json>& records) {
    std::string out;
    for (const auto& r : records) out += r.dump() + "\n";
    return out;
}

std::vector<json> parse_jsonl(const std::string& text, const std::string& name) {
    std::vector<json> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw Error(ErrorCode::Parse, name + ":" + std::to_string(lineno) + ": malformed record");
        }
        out.push_back(std::move(j));
    }
    return out;
}

std::string scale_file(std::int64_t scale_ms, const char* what) {
    return "episodic/scale-" + std::to_string(scale_ms) + "." + what + ".jsonl";
}

json segment_to_json(const Segment& s) {
    json j{{"id", s.id}, {"start_ms", s.range.start_ms}, {"end_ms", s.range.end_ms}, {"caption", s.caption}};
    if (s.transcript) j["transcript"] = *s.transcript;
    return j;
}

Segment segment_from_json(const json& j, std::int64_t scale_ms) {
    Segment s;
    s.id = j.at("id").get<std::string>();
    s.range = TimeRange::of(j.at("start_ms").get<std::int64_t>(), j.at("end_ms").get<std::int64_t>());
    s.scale_ms = scale_ms;
    s.caption = j.at("caption").get<std::string>();
    if (j.contains("transcript")) s.transcript = j.at("transcript").get<std::string>();
    return s;
}

json config_to_json(const Memories& m) {
    json j{{"timescales",
            {{"scales_ms", m.config.scales_ms},
             {"semantic_scale_ms", m.config.semantic_scale_ms},
             {"visual_scale_ms", m.config.visual_scale_ms}}},
           {"episodic", m.episodic.has_value()},
           {"semantic", m.semantic.has_value()},
           {"visual", nullptr}};
    if (m.visual) j["visual"] = {{"dim", m.visual->dim()}, {"visual_scale_ms", m.visual->visual_scale_ms()}};
    return j;
}

json manifest_core(const std::map<std::string, std::string>& files) {
    return json{{"format", kFormat},
                {"format_version", kSnapshotFormatVersion},
                {"digest_algorithm", "sha256"},
                {"files", files}};
}

void write_raw(const fs::path& path, const std::string& contents) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

fs::path sibling(const fs::path& path, const std::string& tag) {
    auto name = path.filename().string();
    if (name.empty()) name = path.parent_path().filename().string();
    return path.parent_path() / (name + "." + tag + "-" + std::to_string(::getpid()));
}

fs::path normalized_target(const fs::path& path) {
    auto p = path.lexically_normal();
    if (p.filename().empty()) p = p.parent_path();
    return p;
}

[[noreturn]] void corrupt(const std::string& why) { throw Error(ErrorCode::DigestMismatch, "snapshot corrupt: " + why); }

}  // namespace

json triplet_to_json(const Triplet& t) {
    return json{{"s", t.subject},
                {"p", t.predicate},
                {"o", t.object},
                {"kind", to_string(t.kind)},
                {"provenance", t.provenance}};
}

Triplet triplet_from_json(const json& j) {
    Triplet t;
    t.subject = j.at("s").get<std::string>();
    t.predicate = j.at("p").get<std::string>();
    t.object = j.at("o").get<std::string>();
    t.kind = triplet_kind_from_string(j.at("kind").get<std::string>());
    t.provenance = j.at("provenance").get<Provenance>();
    return t;
}

json record_to_json(const ConsolidationRecord& r) {
    auto list = [](const std::vector<Triplet>& ts) {
        json a = json::array();
        for (const auto& t : ts) a.push_back(triplet_to_json(t));
        return a;
    };
    json pairs = json::array();
    for (const auto& p : r.match_pairs) {
        pairs.push_back({{"existing", triplet_to_json(p.existing)},
                         {"incoming", triplet_to_json(p.incoming)},
                         {"similarity", p.similarity}});
    }
    return json{{"generation", r.generation}, {"incoming", list(r.incoming)}, {"removed", list(r.removed)},
                {"updated", list(r.updated)},  {"match_pairs", pairs},        {"evidence", r.evidence}};
}

ConsolidationRecord record_from_json(const json& j) {
    ConsolidationRecord r;
    auto list = [](const json& a) {
        std::vector<Triplet> out;
        for (const auto& t : a) out.push_back(triplet_from_json(t));
        return out;
    };
    r.generation = j.at("generation").get<std::int64_t>();
    r.incoming = list(j.at("incoming"));
    r.removed = list(j.at("removed"));
    r.updated = list(j.at("updated"));
    for (const auto& p : j.at("match_pairs")) {
        r.match_pairs.push_back({triplet_from_json(p.at("existing")), triplet_from_json(p.at("incoming")),
                                 p.at("similarity").get<double>()});
    }
    r.evidence = j.at("evidence").get<std::vector<std::vector<int>>>();
    return r;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    const auto tmp = sibling(path, "tmp");
    write_raw(tmp, contents);
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::Io, "cannot move " + tmp.string() + " into place");
    }
}

std::string save_snapshot(const Memories& memories, const fs::path& path) {
    memories.validate();
    std::map<std::string, std::string> payload;
    payload["config.json"] = config_to_json(memories).dump() + "\n";

    if (memories.episodic) {
        for (const auto& [scale_ms, store] : memories.episodic->scales()) {
            std::vector<json> segs, trips;
            for (const auto& [_, s] : store.segments) segs.push_back(segment_to_json(s));
            for (const auto& [_, t] : store.graph.edges()) trips.push_back(triplet_to_json(t));
            payload[scale_file(scale_ms, "segments")] = jsonl(segs);
            payload[scale_file(scale_ms, "triplets")] = jsonl(trips);
        }
    }
    if (memories.semantic) {
        std::vector<json> records, edges;
        for (const auto& r : memories.semantic->journal()) records.push_back(record_to_json(r));
        for (const auto& [_, t] : memories.semantic->graph().edges()) edges.push_back(triplet_to_json(t));
        payload["semantic/journal.jsonl"] = jsonl(records);
        payload["semantic/graph.jsonl"] = jsonl(edges);
    }
    if (memories.visual) {
        std::vector<json> feats, frames;
        for (const auto& e : memories.visual->features()) {
            feats.push_back({{"segment_id", e.segment_id},
                             {"start_ms", e.range.start_ms},
                             {"end_ms", e.range.end_ms},
                             {"vector", encode_vector(e.vector)}});
        }
        for (const auto& f : memories.visual->frames()) {
            frames.push_back({{"timestamp_ms", f.timestamp_ms}, {"locator", f.locator}});
        }
        payload["visual/features.jsonl"] = jsonl(feats);
        payload["visual/frames.jsonl"] = jsonl(frames);
    }

    std::map<std::string, std::string> digests;
    for (const auto& [name, body] : payload) digests[name] = sha256_hex(body);
    auto manifest = manifest_core(digests);
    const auto digest = sha256_hex(manifest.dump());
    manifest["digest"] = digest;

    const auto target = normalized_target(path);
    const auto tmp = sibling(target, "tmp");
    const auto old = sibling(target, "old");
    std::error_code ec;
    fs::remove_all(tmp, ec);
    try {
        for (const auto& [name, body] : payload) write_raw(tmp / name, body);
        write_raw(tmp / kManifest, manifest.dump(2) + "\n");
    } catch (...) {
        fs::remove_all(tmp, ec);
        throw;
    }

    const bool had_previous = fs::exists(target);
    if (had_previous) {
        fs::remove_all(old, ec);
        fs::rename(target, old, ec);
        if (ec) {
            fs::remove_all(tmp, ec);
            throw Error(ErrorCode::Io, "cannot move previous snapshot aside: " + target.string());
        }
    }
    fs::rename(tmp, target, ec);
    if (ec) {
        std::error_code ignore;
        if (had_previous) fs::rename(old, target, ignore);
        fs::remove_all(tmp, ignore);
        throw Error(ErrorCode::Io, "cannot move snapshot into place: " + target.string());
    }
    if (had_previous) fs::remove_all(old, ec);
    return digest;
}

namespace {

struct VerifiedSnapshot {
    json manifest;
    std::map<std::string, std::string> files;  // name -> verified contents
};

VerifiedSnapshot verify(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "no snapshot at " + dir.string());
    const auto text = read_file(dir / kManifest);
    auto manifest = json::parse(text, nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object()) corrupt("manifest is not JSON");
    if (manifest.dump(2) + "\n" != text) corrupt("manifest is not in canonical form");
    static const std::set<std::string> keys{"format", "format_version", "digest_algorithm", "files", "digest"};
    std::set<std::string> have;
    for (const auto& [k, _] : manifest.items()) have.insert(k);
    if (have != keys) corrupt("manifest keys differ from the format");
    if (!manifest["digest"].is_string() || !manifest["files"].is_object()) corrupt("manifest field types");

    static const std::regex hex("^[0-9a-f]{64}$");
    json core = manifest;
    core.erase("digest");
    if (sha256_hex(core.dump()) != manifest["digest"].get<std::string>()) corrupt("manifest digest mismatch");

    if (manifest["format"] != kFormat) corrupt("not a snapshot manifest");
    if (!manifest["format_version"].is_number_integer() ||
        manifest["format_version"].get<std::int64_t>() != kSnapshotFormatVersion) {
        throw Error(ErrorCode::UnsupportedVersion,
                    "snapshot format version " + manifest["format_version"].dump() + " is not supported (expected " +
                        std::to_string(kSnapshotFormatVersion) + ")");
    }
    if (manifest["digest_algorithm"] != "sha256") {
        throw Error(ErrorCode::UnsupportedVersion, "unsupported digest algorithm " + manifest["digest_algorithm"].dump());
    }

    static const std::regex name_re(R"(^(config\.json|episodic/scale-[0-9]+\.(segments|triplets)\.jsonl|semantic/(journal|graph)\.jsonl|visual/(features|frames)\.jsonl)$)");
    VerifiedSnapshot out;
    for (const auto& [name, d] : manifest["files"].items()) {
        if (!std::regex_match(name, name_re)) corrupt("unexpected file entry '" + name + "'");
        if (!d.is_string() || !std::regex_match(d.get<std::string>(), hex)) corrupt("bad digest for " + name);
        std::string body;
        try {
            body = read_file(dir / name);
        } catch (const Error&) {
            corrupt("missing payload " + name);
        }
        if (sha256_hex(body) != d.get<std::string>()) corrupt("digest mismatch in " + name);
        out.files.emplace(name, std::move(body));
    }
    out.manifest = std::move(manifest);
    return out;
}

const std::string& need(const VerifiedSnapshot& s, const std::string& name) {
    auto it = s.files.find(name);
    if (it == s.files.end()) corrupt("manifest lacks " + name);
    return it->second;
}

}  // namespace

std::string snapshot_digest(const fs::path& path) {
    auto manifest = json::parse(read_file(normalized_target(path) / kManifest), nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("digest")) corrupt("manifest is not JSON");
    return manifest["digest"].get<std::string>();
}

Memories load_snapshot(const fs::path& path) {
    const auto snap = verify(normalized_target(path));
    try {
        const auto config = json::parse(need(snap, "config.json"));
        Memories m;
        const auto& ts = config.at("timescales");
        m.config.scales_ms = ts.at("scales_ms").get<std::vector<std::int64_t>>();
        m.config.semantic_scale_ms = ts.at("semantic_scale_ms").get<std::int64_t>();
        m.config.visual_scale_ms = ts.at("visual_scale_ms").get<std::int64_t>();
        m.config.validate();

        std::set<std::string> expected{"config.json"};
        if (config.at("episodic").get<bool>()) {
            std::map<std::int64_t, ScaleStore> per_scale;
            for (auto scale_ms : m.config.scales_ms) {
                auto& store = per_scale[scale_ms];
                for (const auto& f : {"segments", "triplets"}) expected.insert(scale_file(scale_ms, f));
                for (const auto& j : parse_jsonl(need(snap, scale_file(scale_ms, "segments")), "segments")) {
                    auto seg = segment_from_json(j, scale_ms);
                    if (!store.segments.emplace(seg.id, seg).second) {
                        throw Error(ErrorCode::InternalConsistency, "duplicate segment " + seg.id);
                    }
                }
                std::vector<Triplet> trips;
                for (const auto& j : parse_jsonl(need(snap, scale_file(scale_ms, "triplets")), "triplets")) {
                    trips.push_back(triplet_from_json(j));
                }
                const auto report = store.graph.upsert(trips);
                if (!report.rejected.empty() || report.merged != 0) {
                    throw Error(ErrorCode::InternalConsistency, "stored episodic edges are not canonical");
                }
            }
            m.episodic = EpisodicMemory::from_parts(m.config, std::move(per_scale));
        }
        if (config.at("semantic").get<bool>()) {
            expected.insert({"semantic/journal.jsonl", "semantic/graph.jsonl"});
            std::vector<ConsolidationRecord> journal;
            for (const auto& j : parse_jsonl(need(snap, "semantic/journal.jsonl"), "journal")) {
                journal.push_back(record_from_json(j));
            }
            auto sem = SemanticMemory::replay(journal);
            KnowledgeGraph stored;
            std::vector<Triplet> edges;
            for (const auto& j : parse_jsonl(need(snap, "semantic/graph.jsonl"), "graph")) {
                edges.push_back(triplet_from_json(j));
            }
            stored.upsert(edges);
            if (!(stored == sem.graph())) {
                throw Error(ErrorCode::InternalConsistency, "semantic graph does not match its journal replay");
            }
            m.semantic = std::move(sem);
        }
        if (!config.at("visual").is_null()) {
            expected.insert({"visual/features.jsonl", "visual/frames.jsonl"});
            const auto& v = config.at("visual");
            std::vector<FeatureEntry> feats;
            for (const auto& j : parse_jsonl(need(snap, "visual/features.jsonl"), "features")) {
                feats.push_back({j.at("segment_id").get<std::string>(),
                                 TimeRange::of(j.at("start_ms").get<std::int64_t>(), j.at("end_ms").get<std::int64_t>()),
                                 decode_vector(j.at("vector").get<std::string>())});
            }
            std::vector<FrameRef> frames;
            for (const auto& j : parse_jsonl(need(snap, "visual/frames.jsonl"), "frames")) {
                frames.push_back({j.at("timestamp_ms").get<std::int64_t>(), j.at("locator").get<std::string>()});
            }
            m.visual = VisualMemory::from_parts(v.at("visual_scale_ms").get<std::int64_t>(),
                                                v.at("dim").get<std::size_t>(), std::move(feats), std::move(frames));
        }
        std::set<std::string> listed;
        for (const auto& [name, _] : snap.files) listed.insert(name);
        if (listed != expected) throw Error(ErrorCode::InternalConsistency, "manifest file list does not match config");
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::Parse, std::string("snapshot payload malformed: ") + e.what());
    }
}

void save_trace(const AgentTrace& trace, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, serialize_trace(trace));
}

AgentTrace load_trace(const fs::path& path) {
    auto j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::Parse, "trace file is not JSON: " + path.string());
    return trace_from_json(j);
}

}  // namespace mmem
