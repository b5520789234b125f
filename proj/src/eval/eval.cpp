#include "mmem/eval/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "mmem/error.hpp"
#include "mmem/store/snapshot.hpp"
#include "mmem/util/digest.hpp"

namespace mmem {

using nlohmann::json;

void EvalItem::validate() const {
    if (id.empty()) throw Error(ErrorCode::InvalidArgument, "eval item without id");
    if (question.empty()) throw Error(ErrorCode::InvalidArgument, "eval item '" + id + "' has no question");
    if (choices.empty()) throw Error(ErrorCode::InvalidArgument, "eval item '" + id + "' has no choices");
    if (!choices.contains(gold)) {
        throw Error(ErrorCode::InvalidArgument, "eval item '" + id + "': gold letter is not a choice");
    }
    for (const auto& r : gold_ranges) {
        if (!r.valid()) throw Error(ErrorCode::InvalidArgument, "eval item '" + id + "' has an invalid gold range");
    }
}

std::vector<EvalItem> load_eval_items(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open eval set " + path.string());
    std::vector<EvalItem> items;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw ParseError("malformed eval record at " + where, line);
        EvalItem item;
        try {
            item.id = j.at("id").get<std::string>();
            item.question = j.at("question").get<std::string>();
            for (const auto& [k, v] : j.at("choices").items()) {
                if (k.size() != 1) throw ParseError("choice key '" + k + "' is not a letter at " + where, line);
                item.choices.emplace(k[0], v.get<std::string>());
            }
            const auto gold = j.at("answer").get<std::string>();
            if (gold.size() != 1) throw ParseError("answer must be one letter at " + where, line);
            item.gold = gold[0];
            for (const auto& r : j.value("gold_ranges", json::array())) {
                if (r.is_string()) {
                    auto parsed = parse_day_range(r.get<std::string>());
                    if (!parsed) throw ParseError("bad gold range at " + where, line);
                    item.gold_ranges.push_back(*parsed);
                } else {
                    item.gold_ranges.push_back(
                        TimeRange::of(r.at("start_ms").get<std::int64_t>(), r.at("end_ms").get<std::int64_t>()));
                }
            }
            item.category = j.value("category", std::string());
        } catch (const json::exception& e) {
            throw ParseError("bad eval record at " + where + ": " + e.what(), line);
        }
        try {
            item.validate();
        } catch (const Error& e) {
            throw ParseError(std::string(e.what()) + " (" + where + ")", line, ErrorCode::Validation);
        }
        if (!ids.insert(item.id).second) throw ParseError("duplicate item id '" + item.id + "' at " + where, line);
        items.push_back(std::move(item));
    }
    return items;
}

json eval_item_to_json(const EvalItem& item) {
    json choices = json::object();
    for (const auto& [l, t] : item.choices) choices[std::string(1, l)] = t;
    json ranges = json::array();
    for (const auto& r : item.gold_ranges) ranges.push_back({{"start_ms", r.start_ms}, {"end_ms", r.end_ms}});
    return json{{"id", item.id},           {"question", item.question}, {"choices", choices},
                {"answer", std::string(1, item.gold)}, {"gold_ranges", ranges}, {"category", item.category}};
}

namespace {

json ppr_json(const PprParams& p) {
    return {{"damping", p.damping}, {"tolerance", p.tolerance}, {"max_power_iters", p.max_power_iters},
            {"directed", p.directed}};
}

json backend_json(const std::shared_ptr<ModelBackend>& b) {
    if (!b) return nullptr;
    const auto i = b->info();
    return {{"name", i.name}, {"kind", i.kind}, {"model", i.model}, {"multimodal", i.multimodal}};
}

}  // namespace

json fingerprint_config(const AgentConfig& c, const TimescaleConfig& ts, const BackendSet& b) {
    return json{
        {"mask", c.mask.to_string()},
        {"budget", c.budget},
        {"episodic",
         {{"k_per_scale", c.episodic.k_per_scale},
          {"rerank_m", c.episodic.rerank_m},
          {"node_match_threshold", c.episodic.node_match_threshold},
          {"max_coarse_words", c.episodic.max_coarse_words},
          {"ppr", ppr_json(c.episodic.ppr)}}},
        {"semantic",
         {{"k", c.semantic.k},
          {"match_threshold", c.semantic.match_threshold},
          {"node_match_threshold", c.semantic.node_match_threshold},
          {"ppr", ppr_json(c.semantic.ppr)}}},
        {"visual", {{"k", c.visual_k}, {"max_frames", c.max_frames}}},
        {"timescales",
         {{"scales_ms", ts.scales_ms}, {"semantic_scale_ms", ts.semantic_scale_ms}, {"visual_scale_ms", ts.visual_scale_ms}}},
        {"backends",
         {{"extractor", backend_json(b.extractor)},
          {"embedder", backend_json(b.embedder)},
          {"retriever", backend_json(b.retriever)},
          {"responder", backend_json(b.responder)},
          {"describer", backend_json(b.describer)}}},
    };
}

std::string fingerprint(const json& config) { return sha256_hex(config.dump()).substr(0, 16); }

ItemResult score_item(const EvalItem& item, AgentTrace trace) {
    ItemResult r;
    r.id = item.id;
    r.category = item.category.empty() ? "uncategorized" : item.category;
    r.gold = item.gold;
    r.answer = trace.answer;
    r.correct = trace.answer && *trace.answer == item.gold;
    if (!item.gold_ranges.empty()) {
        r.tiou = tiou(trace.retrieved_ranges(), item.gold_ranges);
        r.tiou_last = tiou(trace.last_round_ranges(), item.gold_ranges);
    }
    r.trace_digest = sha256_hex(serialize_trace(trace));
    r.trace = std::move(trace);
    return r;
}

EvalReport fold_report(std::vector<ItemResult> results, std::string mask, json config) {
    std::sort(results.begin(), results.end(), [](const ItemResult& a, const ItemResult& b) { return a.id < b.id; });
    EvalReport rep;
    rep.mask = std::move(mask);
    rep.fingerprint = fingerprint(config);
    rep.config = std::move(config);
    double tiou_sum = 0.0, tiou_last_sum = 0.0;
    rep.usage = {{MemoryKind::Episodic, 0}, {MemoryKind::Semantic, 0}, {MemoryKind::Visual, 0}};
    for (const auto& r : results) {
        ++rep.total;
        auto& cat = rep.categories[r.category];
        ++cat.total;
        if (r.correct) {
            ++rep.correct;
            ++cat.correct;
        }
        if (r.failed) ++rep.failures;
        if (r.tiou) {
            ++rep.tiou_items;
            tiou_sum += *r.tiou;
            tiou_last_sum += r.tiou_last.value_or(0.0);
        }
        for (const auto& [k, n] : r.trace.usage()) rep.usage[k] += n;
    }
    rep.accuracy = rep.total ? static_cast<double>(rep.correct) / static_cast<double>(rep.total) : 0.0;
    for (auto& [_, c] : rep.categories) c.accuracy = static_cast<double>(c.correct) / static_cast<double>(c.total);
    if (rep.tiou_items) {
        rep.mean_tiou = tiou_sum / static_cast<double>(rep.tiou_items);
        rep.mean_tiou_last = tiou_last_sum / static_cast<double>(rep.tiou_items);
    }
    std::size_t rounds = 0;
    for (const auto& [_, n] : rep.usage) rounds += n;
    for (const auto& [k, n] : rep.usage) {
        rep.usage_share[k] = rounds ? static_cast<double>(n) / static_cast<double>(rounds) : 0.0;
    }
    rep.items = std::move(results);
    return rep;
}

EvalReport run_eval(const std::vector<EvalItem>& items, const Memories& memories, const EvalConfig& config,
                    const BackendSet& backends, const TemplateRegistry& templates) {
    config.agent.validate();
    memories.require(config.agent.mask);
    std::set<std::string> ids;
    for (const auto& item : items) {
        item.validate();
        if (!ids.insert(item.id).second) throw Error(ErrorCode::InvalidArgument, "duplicate item id '" + item.id + "'");
    }
    if (!backends.embedder) throw Error(ErrorCode::Configuration, "no embedder backend");
    EmbeddingCache embeddings(*backends.embedder);

    std::vector<ItemResult> results(items.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < items.size();) {
            const auto& item = items[i];
            try {
                auto trace = run_agent(item.question, memories, config.agent, backends, embeddings, templates);
                respond(trace, item.choices, backends, templates);
                results[i] = score_item(item, std::move(trace));
            } catch (const std::exception& e) {
                spdlog::warn("eval item {} failed: {}", item.id, e.what());
                AgentTrace empty;
                empty.query = item.question;
                empty.budget = config.agent.budget;
                empty.mask = config.agent.mask;
                empty.unanswered = true;
                results[i] = score_item(item, std::move(empty));
                results[i].failed = true;
                results[i].error = e.what();
            }
        }
    };
    const auto threads = std::clamp<std::size_t>(config.parallelism, 1, std::max<std::size_t>(1, items.size()));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    }
    return fold_report(std::move(results), config.agent.mask.to_string(),
                       fingerprint_config(config.agent, memories.config, backends));
}

bool is_ablation_mask(const MemoryMask& mask) {
    static const std::set<std::string> allowed{"E", "V", "E+S", "E+V", "E+S+V"};
    return allowed.contains(mask.to_string());
}

std::vector<EvalReport> ablation_matrix(const std::vector<EvalItem>& items, const Memories& memories,
                                        const std::vector<MemoryMask>& masks, const EvalConfig& config,
                                        const BackendSet& backends, const TemplateRegistry& templates) {
    for (const auto& m : masks) {
        if (!is_ablation_mask(m)) {
            throw Error(ErrorCode::Configuration, "mask " + m.to_string() + " is not one of E, V, E+S, E+V, E+S+V");
        }
        memories.require(m);
    }
    std::vector<EvalReport> out;
    for (const auto& m : masks) {
        auto c = config;
        c.agent.mask = m;
        out.push_back(run_eval(items, memories, c, backends, templates));
    }
    return out;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "-"; }

std::string file_stem(const std::string& id) {
    std::string out = id;
    for (auto& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    return out;
}

}  // namespace

json report_to_json(const EvalReport& r) {
    json items = json::array();
    for (const auto& i : r.items) {
        items.push_back({{"id", i.id},
                         {"category", i.category},
                         {"gold", std::string(1, i.gold)},
                         {"answer", i.answer ? json(std::string(1, *i.answer)) : json(nullptr)},
                         {"correct", i.correct},
                         {"tiou", opt(i.tiou)},
                         {"tiou_last_round", opt(i.tiou_last)},
                         {"failed", i.failed},
                         {"error", i.error},
                         {"trace_digest", i.trace_digest}});
    }
    json cats = json::object();
    for (const auto& [name, c] : r.categories) {
        cats[name] = {{"total", c.total}, {"correct", c.correct}, {"accuracy", c.accuracy}};
    }
    json usage = json::object();
    for (const auto& [k, n] : r.usage) {
        usage[std::string(to_string(k))] = {{"rounds", n}, {"share", r.usage_share.at(k)}};
    }
    return json{{"mask", r.mask},
                {"fingerprint", r.fingerprint},
                {"config", r.config},
                {"total", r.total},
                {"correct", r.correct},
                {"accuracy", r.accuracy},
                {"categories", cats},
                {"mean_tiou", opt(r.mean_tiou)},
                {"mean_tiou_last_round", opt(r.mean_tiou_last)},
                {"tiou_items", r.tiou_items},
                {"usage", usage},
                {"failures", r.failures},
                {"items", items}};
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "traces");
    write_file_atomic(dir / "report.json", report_to_json(r).dump(2) + "\n");

    std::string items = "id\tcategory\tgold\tanswer\tcorrect\ttiou\ttiou_last_round\tfailed\ttrace_digest\n";
    for (const auto& i : r.items) {
        items += i.id + "\t" + i.category + "\t" + std::string(1, i.gold) + "\t" +
                 (i.answer ? std::string(1, *i.answer) : "-") + "\t" + (i.correct ? "1" : "0") + "\t" + fmt(i.tiou) +
                 "\t" + fmt(i.tiou_last) + "\t" + (i.failed ? "1" : "0") + "\t" + i.trace_digest + "\n";
        save_trace(i.trace, dir / "traces" / (file_stem(i.id) + ".json"));
    }
    write_file_atomic(dir / "items.tsv", items);

    std::string cats = "category\ttotal\tcorrect\taccuracy\n";
    for (const auto& [name, c] : r.categories) {
        cats += name + "\t" + std::to_string(c.total) + "\t" + std::to_string(c.correct) + "\t" + fmt(c.accuracy) + "\n";
    }
    cats += "overall\t" + std::to_string(r.total) + "\t" + std::to_string(r.correct) + "\t" + fmt(r.accuracy) + "\n";
    write_file_atomic(dir / "categories.tsv", cats);

    std::string usage = "memory\trounds\tshare\n";
    for (const auto& [k, n] : r.usage) {
        usage += std::string(to_string(k)) + "\t" + std::to_string(n) + "\t" + fmt(r.usage_share.at(k)) + "\n";
    }
    write_file_atomic(dir / "usage.tsv", usage);
}

void write_ablation_table(const std::vector<EvalReport>& reports, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::string t = "mask\taccuracy\tmean_tiou\tmean_tiou_last_round\tepisodic_share\tsemantic_share\tvisual_share\tfingerprint\n";
    for (const auto& r : reports) {
        t += r.mask + "\t" + fmt(r.accuracy) + "\t" + fmt(r.mean_tiou) + "\t" + fmt(r.mean_tiou_last) + "\t" +
             fmt(r.usage_share.at(MemoryKind::Episodic)) + "\t" + fmt(r.usage_share.at(MemoryKind::Semantic)) + "\t" +
             fmt(r.usage_share.at(MemoryKind::Visual)) + "\t" + r.fingerprint + "\n";
    }
    write_file_atomic(dir / "ablation.tsv", t);
}

std::string render_summary(const EvalReport& r) {
    std::ostringstream out;
    out << "mask " << r.mask << "  fingerprint " << r.fingerprint << "\n";
    out << "accuracy " << fmt(r.accuracy) << " (" << r.correct << "/" << r.total << ")";
    if (r.failures) out << ", " << r.failures << " failed";
    out << "\n";
    out << "mean tIoU " << fmt(r.mean_tiou) << " over " << r.tiou_items << " item(s); last-round " << fmt(r.mean_tiou_last)
        << "\n";
    for (const auto& [name, c] : r.categories) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "  %-16s %3zu/%-3zu %s\n", name.c_str(), c.correct, c.total, fmt(c.accuracy).c_str());
        out << buf;
    }
    out << "usage:";
    for (const auto& [k, s] : r.usage_share) out << " " << to_string(k) << " " << fmt(s);
    out << "\n";
    return out.str();
}

}  // namespace mmem
