#include "mmem/graph/ppr.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mmem/error.hpp"

namespace mmem {

void PprParams::validate() const {
    if (!(damping > 0.0 && damping < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "PPR damping must lie in (0, 1)");
    }
    if (!(tolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "PPR tolerance must be > 0");
    if (max_power_iters < 1) {
        throw Error(ErrorCode::InvalidArgument, "PPR needs at least one power iteration");
    }
}

namespace {

struct Arc {
    std::size_t to;
    double weight;
};

}  // namespace

PprResult ppr(const KnowledgeGraph& graph, const ScoreMap& seeds, const PprParams& params) {
    params.validate();
    if (seeds.empty()) throw Error(ErrorCode::InvalidArgument, "PPR needs at least one seed");

    const auto names = graph.nodes();
    const std::size_t n = names.size();
    std::unordered_map<std::string, std::size_t> index;
    index.reserve(n);
    for (std::size_t i = 0; i < n; ++i) index.emplace(names[i], i);

    std::vector<double> seed(n, 0.0);
    double seed_mass = 0.0;
    for (const auto& [node, w] : seeds) {
        auto it = index.find(node);
        if (it == index.end()) throw Error(ErrorCode::UnknownNode, "unknown seed node: " + node);
        if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative seed weight");
        seed[it->second] += w;
        seed_mass += w;
    }
    if (std::abs(seed_mass - 1.0) > 1e-9) {
        throw Error(ErrorCode::InvalidArgument, "seed weights must sum to 1");
    }

    // Out-arcs per node. Parallel edges add weight; a self-loop edge counts once.
    std::vector<std::vector<Arc>> out(n);
    std::vector<double> out_weight(n, 0.0);
    auto add_arc = [&](std::size_t from, std::size_t to) {
        auto& arcs = out[from];
        auto it = std::find_if(arcs.begin(), arcs.end(), [&](const Arc& a) { return a.to == to; });
        if (it == arcs.end()) arcs.push_back({to, 1.0}); else it->weight += 1.0;
        out_weight[from] += 1.0;
    };
    for (const auto& [key, _] : graph.edges()) {
        const auto s = index.at(key.subject);
        const auto o = index.at(key.object);
        add_arc(s, o);
        if (!params.directed && s != o) add_arc(o, s);
    }

    const double d = params.damping;
    std::vector<double> cur = seed, next(n);
    PprResult result;
    for (int iter = 1; iter <= params.max_power_iters; ++iter) {
        for (std::size_t v = 0; v < n; ++v) next[v] = (1.0 - d) * seed[v];
        for (std::size_t u = 0; u < n; ++u) {
            if (cur[u] == 0.0) continue;
            if (out_weight[u] == 0.0) {
                next[u] += d * cur[u];
                continue;
            }
            const double share = d * cur[u] / out_weight[u];
            for (const auto& arc : out[u]) next[arc.to] += share * arc.weight;
        }
        double delta = 0.0;
        for (std::size_t v = 0; v < n; ++v) delta += std::abs(next[v] - cur[v]);
        cur.swap(next);
        result.iterations = iter;
        result.residual = delta;
        if (delta < params.tolerance) {
            result.converged = true;
            break;
        }
    }
    for (std::size_t i = 0; i < n; ++i) result.scores.emplace(names[i], cur[i]);
    return result;
}

bool ranks_before(const ScoredTriplet& a, const ScoredTriplet& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto ea = a.triplet.earliest_ms(), eb = b.triplet.earliest_ms();
    if (ea != eb) return ea < eb;
    return a.triplet.key() < b.triplet.key();
}

std::vector<ScoredTriplet> edge_scores(const KnowledgeGraph& graph, const ScoreMap& node_scores) {
    std::vector<ScoredTriplet> out;
    out.reserve(graph.edge_count());
    for (const auto& [key, t] : graph.edges()) {
        auto s = node_scores.find(key.subject);
        auto o = node_scores.find(key.object);
        if (s == node_scores.end() || o == node_scores.end()) {
            throw Error(ErrorCode::InternalConsistency,
                        "edge endpoint without a node score: " + t.text());
        }
        out.push_back({t, s->second + o->second});
    }
    std::sort(out.begin(), out.end(), ranks_before);
    return out;
}

SeedMatch match_seed_nodes(const KnowledgeGraph& graph, std::span<const std::string> entities,
                           const Embedder& embed, double threshold) {
    SeedMatch match;
    std::set<std::string> matched;
    std::vector<std::pair<std::string, Vector>> node_vectors;
    bool node_vectors_ready = false;

    for (const auto& raw : entities) {
        std::string entity;
        try {
            entity = normalize_entity(raw);
        } catch (const Error&) {
            continue;
        }
        if (graph.has_node(entity)) {
            matched.insert(entity);
            continue;
        }
        if (!embed) {
            match.unmatched.push_back(entity);
            continue;
        }
        if (!node_vectors_ready) {
            for (const auto& node : graph.nodes()) node_vectors.emplace_back(node, embed(node));
            node_vectors_ready = true;
        }
        const Vector q = embed(entity);
        const std::string* best = nullptr;
        double best_sim = threshold;
        for (const auto& [node, v] : node_vectors) {
            const double sim = unit_cosine(q, v);
            // nodes() is sorted, so strict > keeps the lexicographically first on ties
            if (sim > best_sim || (best == nullptr && sim >= threshold)) {
                best = &node;
                best_sim = sim;
            }
        }
        if (best) matched.insert(*best); else match.unmatched.push_back(entity);
    }
    if (!matched.empty()) {
        const double w = 1.0 / static_cast<double>(matched.size());
        for (const auto& node : matched) match.seeds.emplace(node, w);
    }
    return match;
}

}  // namespace mmem
