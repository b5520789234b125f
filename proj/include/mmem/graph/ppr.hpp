#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mmem/core/vector.hpp"
#include "mmem/graph/knowledge_graph.hpp"

namespace mmem {

struct PprParams {
    double damping = 0.85;
    double tolerance = 1e-8;
    int max_power_iters = 200;
    // Scoring follows edges in both directions unless set.
    bool directed = false;

    void validate() const;
    bool operator==(const PprParams&) const = default;
};

using ScoreMap = std::map<std::string, double>;

struct PprResult {
    ScoreMap scores;
    int iterations = 0;
    bool converged = false;
    double residual = 0.0;  // L1 change of the last iteration
};

// Personalized PageRank by power iteration:
//   score = (1 - d) * seed + d * W * score
// where W is column-stochastic over the (undirected) edge multigraph and
// nodes without outgoing weight keep their mass through a self-loop.
// Seeds must be non-empty, non-negative, sum to 1 and name existing nodes.
PprResult ppr(const KnowledgeGraph& graph, const ScoreMap& seeds, const PprParams& params = {});

struct ScoredTriplet {
    Triplet triplet;
    double score = 0.0;
};

// Ranking order used everywhere: score desc, earliest provenance start asc,
// then (subject, predicate, object) lexicographically.
bool ranks_before(const ScoredTriplet& a, const ScoredTriplet& b);

// Every edge scored by score(subject) + score(object), sorted by ranks_before.
std::vector<ScoredTriplet> edge_scores(const KnowledgeGraph& graph, const ScoreMap& node_scores);

using Embedder = std::function<Vector(const std::string&)>;

struct SeedMatch {
    ScoreMap seeds;                      // uniform weights over matched nodes
    std::vector<std::string> unmatched;  // query entities that found no node
};

// Maps query entities onto graph nodes: exact normalized match first, then the
// best embedding match with cosine >= threshold (skipped when embed is empty).
SeedMatch match_seed_nodes(const KnowledgeGraph& graph, std::span<const std::string> entities,
                           const Embedder& embed, double threshold);

}  // namespace mmem
