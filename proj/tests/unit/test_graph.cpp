#include <gtest/gtest.h>

#include <cmath>

#include "mmem/error.hpp"
#include "mmem/graph/knowledge_graph.hpp"
#include "mmem/graph/ppr.hpp"
#include "oracles.hpp"
#include "random_memories.hpp"

namespace mmem {
namespace {

Triplet ep(const char* s, const char* p, const char* o, const char* seg = "s1", std::int64_t t = 0) {
    return make_triplet(s, p, o, {{seg, t}});
}

TEST(Normalize, EntitiesAndPredicates) {
    EXPECT_EQ(normalize_entity("  The   Air Conditioner. "), "the air conditioner");
    EXPECT_EQ(normalize_entity("\"Shure\""), "shure");
    EXPECT_THROW(normalize_entity(" ... "), Error);
    EXPECT_EQ(normalize_predicate("Sets  To"), "sets to");
    EXPECT_THROW(make_triplet("a", "  ", "b"), Error);
}

TEST(KnowledgeGraph, UpsertMergesProvenance) {
    KnowledgeGraph g;
    auto r = g.upsert(ep("Shure", "sets", "air conditioner", "a", 10));
    EXPECT_EQ(r.inserted, 1u);
    r = g.upsert(ep("shure", "SETS", "Air Conditioner", "b", 5));
    EXPECT_EQ(r.merged, 1u);
    ASSERT_EQ(g.edge_count(), 1u);
    const auto* t = g.find({"shure", "sets", "air conditioner"});
    ASSERT_NE(t, nullptr);
    EXPECT_EQ(t->provenance.size(), 2u);
    EXPECT_EQ(t->earliest_ms(), 5);
    EXPECT_EQ(g.segments_of("shure"), (std::set<std::string>{"a", "b"}));
}

TEST(KnowledgeGraph, RejectsDegenerateAndUnprovenancedEpisodic) {
    KnowledgeGraph g;
    Triplet bad{"", "p", "o", {{"s", 0}}, TripletKind::Episodic};
    Triplet orphan{"a", "p", "b", {}, TripletKind::Episodic};
    Triplet ok{"a", "p", "b", {}, TripletKind::Semantic};
    const std::vector<Triplet> in{bad, orphan, ok};
    const auto r = g.upsert(in);
    EXPECT_EQ(r.inserted, 1u);
    ASSERT_EQ(r.rejected.size(), 2u);
    EXPECT_EQ(r.rejected[0].index, 0u);
    EXPECT_EQ(r.rejected[1].index, 1u);
}

TEST(KnowledgeGraph, NodesAreExactlyEdgeEndpoints) {
    KnowledgeGraph g;
    g.upsert(ep("a", "p", "b"));
    g.upsert(ep("b", "q", "c"));
    EXPECT_EQ(g.nodes(), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_TRUE(g.remove({"a", "p", "b"}));
    EXPECT_FALSE(g.remove({"a", "p", "b"}));
    EXPECT_EQ(g.nodes(), (std::vector<std::string>{"b", "c"}));
    EXPECT_FALSE(g.has_node("a"));
    EXPECT_NO_THROW(g.validate());
}

TEST(KnowledgeGraph, FunctionalUpsertLeavesInputAlone) {
    KnowledgeGraph g;
    g.upsert(ep("a", "p", "b"));
    const std::vector<Triplet> more{ep("c", "p", "d")};
    const auto h = upsert_triplets(g, more);
    EXPECT_EQ(g.edge_count(), 1u);
    EXPECT_EQ(h.edge_count(), 2u);
}

TEST(Ppr, ValidatesSeedsAndParams) {
    KnowledgeGraph g;
    g.upsert(ep("a", "p", "b"));
    EXPECT_THROW(ppr(g, {}), Error);
    EXPECT_THROW(ppr(g, {{"zzz", 1.0}}), Error);
    EXPECT_THROW(ppr(g, {{"a", 0.5}}), Error);
    PprParams bad;
    bad.damping = 1.0;
    EXPECT_THROW(ppr(g, {{"a", 1.0}}, bad), Error);
}

TEST(Ppr, TwoNodeClosedForm) {
    // x_a = 0.15 + 0.85 x_b, x_b = 0.85 x_a  =>  x_a = 0.15 / (1 - 0.7225)
    KnowledgeGraph g;
    g.upsert(ep("a", "p", "b"));
    const auto r = ppr(g, {{"a", 1.0}});
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.scores.at("a"), 0.15 / (1 - 0.85 * 0.85), 1e-7);
    EXPECT_NEAR(r.scores.at("b"), 0.85 * 0.15 / (1 - 0.85 * 0.85), 1e-7);
}

TEST(Ppr, ParallelEdgesAndSelfLoopsMatchDenseOracle) {
    KnowledgeGraph g;
    g.upsert(ep("a", "p", "b"));
    g.upsert(ep("a", "q", "b"));  // parallel: weight 2
    g.upsert(ep("b", "r", "a"));  // reverse direction counts too
    g.upsert(ep("b", "p", "c"));
    g.upsert(ep("c", "p", "c"));  // self-loop, counted once
    const auto r = ppr(g, {{"a", 0.5}, {"c", 0.5}});
    const auto want = testing::dense_ppr(3, {{0, 1}, {0, 1}, {1, 0}, {1, 2}, {2, 2}}, {0.5, 0, 0.5}, 0.85);
    EXPECT_NEAR(r.scores.at("a"), want[0], 1e-7);
    EXPECT_NEAR(r.scores.at("b"), want[1], 1e-7);
    EXPECT_NEAR(r.scores.at("c"), want[2], 1e-7);
    double total = 0;
    for (const auto& [_, s] : r.scores) total += s;
    EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(Ppr, MassStaysInSeedComponent) {
    KnowledgeGraph g;
    g.upsert(ep("a", "p", "b"));
    g.upsert(ep("x", "p", "y"));
    const auto r = ppr(g, {{"a", 1.0}});
    EXPECT_EQ(r.scores.at("x"), 0.0);
    EXPECT_EQ(r.scores.at("y"), 0.0);
}

TEST(EdgeScores, EndpointSumAndTieBreak) {
    KnowledgeGraph g;
    g.upsert(ep("a", "p", "b", "late", 50));
    g.upsert(ep("a", "q", "b", "early", 10));
    g.upsert(ep("a", "o", "b", "early", 10));
    g.upsert(ep("c", "p", "d", "x", 0));
    const ScoreMap s{{"a", 0.4}, {"b", 0.1}, {"c", 0.0}, {"d", 0.0}};
    const auto ranked = edge_scores(g, s);
    ASSERT_EQ(ranked.size(), 4u);
    EXPECT_DOUBLE_EQ(ranked[0].score, 0.5);
    EXPECT_EQ(ranked[0].triplet.predicate, "o");  // same score and time: lexicographic
    EXPECT_EQ(ranked[1].triplet.predicate, "q");
    EXPECT_EQ(ranked[2].triplet.predicate, "p");  // later provenance
    EXPECT_EQ(ranked[3].triplet.subject, "c");
    EXPECT_THROW(edge_scores(g, {{"a", 1.0}}), Error);
}

TEST(SeedMatch, ExactThenEmbedding) {
    KnowledgeGraph g;
    g.upsert(ep("air conditioner", "p", "remote"));
    const std::vector<std::string> q{"Air Conditioner", "aircon", "!!"};
    auto m = match_seed_nodes(g, q, {}, 0.8);
    EXPECT_EQ(m.seeds.size(), 1u);
    EXPECT_EQ(m.unmatched, (std::vector<std::string>{"aircon"}));

    // embedder maps "aircon" onto the node vector, "remote" elsewhere
    Embedder embed = [](const std::string& s) {
        if (s == "aircon" || s == "air conditioner") return Vector{1.0, 0.0};
        return Vector{0.0, 1.0};
    };
    m = match_seed_nodes(g, q, embed, 0.8);
    EXPECT_EQ(m.seeds, (ScoreMap{{"air conditioner", 1.0}}));
    EXPECT_TRUE(m.unmatched.empty());

    const std::vector<std::string> two{"air conditioner", "remote"};
    m = match_seed_nodes(g, two, {}, 0.8);
    EXPECT_EQ(m.seeds, (ScoreMap{{"air conditioner", 0.5}, {"remote", 0.5}}));
}

TEST(RandomGraph, ValidAfterRandomRemovals) {
    testing::Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        auto g = testing::random_graph(rng, 20, 40);
        std::vector<TripletKey> keys;
        for (const auto& [k, _] : g.edges()) keys.push_back(k);
        for (std::size_t j = 0; j < keys.size(); j += 2) g.remove(keys[j]);
        EXPECT_NO_THROW(g.validate());
        for (const auto& node : g.nodes()) EXPECT_FALSE(g.edges_of(node).empty());
    }
}

}  // namespace
}  // namespace mmem
