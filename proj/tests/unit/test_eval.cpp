#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mmem/backends/scripted.hpp"
#include "mmem/error.hpp"
#include "mmem/eval/eval.hpp"
#include "mmem/store/snapshot.hpp"
#include "refinement_example.hpp"

namespace mmem {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("mmem-eval-" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

AgentTrace trace_with(std::vector<std::vector<TimeRange>> per_round, std::optional<char> answer) {
    AgentTrace t;
    int i = 1;
    for (const auto& ranges : per_round) {
        RetrievalRound r;
        r.index = i++;
        r.action = RetrievalAction::search(MemoryKind::Episodic, "q");
        for (const auto& range : ranges) r.evidence.push_back({EvidenceKind::Caption, "x", range, 30'000, "c", 0.0, {}});
        t.rounds.push_back(r);
    }
    RetrievalRound stop;
    stop.index = i;
    t.rounds.push_back(stop);
    t.answer = answer;
    return t;
}

TEST(LoadItems, FormatsAndErrors) {
    const auto dir = scratch("load");
    {
        std::ofstream f(dir / "items.jsonl");
        f << R"({"id":"q1","question":"Q?","choices":{"A":"x","B":"y"},"answer":"B",)"
          << R"("gold_ranges":["DAY 1 00:04:00 - DAY 1 00:04:30",{"start_ms":0,"end_ms":1000}],"category":"episodic"})"
          << "\n\n"
          << R"({"id":"q2","question":"Q?","choices":{"A":"x"},"answer":"A"})" << "\n";
    }
    const auto items = load_eval_items(dir / "items.jsonl");
    ASSERT_EQ(items.size(), 2u);
    EXPECT_EQ(items[0].gold, 'B');
    EXPECT_EQ(items[0].gold_ranges, (std::vector<TimeRange>{TimeRange::of(240'000, 270'000), TimeRange::of(0, 1000)}));
    EXPECT_TRUE(items[1].gold_ranges.empty());
    EXPECT_EQ(items[1].category, "");
    EXPECT_EQ(eval_item_to_json(items[0])["gold_ranges"][0]["start_ms"], 240'000);

    auto expect_parse = [&](const std::string& line) {
        std::ofstream(dir / "bad.jsonl", std::ios::trunc) << line << "\n";
        EXPECT_THROW(load_eval_items(dir / "bad.jsonl"), ParseError) << line;
    };
    expect_parse("{not json");
    expect_parse(R"({"id":"q","question":"Q","choices":{"A":"x"},"answer":"C"})");
    expect_parse(R"({"id":"q","question":"Q","choices":{"AB":"x"},"answer":"A"})");
    expect_parse(R"({"id":"q","question":"Q","choices":{"A":"x"},"answer":"A","gold_ranges":["yesterday"]})");
    expect_parse(R"({"id":"q","question":"Q","choices":{"A":"x"}})");
    expect_parse(R"({"id":"q","question":"Q","choices":{"A":"x"},"answer":"A"})"
                 "\n"
                 R"({"id":"q","question":"Q","choices":{"A":"x"},"answer":"A"})");
    EXPECT_THROW(load_eval_items(dir / "none.jsonl"), Error);
    fs::remove_all(dir);
}

TEST(Score, AllRoundsAndLastRoundTiou) {
    EvalItem item{"q", "Q", {{'A', "x"}, {'B', "y"}}, 'A', {TimeRange::of(0, 30'000)}, "episodic"};
    // Round 1 retrieves [0, 60 s), round 2 retrieves [15 s, 45 s).
    const auto r = score_item(item, trace_with({{TimeRange::of(0, 60'000)}, {TimeRange::of(15'000, 45'000)}}, 'A'));
    EXPECT_TRUE(r.correct);
    // union [0, 60) vs [0, 30): 30 / 60
    EXPECT_DOUBLE_EQ(*r.tiou, 0.5);
    // [15, 45) vs [0, 30): 15 / 45
    EXPECT_DOUBLE_EQ(*r.tiou_last, 1.0 / 3.0);
    EXPECT_EQ(r.trace_digest.size(), 64u);

    EvalItem untimed = item;
    untimed.gold_ranges.clear();
    untimed.category.clear();
    const auto u = score_item(untimed, trace_with({}, std::nullopt));
    EXPECT_FALSE(u.correct);
    EXPECT_FALSE(u.tiou);
    EXPECT_EQ(u.category, "uncategorized");
}

TEST(Fold, AggregatesByHand) {
    std::vector<ItemResult> results(3);
    results[0].id = "c";
    results[0].category = "sem";
    results[0].correct = true;
    results[0].tiou = 0.5;
    results[0].tiou_last = 0.25;
    results[0].trace = trace_with({{}, {}}, 'A');
    results[1].id = "a";
    results[1].category = "sem";
    results[1].trace = trace_with({{}}, 'B');
    results[2].id = "b";
    results[2].category = "vis";
    results[2].correct = true;
    results[2].failed = true;
    results[2].tiou = 1.0;
    results[2].tiou_last = 0.0;
    results[2].trace.rounds.push_back({1, RetrievalAction::search(MemoryKind::Visual, "v"), false, false, {}, {}, {}, {}});

    const auto rep = fold_report(results, "E+V", json{{"k", 1}});
    EXPECT_EQ(rep.items[0].id, "a");
    EXPECT_EQ(rep.total, 3u);
    EXPECT_EQ(rep.correct, 2u);
    EXPECT_DOUBLE_EQ(rep.accuracy, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(rep.categories.at("sem").accuracy, 0.5);
    EXPECT_EQ(rep.tiou_items, 2u);
    EXPECT_DOUBLE_EQ(*rep.mean_tiou, 0.75);
    EXPECT_DOUBLE_EQ(*rep.mean_tiou_last, 0.125);
    EXPECT_EQ(rep.usage.at(MemoryKind::Episodic), 3u);
    EXPECT_EQ(rep.usage.at(MemoryKind::Visual), 1u);
    EXPECT_DOUBLE_EQ(rep.usage_share.at(MemoryKind::Visual), 0.25);
    EXPECT_EQ(rep.failures, 1u);
    EXPECT_EQ(rep.fingerprint, fingerprint(json{{"k", 1}}));

    const auto empty = fold_report({}, "E", json::object());
    EXPECT_EQ(empty.accuracy, 0.0);
    EXPECT_FALSE(empty.mean_tiou);
}

TEST(Fingerprint, TracksRetrievalParameters) {
    const auto fx = testing::refinement_fixture();
    AgentConfig a;
    const auto base = fingerprint(fingerprint_config(a, fx.memories.config, fx.backends));
    EXPECT_EQ(base.size(), 16u);
    EXPECT_EQ(base, fingerprint(fingerprint_config(a, fx.memories.config, fx.backends)));
    a.episodic.k_per_scale = 7;
    EXPECT_NE(base, fingerprint(fingerprint_config(a, fx.memories.config, fx.backends)));
    AgentConfig b;
    b.record_timings = true;  // not a retrieval parameter
    EXPECT_EQ(base, fingerprint(fingerprint_config(b, fx.memories.config, fx.backends)));
}

std::vector<EvalItem> refinement_items(const testing::RefinementFixture& fx) {
    EvalItem good{"r1", fx.question, fx.choices, 'A', {*parse_day_range("DAY2 18:34:01-18:34:29")}, "episodic"};
    EvalItem wrong = good;
    wrong.id = "r0";
    wrong.gold = 'B';
    return {good, wrong};
}

TEST(RunEval, ScoresTracesAndIsParallelDeterministic) {
    const auto fx = testing::refinement_fixture();
    const auto items = refinement_items(fx);
    EvalConfig config{fx.config, 1};
    const auto serial = run_eval(items, fx.memories, config, fx.backends);
    config.parallelism = 4;
    const auto parallel = run_eval(items, fx.memories, config, fx.backends);
    EXPECT_EQ(report_to_json(serial), report_to_json(parallel));
    EXPECT_EQ(serial.correct, 1u);
    EXPECT_EQ(serial.items[0].id, "r0");
    EXPECT_DOUBLE_EQ(*serial.items[1].tiou_last, 1.0);
    EXPECT_EQ(serial.mask, "E+V");

    auto dup = items;
    dup[1].id = dup[0].id;
    EXPECT_THROW(run_eval(dup, fx.memories, config, fx.backends), Error);
}

TEST(RunEval, ItemFailuresAreRecorded) {
    auto fx = testing::refinement_fixture();
    BackendSet broken = fx.backends;
    broken.retriever = std::make_shared<PolicyBackend>([](const ChatRequest&) -> std::string {
        throw BackendError("offline", false);
    });
    const auto rep = run_eval(refinement_items(fx), fx.memories, {fx.config, 2}, broken);
    EXPECT_EQ(rep.failures, 2u);
    EXPECT_EQ(rep.correct, 0u);
    EXPECT_NE(rep.items[0].error.find("offline"), std::string::npos);
    EXPECT_TRUE(rep.items[0].trace.unanswered);
}

TEST(Ablation, MasksAreCheckedUpFront) {
    const auto fx = testing::refinement_fixture();
    EXPECT_TRUE(is_ablation_mask(MemoryMask::parse("E+S+V")));
    EXPECT_FALSE(is_ablation_mask(MemoryMask::parse("S")));
    EXPECT_FALSE(is_ablation_mask(MemoryMask::parse("S+V")));
    const auto items = refinement_items(fx);
    EXPECT_THROW(ablation_matrix(items, fx.memories, {MemoryMask::parse("S")}, {fx.config, 1}, fx.backends), Error);
    ASSERT_FALSE(fx.memories.semantic.has_value());
    EXPECT_THROW(ablation_matrix(items, fx.memories, {MemoryMask::parse("E"), MemoryMask::parse("E+S")},
                                 {fx.config, 1}, fx.backends),
                 Error);
    const auto reps = ablation_matrix(items, fx.memories, {MemoryMask::parse("E"), MemoryMask::parse("E+V")},
                                      {fx.config, 1}, fx.backends);
    ASSERT_EQ(reps.size(), 2u);
    EXPECT_EQ(reps[0].mask, "E");
    EXPECT_NE(reps[0].fingerprint, reps[1].fingerprint);
}

TEST(Reports, FilesOnDisk) {
    const auto fx = testing::refinement_fixture();
    const auto rep = run_eval(refinement_items(fx), fx.memories, {fx.config, 1}, fx.backends);
    const auto dir = scratch("report");
    write_report(rep, dir);
    write_ablation_table({rep}, dir);
    EXPECT_EQ(json::parse(read_file(dir / "report.json")), report_to_json(rep));
    const auto items = read_file(dir / "items.tsv");
    EXPECT_EQ(items.rfind("id\tcategory\tgold\tanswer\tcorrect\ttiou\ttiou_last_round\tfailed\ttrace_digest\n", 0), 0u);
    EXPECT_NE(items.find("r1\tepisodic\tA\tA\t1\t"), std::string::npos);
    EXPECT_NE(read_file(dir / "categories.tsv").find("overall\t2\t1\t0.500000\n"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "usage.tsv"));
    EXPECT_EQ(load_trace(dir / "traces" / "r1.json"), rep.items[1].trace);
    EXPECT_EQ(read_file(dir / "ablation.tsv").substr(0, 5), "mask\t");
    EXPECT_NE(render_summary(rep).find("accuracy 0.500000 (1/2)"), std::string::npos);
    fs::remove_all(dir);
}

}  // namespace
}  // namespace mmem
