#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mmem/backends/recording.hpp"
#include "mmem/backends/remote.hpp"
#include "mmem/backends/scripted.hpp"
#include "mmem/backends/structured.hpp"
#include "mmem/backends/templates.hpp"
#include "mmem/error.hpp"

namespace mmem {
namespace {

using nlohmann::json;

TEST(Templates, StandardRegistryShipsEveryTemplate) {
    const auto& reg = TemplateRegistry::standard();
    for (auto id : {templates::kNer, templates::kEpisodicTriples, templates::kCoarseCaption, templates::kRerank,
                    templates::kSemanticTriples, templates::kConsolidate, templates::kRetrievalAgent,
                    templates::kResponse, templates::kDescribeFrames}) {
        EXPECT_TRUE(reg.contains(id)) << id;
    }
    EXPECT_EQ(reg.get(templates::kRetrievalAgent).schema(), ResponseSchema::AgentDecision);
    EXPECT_EQ(reg.get(templates::kConsolidate).slots(), (std::vector<std::string>{"new_triple", "existing_triples"}));
    EXPECT_THROW(reg.get("nope"), Error);
}

TEST(Templates, RenderChecksSlots) {
    PromptTemplate t("t", "Q: {{question}}\nC: {{captions}}", ResponseSchema::FreeText);
    EXPECT_EQ(t.render({{"question", "why"}, {"captions", "x"}}), "Q: why\nC: x");
    EXPECT_THROW(t.render({{"question", "why"}}), Error);
    EXPECT_THROW(t.render({{"question", "why"}, {"captions", "x"}, {"extra", "y"}}), Error);
    // slot syntax in a value is not expanded again
    EXPECT_EQ(t.render({{"question", "{{captions}}"}, {"captions", "x"}}), "Q: {{captions}}\nC: x");
}

TEST(Templates, LoadDirRejectsMissingFiles) {
    const auto dir = std::filesystem::temp_directory_path() / "mmem-templates-test";
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "templates.json") << R"({"version":1,"templates":[{"id":"x","file":"missing.txt","schema":"free_text","slots":[]}]})";
    EXPECT_THROW(TemplateRegistry::load_dir(dir), Error);
    std::ofstream(dir / "missing.txt") << "hello {{name}}";
    EXPECT_THROW(TemplateRegistry::load_dir(dir), Error);  // declared slots differ from the body
    std::ofstream(dir / "templates.json") << R"({"version":1,"templates":[{"id":"x","file":"missing.txt","schema":"free_text","slots":["name"]}]})";
    EXPECT_EQ(TemplateRegistry::load_dir(dir).get("x").render({{"name", "a"}}), "hello a");
    std::filesystem::remove_all(dir);
}

TEST(Structured, FindsJsonInsideProseAndFences) {
    const auto d = parse_as<AgentDecision>(
        "Sure.\n```json\n{\"decision\": \"Search\", \"selected_memory\": {\"memory_type\": \"Visual\", "
        "\"search_query\": \" DAY2 18:34:01-18:34:29 \"}}\n```");
    EXPECT_TRUE(d.search);
    EXPECT_EQ(d.memory_type, "visual");
    EXPECT_EQ(d.query, "DAY2 18:34:01-18:34:29");
    EXPECT_FALSE(parse_as<AgentDecision>("{\"decision\":\"answer\"}").search);
    EXPECT_EQ(parse_as<IdArray>("The best are [\"a\", 3].").ids, (std::vector<std::string>{"a", "3"}));
    EXPECT_EQ(parse_as<EntityList>("{\"named_entities\": [\"Shure\"]}").entities, (std::vector<std::string>{"Shure"}));
}

TEST(Structured, ParseVersusValidationErrors) {
    try {
        parse_as<AgentDecision>("no json here");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.code(), ErrorCode::Parse);
        EXPECT_EQ(e.raw(), "no json here");
    }
    try {
        parse_as<AgentDecision>("{\"decision\":\"search\",\"selected_memory\":{\"memory_type\":\"procedural\",\"search_query\":\"x\"}}");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.code(), ErrorCode::Validation);
    }
    EXPECT_THROW(parse_as<SemanticExtraction>("{\"semantic_triples\":[[\"a\",\"b\",\"c\"]],\"episodic_evidence\":[]}"),
                 ParseError);
    EXPECT_THROW(parse_as<ConsolidationDecision>("{\"updated_triple\":[\"a\"],\"triples_to_remove\":[]}"), ParseError);
}

TEST(Structured, TripleListSkipsMalformedItems) {
    const auto t = parse_as<TripleList>("{\"triples\": [[\"a\",\"b\",\"c\"], [\"x\"], 4, [\"d\",\"e\",\"f\"]]}");
    EXPECT_EQ(t.triples.size(), 2u);
    EXPECT_EQ(t.skipped, 2u);
    EXPECT_EQ(parse_as<TripleList>("[[\"a\",\"b\",\"c\"]]").triples.size(), 1u);
}

TEST(Structured, AnswerLetterForms) {
    EXPECT_EQ(parse_as<AnswerLetter>("A").letter, 'A');
    EXPECT_EQ(parse_as<AnswerLetter>("(c)").letter, 'C');
    EXPECT_EQ(parse_as<AnswerLetter>("The answer is B.").letter, 'B');
    EXPECT_EQ(parse_as<AnswerLetter>("I pick (D) because").letter, 'D');
    EXPECT_THROW(parse_as<AnswerLetter>("hmm"), ParseError);
}

TEST(Structured, SerializeRoundTrips) {
    const std::vector<StructuredValue> values{
        FreeText{"a caption"},
        IdArray{{"x", "y"}},
        EntityList{{"air conditioner", "Shure"}},
        TripleList{{{"a", "b", "c"}}, 0},
        SemanticExtraction{{{"a", "b", "c"}}, {{0, 2}}},
        ConsolidationDecision{RawTriple{"a", "b", "c"}, {0, 1}},
        ConsolidationDecision{std::nullopt, {}},
        AgentDecision{true, "episodic", "air conditioning"},
        AgentDecision{},
        AnswerLetter{'C'},
    };
    for (const auto& v : values) {
        const auto schema = std::visit([](const auto& x) { return std::decay_t<decltype(x)>::kSchema; }, v);
        EXPECT_EQ(parse_structured(serialize_structured(v), schema), v) << serialize_structured(v);
    }
}

TEST(RequestDigest, StableAndSensitive) {
    const SlotValues in{{"passage", "x"}};
    const auto d = request_digest("ner", in);
    EXPECT_EQ(d.size(), 64u);
    EXPECT_EQ(d, request_digest("ner", in));
    EXPECT_NE(d, request_digest("rerank", in));
    EXPECT_NE(d, request_digest("ner", {{"passage", "y"}}));
    const std::vector<FramePayload> f{{1, "a.jpg"}};
    EXPECT_NE(d, request_digest("ner", in, f));
}

class FlakyBackend : public ModelBackend {
public:
    explicit FlakyBackend(int failures, bool retryable) : failures_(failures), retryable_(retryable) {}
    std::string chat(const ChatRequest&) override {
        if (calls_++ < failures_) throw BackendError("boom", retryable_);
        return "ok";
    }
    Vector embed_text(std::string_view) override { return {0.0, 0.0}; }
    BackendInfo info() const override { return {"flaky", "test", "none", false}; }
    int calls_ = 0;

private:
    int failures_;
    bool retryable_;
};

TEST(Complete, RetriesOnlyRetryableFailures) {
    const auto& t = TemplateRegistry::standard().get(templates::kNer);
    FlakyBackend ok_after_two(2, true);
    EXPECT_EQ(complete(ok_after_two, t, {{"passage", "p"}}), "ok");
    EXPECT_EQ(ok_after_two.calls_, 3);

    FlakyBackend never(10, true);
    EXPECT_THROW(complete(never, t, {{"passage", "p"}}), BackendError);
    EXPECT_EQ(never.calls_, 3);

    FlakyBackend fatal(1, false);
    EXPECT_THROW(complete(fatal, t, {{"passage", "p"}}), BackendError);
    EXPECT_EQ(fatal.calls_, 1);

    FlakyBackend text_only(0, false);
    const std::vector<FramePayload> frames{{0, "f.jpg"}};
    try {
        complete(text_only, TemplateRegistry::standard().get(templates::kDescribeFrames),
                 {{"time_range", "r"}, {"focus", "f"}}, frames);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Configuration);
    }
    EXPECT_THROW(embed(text_only, "x"), Error);  // zero vector
    EXPECT_THROW(embed(text_only, ""), Error);
}

TEST(HashEmbedding, DeterministicUnitVectors) {
    const auto a = hash_embedding("air conditioner");
    EXPECT_EQ(a.size(), kScriptedEmbeddingDim);
    EXPECT_NEAR(l2_norm(a), 1.0, 1e-12);
    EXPECT_EQ(a, hash_embedding("air conditioner"));
    EXPECT_NE(a, hash_embedding("air conditioner", kScriptedEmbeddingDim, 1));
    EXPECT_LT(std::abs(unit_cosine(a, hash_embedding("remote"))), 0.6);
}

TEST(ScriptedBackend, LooksUpByTemplateAndDigest) {
    ScriptedBackend b;
    b.add_chat("ner", {{"passage", "x"}}, "[\"x\"]");
    const auto& t = TemplateRegistry::standard().get(templates::kNer);
    EXPECT_EQ(complete(b, t, {{"passage", "x"}}), "[\"x\"]");
    try {
        complete(b, t, {{"passage", "y"}});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_FALSE(e.retryable());
    }
    EXPECT_THROW(b.add_embedding("bad", Vector(3, 1.0)), Error);
}

TEST(ScriptedBackend, FixtureFileFormats) {
    const auto path = std::filesystem::temp_directory_path() / "mmem-fixture-test.jsonl";
    const SlotValues in{{"passage", "x"}};
    {
        std::ofstream out(path);
        out << json{{"type", "chat"}, {"template", "ner"}, {"inputs", in}, {"response", "A"}}.dump() << "\n\n";
        out << json{{"template", "rerank"}, {"digest", "abc"}, {"response", "B"}}.dump() << "\n";
        out << json{{"type", "embed"}, {"text", "t"}, {"vector", Vector(kScriptedEmbeddingDim, 0.5)}}.dump() << "\n";
    }
    auto b = ScriptedBackend::from_file(path);
    EXPECT_EQ(b->chat_entries(), 2u);
    EXPECT_EQ(b->embed_text("t"), Vector(kScriptedEmbeddingDim, 0.5));
    {
        std::ofstream out(path);
        out << "{not json\n";
    }
    try {
        ScriptedBackend::from_file(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Configuration);
        EXPECT_NE(std::string(e.what()).find(":1"), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(RecordingBackend, JournalReplaysThroughScriptedBackend) {
    auto inner = std::make_shared<PolicyBackend>([](const ChatRequest& r) { return "echo:" + r.inputs.at("passage"); });
    auto journal = std::make_shared<DispatchJournal>();
    RecordingBackend rec(inner, journal);
    const auto& t = TemplateRegistry::standard().get(templates::kNer);
    EXPECT_EQ(complete(rec, t, {{"passage", "a"}}), "echo:a");
    rec.embed_text("hello");
    ASSERT_EQ(journal->size(), 2u);

    const auto path = std::filesystem::temp_directory_path() / "mmem-journal-test.jsonl";
    {
        std::ofstream out(path);
        for (const auto& r : journal->records()) out << r.dump() << "\n";
    }
    auto replay = ScriptedBackend::from_file(path);
    EXPECT_EQ(complete(*replay, t, {{"passage", "a"}}), "echo:a");
    EXPECT_EQ(replay->embed_text("hello"), inner->embed_text("hello"));
    EXPECT_EQ(rec.info().kind, "recording:policy");
    std::filesystem::remove(path);
}

TEST(RemoteBackend, RejectsNonHttpEndpoints) {
    EXPECT_THROW(RemoteBackend(RemoteConfig{"ftp://x", "m", "e", ""}), Error);
    RemoteConfig text_only{"http://127.0.0.1:1", "m", "e", ""};
    text_only.multimodal = false;
    RemoteBackend b(text_only);
    ChatRequest r;
    r.frames = {{0, "f.jpg"}};
    EXPECT_THROW(b.chat(r), Error);
}

TEST(RemoteBackend, RequestBodies) {
    RemoteConfig cfg{"http://h/v1", "chat-m", "embed-m", ""};
    ChatRequest r;
    r.prompt = "hi";
    auto body = json::parse(RemoteBackend::chat_body(cfg, r));
    EXPECT_EQ(body["model"], "chat-m");
    EXPECT_EQ(body["messages"][0]["content"], "hi");
    r.frames = {{0, "https://img/1.jpg"}};
    body = json::parse(RemoteBackend::chat_body(cfg, r));
    EXPECT_EQ(body["messages"][0]["content"][1]["image_url"]["url"], "https://img/1.jpg");
    EXPECT_EQ(json::parse(RemoteBackend::embedding_body(cfg, "x")), (json{{"model", "embed-m"}, {"input", "x"}}));
}

TEST(RemoteBackend, TalksToLocalServer) {
    httplib::Server server;
    std::atomic<int> chat_calls{0};
    std::string auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        auth = req.get_header_value("Authorization");
        if (chat_calls++ == 0) {
            res.status = 503;
            return;
        }
        const auto body = json::parse(req.body);
        const json reply{{"choices", {{{"message", {{"content", "echo " + body["messages"][0]["content"].get<std::string>()}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    server.Post("/v1/embeddings", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"data", {{{"embedding", {3.0, 4.0}}}}}}.dump(), "application/json");
    });
    server.Post("/bad/chat/completions", [](const httplib::Request&, httplib::Response& res) { res.status = 400; });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    RemoteConfig cfg{"http://127.0.0.1:" + std::to_string(port) + "/v1/", "m", "e", "secret", 5, 2, true};
    RemoteBackend b(cfg);
    PromptTemplate t("plain", "{{x}}", ResponseSchema::FreeText);
    EXPECT_EQ(complete(b, t, {{"x", "hello"}}), "echo hello");  // first attempt got 503
    EXPECT_EQ(chat_calls.load(), 2);
    EXPECT_EQ(auth, "Bearer secret");
    EXPECT_EQ(embed(b, "anything"), (Vector{0.6, 0.8}));

    RemoteConfig bad = cfg;
    bad.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/bad";
    RemoteBackend b2(bad);
    try {
        complete(b2, t, {{"x", "y"}});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_FALSE(e.retryable());
    }
    server.stop();
    th.join();
}

}  // namespace
}  // namespace mmem
