#include "synthetic_corpus.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmem/backends/scripted.hpp"
#include "mmem/backends/structured.hpp"
#include "mmem/error.hpp"

namespace mmem::testing {

namespace {

using nlohmann::json;

constexpr std::int64_t kFine = 30 * kSecondMs;
constexpr std::int64_t kFrameStep = 6 * kSecondMs;
constexpr std::int64_t kFactFrameOffset = 12 * kSecondMs;
const std::string kFiller = "The camera wearer tidies the room.";
const std::string kGenericScene = "An ordinary indoor scene.";

std::int64_t clock_ms(const char* hms) {
    int h = 0, m = 0, s = 0;
    if (std::sscanf(hms, "%d:%d:%d", &h, &m, &s) != 3) throw std::logic_error(hms);
    return h * kHourMs + m * kMinuteMs + s * kSecondMs;
}

struct Event {
    const char* at;
    const char* person;
    const char* verb;
    const char* object;
};

const Event kEvents[] = {
    {"00:04:00", "Alice", "flies", "blue kite"},        {"00:25:30", "Bob", "tunes", "old violin"},
    {"00:39:00", "Nora", "waters", "tall fern"},        {"00:50:00", "Tasha", "folds", "green blanket"},
    {"01:12:00", "Alice", "cleans", "copper kettle"},   {"01:29:30", "Bob", "polishes", "silver trophy"},
    {"01:40:30", "Nora", "assembles", "wooden shelf"},  {"02:05:00", "Tasha", "reads", "travel guide"},
    {"02:28:00", "Alice", "charges", "camera battery"}, {"02:58:30", "Bob", "peels", "ripe mango"},
    {"03:20:00", "Nora", "sketches", "stone bridge"},   {"03:47:00", "Tasha", "wraps", "birthday gift"},
    {"04:09:30", "Tasha", "bakes", "lemon tart"},       {"04:35:00", "Alice", "repots", "jade plant"},
    {"04:50:00", "Bob", "feeds", "grey cat"},           {"05:05:30", "Nora", "mends", "torn jacket"},
    {"05:20:00", "Tasha", "lights", "scented candle"},  {"05:33:00", "Alice", "sorts", "vinyl records"},
    {"05:44:30", "Bob", "stains", "garden fence"},      {"05:55:00", "Nora", "packs", "leather suitcase"},
};
constexpr std::size_t kAskedEvents = 12;

struct HabitMention {
    const char* at;
    const char* sentence;
    RawTriple episodic;
};

struct Habit {
    RawTriple semantic;
    HabitMention mentions[2];
    const char* question;
    const char* distractors[3];
};

const Habit kHabits[] = {
    {{"lucia", "prefers", "skipping dessert"},
     {{"00:31:00", "Lucia declines the cake.", {"lucia", "declines", "cake"}},
      {"01:52:00", "Lucia declines the pudding.", {"lucia", "declines", "pudding"}}},
     "What does Lucia usually do about dessert?",
     {"a second dessert", "fruit salad", "ice cream"}},
    {{"shure", "practices", "guitar after meals"},
     {{"00:58:00", "Shure plays guitar after lunch.", {"shure", "plays guitar after", "lunch"}},
      {"02:42:30", "Shure plays guitar after dinner.", {"shure", "plays guitar after", "dinner"}}},
     "What does Shure usually do after eating?",
     {"piano before bed", "a nap", "dishes right away"}},
    {{"katrina", "prefers", "oat milk"},
     {{"01:05:00", "Katrina drinks oat milk at breakfast.", {"katrina", "drinks", "oat milk"}},
      {"03:33:00", "Katrina orders an oat milk latte.", {"katrina", "orders", "oat milk latte"}}},
     "Which milk does Katrina prefer?",
     {"soy milk", "whole milk", "almond milk"}},
    {{"violet", "looks after", "balcony plants"},
     {{"02:15:00", "Violet waters the balcony plants.", {"violet", "waters", "balcony plants"}},
      {"04:22:30", "Violet trims the balcony plants.", {"violet", "trims", "balcony plants"}}},
     "What does Violet regularly take care of?",
     {"the fish tank", "the bicycle", "the laundry"}},
    {{"mark", "habitually does", "morning jogging"},
     {{"03:05:00", "Mark jogs at dawn.", {"mark", "jogs at", "dawn"}},
      {"05:12:00", "Mark jogs before breakfast.", {"mark", "jogs before", "breakfast"}}},
     nullptr,
     {}},
};
constexpr std::size_t kAskedHabits = 4;

struct FeatureFact {
    const char* at;
    const char* phrase;       // search query; the planted vector is its embedding
    const char* description;  // what the describer sees in the segment
    const char* answer;
    const char* question;
    const char* distractors[3];
};

const FeatureFact kFeatureFacts[] = {
    {"00:15:00", "umbrella leaning by the door", "A red umbrella leans against the door frame.", "red umbrella",
     "What umbrella is leaning by the door?", {"black umbrella", "folded parasol", "plaid umbrella"}},
    {"02:45:00", "poster above the desk", "A mountain poster hangs above the desk.", "mountain poster",
     "What hangs above the desk?", {"movie poster", "wall clock", "world map"}},
    {"05:10:00", "mug on the windowsill", "A striped mug sits on the windowsill.", "striped mug", nullptr, {}},
};
constexpr std::size_t kAskedFeatureFacts = 2;

struct FrameFact {
    std::size_t event;
    const char* description;
    const char* answer;
    const char* question;
    const char* distractors[3];
};

const FrameFact kFrameFacts[] = {
    {12, "The lemon tart has a burnt edge.", "burnt edge", "What detail shows on the lemon tart that Tasha bakes?",
     {"powdered sugar", "fresh berries", "a birthday candle"}},
    {13, "The jade plant sits in a cracked blue pot.", "cracked blue pot",
     "What does the jade plant that Alice repots sit in?", {"a glass jar", "a woven basket", "a plastic tray"}},
};

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

bool contains_ci(const std::string& hay, const std::string& needle) {
    return lower(hay).find(lower(needle)) != std::string::npos;
}

// Whole-word, case-insensitive occurrence.
bool mentions(const std::string& text, const std::string& entity) {
    const auto hay = lower(text), needle = lower(entity);
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
        const bool left = pos == 0 || !std::isalnum(static_cast<unsigned char>(hay[pos - 1]));
        const auto end = pos + needle.size();
        const bool right = end == hay.size() || !std::isalnum(static_cast<unsigned char>(hay[end]));
        if (left && right) return true;
    }
    return false;
}

std::string event_sentence(const Event& e) {
    return std::string(e.person) + " " + e.verb + " the " + e.object + ".";
}

std::string frame_locator(std::int64_t t) { return "frames/f" + std::to_string(t) + ".jpg"; }

struct PlanStep {
    enum class Kind { Search, FirstRangeVisual } kind = Kind::Search;
    std::string memory;
    std::string query;
};

struct Knowledge {
    std::map<std::string, RawTriple> sentences;  // caption sentence -> episodic triple
    std::vector<std::string> entities;
    std::map<std::string, std::vector<PlanStep>> plans;  // question -> retrieval plan
    std::map<std::string, std::string> frame_descriptions;
};

std::string ner(const Knowledge& k, const std::string& passage) {
    std::vector<std::string> found;
    for (const auto& e : k.entities)
        if (mentions(passage, e)) found.push_back(e);
    return serialize_structured(EntityList{found});
}

std::string triples(const Knowledge& k, const std::string& passage) {
    TripleList out;
    for (const auto& [sentence, t] : k.sentences)
        if (passage.find(sentence) != std::string::npos) out.triples.push_back(t);
    return serialize_structured(out);
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::string coarse_caption(const std::string& listing) {
    std::string out;
    for (const auto& line : lines_of(listing)) {
        const auto cut = line.find("] ");
        if (cut == std::string::npos) continue;
        const auto caption = line.substr(cut + 2);
        if (caption == kFiller) continue;
        out += (out.empty() ? "" : " ") + caption;
    }
    return out.empty() ? kFiller : out;
}

std::string semantic_triples(const std::string& episodes) {
    SemanticExtraction out;
    for (const auto& habit : kHabits) {
        std::vector<int> evidence;
        for (const auto& line : lines_of(episodes)) {
            const auto dot = line.find(". ");
            if (dot == std::string::npos) continue;
            const auto caption = line.substr(dot + 2);
            for (const auto& m : habit.mentions)
                if (caption == m.sentence) evidence.push_back(std::stoi(line.substr(0, dot)));
        }
        if (evidence.empty()) continue;
        out.triples.push_back(habit.semantic);
        out.evidence.push_back(evidence);
    }
    return serialize_structured(out);
}

// Removes existing triplets identical to the new one and keeps the new one.
std::string judge(const std::string& new_triple, const std::string& existing) {
    const auto incoming = json::parse(new_triple);
    ConsolidationDecision d;
    d.updated = RawTriple{incoming[0], incoming[1], incoming[2]};
    for (const auto& line : lines_of(existing)) {
        const auto dot = line.find(". ");
        if (dot == std::string::npos) continue;
        if (json::parse(line.substr(dot + 2)) == incoming) d.remove.push_back(std::stoi(line.substr(0, dot)));
    }
    return serialize_structured(d);
}

std::int64_t granularity_rank(const std::string& label) {
    static const std::map<std::string, std::int64_t> ranks{{"30s", 0}, {"3min", 1}, {"10min", 2}, {"1h", 3}};
    auto it = ranks.find(label);
    return it == ranks.end() ? 99 : it->second;
}

// Captions that mention the query, finest granularity first, at most three.
std::string rerank(const std::string& question, const std::string& captions) {
    struct Block {
        std::string id;
        std::int64_t rank;
        std::string caption;
    };
    std::vector<Block> blocks;
    const auto lines = lines_of(captions);
    for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
        if (lines[i].rfind("ID: ", 0) != 0) continue;
        const auto bar = lines[i].find(" | granularity: ");
        const auto bar2 = lines[i].find(" | ", bar + 3);
        Block b{lines[i].substr(4, bar - 4),
                granularity_rank(lines[i].substr(bar + 16, bar2 - bar - 16)), lines[i + 1]};
        if (contains_ci(b.caption, question)) blocks.push_back(std::move(b));
    }
    std::stable_sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) { return a.rank < b.rank; });
    IdArray out;
    for (std::size_t i = 0; i < blocks.size() && i < 3; ++i) out.ids.push_back(blocks[i].id);
    return serialize_structured(out);
}

std::string decide(const Knowledge& k, const std::string& query, const std::string& history) {
    std::size_t done = 0;
    for (auto pos = history.find("### Round "); pos != std::string::npos; pos = history.find("### Round ", pos + 1))
        ++done;
    AgentDecision d;
    auto it = k.plans.find(query);
    if (it == k.plans.end() || done >= it->second.size()) return serialize_structured(d);
    const auto& step = it->second[done];
    d.search = true;
    d.memory_type = step.memory;
    d.query = step.query;
    if (step.kind == PlanStep::Kind::FirstRangeVisual) {
        const auto open = history.find("[DAY");
        if (open == std::string::npos) return serialize_structured(AgentDecision{});
        d.query = history.substr(open + 1, history.find(']', open) - open - 1);
    }
    return serialize_structured(d);
}

std::string describe(const Knowledge& k, const std::vector<FramePayload>& frames) {
    std::string out;
    for (const auto& f : frames) {
        auto it = k.frame_descriptions.find(f.locator);
        if (it != k.frame_descriptions.end()) out += (out.empty() ? "" : " ") + it->second;
    }
    return out.empty() ? kGenericScene : out;
}

// The unique choice whose text appears in the context; 'A' otherwise.
std::string respond(const std::string& choices, const std::string& context) {
    std::vector<char> hits;
    for (const auto& line : lines_of(choices)) {
        if (line.size() < 5 || line[0] != '(') continue;
        if (contains_ci(context, line.substr(4))) hits.push_back(line[1]);
    }
    return std::string(1, hits.size() == 1 ? hits.front() : 'A');
}

EvalItem make_item(std::string id, std::string category, std::string question, char gold, const std::string& answer,
                   const char* const (&distractors)[3], std::vector<TimeRange> gold_ranges) {
    EvalItem item;
    item.id = std::move(id);
    item.category = std::move(category);
    item.question = std::move(question);
    item.gold = gold;
    std::size_t d = 0;
    for (char l = 'A'; l <= 'D'; ++l) item.choices[l] = (l == gold) ? answer : std::string(distractors[d++]);
    item.gold_ranges = std::move(gold_ranges);
    return item;
}

SyntheticCorpus build() {
    SyntheticCorpus c;
    auto k = std::make_shared<Knowledge>();
    const auto segments = static_cast<std::size_t>(c.total_ms / kFine);
    std::vector<std::string> captions(segments, kFiller);
    std::vector<std::optional<std::string>> planted_vector(segments);

    std::set<std::size_t> used;
    auto claim = [&](std::int64_t start) {
        if (start % kFine != 0) throw std::logic_error("planted fact off the 30 s grid");
        const auto idx = static_cast<std::size_t>(start / kFine);
        if (!used.insert(idx).second) throw std::logic_error("two planted facts share a segment");
        return idx;
    };

    k->sentences[kFiller] = {"camera wearer", "tidies", "room"};
    std::set<std::string> entities{"camera wearer", "room"};
    auto add_sentence = [&](const std::string& sentence, const RawTriple& t) {
        k->sentences[sentence] = t;
        entities.insert(lower(t.subject));
        entities.insert(lower(t.object));
    };

    for (std::size_t i = 0; i < std::size(kEvents); ++i) {
        const auto& e = kEvents[i];
        const auto idx = claim(clock_ms(e.at));
        captions[idx] = event_sentence(e);
        add_sentence(captions[idx], {e.person, e.verb, e.object});
    }
    for (const auto& h : kHabits) {
        for (const auto& m : h.mentions) {
            const auto idx = claim(clock_ms(m.at));
            captions[idx] = m.sentence;
            add_sentence(m.sentence, m.episodic);
        }
        entities.insert(h.semantic.subject);
    }
    for (const auto& f : kFeatureFacts) {
        const auto start = clock_ms(f.at);
        const auto idx = claim(start);
        planted_vector[idx] = f.phrase;
        k->frame_descriptions[frame_locator(start + kFactFrameOffset)] = f.description;
    }
    for (const auto& f : kFrameFacts) {
        k->frame_descriptions[frame_locator(clock_ms(kEvents[f.event].at) + kFactFrameOffset)] = f.description;
    }
    k->entities.assign(entities.begin(), entities.end());

    for (std::size_t i = 0; i < segments; ++i) {
        const auto range = TimeRange::of(static_cast<std::int64_t>(i) * kFine, static_cast<std::int64_t>(i + 1) * kFine);
        const auto id = "seg-" + std::to_string(i);
        c.fine_segments.push_back(Segment{id, range, kFine, captions[i], std::nullopt});
        const auto text = planted_vector[i] ? *planted_vector[i] : "background scene " + std::to_string(i);
        c.features.push_back(FeatureEntry{"vis-" + std::to_string(i), range, hash_embedding(text)});
    }
    for (std::int64_t t = 0; t < c.total_ms; t += kFrameStep) c.frames.push_back({t, frame_locator(t)});

    const char* const kVerbDistractors[] = {"loses", "hides", "breaks"};
    auto fine_range = [](const char* at) { return TimeRange::of(clock_ms(at), clock_ms(at) + kFine); };
    for (std::size_t i = 0; i < kAskedEvents; ++i) {
        const auto& e = kEvents[i];
        const std::string obj = e.object;
        const std::string d0 = std::string(kVerbDistractors[0]) + " the " + obj,
                          d1 = std::string(kVerbDistractors[1]) + " the " + obj,
                          d2 = std::string(kVerbDistractors[2]) + " the " + obj;
        const char* const distractors[3] = {d0.c_str(), d1.c_str(), d2.c_str()};
        const auto question = "What does " + std::string(e.person) + " do with the " + obj + "?";
        char id[16];
        std::snprintf(id, sizeof id, "ep-%02zu", i);
        c.items.push_back(make_item(id, "episodic", question, static_cast<char>('A' + i % 4),
                                    std::string(e.verb) + " the " + obj, distractors, {fine_range(e.at)}));
        k->plans[question] = {{PlanStep::Kind::Search, "episodic", obj}};
    }
    const char kVisualGold[] = {'B', 'C', 'D', 'B'};
    for (std::size_t i = 0; i < std::size(kFrameFacts); ++i) {
        const auto& f = kFrameFacts[i];
        const auto& e = kEvents[f.event];
        c.items.push_back(make_item("vis-ts-" + std::to_string(i), "visual", f.question, kVisualGold[i], f.answer,
                                    f.distractors, {fine_range(e.at)}));
        k->plans[f.question] = {{PlanStep::Kind::Search, "episodic", e.object},
                                {PlanStep::Kind::FirstRangeVisual, "visual", ""}};
    }
    for (std::size_t i = 0; i < kAskedFeatureFacts; ++i) {
        const auto& f = kFeatureFacts[i];
        c.items.push_back(make_item("vis-ft-" + std::to_string(i), "visual", f.question, kVisualGold[2 + i], f.answer,
                                    f.distractors, {fine_range(f.at)}));
        k->plans[f.question] = {{PlanStep::Kind::Search, "visual", f.phrase}};
    }
    const char kSemanticGold[] = {'C', 'D', 'B', 'C'};
    for (std::size_t i = 0; i < kAskedHabits; ++i) {
        const auto& h = kHabits[i];
        c.items.push_back(
            make_item("sem-" + std::to_string(i), "semantic", h.question, kSemanticGold[i], h.semantic.object, h.distractors, {}));
        std::string subject = h.semantic.subject;
        subject[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(subject[0])));
        k->plans[h.question] = {{PlanStep::Kind::Search, "semantic", subject}};
    }

    c.oracle = std::make_shared<PolicyBackend>(
        [k](const ChatRequest& r) -> std::string {
            const auto& in = r.inputs;
            if (r.template_id == "ner") return ner(*k, in.at("passage"));
            if (r.template_id == "episodic_triples") return triples(*k, in.at("passage"));
            if (r.template_id == "coarse_caption") return coarse_caption(in.at("captions"));
            if (r.template_id == "rerank") return rerank(in.at("question"), in.at("captions"));
            if (r.template_id == "semantic_triples") return semantic_triples(in.at("episodes"));
            if (r.template_id == "consolidate") return judge(in.at("new_triple"), in.at("existing_triples"));
            if (r.template_id == "retrieval_agent") return decide(*k, in.at("query"), in.at("round_history"));
            if (r.template_id == "describe_frames") return describe(*k, r.frames);
            if (r.template_id == "response") return respond(in.at("choices"), in.at("context"));
            throw BackendError("oracle has no policy for " + r.template_id, false);
        },
        PolicyBackend::EmbedPolicy{}, true, "oracle");
    return c;
}

}  // namespace

const SyntheticCorpus& synthetic_corpus() {
    static const SyntheticCorpus corpus = build();
    return corpus;
}

const std::vector<std::int64_t>& synthetic_event_starts() {
    static const std::vector<std::int64_t> starts = [] {
        std::vector<std::int64_t> out;
        for (const auto& e : kEvents) out.push_back(clock_ms(e.at));
        return out;
    }();
    return starts;
}

Memories ingest_synthetic(const SyntheticCorpus& corpus, std::size_t parallelism) {
    Memories m;
    m.config = corpus.config;
    auto& backend = *corpus.oracle;

    EpisodicMemory episodic(corpus.config);
    ingest_fine_segments(episodic, corpus.fine_segments, backend, parallelism);
    build_coarse_scales(episodic, backend);
    m.episodic = std::move(episodic);

    EmbeddingCache cache(backend);
    m.semantic = build_semantic(corpus.fine_segments, corpus.config.semantic_scale_ms, backend, cache);

    VisualMemory visual(corpus.config.visual_scale_ms, kScriptedEmbeddingDim);
    for (const auto& f : corpus.features) visual.index_segment(f.segment_id, f.range, f.vector);
    for (const auto& f : corpus.frames) visual.add_frame(f.timestamp_ms, f.locator);
    m.visual = std::move(visual);
    return m;
}

}  // namespace mmem::testing
