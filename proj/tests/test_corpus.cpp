#include <doctest.h>

#include <fstream>
#include <string>
#include <vector>

#include "auxlm/corpus.hpp"
#include "auxlm/errors.hpp"
#include "support/synthetic.hpp"

using namespace auxlm;
using testing::TempDir;

namespace {

std::string write_text(const TempDir& dir, const std::string& name, const std::string& body) {
    std::string path = dir.file(name);
    std::ofstream f(path);
    f << body;
    return path;
}

}  // namespace

TEST_CASE("dailydialog: basic line parsing") {
    TempDir dir;
    auto path = write_text(dir, "dd.txt", "Hi !__eou__Hello .__eou__\n");
    LoadStats st;
    auto sessions = load_dailydialog(path, Split::Train, &st);
    REQUIRE(sessions.size() == 1);
    CHECK(sessions[0].persona.empty());
    REQUIRE(sessions[0].turns.size() == 2);
    CHECK(sessions[0].turns[0].speaker == Speaker::AgentA);
    CHECK(sessions[0].turns[0].text == "Hi !");
    CHECK(sessions[0].turns[1].speaker == Speaker::AgentB);
    CHECK(sessions[0].turns[1].text == "Hello .");
    CHECK(st.skipped == 0);
    CHECK(st.utterances == 2);
}

TEST_CASE("dailydialog: single-utterance line is skipped and counted") {
    TempDir dir;
    auto path = write_text(dir, "dd.txt", "solo utterance__eou__\na__eou__b__eou__\n");
    LoadStats st;
    auto sessions = load_dailydialog(path, Split::Train, &st);
    CHECK(sessions.size() == 1);
    CHECK(st.skipped == 1);
}

TEST_CASE("dailydialog: speakers alternate from AgentA") {
    TempDir dir;
    auto path = write_text(dir, "dd.txt", "a__eou__b__eou__c__eou__d__eou__e__eou__\n");
    auto sessions = load_dailydialog(path, Split::Valid);
    REQUIRE(sessions.size() == 1);
    for (size_t i = 0; i < sessions[0].turns.size(); ++i)
        CHECK(sessions[0].turns[i].speaker == (i % 2 == 0 ? Speaker::AgentA : Speaker::AgentB));
    CHECK(sessions[0].split == Split::Valid);
}

TEST_CASE("dailydialog: missing file is an io error") {
    CHECK_THROWS_AS(load_dailydialog("/nonexistent/dd.txt", Split::Train), IoError);
}

TEST_CASE("personachat: schema mapping") {
    TempDir dir;
    auto path = write_text(dir, "pc.json", R"([
      {"personality": ["p1", "p2", "p3", "p4"],
       "utterances": ["t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8"]}
    ])");
    auto sessions = load_personachat(path, Split::Train);
    REQUIRE(sessions.size() == 1);
    CHECK(sessions[0].persona.size() == 4);
    CHECK(sessions[0].turns.size() == 8);
    CHECK(sessions[0].turns[0].speaker == Speaker::AgentA);
    CHECK(sessions[0].turns[7].text == "t8");
}

TEST_CASE("personachat: empty array gives empty list") {
    TempDir dir;
    auto path = write_text(dir, "pc.json", "[]");
    CHECK(load_personachat(path, Split::Train).empty());
}

TEST_CASE("personachat: missing key -> schema error naming it") {
    TempDir dir;
    auto path = write_text(dir, "pc.json", R"([{"utterances": ["a", "b"]}])");
    try {
        load_personachat(path, Split::Train);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("personality") != std::string::npos);
    }
}

TEST_CASE("personachat: malformed json -> schema error") {
    TempDir dir;
    auto path = write_text(dir, "pc.json", "[{");
    CHECK_THROWS_AS(load_personachat(path, Split::Train), SchemaError);
}

TEST_CASE("windowize: counts and context lengths") {
    DialogueSession s;
    s.id = "w";
    for (int t = 0; t < 5; ++t)
        s.turns.push_back({t % 2 == 0 ? Speaker::AgentA : Speaker::AgentB,
                           "turn " + std::to_string(t)});

    auto wide = windowize(s, 10);
    REQUIRE(wide.size() == 4);
    for (size_t i = 0; i < wide.size(); ++i) {
        CHECK(wide[i].context.size() == i + 1);
        CHECK(wide[i].response.text == s.turns[i + 1].text);
        CHECK(wide[i].response.speaker != wide[i].context.back().speaker);
    }

    auto narrow = windowize(s, 2);
    REQUIRE(narrow.size() == 4);
    CHECK(narrow[0].context.size() == 1);
    CHECK(narrow[1].context.size() == 2);
    CHECK(narrow[2].context.size() == 2);
    CHECK(narrow[3].context.size() == 2);
    // most recent turns kept
    CHECK(narrow[3].context.back().text == "turn 3");
    CHECK(narrow[3].context.front().text == "turn 2");
}

TEST_CASE("windowize: 2-turn session gives exactly one window") {
    DialogueSession s;
    s.id = "m";
    s.turns = {{Speaker::AgentA, "hi"}, {Speaker::AgentB, "yo"}};
    CHECK(windowize(s, 6).size() == 1);
}

TEST_CASE("windowize: property |windows| == |turns|-1 when budget is generous") {
    auto sessions = testing::make_sessions(50, 99, true);
    for (const auto& s : sessions)
        CHECK(windowize(s, static_cast<int>(s.turns.size())).size() == s.turns.size() - 1);
}

TEST_CASE("normalized round-trip is identity") {
    TempDir dir;
    auto sessions = testing::make_sessions(30, 123, true);
    sessions[3].split = Split::Test;
    sessions[7].split = Split::Valid;
    auto path = dir.file("norm.jsonl");
    write_normalized(sessions, path);
    auto back = read_normalized(path);
    CHECK(back == sessions);
}

TEST_CASE("normalized writer keeps empty persona as an array") {
    TempDir dir;
    std::vector<DialogueSession> sessions = {
        {"x", {}, {{Speaker::AgentA, "a"}, {Speaker::AgentB, "b"}}, Split::Train}};
    auto path = dir.file("norm.jsonl");
    write_normalized(sessions, path);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line.find("\"persona\":[]") != std::string::npos);
}

TEST_CASE("normalized reader names the corrupt line") {
    TempDir dir;
    auto sessions = testing::make_sessions(3, 5);
    auto path = dir.file("norm.jsonl");
    write_normalized(sessions, path);
    std::ofstream f(path, std::ios::app);
    f << "{not json}\n";
    f.close();
    try {
        read_normalized(path);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
}

TEST_CASE("loaders only emit invariant-valid sessions under fuzz") {
    StreamRng rng(derive_key(2024, fnv1a64("fuzz-lines")));
    TempDir dir;
    const std::string pieces[] = {"__eou__", "hello", " ", "", "\t", "!", "__eou", "eou__", "a b"};
    for (int round = 0; round < 50; ++round) {
        std::string body;
        int lines = 1 + static_cast<int>(rng.next_below(5));
        for (int l = 0; l < lines; ++l) {
            int parts = static_cast<int>(rng.next_below(12));
            for (int p = 0; p < parts; ++p) body += pieces[rng.next_below(std::size(pieces))];
            body += "\n";
        }
        auto path = write_text(dir, "fuzz" + std::to_string(round) + ".txt", body);
        auto sessions = load_dailydialog(path, Split::Train);
        for (const auto& s : sessions) CHECK_NOTHROW(validate_session(s));
    }
}

TEST_CASE("validate_session rejects broken invariants") {
    DialogueSession one_turn{"a", {}, {{Speaker::AgentA, "x"}}, Split::Train};
    CHECK_THROWS_AS(validate_session(one_turn), SchemaError);

    DialogueSession same_speaker{
        "b", {}, {{Speaker::AgentA, "x"}, {Speaker::AgentA, "y"}}, Split::Train};
    CHECK_THROWS_AS(validate_session(same_speaker), SchemaError);

    DialogueSession blank{"c", {}, {{Speaker::AgentA, "x"}, {Speaker::AgentB, "  "}}, Split::Train};
    CHECK_THROWS_AS(validate_session(blank), SchemaError);
}
