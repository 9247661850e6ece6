#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "podgen/rng.hpp"
#include "podgen/sequence.hpp"

using namespace podgen;

namespace {

const MixedVocab kVocab{4, 8};  // text ids 0-3, code ids 4-11, specials 12-16

SpeakerPrompt make_prompt(int speaker, std::vector<int> text, std::vector<int> codes) {
    SpeakerPrompt p;
    p.speaker_id = speaker;
    p.text_tokens = std::move(text);
    p.code_tokens = std::move(codes);
    return p;
}

ScriptTurn make_turn(int speaker, std::vector<int> text, std::vector<int> codes = {}) {
    ScriptTurn t;
    t.speaker_id = speaker;
    t.text_tokens = std::move(text);
    t.code_tokens = std::move(codes);
    return t;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("merge_adjacent_turns: collapses runs, output alternates, idempotent") {
    std::vector<ScriptTurn> turns = {
        make_turn(1, {0}, {1}), make_turn(1, {1}, {2}), make_turn(2, {2}, {3}),
        make_turn(1, {3}, {4}), make_turn(1, {0}, {5}), make_turn(1, {1}, {6}),
    };
    auto merged = merge_adjacent_turns(turns);
    REQUIRE(merged.size() == 3);
    CHECK(merged[0].speaker_id == 1);
    CHECK(merged[0].text_tokens == std::vector<int>{0, 1});
    CHECK(merged[0].code_tokens == std::vector<int>{1, 2});
    CHECK(merged[1].speaker_id == 2);
    CHECK(merged[2].text_tokens == std::vector<int>{3, 0, 1});
    for (std::size_t i = 1; i < merged.size(); ++i)
        CHECK(merged[i].speaker_id != merged[i - 1].speaker_id);
    auto again = merge_adjacent_turns(merged);
    CHECK(again.size() == merged.size());
    CHECK_THROWS(merge_adjacent_turns({}));
    CHECK_THROWS(merge_adjacent_turns({make_turn(0, {1})}));
}

TEST_CASE("build_sequence: region order and loss confined to podcast speech") {
    auto p1 = make_prompt(1, {0, 1}, {2, 3});
    auto p2 = make_prompt(2, {2}, {0});
    std::vector<ScriptTurn> turns = {make_turn(1, {3}, {1, 2, 3}), make_turn(2, {1}, {0})};
    BuiltSequence seq = build_sequence(p1, p2, turns, BuildMode::Train, kVocab);

    // regions appear in the fixed order and never interleave
    int max_seen = -1;
    for (Region r : seq.region) {
        CHECK(int(r) >= max_seen);
        max_seen = std::max(max_seen, int(r));
    }
    CHECK(seq.tokens.front() == kVocab.bos());
    CHECK(seq.tokens.back() == kVocab.eos());
    CHECK_FALSE(seq.loss_mask.back());  // EOS carries no loss

    for (int i = 0; i < seq.size(); ++i)
        if (seq.loss_mask[std::size_t(i)])
            CHECK(seq.region[std::size_t(i)] == Region::PodcastSpeech);

    // each turn contributes its codes plus one SC to the loss: 3+1 and 1+1
    REQUIRE(seq.turn_boundaries.size() == 2);
    CHECK(seq.turn_boundaries[0].second - seq.turn_boundaries[0].first == 4);
    CHECK(seq.turn_boundaries[1].second - seq.turn_boundaries[1].first == 2);
    int masked = 0;
    for (bool m : seq.loss_mask) masked += m ? 1 : 0;
    CHECK(masked == 6);
    for (const auto& [start, end] : seq.turn_boundaries)
        CHECK(seq.tokens[std::size_t(end - 1)] == kVocab.sc());
}

TEST_CASE("build_sequence: infer mode stops after the prompt speech region") {
    auto p1 = make_prompt(1, {0}, {2, 3});
    auto p2 = make_prompt(2, {2}, {0});
    std::vector<ScriptTurn> turns = {make_turn(1, {3}), make_turn(2, {1})};
    BuiltSequence seq = build_sequence(p1, p2, turns, BuildMode::Infer, kVocab);
    CHECK(seq.region.back() == Region::PromptSpeech);
    CHECK(seq.tokens.back() == kVocab.sc());
    CHECK(seq.turn_boundaries.empty());
    for (bool m : seq.loss_mask) CHECK_FALSE(m);
}

TEST_CASE("build_sequence: input validation") {
    auto p1 = make_prompt(1, {0}, {1});
    auto p2 = make_prompt(2, {1}, {2});
    std::vector<ScriptTurn> ok = {make_turn(1, {0}, {1})};
    CHECK_THROWS(build_sequence(p2, p1, ok, BuildMode::Train, kVocab));  // wrong order
    CHECK_THROWS(build_sequence(make_prompt(1, {}, {1}), p2, ok, BuildMode::Train, kVocab));
    CHECK_THROWS(build_sequence(p1, make_prompt(2, {1}, {}), ok, BuildMode::Train, kVocab));
    CHECK_THROWS(build_sequence(p1, p2, {}, BuildMode::Train, kVocab));
    std::vector<ScriptTurn> same = {make_turn(1, {0}, {1}), make_turn(1, {1}, {2})};
    CHECK_THROWS(build_sequence(p1, p2, same, BuildMode::Train, kVocab));
    std::vector<ScriptTurn> nocodes = {make_turn(1, {0})};
    CHECK_THROWS(build_sequence(p1, p2, nocodes, BuildMode::Train, kVocab));
    CHECK_NOTHROW(build_sequence(p1, p2, nocodes, BuildMode::Infer, kVocab));
}

TEST_CASE("parse_generated inverts the podcast-speech region of build_sequence") {
    Rng rng(77, 0);
    for (int trial = 0; trial < 200; ++trial) {
        auto p1 = make_prompt(1, {0}, {1});
        auto p2 = make_prompt(2, {1}, {2});
        const int num_turns = 1 + int(rng.uniform_int(6));
        const int first = 1 + int(rng.uniform_int(2));
        std::vector<ScriptTurn> turns;
        for (int t = 0; t < num_turns; ++t) {
            int speaker = ((t % 2 == 0) == (first == 1)) ? 1 : 2;
            std::vector<int> codes(1 + rng.uniform_int(5));
            for (auto& c : codes) c = int(rng.uniform_int(8));
            turns.push_back(make_turn(speaker, {int(rng.uniform_int(4))}, codes));
        }
        BuiltSequence seq = build_sequence(p1, p2, turns, BuildMode::Train, kVocab);
        // slice out the loss-masked stream plus the trailing EOS
        std::vector<int> speech;
        for (int i = 0; i < seq.size(); ++i)
            if (seq.loss_mask[std::size_t(i)]) speech.push_back(seq.tokens[std::size_t(i)]);
        speech.push_back(kVocab.eos());
        auto parsed = parse_generated(speech, first, kVocab);
        REQUIRE(parsed.size() == turns.size());
        for (std::size_t t = 0; t < turns.size(); ++t) {
            CHECK(parsed[t].first == turns[t].speaker_id);
            CHECK(parsed[t].second == turns[t].code_tokens);
        }
    }
}

TEST_CASE("parse_generated: error cases and trailing partial turn") {
    const int c0 = kVocab.code_to_id(0);
    CHECK_THROWS(parse_generated({kVocab.eos(), c0}, 1, kVocab));       // tokens after EOS
    CHECK_THROWS(parse_generated({kVocab.sc()}, 1, kVocab));            // zero-length turn
    CHECK_THROWS(parse_generated({c0, kVocab.sc(), kVocab.sc()}, 1, kVocab));
    CHECK_THROWS(parse_generated({kVocab.bos()}, 1, kVocab));           // non-speech id
    CHECK_THROWS(parse_generated({c0}, 3, kVocab));                     // bad speaker

    auto partial = parse_generated({c0, kVocab.sc(), kVocab.code_to_id(5)}, 2, kVocab);
    REQUIRE(partial.size() == 2);
    CHECK(partial[0].first == 2);
    CHECK(partial[1].first == 1);
    CHECK(partial[1].second == std::vector<int>{5});
    CHECK(parse_generated({}, 1, kVocab).empty());
}

TEST_CASE("per_turn_ce_loss matches an independent double-precision oracle") {
    Rng rng(31, 0);
    const int n = 12, v = 17;
    Eigen::MatrixXf logits = rng.normal_matrix(n, v) * 5.0f;
    std::vector<int> targets(n);
    for (auto& t : targets) t = int(rng.uniform_int(v));
    std::vector<std::pair<int, int>> bounds = {{0, 3}, {3, 10}, {10, 12}};

    double oracle = 0.0;
    for (auto [s, e] : bounds) {
        double turn = 0.0;
        for (int i = s; i < e; ++i) {
            double z = 0.0;
            for (int j = 0; j < v; ++j) z += std::exp(double(logits(i, j)));
            turn += std::log(z) - double(logits(i, targets[std::size_t(i)]));
        }
        oracle += turn / (e - s);
    }
    oracle /= double(bounds.size());
    CHECK(per_turn_ce_loss(logits, targets, bounds) == doctest::Approx(oracle).epsilon(1e-4));

    // per-turn averaging: duplicating one turn's rows inside the turn keeps
    // the turn mean, so overall loss is unchanged under equal-weight turns
    CHECK_THROWS(per_turn_ce_loss(logits, targets, {}));
    CHECK_THROWS(per_turn_ce_loss(logits, targets, {{0, 13}}));
    CHECK_THROWS(per_turn_ce_loss(logits, targets, {{5, 5}}));
}

TEST_CASE("fixture text round trip and committed golden sequence") {
    auto p1 = make_prompt(1, {0, 1}, {2, 3});
    auto p2 = make_prompt(2, {2}, {0});
    std::vector<ScriptTurn> turns = {make_turn(1, {3}, {1, 2, 3}), make_turn(2, {1}, {0})};
    BuiltSequence seq = build_sequence(p1, p2, turns, BuildMode::Train, kVocab);

    BuiltSequence back = BuiltSequence::from_fixture_text(seq.to_fixture_text(), kVocab);
    CHECK(back.tokens == seq.tokens);
    CHECK(back.loss_mask == seq.loss_mask);
    CHECK(back.turn_boundaries == seq.turn_boundaries);
    for (int i = 0; i < seq.size(); ++i)
        CHECK(back.region[std::size_t(i)] == seq.region[std::size_t(i)]);

    CHECK(seq.to_fixture_text() == read_file(std::string(PODGEN_SOURCE_DIR) +
                                             "/fixtures/built_sequence.txt"));
    CHECK_THROWS(BuiltSequence::from_fixture_text("12 NOT_A_REGION 0\n", kVocab));
    CHECK_THROWS(BuiltSequence::from_fixture_text("garbage\n", kVocab));
}
