#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "podgen/lm.hpp"
#include "podgen/rng.hpp"

using namespace podgen;

namespace {

const MixedVocab kVocab{8, 6};  // text 0-7, codes 8-13, bos 14, eos 15, sc 16

LMConfig tiny_config() {
    LMConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.model_dim = 16;
    cfg.ffn_dim = 32;
    cfg.max_context_tokens = 256;
    cfg.vocab = kVocab;
    return cfg;
}

SpeakerPrompt make_prompt(int speaker, std::vector<int> text, std::vector<int> codes) {
    return {speaker, std::move(text), std::move(codes)};
}

ScriptTurn make_turn(int speaker, std::vector<int> text, std::vector<int> codes = {}) {
    return {speaker, std::move(text), std::move(codes)};
}

LmTrainItem conversational_item(int variant) {
    LmTrainItem item;
    item.prompt1 = make_prompt(1, {0, 1}, {0});
    item.prompt2 = make_prompt(2, {2}, {1});
    item.turns = {make_turn(1, {3, 4}, {2, 3, (variant % 6)}),
                  make_turn(2, {5}, {4, 5})};
    return item;
}

}  // namespace

TEST_CASE("sampler: temperature zero is argmax, validation rejects nonsense") {
    Rng rng(1, 0);
    Eigen::RowVectorXf logits(5);
    logits << 0.1f, 3.0f, -1.0f, 2.9f, 0.0f;
    SamplerConfig greedy{30, 0.8f, 0.0f};
    for (int i = 0; i < 10; ++i) CHECK(sample_next(logits, greedy, rng) == 1);

    CHECK_THROWS(sample_next(logits, SamplerConfig{0, 0.8f, 1.0f}, rng));
    CHECK_THROWS(sample_next(logits, SamplerConfig{30, 0.0f, 1.0f}, rng));
    CHECK_THROWS(sample_next(logits, SamplerConfig{30, 1.5f, 1.0f}, rng));
    CHECK_THROWS(sample_next(logits, SamplerConfig{30, 0.8f, -1.0f}, rng));
}

TEST_CASE("sampler: -inf tokens are never drawn, top_k=1 is deterministic") {
    Rng rng(2, 0);
    const float inf = std::numeric_limits<float>::infinity();
    Eigen::RowVectorXf logits(6);
    logits << 1.0f, -inf, 0.5f, -inf, 0.2f, -inf;
    SamplerConfig cfg{6, 1.0f, 1.0f};
    for (int i = 0; i < 500; ++i) {
        int tok = sample_next(logits, cfg, rng);
        CHECK((tok == 0 || tok == 2 || tok == 4));
    }
    SamplerConfig k1{1, 1.0f, 1.0f};
    for (int i = 0; i < 20; ++i) CHECK(sample_next(logits, k1, rng) == 0);

    Eigen::RowVectorXf allinf = Eigen::RowVectorXf::Constant(4, -inf);
    CHECK_THROWS(sample_next(allinf, cfg, rng));
}

TEST_CASE("sampler: empirical frequencies match the truncated softmax") {
    // logits 2,1,0 with top_k=2: nucleus over {2,1} at temperature 1
    Eigen::RowVectorXf logits(3);
    logits << 2.0f, 1.0f, 0.0f;
    SamplerConfig cfg{2, 1.0f, 1.0f};
    Rng rng(3, 0);
    const int n = 20000;
    int count0 = 0;
    for (int i = 0; i < n; ++i) {
        int tok = sample_next(logits, cfg, rng);
        CHECK(tok != 2);  // cut by top_k
        count0 += tok == 0 ? 1 : 0;
    }
    const double p0 = std::exp(2.0) / (std::exp(2.0) + std::exp(1.0));
    const double sigma = std::sqrt(p0 * (1 - p0) / n);
    CHECK(std::abs(double(count0) / n - p0) < 4 * sigma);

    // a tight nucleus collapses onto the head token
    SamplerConfig tight{3, 0.1f, 1.0f};
    for (int i = 0; i < 50; ++i) CHECK(sample_next(logits, tight, rng) == 0);
}

TEST_CASE("single-turn sequence layout") {
    BuiltSequence seq = build_single_turn_sequence(make_turn(1, {2, 3}, {0, 1, 2}), kVocab);
    std::vector<int> expect = {kVocab.bos(), kVocab.spk1(), 2, 3,
                               kVocab.code_to_id(0), kVocab.code_to_id(1), kVocab.code_to_id(2),
                               kVocab.sc(), kVocab.eos()};
    CHECK(seq.tokens == expect);
    REQUIRE(seq.turn_boundaries.size() == 1);
    CHECK(seq.turn_boundaries[0] == std::pair<int, int>{4, 8});
    for (int i = 0; i < seq.size(); ++i)
        CHECK(seq.loss_mask[std::size_t(i)] == (i >= 4 && i < 8));
    CHECK_THROWS(build_single_turn_sequence(make_turn(1, {}, {0}), kVocab));
    CHECK_THROWS(build_single_turn_sequence(make_turn(1, {2}, {}), kVocab));
}

TEST_CASE("sequence_for_item dispatches on single_turn") {
    LmTrainItem single;
    single.single_turn = true;
    single.turns = {make_turn(2, {1}, {3})};
    BuiltSequence s1 = sequence_for_item(single, kVocab);
    CHECK(s1.tokens[1] == kVocab.spk2());

    LmTrainItem conv = conversational_item(0);
    BuiltSequence s2 = sequence_for_item(conv, kVocab);
    CHECK(s2.tokens.front() == kVocab.bos());
    CHECK(s2.turn_boundaries.size() == 2);

    LmTrainItem empty;
    empty.single_turn = true;
    CHECK_THROWS(sequence_for_item(empty, kVocab));
}

TEST_CASE("curriculum stages must be ordered 1 -> 2 -> 3") {
    LmModel model(tiny_config(), 1);
    LmStageCorpora corpora;
    corpora.stage1 = {[] {
        LmTrainItem it;
        it.single_turn = true;
        it.turns = {make_turn(1, {0}, {1})};
        return it;
    }()};
    corpora.stage2 = {conversational_item(0)};
    corpora.stage3 = {conversational_item(1)};

    auto stage = [](int id, int steps) {
        CurriculumStage s;
        s.stage_id = id;
        s.steps = steps;
        s.max_context = 256;
        return s;
    };
    CHECK_THROWS(train_lm(model, corpora, {stage(2, 1), stage(1, 1)}, 0));
    CHECK_THROWS(train_lm(model, corpora, {stage(1, 1), stage(1, 1)}, 0));
    CHECK_THROWS(train_lm(model, corpora, {stage(4, 1)}, 0));
    LmStageCorpora missing;
    missing.stage1 = corpora.stage1;
    CHECK_THROWS(train_lm(model, missing, {stage(1, 1), stage(2, 1)}, 0));

    std::vector<int> seen;
    train_lm(model, corpora, {stage(1, 2), stage(2, 2), stage(3, 2)}, 0,
             [&](int id, const LmModel&) { seen.push_back(id); });
    CHECK(seen == std::vector<int>{1, 2, 3});
}

TEST_CASE("training drives the per-turn loss down") {
    LmModel model(tiny_config(), 7);
    LmStageCorpora corpora;
    for (int v = 0; v < 3; ++v) {
        LmTrainItem it;
        it.single_turn = true;
        it.turns = {make_turn(1 + (v % 2), {v, v + 1}, {v, v + 1, v + 2})};
        corpora.stage1.push_back(it);
        corpora.stage2.push_back(conversational_item(v));
        corpora.stage3.push_back(conversational_item(v + 3));
    }
    std::vector<CurriculumStage> stages(3);
    for (int i = 0; i < 3; ++i) {
        stages[std::size_t(i)].stage_id = i + 1;
        stages[std::size_t(i)].steps = i == 0 ? 150 : 60;
        stages[std::size_t(i)].max_context = 256;
        stages[std::size_t(i)].lr = 3e-3f;
    }
    auto metrics = train_lm(model, corpora, stages, 9);
    REQUIRE(metrics.size() == 3);
    CHECK(metrics[0].last_loss < metrics[0].first_loss * 0.6f);
    CHECK(metrics[2].last_loss < metrics[2].first_loss);

    float acc = lm_teacher_forced_accuracy(model, corpora.stage3);
    CHECK(acc >= 0.0f);
    CHECK(acc <= 1.0f);
    CHECK(std::isfinite(lm_item_loss(model, corpora.stage3.front())));
}

TEST_CASE("save and load preserve logits") {
    LmModel model(tiny_config(), 13);
    const std::string path = "lm_roundtrip.pgt";
    model.save(path);
    LmModel back = LmModel::load(path);
    std::vector<int> tokens = {kVocab.bos(), kVocab.spk1(), 1, 2, kVocab.code_to_id(0)};
    CHECK(back.forward(tokens).isApprox(model.forward(tokens), 1e-5f));
    CHECK(back.config().vocab.size() == kVocab.size());
    std::filesystem::remove(path);
}

TEST_CASE("generation emits only speech tokens and never opens a turn with SC") {
    LmModel model(tiny_config(), 19);  // untrained: constraints must still hold
    auto p1 = make_prompt(1, {0, 1}, {0, 1});
    auto p2 = make_prompt(2, {2}, {2});
    std::vector<ScriptTurn> turns = {make_turn(1, {3}), make_turn(2, {4})};
    SamplerConfig sampler{6, 1.0f, 1.0f};

    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed, 0);
        GenerationResult res =
            generate(model, p1, p2, turns, sampler, GenerationLimits{200, 50}, rng);
        CHECK(res.expected_turns == 2);
        int turn_len = 0;
        for (int tok : res.generated_tokens) {
            CHECK((kVocab.is_code(tok) || tok == kVocab.sc()));
            if (tok == kVocab.sc()) {
                CHECK(turn_len > 0);  // SC cannot open a turn
                turn_len = 0;
            } else {
                ++turn_len;
            }
        }
        // terminated by one of the three contract conditions
        int closed = 0;
        for (int tok : res.generated_tokens) closed += tok == kVocab.sc() ? 1 : 0;
        CHECK((res.runaway || res.hit_eos || closed == res.expected_turns));
        for (const auto& [speaker, codes] : res.turns) {
            CHECK((speaker == 1 || speaker == 2));
            CHECK(!codes.empty());
        }
    }
}

TEST_CASE("generation limits: zero budget flags a runaway, oversized prompt throws") {
    LmModel model(tiny_config(), 23);
    auto p1 = make_prompt(1, {0}, {0});
    auto p2 = make_prompt(2, {1}, {1});
    std::vector<ScriptTurn> turns = {make_turn(1, {2}), make_turn(2, {3})};
    Rng rng(4, 0);
    GenerationResult res = generate(model, p1, p2, turns, SamplerConfig{6, 1.0f, 1.0f},
                                    GenerationLimits{0, 50}, rng);
    CHECK(res.runaway);
    CHECK(res.generated_tokens.empty());

    auto big = make_prompt(1, std::vector<int>(300, 1), {0});
    CHECK_THROWS(generate(model, big, p2, turns, SamplerConfig{6, 1.0f, 1.0f},
                          GenerationLimits{10, 50}, rng));
}

TEST_CASE("model config validation") {
    LMConfig cfg = tiny_config();
    cfg.model_dim = 15;
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config();
    cfg.heads = 8;  // head dim 2 is even, fine
    CHECK_NOTHROW(cfg.validate());
    cfg.heads = 16;  // head dim 1 breaks rotary pairing
    CHECK_THROWS(cfg.validate());
}
