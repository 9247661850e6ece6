#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "podgen/corpus.hpp"

using namespace podgen;

namespace {

UtteranceRecord rec(const std::string& session, const std::string& speaker, double start,
                    double end, double score, bool aligned) {
    UtteranceRecord r;
    r.session = session;
    r.speaker = speaker;
    r.start_s = start;
    r.end_s = end;
    r.transcript = "text";
    r.score = score;
    r.alignment_ok = aligned;
    return r;
}

std::vector<UtteranceRecord> session_records(const std::string& id, int turns,
                                             int speakers, double turn_s) {
    std::vector<UtteranceRecord> out;
    for (int t = 0; t < turns; ++t)
        out.push_back(rec(id, "spk" + std::to_string(t % speakers), t * turn_s,
                          (t + 1) * turn_s, 4.0, true));
    return out;
}

}  // namespace

TEST_CASE("single-turn filter: strict score threshold and alignment flag") {
    std::vector<UtteranceRecord> records = {
        rec("a", "x", 0, 1, 2.61, true),   // keep
        rec("a", "x", 1, 2, 2.6, true),    // boundary: strictly above required
        rec("a", "x", 2, 3, 5.0, false),   // misaligned
        rec("a", "x", 3, 4, 2.59, true),   // below
        rec("a", "x", 4, 5, 4.2, true),    // keep
    };
    auto kept = filter_single_turn(records);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].score == doctest::Approx(2.61));
    CHECK(kept[1].score == doctest::Approx(4.2));
    // idempotent
    CHECK(filter_single_turn(kept).size() == kept.size());

    // fuzzed agreement with the rule stated directly
    Rng rng(6, 0);
    std::vector<UtteranceRecord> fuzz;
    for (int i = 0; i < 300; ++i)
        fuzz.push_back(rec("s", "x", i, i + 1, 1.0 + 4.0 * rng.uniform(),
                           rng.uniform() < 0.5));
    auto filtered = filter_single_turn(fuzz);
    std::size_t expected = 0;
    for (const auto& r : fuzz)
        if (r.score > 2.6 && r.alignment_ok) ++expected;
    CHECK(filtered.size() == expected);
    for (const auto& r : filtered) {
        CHECK(r.score > 2.6);
        CHECK(r.alignment_ok);
    }
}

TEST_CASE("session grouping preserves first-seen order") {
    std::vector<UtteranceRecord> records = {
        rec("beta", "x", 0, 1, 4, true), rec("alpha", "x", 0, 1, 4, true),
        rec("beta", "y", 1, 2, 4, true), rec("gamma", "x", 0, 1, 4, true),
        rec("alpha", "y", 1, 2, 4, true),
    };
    auto sessions = group_sessions(records);
    REQUIRE(sessions.size() == 3);
    CHECK(sessions[0].id == "beta");
    CHECK(sessions[1].id == "alpha");
    CHECK(sessions[2].id == "gamma");
    CHECK(sessions[0].turns.size() == 2);
    CHECK(sessions[2].turns.size() == 1);
}

TEST_CASE("conversation filter: two speakers, > 10 turns, mean turn < 30 s") {
    std::vector<SessionGroup> sessions;
    sessions.push_back({"keep", session_records("keep", 11, 2, 10.0)});
    sessions.push_back({"ten_turns", session_records("ten_turns", 10, 2, 10.0)});   // not > 10
    sessions.push_back({"solo", session_records("solo", 12, 1, 10.0)});
    sessions.push_back({"trio", session_records("trio", 12, 3, 10.0)});
    sessions.push_back({"slow", session_records("slow", 12, 2, 30.0)});             // mean == 30
    sessions.push_back({"fast", session_records("fast", 12, 2, 29.9)});

    auto kept = filter_conversations(sessions);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].id == "keep");
    CHECK(kept[1].id == "fast");
    // idempotent
    CHECK(filter_conversations(kept).size() == kept.size());
}

TEST_CASE("record validation") {
    CHECK_NOTHROW(rec("s", "x", 0, 1, 3.0, true).validate());
    CHECK_THROWS(rec("s", "x", 2, 1, 3.0, true).validate());   // negative duration
    CHECK_THROWS(rec("s", "x", 1, 1, 3.0, true).validate());   // zero duration
    CHECK_THROWS(rec("s", "x", 0, 1, 0.5, true).validate());   // score outside [1, 5]
    CHECK_THROWS(rec("s", "x", 0, 1, 5.5, true).validate());
}

TEST_CASE("manifest JSONL round trip") {
    std::vector<UtteranceRecord> records = {
        rec("s1", "a", 0.0, 12.5, 3.7, true),
        rec("s1", "b", 12.5, 14.0, 2.1, false),
    };
    records[0].transcript = "hello there";
    const std::string path = "manifest_test.jsonl";
    save_manifest(records, path);
    auto back = load_manifest(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].session == "s1");
    CHECK(back[0].transcript == "hello there");
    CHECK(back[0].end_s == doctest::Approx(12.5));
    CHECK(back[1].score == doctest::Approx(2.1));
    CHECK_FALSE(back[1].alignment_ok);
    std::filesystem::remove(path);
    CHECK_THROWS(load_manifest("does_not_exist.jsonl"));
}

TEST_CASE("synthetic features: conditional mean is the feature map row") {
    Eigen::MatrixXf map = synth_feature_map(8, 4, 3);
    CHECK(map.rows() == 8);
    CHECK(map.cols() == 4);
    CHECK(map.isApprox(synth_feature_map(8, 4, 3)));
    CHECK_FALSE(map.isApprox(synth_feature_map(8, 4, 4)));

    std::vector<int> codes = {2, 5, 2, 7};
    Rng rng(1, 0);
    FeatureSequence noiseless = synth_features(codes, map, 0.0f, rng);
    for (int i = 0; i < 4; ++i)
        CHECK(noiseless.frames.row(i).isApprox(map.row(codes[std::size_t(i)])));

    // sample mean converges to the map row at sigma > 0
    Rng rng2(2, 0);
    Eigen::RowVectorXf acc = Eigen::RowVectorXf::Zero(4);
    const int n = 4000;
    for (int i = 0; i < n; ++i)
        acc += synth_features({3}, map, 0.2f, rng2).frames.row(0);
    CHECK(((acc / float(n)) - map.row(3)).cwiseAbs().maxCoeff() < 0.02f);
}

TEST_CASE("synthetic corpus: deterministic, stage shapes, stage-3 short responses") {
    SynthSpec spec;
    spec.seed = 5;
    spec.num_sessions = 4;
    spec.code_vocab = 16;
    spec.feature_dim = 8;
    auto a = synth_corpus(spec);
    auto b = synth_corpus(spec);

    CHECK(!a.lm.stage1.empty());
    CHECK(!a.lm.stage2.empty());
    CHECK(int(a.lm.stage3.size()) == spec.num_sessions);
    CHECK(!a.detok_pairs.empty());
    CHECK(!a.codec_features.empty());
    CHECK(a.feature_map.isApprox(b.feature_map));
    REQUIRE(a.lm.stage3.size() == b.lm.stage3.size());
    for (std::size_t i = 0; i < a.lm.stage3.size(); ++i) {
        CHECK(a.lm.stage3[i].turns.size() == b.lm.stage3[i].turns.size());
        for (std::size_t t = 0; t < a.lm.stage3[i].turns.size(); ++t)
            CHECK(a.lm.stage3[i].turns[t].code_tokens == b.lm.stage3[i].turns[t].code_tokens);
    }

    for (const auto& item : a.lm.stage1) {
        CHECK(item.single_turn);
        REQUIRE(item.turns.size() == 1);
        CHECK(!item.turns[0].code_tokens.empty());
    }
    // conversational spec injects at least one short response turn somewhere
    bool found_short = false;
    for (const auto& item : a.lm.stage3) {
        CHECK_FALSE(item.single_turn);
        CHECK(item.prompt1.speaker_id == 1);
        CHECK(item.prompt2.speaker_id == 2);
        int prev = 0;
        for (const auto& turn : item.turns) {
            CHECK(turn.speaker_id != prev);
            prev = turn.speaker_id;
            CHECK(!turn.code_tokens.empty());
            for (int c : turn.code_tokens) {
                CHECK(c >= 0);
                CHECK(c < spec.code_vocab);
            }
            found_short |= int(turn.code_tokens.size()) <= 3;
        }
    }
    CHECK(found_short);

    for (const auto& [codes, feats] : a.detok_pairs) {
        CHECK(int(codes.size()) == feats.num_frames());
        CHECK(feats.dim() == spec.feature_dim);
    }

    SynthSpec bad = spec;
    bad.min_turns = 9;
    bad.max_turns = 4;
    CHECK_THROWS(bad.validate());
    bad = spec;
    bad.code_vocab = 1;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("synthetic corpus save/load round trip") {
    SynthSpec spec;
    spec.seed = 11;
    spec.num_sessions = 3;
    spec.code_vocab = 12;
    spec.feature_dim = 6;
    auto corpus = synth_corpus(spec);
    const std::string dir = "corpus_roundtrip_dir";
    std::filesystem::create_directories(dir);
    save_synth_corpus(corpus, spec, dir);

    LoadedCorpus loaded = load_synth_corpus(dir);
    CHECK(loaded.spec.seed == spec.seed);
    CHECK(loaded.spec.code_vocab == spec.code_vocab);
    CHECK(loaded.corpus.feature_map.isApprox(corpus.feature_map));
    REQUIRE(loaded.corpus.detok_pairs.size() == corpus.detok_pairs.size());
    for (std::size_t i = 0; i < corpus.detok_pairs.size(); ++i) {
        CHECK(loaded.corpus.detok_pairs[i].first == corpus.detok_pairs[i].first);
        CHECK(loaded.corpus.detok_pairs[i].second.frames.isApprox(
            corpus.detok_pairs[i].second.frames, 1e-5f));
    }
    REQUIRE(loaded.corpus.lm.stage3.size() == corpus.lm.stage3.size());
    for (std::size_t i = 0; i < corpus.lm.stage3.size(); ++i) {
        const auto& x = loaded.corpus.lm.stage3[i];
        const auto& y = corpus.lm.stage3[i];
        CHECK(x.prompt1.text_tokens == y.prompt1.text_tokens);
        CHECK(x.prompt2.code_tokens == y.prompt2.code_tokens);
        REQUIRE(x.turns.size() == y.turns.size());
        for (std::size_t t = 0; t < x.turns.size(); ++t) {
            CHECK(x.turns[t].speaker_id == y.turns[t].speaker_id);
            CHECK(x.turns[t].text_tokens == y.turns[t].text_tokens);
            CHECK(x.turns[t].code_tokens == y.turns[t].code_tokens);
        }
    }
    // the manifest written alongside passes the conversation filters
    auto manifest = load_manifest(dir + "/manifest.jsonl");
    CHECK(!manifest.empty());
    std::filesystem::remove_all(dir);
}
