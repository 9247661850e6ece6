#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "podgen/config.hpp"
#include "podgen/flow.hpp"
#include "podgen/rng.hpp"
#include "podgen/tensor_store.hpp"
#include "podgen/tokenizer.hpp"
#include "podgen/vocab.hpp"

using namespace podgen;

TEST_CASE("rng: deterministic per (seed, stream) and stream-independent") {
    Rng a(42, 7), b(42, 7), c(42, 8);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    bool differs = false;
    Rng a2(42, 7);
    for (int i = 0; i < 100; ++i) differs |= a2.next_u64() != c.next_u64();
    CHECK(differs);
}

TEST_CASE("rng: uniform in range, normal has sane moments") {
    Rng rng(1, 0);
    double sum = 0.0, sum2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sum2 += z * z;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}

TEST_CASE("tensor store: config and tensor round trip") {
    TensorStore ts;
    ts.config["alpha"] = "3";
    ts.config["name"] = "checkpoint";
    Rng rng(5, 0);
    ts.tensors["w"] = rng.normal_matrix(7, 3);
    ts.tensors["b"] = rng.normal_matrix(1, 3);
    const std::string path = "ts_roundtrip.pgt";
    ts.save(path);
    TensorStore back = TensorStore::load(path);
    CHECK(back.config_int("alpha") == 3);
    CHECK(back.config_str("name") == "checkpoint");
    CHECK(back.get("w").isApprox(ts.get("w")));
    CHECK(back.get("b").isApprox(ts.get("b")));
    CHECK_THROWS(back.get("missing"));
    CHECK_THROWS(back.config_int("missing"));
    std::filesystem::remove(path);
}

TEST_CASE("tensor store: rejects wrong magic") {
    const std::string path = "ts_bad.pgt";
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOTMAGIC........", f);
    std::fclose(f);
    CHECK_THROWS(TensorStore::load(path));
    std::filesystem::remove(path);
}

TEST_CASE("config: parsing, comments, typed accessors") {
    auto cfg = KeyValueConfig::from_string(
        "a = 1\n# comment\nname = hello world # trailing\n\nratio=0.5\n");
    CHECK(cfg.get_int("a", 0) == 1);
    CHECK(cfg.get_str("name", "") == "hello world");
    CHECK(cfg.get_float("ratio", 0.0) == doctest::Approx(0.5));
    CHECK(cfg.get_int("missing", 9) == 9);
    CHECK_THROWS(cfg.require_str("missing"));
    CHECK_THROWS(KeyValueConfig::from_string("no equals sign\n"));
    CHECK_THROWS(KeyValueConfig::from_string("= value\n"));
    auto bad = KeyValueConfig::from_string("a = xyz\n");
    CHECK_THROWS(bad.get_int("a", 0));
}

TEST_CASE("vocab: id ranges are disjoint and complete") {
    MixedVocab vocab{256, 64};
    CHECK(vocab.size() == 256 + 64 + 5);
    CHECK(vocab.code_to_id(0) == 256);
    CHECK(vocab.code_to_id(63) == 319);
    CHECK(vocab.id_to_code(300) == 44);
    CHECK(vocab.bos() == 320);
    CHECK(vocab.eos() == 321);
    CHECK(vocab.sc() == 322);
    CHECK(vocab.spk1() == 323);
    CHECK(vocab.spk2() == 324);
    CHECK(vocab.is_text(255));
    CHECK_FALSE(vocab.is_text(256));
    CHECK_FALSE(vocab.is_code(320));
    CHECK_THROWS(vocab.code_to_id(64));
    CHECK_THROWS(vocab.speaker_tag(3));
}

TEST_CASE("tokenizer: byte round trip and merges") {
    TextTokenizer tok;
    const std::string text = "hello, 世界";
    CHECK(tok.decode(tok.encode(text)) == text);
    CHECK(int(tok.encode("abc").size()) == 3);
}

TEST_CASE("flow: noise_sample endpoints") {
    Rng rng(3, 0);
    Eigen::MatrixXf clean = rng.normal_matrix(4, 6), noise = rng.normal_matrix(4, 6);
    const float sigma = 1e-4f;
    CHECK(noise_sample(clean, 0.0f, noise, sigma).isApprox(noise));
    // t = 1 leaves a sigma_min-sized noise floor
    Eigen::MatrixXf at1 = noise_sample(clean, 1.0f, noise, sigma);
    CHECK((at1 - clean - sigma * noise).cwiseAbs().maxCoeff() < 1e-6f);
    CHECK_THROWS(noise_sample(clean, 0.5f, rng.normal_matrix(3, 6), sigma));
}

TEST_CASE("flow: chunk plan fixed and random are ordered disjoint covers") {
    ChunkPlan plan = ChunkPlan::fixed(375, 150);
    REQUIRE(plan.num_chunks() == 3);
    CHECK(plan.chunks[0].size() == 150);
    CHECK(plan.chunks[1].size() == 150);
    CHECK(plan.chunks[2].size() == 75);
    plan.validate();

    Rng rng(9, 0);
    for (int trial = 0; trial < 50; ++trial) {
        const int total = 1 + int(rng.uniform_int(200));
        ChunkPlan p = ChunkPlan::random(total, 3, 11, rng);
        p.validate();
        CHECK(p.total_frames() == total);
        int pos = 0;
        for (const auto& c : p.chunks) {
            CHECK(c.begin == pos);
            CHECK(c.size() >= 1);
            pos = c.end;
        }
    }
    CHECK_THROWS(ChunkPlan::fixed(0, 10));
}

TEST_CASE("flow: chunk mask matches the rule oracle") {
    Rng rng(11, 0);
    for (int n : {1, 2, 3, 5, 8}) {
        ChunkMask mask = make_chunk_mask(n);
        REQUIRE(mask.num_chunks == n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                CHECK(mask.clean_to_clean(i, j) == (j <= i));
                CHECK(mask.allowed(i, n + j) == false);  // clean never sees noisy
                CHECK(mask.noisy_to_clean(i, j) == (j <= i - 1));
                CHECK(mask.noisy_to_noisy(i, j) == (i == j));
            }
        }
    }
}

TEST_CASE("flow: expand_chunk_mask maps blocks to frames and drops empties") {
    ChunkMask mask = make_chunk_mask(2);
    // clean sizes {2, 3}, noisy sizes {1, 2}
    Eigen::ArrayXXf add = expand_chunk_mask(mask, {2, 3, 1, 2});
    REQUIRE(add.rows() == 8);
    REQUIRE(add.cols() == 8);
    // noisy chunk 0 (row 5) must not see clean chunk 0 (cols 0-1)
    CHECK(add(5, 0) < -1e8f);
    CHECK(add(5, 5) == 0.0f);
    // noisy chunk 1 (rows 6-7) sees clean chunk 0 but not clean chunk 1
    CHECK(add(6, 0) == 0.0f);
    CHECK(add(6, 2) < -1e8f);
    CHECK(add(6, 7) == 0.0f);
    // clean chunk 1 (rows 2-4) sees clean 0, not noisy
    CHECK(add(2, 0) == 0.0f);
    CHECK(add(2, 5) < -1e8f);

    // zero-size blocks drop out
    Eigen::ArrayXXf partial = expand_chunk_mask(mask, {2, 0, 0, 3});
    CHECK(partial.rows() == 5);
    CHECK(partial(2, 0) == 0.0f);  // noisy 1 sees clean 0
    CHECK_THROWS(expand_chunk_mask(mask, {1, 2, 3}));
}

TEST_CASE("flow: boundary_discontinuity oracle on a constructed sequence") {
    // constant steps of size 1, one boundary with a jump of 5
    Eigen::MatrixXf f(6, 1);
    f << 0, 1, 2, 7, 8, 9;
    // adjacent distances: 1,1,5,1,1 -> median 1; boundary at frame 3 jump 5
    CHECK(boundary_discontinuity(f, {3}) == doctest::Approx(4.0f));
    // boundary on a typical step floors at zero
    CHECK(boundary_discontinuity(f, {1}) == doctest::Approx(0.0f));
    CHECK(boundary_discontinuity(f, {}) == doctest::Approx(0.0f));
}
