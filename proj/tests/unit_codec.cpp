#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "podgen/codec.hpp"
#include "podgen/rng.hpp"

using namespace podgen;

namespace {

// clustered frames: each row is a random prototype plus small noise
std::vector<FeatureSequence> clustered_corpus(int sequences, int frames, int dim,
                                              int prototypes, std::uint64_t seed) {
    Rng rng(seed, 0);
    Eigen::MatrixXf protos = rng.normal_matrix(prototypes, dim) * 2.0f;
    std::vector<FeatureSequence> corpus;
    for (int s = 0; s < sequences; ++s) {
        FeatureSequence fs;
        fs.frames.resize(frames, dim);
        for (int t = 0; t < frames; ++t) {
            int p = int(rng.uniform_int(std::uint64_t(prototypes)));
            for (int d = 0; d < dim; ++d)
                fs.frames(t, d) = protos(p, d) + 0.05f * float(rng.normal());
        }
        corpus.push_back(std::move(fs));
    }
    return corpus;
}

}  // namespace

TEST_CASE("norm stats match a double-precision oracle") {
    Rng rng(4, 0);
    std::vector<FeatureSequence> corpus;
    for (int s = 0; s < 3; ++s)
        corpus.push_back({rng.normal_matrix(5 + s, 4) * 3.0f, 50.0f});

    NormStats stats = compute_norm_stats(corpus);
    for (int d = 0; d < 4; ++d) {
        double sum = 0.0, sum2 = 0.0;
        int n = 0;
        for (const auto& fs : corpus)
            for (int t = 0; t < fs.num_frames(); ++t) {
                sum += double(fs.frames(t, d));
                sum2 += double(fs.frames(t, d)) * double(fs.frames(t, d));
                ++n;
            }
        double mean = sum / n;
        double var = sum2 / n - mean * mean;
        CHECK(stats.mean(d) == doctest::Approx(mean).epsilon(1e-4));
        CHECK(stats.std(d) == doctest::Approx(std::sqrt(var)).epsilon(1e-3));
    }

    // a single frame has zero variance; std floors at 1e-6
    NormStats degenerate = compute_norm_stats({{Eigen::MatrixXf::Ones(1, 4), 50.0f}});
    for (int d = 0; d < 4; ++d) CHECK(degenerate.std(d) == doctest::Approx(1e-6f));
    CHECK_THROWS(compute_norm_stats({}));
}

TEST_CASE("normalize and denormalize are inverse") {
    Codec codec(CodecConfig{4, 2, 8, 8, 1, 1, 3, 0.25f}, 1);
    Rng rng(6, 0);
    NormStats stats;
    stats.mean = rng.normal_matrix(1, 4).row(0);
    stats.std = rng.normal_matrix(1, 4).row(0).cwiseAbs().array() + 0.5f;
    codec.set_norm_stats(stats);
    Eigen::MatrixXf x = rng.normal_matrix(7, 4);
    CHECK(codec.denormalize(codec.normalize(x)).isApprox(x, 1e-5f));
}

TEST_CASE("quantize matches brute-force nearest neighbour with lowest-index ties") {
    Rng rng(8, 0);
    Eigen::MatrixXf codebook = rng.normal_matrix(16, 3);
    codebook.row(9) = codebook.row(2);  // exact tie pair
    Eigen::MatrixXf latents = rng.normal_matrix(40, 3);
    latents.row(0) = codebook.row(2);   // lands exactly on the tie

    auto [codes, quantized] = quantize(latents, codebook);
    REQUIRE(int(codes.size()) == 40);
    for (int i = 0; i < 40; ++i) {
        int best = 0;
        float best_d = (latents.row(i) - codebook.row(0)).squaredNorm();
        for (int k = 1; k < 16; ++k) {
            float d = (latents.row(i) - codebook.row(k)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        CHECK(codes[std::size_t(i)] == best);
        CHECK(quantized.row(i) == codebook.row(codes[std::size_t(i)]));
    }
    CHECK(codes[0] == 2);  // tie resolves to the lower index
}

TEST_CASE("codebook utilization") {
    CHECK(codebook_utilization({0, 0, 1, 3}, 8) == doctest::Approx(3.0f / 8.0f));
    CHECK(codebook_utilization({0, 1, 2, 3}, 4) == doctest::Approx(1.0f));
    CHECK_THROWS(codebook_utilization({}, 8));
    CHECK_THROWS(codebook_utilization({8}, 8));
}

TEST_CASE("encoder and decoder preserve the frame count") {
    CodecConfig cfg{6, 3, 8, 12, 2, 2, 3, 0.25f};
    Codec codec(cfg, 3);
    Rng rng(9, 0);
    for (int t : {1, 5, 17}) {
        Eigen::MatrixXf x = rng.normal_matrix(t, 6);
        Eigen::MatrixXf z = codec.encode(x);
        CHECK(z.rows() == t);
        CHECK(z.cols() == 3);
        Eigen::MatrixXf y = codec.decode(z);
        CHECK(y.rows() == t);
        CHECK(y.cols() == 6);
    }
}

TEST_CASE("training reduces loss and uses a healthy share of the codebook") {
    CodecConfig cfg{6, 3, 12, 16, 1, 1, 3, 0.25f};
    Codec codec(cfg, 11);
    auto corpus = clustered_corpus(6, 24, 6, 8, 21);
    CodecTrainOpts opts;
    opts.steps = 400;
    opts.lr = 2e-3f;
    opts.seed = 5;
    CodecMetrics metrics = train_codec(codec, corpus, opts);

    REQUIRE(metrics.loss.size() >= 2);
    float early = metrics.loss.front();
    float late = metrics.loss.back();
    CHECK(late < early * 0.7f);
    CHECK(metrics.final_utilization > 0.3f);
    CHECK(metrics.final_recon_mse < 1.0f);

    // codes_for covers several entries on clustered data
    std::set<int> seen;
    for (const auto& fs : corpus)
        for (int c : codec.codes_for(fs.frames)) {
            CHECK(c >= 0);
            CHECK(c < cfg.codebook_size);
            seen.insert(c);
        }
    CHECK(int(seen.size()) >= 3);
}

TEST_CASE("save and load round trip preserves behaviour") {
    CodecConfig cfg{5, 3, 8, 8, 1, 1, 3, 0.25f};
    Codec codec(cfg, 17);
    auto corpus = clustered_corpus(3, 16, 5, 6, 22);
    CodecTrainOpts opts;
    opts.steps = 60;
    opts.seed = 2;
    train_codec(codec, corpus, opts);

    const std::string path = "codec_roundtrip.pgt";
    codec.save(path);
    Codec back = Codec::load(path);
    CHECK(back.config().codebook_size == cfg.codebook_size);
    CHECK(back.codebook().isApprox(codec.codebook()));
    Rng rng(14, 0);
    Eigen::MatrixXf x = rng.normal_matrix(9, 5);
    CHECK(back.codes_for(x) == codec.codes_for(x));
    CHECK(back.reconstruct(x).isApprox(codec.reconstruct(x), 1e-5f));
    std::filesystem::remove(path);
}

TEST_CASE("config validation rejects nonsense") {
    CodecConfig bad;
    bad.codebook_size = 0;
    CHECK_THROWS(bad.validate());
    bad = CodecConfig{};
    bad.input_dim = 0;
    CHECK_THROWS(bad.validate());
    bad = CodecConfig{};
    bad.commitment_weight = -1.0f;
    CHECK_THROWS(bad.validate());
}
