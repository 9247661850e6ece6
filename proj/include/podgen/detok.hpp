#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "podgen/codec.hpp"
#include "podgen/flow.hpp"
#include "podgen/nn.hpp"

namespace podgen {

struct DetokModelConfig {
    int layers = 2;
    int heads = 4;
    int model_dim = 64;
    int ffn_dim = 256;
    int code_emb_dim = 16;
    int time_emb_dim = 64;
    int code_vocab_size = 64;

    void validate() const;
};

struct DetokTrainOpts {
    int steps = 2000;
    float lr = 1e-3f;
    std::uint64_t seed = 0;
};

struct DetokMetrics {
    std::vector<float> loss;
};

// Per-layer attention states of the finalized (prefilled) clean chunks.
struct DetokCache {
    std::vector<Eigen::MatrixXf> k, v;  // one entry per layer, frames x dim
    int finalized_chunks = 0;
    int finalized_frames = 0;
};

// DiT-style velocity model over feature frames. Condition: per-frame code
// embedding concatenated to the (noised) frame; timestep via sinusoidal
// embedding added before every block; absolute frame position added at the
// input.
class Detok {
public:
    Detok() = default;
    Detok(const DetokModelConfig& config, const FlowConfig& flow, std::uint64_t seed);

    const DetokModelConfig& model_config() const { return config_; }
    const FlowConfig& flow_config() const { return flow_; }

    DetokCache make_cache() const;

    // Euler-integrate one chunk from Gaussian noise, conditioned on the cache
    // of chunks < i. `init_noise` is M(0).
    Eigen::MatrixXf generate_chunk(const std::vector<int>& chunk_codes,
                                   const DetokCache& cache,
                                   const Eigen::MatrixXf& init_noise) const;

    // Run finalized features for chunk `chunk_index` at the prefill timestep
    // and append their attention states to the cache.
    void prefill_chunk(const Eigen::MatrixXf& features, const std::vector<int>& chunk_codes,
                       int chunk_index, int start_frame, const Eigen::MatrixXf& prefill_noise,
                       DetokCache& cache) const;

    // Velocity over an assembled multi-chunk sequence with an explicit
    // frame-level additive mask. Used by training, the monolithic oracle, and
    // the eval harness.
    Eigen::MatrixXf forward_masked(const Eigen::MatrixXf& noised_frames,
                                   const std::vector<int>& frame_codes,
                                   const std::vector<float>& frame_times,
                                   const std::vector<int>& frame_positions,
                                   const Eigen::ArrayXXf& add_mask) const;

    void save(const std::string& path) const;
    static Detok load(const std::string& path);

    nn::ParamList collect_params();

    friend DetokMetrics train_detokenizer(
        Detok& detok, const std::vector<std::pair<std::vector<int>, FeatureSequence>>& pairs,
        const DetokTrainOpts& opts);

private:
    DetokModelConfig config_;
    FlowConfig flow_;
    nn::Tensor code_emb_;  // K x code_emb_dim
    nn::Linear in_proj_;
    nn::Linear time_fc1_, time_fc2_;
    std::vector<nn::Block> blocks_;
    nn::LayerNorm final_ln_;
    nn::Linear out_proj_;

    Eigen::MatrixXf embed_input(const Eigen::MatrixXf& noised_frames,
                                const std::vector<int>& frame_codes,
                                const std::vector<int>& frame_positions) const;
    Eigen::MatrixXf time_embedding(const std::vector<float>& frame_times) const;
};

// Chunk-plan noise keying shared by the streaming and monolithic paths.
Eigen::MatrixXf detok_init_noise(std::uint64_t seed, int chunk_index, int frames, int dim);
Eigen::MatrixXf detok_prefill_noise(std::uint64_t seed, int chunk_index, int frames, int dim);

struct DetokenizeResult {
    FeatureSequence features;
    ChunkPlan plan;
    std::vector<int> boundaries;  // interior chunk boundaries
};

// Streaming chunk-wise autoregressive detokenization (generate + prefill).
DetokenizeResult detokenize_stream(const Detok& detok, const std::vector<int>& codes,
                                   std::uint64_t seed);

// Reference path: no cache; every chunk re-evaluates the full masked prefix
// sequence each Euler step. Identical noise keying to detokenize_stream.
// `tamper_mask` optionally flips one chunk-mask block (fault injection).
DetokenizeResult detokenize_monolithic(const Detok& detok, const std::vector<int>& codes,
                                       std::uint64_t seed, bool tamper_mask = false);

// Baseline that detokenizes every chunk independently with an empty cache.
DetokenizeResult detokenize_independent(const Detok& detok, const std::vector<int>& codes,
                                        std::uint64_t seed);

DetokMetrics train_detokenizer(
    Detok& detok, const std::vector<std::pair<std::vector<int>, FeatureSequence>>& pairs,
    const DetokTrainOpts& opts);

}  // namespace podgen
