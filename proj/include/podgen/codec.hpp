#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "podgen/nn.hpp"
#include "podgen/tensor_store.hpp"

namespace podgen {

// Continuous feature frames (stand-in for SSL features or mel frames).
struct FeatureSequence {
    Eigen::MatrixXf frames;  // T x D
    float frame_rate_hz = 50.0f;

    int num_frames() const { return int(frames.rows()); }
    int dim() const { return int(frames.cols()); }
};

struct NormStats {
    Eigen::RowVectorXf mean;
    Eigen::RowVectorXf std;  // floored at 1e-6
};

struct CodecConfig {
    int input_dim = 16;
    int latent_dim = 8;
    int codebook_size = 64;
    int hidden_dim = 64;
    int encoder_depth = 2;
    int decoder_depth = 2;
    int kernel = 7;
    float commitment_weight = 0.25f;

    void validate() const;
};

struct CodecTrainOpts {
    int steps = 2000;
    float lr = 1e-3f;
    std::uint64_t seed = 0;
    float ema_decay = 0.99f;
    int dead_entry_steps = 100;  // reseed entries unused this many steps
};

struct CodecMetrics {
    std::vector<float> loss;            // per logged step
    std::vector<float> recon_loss;
    float final_utilization = 0.0f;
    float final_recon_mse = 0.0f;       // in original (denormalized) feature space
};

// VQ-VAE over feature frames. Encoder/decoder are frame-preserving residual
// convolutional stacks; the codebook is EMA-updated during training.
class Codec {
public:
    Codec() = default;
    Codec(const CodecConfig& config, std::uint64_t seed);

    const CodecConfig& config() const { return config_; }
    const NormStats& norm_stats() const { return norm_stats_; }
    void set_norm_stats(const NormStats& stats) { norm_stats_ = stats; }
    const Eigen::MatrixXf& codebook() const { return codebook_; }
    Eigen::MatrixXf& mutable_codebook() { return codebook_; }

    Eigen::MatrixXf normalize(const Eigen::MatrixXf& frames) const;
    Eigen::MatrixXf denormalize(const Eigen::MatrixXf& frames) const;

    // Encoder over normalized frames; frame count preserved.
    Eigen::MatrixXf encode(const Eigen::MatrixXf& normalized_frames) const;
    // Decoder from quantized latents back to normalized frame space.
    Eigen::MatrixXf decode(const Eigen::MatrixXf& quantized) const;

    // Full round trip on raw features: normalize, encode, quantize, decode,
    // denormalize.
    Eigen::MatrixXf reconstruct(const Eigen::MatrixXf& frames,
                                std::vector<int>* codes_out = nullptr) const;

    // Raw features in, semantic codes out.
    std::vector<int> codes_for(const Eigen::MatrixXf& frames) const;

    void save(const std::string& path) const;
    static Codec load(const std::string& path);

    nn::ParamList collect_params();

    // internals exposed for the trainer
    struct EncoderCaches;
    friend CodecMetrics train_codec(Codec& codec, const std::vector<FeatureSequence>& corpus,
                                    const CodecTrainOpts& opts);

private:
    CodecConfig config_;
    NormStats norm_stats_;

    struct ResBlock {
        nn::Conv1d conv;
        nn::Linear proj;
    };

    nn::Linear enc_in_, enc_out_, dec_in_, dec_out_;
    std::vector<ResBlock> enc_blocks_, dec_blocks_;
    Eigen::MatrixXf codebook_;  // K x latent_dim

    Eigen::MatrixXf run_stack(const nn::Linear& in, const std::vector<ResBlock>& blocks,
                              const nn::Linear& out, const Eigen::MatrixXf& x) const;
};

// Per-dimension mean and population std over all frames of the corpus,
// std floored at 1e-6. Accumulates in double.
NormStats compute_norm_stats(const std::vector<FeatureSequence>& corpus);

// Nearest codebook entry per latent row (L2, ties to the lowest index).
// Returns codes and the quantized latents.
std::pair<std::vector<int>, Eigen::MatrixXf> quantize(const Eigen::MatrixXf& latents,
                                                      const Eigen::MatrixXf& codebook);

// |unique codes| / codebook_size.
float codebook_utilization(const std::vector<int>& codes, int codebook_size);

CodecMetrics train_codec(Codec& codec, const std::vector<FeatureSequence>& corpus,
                         const CodecTrainOpts& opts);

}  // namespace podgen
