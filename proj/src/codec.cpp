#include "podgen/codec.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace podgen {

void CodecConfig::validate() const {
    if (codebook_size < 2) throw std::invalid_argument("CodecConfig: codebook_size >= 2");
    if (commitment_weight < 0.0f)
        throw std::invalid_argument("CodecConfig: commitment_weight >= 0");
    if (input_dim < 1 || latent_dim < 1 || hidden_dim < 1)
        throw std::invalid_argument("CodecConfig: dims must be positive");
    if (encoder_depth < 0 || decoder_depth < 0)
        throw std::invalid_argument("CodecConfig: depths must be >= 0");
}

NormStats compute_norm_stats(const std::vector<FeatureSequence>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("compute_norm_stats: empty corpus");
    const int dim = corpus.front().dim();
    std::int64_t total = 0;
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(dim);
    for (const auto& seq : corpus) {
        if (seq.dim() != dim)
            throw std::invalid_argument("compute_norm_stats: dimension mismatch");
        if (seq.num_frames() < 1)
            throw std::invalid_argument("compute_norm_stats: empty sequence");
        sum += seq.frames.cast<double>().colwise().sum();
        total += seq.num_frames();
    }
    Eigen::RowVectorXd mean = sum / double(total);
    Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(dim);
    for (const auto& seq : corpus) {
        Eigen::MatrixXd centered = seq.frames.cast<double>().rowwise() - mean;
        sq += centered.array().square().colwise().sum().matrix();
    }
    Eigen::RowVectorXd var = sq / double(total);
    NormStats stats;
    stats.mean = mean.cast<float>();
    stats.std = var.array().sqrt().max(1e-6).cast<float>();
    return stats;
}

std::pair<std::vector<int>, Eigen::MatrixXf> quantize(const Eigen::MatrixXf& latents,
                                                      const Eigen::MatrixXf& codebook) {
    if (codebook.rows() < 1) throw std::invalid_argument("quantize: empty codebook");
    if (latents.cols() != codebook.cols())
        throw std::invalid_argument("quantize: latent dim mismatch");
    const int t = int(latents.rows());
    const int k = int(codebook.rows());
    std::vector<int> codes(static_cast<std::size_t>(t));
    Eigen::MatrixXf quantized(t, latents.cols());
    // ||z - e||^2 = ||z||^2 - 2 z.e + ||e||^2; the ||z||^2 term is constant per row
    Eigen::VectorXf entry_sq = codebook.rowwise().squaredNorm();
    for (int i = 0; i < t; ++i) {
        Eigen::VectorXf dist = entry_sq - 2.0f * (codebook * latents.row(i).transpose());
        int best = 0;
        float best_val = dist(0);
        for (int j = 1; j < k; ++j)
            if (dist(j) < best_val) {  // strict: ties keep the lowest index
                best_val = dist(j);
                best = j;
            }
        codes[std::size_t(i)] = best;
        quantized.row(i) = codebook.row(best);
    }
    return {std::move(codes), std::move(quantized)};
}

float codebook_utilization(const std::vector<int>& codes, int codebook_size) {
    if (codes.empty()) throw std::invalid_argument("codebook_utilization: empty input");
    std::vector<bool> seen(std::size_t(codebook_size), false);
    int unique = 0;
    for (int c : codes) {
        if (c < 0 || c >= codebook_size)
            throw std::invalid_argument("codebook_utilization: code out of range");
        if (!seen[std::size_t(c)]) {
            seen[std::size_t(c)] = true;
            ++unique;
        }
    }
    return float(unique) / float(codebook_size);
}

Codec::Codec(const CodecConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    Rng rng(seed, 101);
    enc_in_.init(config.input_dim, config.hidden_dim, rng);
    enc_out_.init(config.hidden_dim, config.latent_dim, rng);
    dec_in_.init(config.latent_dim, config.hidden_dim, rng);
    dec_out_.init(config.hidden_dim, config.input_dim, rng);
    enc_blocks_.resize(std::size_t(config.encoder_depth));
    dec_blocks_.resize(std::size_t(config.decoder_depth));
    for (auto& b : enc_blocks_) {
        b.conv.init(config.hidden_dim, config.hidden_dim, config.kernel, rng);
        b.proj.init(config.hidden_dim, config.hidden_dim, rng);
    }
    for (auto& b : dec_blocks_) {
        b.conv.init(config.hidden_dim, config.hidden_dim, config.kernel, rng);
        b.proj.init(config.hidden_dim, config.hidden_dim, rng);
    }
    codebook_ = rng.normal_matrix(config.codebook_size, config.latent_dim);
    norm_stats_.mean = Eigen::RowVectorXf::Zero(config.input_dim);
    norm_stats_.std = Eigen::RowVectorXf::Ones(config.input_dim);
}

Eigen::MatrixXf Codec::normalize(const Eigen::MatrixXf& frames) const {
    if (frames.cols() != norm_stats_.mean.cols())
        throw std::invalid_argument("Codec::normalize: dimension mismatch");
    return (frames.rowwise() - norm_stats_.mean).array().rowwise() /
           norm_stats_.std.array();
}

Eigen::MatrixXf Codec::denormalize(const Eigen::MatrixXf& frames) const {
    return (frames.array().rowwise() * norm_stats_.std.array()).matrix().rowwise() +
           norm_stats_.mean;
}

Eigen::MatrixXf Codec::run_stack(const nn::Linear& in, const std::vector<ResBlock>& blocks,
                                 const nn::Linear& out, const Eigen::MatrixXf& x) const {
    Eigen::MatrixXf h = nn::linear_fwd(in, x);
    for (const auto& b : blocks)
        h += nn::linear_fwd(b.proj, nn::gelu_fwd(nn::conv1d_fwd(b.conv, h)));
    return nn::linear_fwd(out, h);
}

Eigen::MatrixXf Codec::encode(const Eigen::MatrixXf& normalized_frames) const {
    if (int(normalized_frames.cols()) != config_.input_dim)
        throw std::invalid_argument("Codec::encode: dimension mismatch");
    return run_stack(enc_in_, enc_blocks_, enc_out_, normalized_frames);
}

Eigen::MatrixXf Codec::decode(const Eigen::MatrixXf& quantized) const {
    if (int(quantized.cols()) != config_.latent_dim)
        throw std::invalid_argument("Codec::decode: dimension mismatch");
    return run_stack(dec_in_, dec_blocks_, dec_out_, quantized);
}

Eigen::MatrixXf Codec::reconstruct(const Eigen::MatrixXf& frames,
                                   std::vector<int>* codes_out) const {
    auto [codes, quantized] = quantize(encode(normalize(frames)), codebook_);
    if (codes_out) *codes_out = std::move(codes);
    return denormalize(decode(quantized));
}

std::vector<int> Codec::codes_for(const Eigen::MatrixXf& frames) const {
    return quantize(encode(normalize(frames)), codebook_).first;
}

nn::ParamList Codec::collect_params() {
    nn::ParamList params;
    enc_in_.collect(params, "enc_in");
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
        enc_blocks_[i].conv.collect(params, "enc_block" + std::to_string(i) + ".conv");
        enc_blocks_[i].proj.collect(params, "enc_block" + std::to_string(i) + ".proj");
    }
    enc_out_.collect(params, "enc_out");
    dec_in_.collect(params, "dec_in");
    for (std::size_t i = 0; i < dec_blocks_.size(); ++i) {
        dec_blocks_[i].conv.collect(params, "dec_block" + std::to_string(i) + ".conv");
        dec_blocks_[i].proj.collect(params, "dec_block" + std::to_string(i) + ".proj");
    }
    dec_out_.collect(params, "dec_out");
    return params;
}

void Codec::save(const std::string& path) const {
    TensorStore ts;
    ts.config["kind"] = "codec";
    ts.config["input_dim"] = std::to_string(config_.input_dim);
    ts.config["latent_dim"] = std::to_string(config_.latent_dim);
    ts.config["codebook_size"] = std::to_string(config_.codebook_size);
    ts.config["hidden_dim"] = std::to_string(config_.hidden_dim);
    ts.config["encoder_depth"] = std::to_string(config_.encoder_depth);
    ts.config["decoder_depth"] = std::to_string(config_.decoder_depth);
    ts.config["kernel"] = std::to_string(config_.kernel);
    ts.config["commitment_weight"] = std::to_string(config_.commitment_weight);
    Codec& self = const_cast<Codec&>(*this);
    for (const auto& p : self.collect_params()) ts.tensors[p.name] = p.tensor->v;
    ts.tensors["codebook"] = codebook_;
    ts.tensors["norm_mean"] = norm_stats_.mean;
    ts.tensors["norm_std"] = norm_stats_.std;
    ts.save(path);
}

Codec Codec::load(const std::string& path) {
    TensorStore ts = TensorStore::load(path);
    if (ts.config_str("kind") != "codec")
        throw std::runtime_error("Codec::load: not a codec checkpoint: " + path);
    CodecConfig config;
    config.input_dim = ts.config_int("input_dim");
    config.latent_dim = ts.config_int("latent_dim");
    config.codebook_size = ts.config_int("codebook_size");
    config.hidden_dim = ts.config_int("hidden_dim");
    config.encoder_depth = ts.config_int("encoder_depth");
    config.decoder_depth = ts.config_int("decoder_depth");
    config.kernel = ts.config_int("kernel");
    config.commitment_weight = ts.config_float("commitment_weight");
    Codec codec(config, 0);
    for (auto& p : codec.collect_params()) p.tensor->v = ts.get(p.name);
    codec.codebook_ = ts.get("codebook");
    codec.norm_stats_.mean = ts.get("norm_mean").row(0);
    codec.norm_stats_.std = ts.get("norm_std").row(0);
    return codec;
}

namespace {

struct StackCaches {
    nn::LinearCache in_c, out_c;
    std::vector<nn::Conv1dCache> conv_c;
    std::vector<nn::LinearCache> proj_c;
    std::vector<Eigen::MatrixXf> gelu_in;
};

}  // namespace

CodecMetrics train_codec(Codec& codec, const std::vector<FeatureSequence>& corpus,
                         const CodecTrainOpts& opts) {
    if (corpus.empty()) throw std::invalid_argument("train_codec: empty corpus");
    const auto& config = codec.config_;
    codec.norm_stats_ = compute_norm_stats(corpus);

    std::vector<Eigen::MatrixXf> normalized;
    normalized.reserve(corpus.size());
    for (const auto& seq : corpus) normalized.push_back(codec.normalize(seq.frames));

    Rng rng(opts.seed, 7);

    // seed the codebook from encoder outputs on random frames
    {
        Eigen::MatrixXf init(config.codebook_size, config.latent_dim);
        for (int k = 0; k < config.codebook_size; ++k) {
            const auto& item = normalized[rng.uniform_int(normalized.size())];
            Eigen::MatrixXf z =
                codec.encode(item.row(int(rng.uniform_int(std::uint64_t(item.rows())))));
            init.row(k) = z.row(0) + 0.01f * rng.normal_matrix(1, config.latent_dim);
        }
        codec.codebook_ = init;
    }

    Eigen::VectorXf cluster_size = Eigen::VectorXf::Ones(config.codebook_size);
    Eigen::MatrixXf embed_avg = codec.codebook_;
    std::vector<int> unused_steps(std::size_t(config.codebook_size), 0);

    nn::ParamList params = codec.collect_params();
    nn::Adam adam;
    adam.lr = opts.lr;

    CodecMetrics metrics;

    auto fwd_stack = [](const nn::Linear& in, std::vector<Codec::ResBlock>& blocks,
                        const nn::Linear& out, const Eigen::MatrixXf& x, StackCaches& c,
                        Eigen::MatrixXf& hidden_out) {
        c.conv_c.resize(blocks.size());
        c.proj_c.resize(blocks.size());
        c.gelu_in.resize(blocks.size());
        Eigen::MatrixXf h = nn::linear_fwd(in, x, &c.in_c);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            c.gelu_in[i] = nn::conv1d_fwd(blocks[i].conv, h, &c.conv_c[i]);
            h += nn::linear_fwd(blocks[i].proj, nn::gelu_fwd(c.gelu_in[i]), &c.proj_c[i]);
        }
        hidden_out = h;
        return nn::linear_fwd(out, h, &c.out_c);
    };

    auto bwd_stack = [](nn::Linear& in, std::vector<Codec::ResBlock>& blocks,
                        nn::Linear& out, StackCaches& c, const Eigen::MatrixXf& dy) {
        Eigen::MatrixXf dh = nn::linear_bwd(out, c.out_c, dy);
        for (int i = int(blocks.size()) - 1; i >= 0; --i) {
            Eigen::MatrixXf dproj =
                nn::linear_bwd(blocks[std::size_t(i)].proj, c.proj_c[std::size_t(i)], dh);
            Eigen::MatrixXf dconv = nn::gelu_bwd(c.gelu_in[std::size_t(i)], dproj);
            dh += nn::conv1d_bwd(blocks[std::size_t(i)].conv, c.conv_c[std::size_t(i)], dconv);
        }
        return nn::linear_bwd(in, c.in_c, dh);
    };

    for (int step = 0; step < opts.steps; ++step) {
        const Eigen::MatrixXf& x = normalized[rng.uniform_int(normalized.size())];
        const float n = float(x.size());

        nn::zero_grads(params);
        StackCaches enc_c, dec_c;
        Eigen::MatrixXf enc_hidden, dec_hidden;
        Eigen::MatrixXf z =
            fwd_stack(codec.enc_in_, codec.enc_blocks_, codec.enc_out_, x, enc_c, enc_hidden);
        auto [codes, zq] = quantize(z, codec.codebook_);
        Eigen::MatrixXf recon =
            fwd_stack(codec.dec_in_, codec.dec_blocks_, codec.dec_out_, zq, dec_c, dec_hidden);

        Eigen::MatrixXf diff = recon - x;
        const float recon_loss = diff.squaredNorm() / n;
        const float nz = float(z.size());
        const float codebook_loss = (zq - z).squaredNorm() / nz;
        const float commit_loss = codebook_loss;
        const float loss =
            recon_loss + codebook_loss + config.commitment_weight * commit_loss;
        if (!std::isfinite(loss))
            throw std::runtime_error("train_codec: non-finite loss at step " +
                                     std::to_string(step));

        // backward: reconstruction into the decoder, straight-through into the
        // encoder, plus the commitment pull toward the chosen entries
        Eigen::MatrixXf drecon = (2.0f / n) * diff;
        Eigen::MatrixXf dzq =
            bwd_stack(codec.dec_in_, codec.dec_blocks_, codec.dec_out_, dec_c, drecon);
        Eigen::MatrixXf dz =
            dzq + (2.0f * config.commitment_weight / nz) * (z - zq);
        bwd_stack(codec.enc_in_, codec.enc_blocks_, codec.enc_out_, enc_c, dz);
        adam.step(params);

        // EMA codebook update
        Eigen::VectorXf counts = Eigen::VectorXf::Zero(config.codebook_size);
        Eigen::MatrixXf sums = Eigen::MatrixXf::Zero(config.codebook_size, config.latent_dim);
        for (int i = 0; i < int(z.rows()); ++i) {
            counts(codes[std::size_t(i)]) += 1.0f;
            sums.row(codes[std::size_t(i)]) += z.row(i);
        }
        cluster_size = opts.ema_decay * cluster_size + (1.0f - opts.ema_decay) * counts;
        embed_avg = opts.ema_decay * embed_avg + (1.0f - opts.ema_decay) * sums;
        for (int k = 0; k < config.codebook_size; ++k) {
            if (counts(k) > 0.0f) {
                unused_steps[std::size_t(k)] = 0;
            } else if (++unused_steps[std::size_t(k)] >= opts.dead_entry_steps) {
                // reseed a dead entry from a random latent of this batch
                Eigen::RowVectorXf sample = z.row(int(rng.uniform_int(std::uint64_t(z.rows()))));
                codec.codebook_.row(k) = sample;
                embed_avg.row(k) = sample;
                cluster_size(k) = 1.0f;
                unused_steps[std::size_t(k)] = 0;
                continue;
            }
            codec.codebook_.row(k) = embed_avg.row(k) / std::max(cluster_size(k), 1e-5f);
        }

        metrics.loss.push_back(loss);
        metrics.recon_loss.push_back(recon_loss);
    }

    // final metrics over the whole corpus, in the original feature space
    std::vector<int> all_codes;
    double mse = 0.0;
    std::int64_t count = 0;
    for (const auto& seq : corpus) {
        std::vector<int> codes;
        Eigen::MatrixXf recon = codec.reconstruct(seq.frames, &codes);
        mse += double((recon - seq.frames).squaredNorm());
        count += seq.frames.size();
        all_codes.insert(all_codes.end(), codes.begin(), codes.end());
    }
    metrics.final_recon_mse = float(mse / double(count));
    metrics.final_utilization = codebook_utilization(all_codes, config.codebook_size);
    return metrics;
}

}  // namespace podgen
