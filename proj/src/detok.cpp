#include "podgen/detok.hpp"

#include <cmath>
#include <stdexcept>

#include "podgen/tensor_store.hpp"

namespace podgen {

void DetokModelConfig::validate() const {
    if (model_dim % heads != 0)
        throw std::invalid_argument("DetokModelConfig: model_dim % heads != 0");
    if (model_dim % 2 != 0)
        throw std::invalid_argument("DetokModelConfig: model_dim must be even");
    if (time_emb_dim % 2 != 0)
        throw std::invalid_argument("DetokModelConfig: time_emb_dim must be even");
    if (layers < 1 || code_emb_dim < 1 || code_vocab_size < 1)
        throw std::invalid_argument("DetokModelConfig: bad dims");
}

Detok::Detok(const DetokModelConfig& config, const FlowConfig& flow, std::uint64_t seed)
    : config_(config), flow_(flow) {
    config.validate();
    flow.validate();
    Rng rng(seed, 401);
    code_emb_.init_normal(config.code_vocab_size, config.code_emb_dim, rng, 0.02f);
    in_proj_.init(flow.feature_dim + config.code_emb_dim, config.model_dim, rng);
    time_fc1_.init(config.time_emb_dim, config.model_dim, rng);
    time_fc2_.init(config.model_dim, config.model_dim, rng);
    blocks_.resize(std::size_t(config.layers));
    for (auto& b : blocks_)
        b.init(config.model_dim, config.ffn_dim, config.heads, /*rope=*/false, rng);
    final_ln_.init(config.model_dim);
    out_proj_.init(config.model_dim, flow.feature_dim, rng);
}

nn::ParamList Detok::collect_params() {
    nn::ParamList params;
    params.push_back({"code_emb", &code_emb_});
    in_proj_.collect(params, "in_proj");
    time_fc1_.collect(params, "time_fc1");
    time_fc2_.collect(params, "time_fc2");
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect(params, "block" + std::to_string(i));
    final_ln_.collect(params, "final_ln");
    out_proj_.collect(params, "out_proj");
    return params;
}

DetokCache Detok::make_cache() const {
    DetokCache cache;
    cache.k.assign(std::size_t(config_.layers), Eigen::MatrixXf(0, config_.model_dim));
    cache.v.assign(std::size_t(config_.layers), Eigen::MatrixXf(0, config_.model_dim));
    return cache;
}

Eigen::MatrixXf Detok::embed_input(const Eigen::MatrixXf& noised_frames,
                                   const std::vector<int>& frame_codes,
                                   const std::vector<int>& frame_positions) const {
    const int t = int(noised_frames.rows());
    if (int(frame_codes.size()) != t || int(frame_positions.size()) != t)
        throw std::invalid_argument("Detok: codes/positions size mismatch");
    if (int(noised_frames.cols()) != flow_.feature_dim)
        throw std::invalid_argument("Detok: feature dim mismatch");
    Eigen::MatrixXf concat(t, flow_.feature_dim + config_.code_emb_dim);
    for (int i = 0; i < t; ++i) {
        const int c = frame_codes[std::size_t(i)];
        if (c < 0 || c >= config_.code_vocab_size)
            throw std::invalid_argument("Detok: code out of range");
        concat.row(i) << noised_frames.row(i), code_emb_.v.row(c);
    }
    Eigen::MatrixXf h = nn::linear_fwd(in_proj_, concat);
    for (int i = 0; i < t; ++i)
        h.row(i) += nn::sinusoidal_embedding(float(frame_positions[std::size_t(i)]),
                                             config_.model_dim);
    return h;
}

Eigen::MatrixXf Detok::time_embedding(const std::vector<float>& frame_times) const {
    const int t = int(frame_times.size());
    Eigen::MatrixXf sinus(t, config_.time_emb_dim);
    for (int i = 0; i < t; ++i)
        sinus.row(i) =
            nn::sinusoidal_embedding(frame_times[std::size_t(i)] * 1000.0f, config_.time_emb_dim);
    return nn::linear_fwd(time_fc2_, nn::gelu_fwd(nn::linear_fwd(time_fc1_, sinus)));
}

Eigen::MatrixXf Detok::forward_masked(const Eigen::MatrixXf& noised_frames,
                                      const std::vector<int>& frame_codes,
                                      const std::vector<float>& frame_times,
                                      const std::vector<int>& frame_positions,
                                      const Eigen::ArrayXXf& add_mask) const {
    if (frame_times.size() != std::size_t(noised_frames.rows()))
        throw std::invalid_argument("Detok: times size mismatch");
    Eigen::MatrixXf h = embed_input(noised_frames, frame_codes, frame_positions);
    const Eigen::MatrixXf te = time_embedding(frame_times);
    const std::vector<int> dummy_positions;
    for (const auto& b : blocks_)
        h = nn::block_fwd(b, h + te, add_mask, dummy_positions);
    return nn::linear_fwd(out_proj_, nn::layernorm_fwd(final_ln_, h));
}

namespace {

std::vector<int> chunk_frame_codes(const std::vector<int>& codes, int frames_per_code,
                                   int begin_frame, int end_frame) {
    std::vector<int> out;
    out.reserve(std::size_t(end_frame - begin_frame));
    for (int f = begin_frame; f < end_frame; ++f)
        out.push_back(codes[std::size_t(f / frames_per_code)]);
    return out;
}

std::vector<int> range_positions(int begin, int end) {
    std::vector<int> out;
    out.reserve(std::size_t(end - begin));
    for (int p = begin; p < end; ++p) out.push_back(p);
    return out;
}

}  // namespace

Eigen::MatrixXf Detok::generate_chunk(const std::vector<int>& chunk_codes,
                                      const DetokCache& cache,
                                      const Eigen::MatrixXf& init_noise) const {
    const int t = int(chunk_codes.size());
    if (init_noise.rows() != t || init_noise.cols() != flow_.feature_dim)
        throw std::invalid_argument("generate_chunk: init noise shape mismatch");
    if (int(cache.k.size()) != config_.layers)
        throw std::invalid_argument("generate_chunk: cache layer count mismatch");
    const std::vector<int> positions =
        range_positions(cache.finalized_frames, cache.finalized_frames + t);

    Eigen::MatrixXf m = init_noise;
    const float dt = 1.0f / float(flow_.ode_steps);
    for (int step = 0; step < flow_.ode_steps; ++step) {
        const float time = float(step) * dt;
        Eigen::MatrixXf h = embed_input(m, chunk_codes, positions);
        const Eigen::MatrixXf te = time_embedding(std::vector<float>(std::size_t(t), time));
        h += te;
        for (std::size_t l = 0; l < blocks_.size(); ++l) {
            h = nn::block_fwd_prefixed(blocks_[l], h, cache.k[l], cache.v[l], nullptr, nullptr);
            if (l + 1 < blocks_.size()) h += te;
        }
        Eigen::MatrixXf velocity = nn::linear_fwd(out_proj_, nn::layernorm_fwd(final_ln_, h));
        m += dt * velocity;
    }
    return m;
}

void Detok::prefill_chunk(const Eigen::MatrixXf& features, const std::vector<int>& chunk_codes,
                          int chunk_index, int start_frame, const Eigen::MatrixXf& prefill_noise,
                          DetokCache& cache) const {
    if (chunk_index != cache.finalized_chunks)
        throw std::invalid_argument("prefill_chunk: out-of-order prefill (expected chunk " +
                                    std::to_string(cache.finalized_chunks) + ")");
    if (start_frame != cache.finalized_frames)
        throw std::invalid_argument("prefill_chunk: start frame mismatch");
    const int t = int(features.rows());
    if (int(chunk_codes.size()) != t)
        throw std::invalid_argument("prefill_chunk: codes size mismatch");

    Eigen::MatrixXf noised = noise_sample(features, flow_.prefill_t, prefill_noise,
                                          flow_.sigma_min);
    const std::vector<int> positions = range_positions(start_frame, start_frame + t);
    Eigen::MatrixXf h = embed_input(noised, chunk_codes, positions);
    const Eigen::MatrixXf te =
        time_embedding(std::vector<float>(std::size_t(t), flow_.prefill_t));
    h += te;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        Eigen::MatrixXf nk, nv;
        h = nn::block_fwd_prefixed(blocks_[l], h, cache.k[l], cache.v[l], &nk, &nv);
        if (l + 1 < blocks_.size()) h += te;
        Eigen::MatrixXf grown_k(cache.k[l].rows() + t, config_.model_dim);
        grown_k << cache.k[l], nk;
        cache.k[l] = std::move(grown_k);
        Eigen::MatrixXf grown_v(cache.v[l].rows() + t, config_.model_dim);
        grown_v << cache.v[l], nv;
        cache.v[l] = std::move(grown_v);
    }
    cache.finalized_chunks += 1;
    cache.finalized_frames += t;
}

void Detok::save(const std::string& path) const {
    TensorStore ts;
    ts.config["kind"] = "detok";
    ts.config["layers"] = std::to_string(config_.layers);
    ts.config["heads"] = std::to_string(config_.heads);
    ts.config["model_dim"] = std::to_string(config_.model_dim);
    ts.config["ffn_dim"] = std::to_string(config_.ffn_dim);
    ts.config["code_emb_dim"] = std::to_string(config_.code_emb_dim);
    ts.config["time_emb_dim"] = std::to_string(config_.time_emb_dim);
    ts.config["code_vocab_size"] = std::to_string(config_.code_vocab_size);
    ts.config["sigma_min"] = std::to_string(flow_.sigma_min);
    ts.config["ode_steps"] = std::to_string(flow_.ode_steps);
    ts.config["prefill_t"] = std::to_string(flow_.prefill_t);
    ts.config["feature_dim"] = std::to_string(flow_.feature_dim);
    ts.config["frames_per_code"] = std::to_string(flow_.frames_per_code);
    ts.config["code_frame_rate_hz"] = std::to_string(flow_.code_frame_rate_hz);
    ts.config["train_chunk_min_s"] = std::to_string(flow_.train_chunk_min_s);
    ts.config["train_chunk_max_s"] = std::to_string(flow_.train_chunk_max_s);
    ts.config["infer_chunk_s"] = std::to_string(flow_.infer_chunk_s);
    Detok& self = const_cast<Detok&>(*this);
    for (const auto& p : self.collect_params()) ts.tensors[p.name] = p.tensor->v;
    ts.save(path);
}

Detok Detok::load(const std::string& path) {
    TensorStore ts = TensorStore::load(path);
    if (ts.config_str("kind") != "detok")
        throw std::runtime_error("Detok::load: not a detok checkpoint: " + path);
    DetokModelConfig config;
    config.layers = ts.config_int("layers");
    config.heads = ts.config_int("heads");
    config.model_dim = ts.config_int("model_dim");
    config.ffn_dim = ts.config_int("ffn_dim");
    config.code_emb_dim = ts.config_int("code_emb_dim");
    config.time_emb_dim = ts.config_int("time_emb_dim");
    config.code_vocab_size = ts.config_int("code_vocab_size");
    FlowConfig flow;
    flow.sigma_min = ts.config_float("sigma_min");
    flow.ode_steps = ts.config_int("ode_steps");
    flow.prefill_t = ts.config_float("prefill_t");
    flow.feature_dim = ts.config_int("feature_dim");
    flow.frames_per_code = ts.config_int("frames_per_code");
    flow.code_frame_rate_hz = ts.config_float("code_frame_rate_hz");
    flow.train_chunk_min_s = ts.config_float("train_chunk_min_s");
    flow.train_chunk_max_s = ts.config_float("train_chunk_max_s");
    flow.infer_chunk_s = ts.config_float("infer_chunk_s");
    Detok detok(config, flow, 0);
    for (auto& p : detok.collect_params()) p.tensor->v = ts.get(p.name);
    return detok;
}

Eigen::MatrixXf detok_init_noise(std::uint64_t seed, int chunk_index, int frames, int dim) {
    Rng rng(seed, std::uint64_t(1000 + 2 * chunk_index));
    return rng.normal_matrix(frames, dim);
}

Eigen::MatrixXf detok_prefill_noise(std::uint64_t seed, int chunk_index, int frames, int dim) {
    Rng rng(seed, std::uint64_t(1000 + 2 * chunk_index + 1));
    return rng.normal_matrix(frames, dim);
}

namespace {

struct PlannedCodes {
    ChunkPlan plan;
    std::vector<int> frame_codes;  // one code per feature frame
};

PlannedCodes plan_inference(const Detok& detok, const std::vector<int>& codes) {
    if (codes.empty()) throw std::invalid_argument("detokenize: empty codes");
    const FlowConfig& flow = detok.flow_config();
    const int total = int(codes.size()) * flow.frames_per_code;
    const int chunk_frames =
        std::max(1, int(std::lround(flow.infer_chunk_s * flow.frame_rate_hz())));
    PlannedCodes pc;
    pc.plan = ChunkPlan::fixed(total, chunk_frames);
    pc.frame_codes = chunk_frame_codes(codes, flow.frames_per_code, 0, total);
    return pc;
}

DetokenizeResult assemble_result(const Detok& detok, const ChunkPlan& plan,
                                 const std::vector<Eigen::MatrixXf>& chunks) {
    DetokenizeResult res;
    res.plan = plan;
    res.features.frame_rate_hz = detok.flow_config().frame_rate_hz();
    res.features.frames.resize(plan.total_frames(), detok.flow_config().feature_dim);
    for (std::size_t i = 0; i < chunks.size(); ++i)
        res.features.frames.middleRows(plan.chunks[i].begin, plan.chunks[i].size()) = chunks[i];
    for (std::size_t i = 1; i < plan.chunks.size(); ++i)
        res.boundaries.push_back(plan.chunks[i].begin);
    return res;
}

}  // namespace

DetokenizeResult detokenize_stream(const Detok& detok, const std::vector<int>& codes,
                                   std::uint64_t seed) {
    PlannedCodes pc = plan_inference(detok, codes);
    const int dim = detok.flow_config().feature_dim;
    DetokCache cache = detok.make_cache();
    std::vector<Eigen::MatrixXf> chunks;
    for (int i = 0; i < pc.plan.num_chunks(); ++i) {
        const auto& range = pc.plan.chunks[std::size_t(i)];
        std::vector<int> ccodes(pc.frame_codes.begin() + range.begin,
                                pc.frame_codes.begin() + range.end);
        Eigen::MatrixXf m = detok.generate_chunk(
            ccodes, cache, detok_init_noise(seed, i, range.size(), dim));
        detok.prefill_chunk(m, ccodes, i, range.begin,
                            detok_prefill_noise(seed, i, range.size(), dim), cache);
        chunks.push_back(std::move(m));
    }
    return assemble_result(detok, pc.plan, chunks);
}

DetokenizeResult detokenize_monolithic(const Detok& detok, const std::vector<int>& codes,
                                       std::uint64_t seed, bool tamper_mask) {
    PlannedCodes pc = plan_inference(detok, codes);
    const FlowConfig& flow = detok.flow_config();
    const int dim = flow.feature_dim;
    std::vector<Eigen::MatrixXf> outputs;
    for (int i = 0; i < pc.plan.num_chunks(); ++i) {
        const auto& range = pc.plan.chunks[std::size_t(i)];
        ChunkMask cm = make_chunk_mask(i + 1);
        if (tamper_mask && i >= 1) cm.allowed(cm.num_chunks + i, i - 1) = false;
        std::vector<int> sizes(std::size_t(2 * (i + 1)), 0);
        for (int j = 0; j < i; ++j) sizes[std::size_t(j)] = pc.plan.chunks[std::size_t(j)].size();
        sizes[std::size_t(i + 1 + i)] = range.size();
        const Eigen::ArrayXXf mask = expand_chunk_mask(cm, sizes);

        // rows: clean chunks 0..i-1 at the prefill timestep, then the noisy chunk
        const int prefix = range.begin;
        Eigen::MatrixXf rows(prefix + range.size(), dim);
        std::vector<float> times(std::size_t(prefix + range.size()), flow.prefill_t);
        std::vector<int> positions = range_positions(0, prefix + range.size());
        std::vector<int> fcodes(pc.frame_codes.begin(), pc.frame_codes.begin() + prefix);
        for (int j = 0; j < i; ++j) {
            const auto& r = pc.plan.chunks[std::size_t(j)];
            rows.middleRows(r.begin, r.size()) =
                noise_sample(outputs[std::size_t(j)], flow.prefill_t,
                             detok_prefill_noise(seed, j, r.size(), dim), flow.sigma_min);
        }
        fcodes.insert(fcodes.end(), pc.frame_codes.begin() + range.begin,
                      pc.frame_codes.begin() + range.end);

        Eigen::MatrixXf m = detok_init_noise(seed, i, range.size(), dim);
        const float dt = 1.0f / float(flow.ode_steps);
        for (int step = 0; step < flow.ode_steps; ++step) {
            const float time = float(step) * dt;
            rows.bottomRows(range.size()) = m;
            for (int r = prefix; r < prefix + range.size(); ++r)
                times[std::size_t(r)] = time;
            Eigen::MatrixXf velocity =
                detok.forward_masked(rows, fcodes, times, positions, mask);
            m += dt * velocity.bottomRows(range.size());
        }
        outputs.push_back(std::move(m));
    }
    return assemble_result(detok, pc.plan, outputs);
}

DetokenizeResult detokenize_independent(const Detok& detok, const std::vector<int>& codes,
                                        std::uint64_t seed) {
    PlannedCodes pc = plan_inference(detok, codes);
    const int dim = detok.flow_config().feature_dim;
    std::vector<Eigen::MatrixXf> chunks;
    for (int i = 0; i < pc.plan.num_chunks(); ++i) {
        const auto& range = pc.plan.chunks[std::size_t(i)];
        std::vector<int> ccodes(pc.frame_codes.begin() + range.begin,
                                pc.frame_codes.begin() + range.end);
        DetokCache cache = detok.make_cache();
        // independent chunks still embed their true absolute positions
        cache.finalized_frames = range.begin;
        chunks.push_back(detok.generate_chunk(ccodes, cache,
                                              detok_init_noise(seed, i, range.size(), dim)));
    }
    return assemble_result(detok, pc.plan, chunks);
}

DetokMetrics train_detokenizer(
    Detok& detok, const std::vector<std::pair<std::vector<int>, FeatureSequence>>& pairs,
    const DetokTrainOpts& opts) {
    if (pairs.empty()) throw std::invalid_argument("train_detokenizer: empty corpus");
    const FlowConfig& flow = detok.flow_;
    for (const auto& [codes, feats] : pairs)
        if (int(codes.size()) * flow.frames_per_code != feats.num_frames())
            throw std::invalid_argument("train_detokenizer: code/feature length mismatch");

    const int min_frames =
        std::max(1, int(std::lround(flow.train_chunk_min_s * flow.frame_rate_hz())));
    const int max_frames =
        std::max(min_frames, int(std::lround(flow.train_chunk_max_s * flow.frame_rate_hz())));

    Rng rng(opts.seed, 17);
    nn::ParamList params = detok.collect_params();
    nn::Adam adam;
    adam.lr = opts.lr;
    DetokMetrics metrics;

    for (int step = 0; step < opts.steps; ++step) {
        const auto& [codes, feats] = pairs[rng.uniform_int(pairs.size())];
        const int total = feats.num_frames();
        ChunkPlan plan = ChunkPlan::random(total, min_frames, max_frames, rng);
        const int n = plan.num_chunks();
        const int dim = flow.feature_dim;

        // assemble the 2N-chunk training sequence
        Eigen::MatrixXf rows(2 * total, dim);
        Eigen::MatrixXf target = Eigen::MatrixXf::Zero(2 * total, dim);
        std::vector<float> times(std::size_t(2 * total));
        std::vector<int> fcodes;
        fcodes.reserve(std::size_t(2 * total));
        std::vector<int> positions;
        positions.reserve(std::size_t(2 * total));
        std::vector<int> sizes(std::size_t(2 * n));

        const std::vector<int> base_codes =
            chunk_frame_codes(codes, flow.frames_per_code, 0, total);
        for (int pass = 0; pass < 2; ++pass) {  // 0: clean chunks, 1: noisy chunks
            for (int i = 0; i < n; ++i) {
                const auto& r = plan.chunks[std::size_t(i)];
                const int dst = pass * total + r.begin;
                const float t_chunk =
                    pass == 0 ? flow.prefill_t : float(rng.uniform());
                Eigen::MatrixXf noise = rng.normal_matrix(r.size(), dim);
                const auto clean = feats.frames.middleRows(r.begin, r.size());
                rows.middleRows(dst, r.size()) =
                    noise_sample(clean, t_chunk, noise, flow.sigma_min);
                if (pass == 1)
                    target.middleRows(dst, r.size()) = fm_target(clean, noise, flow.sigma_min);
                for (int f = r.begin; f < r.end; ++f) {
                    times[std::size_t(dst + f - r.begin)] = t_chunk;
                    fcodes.push_back(base_codes[std::size_t(f)]);
                    positions.push_back(f);
                }
                sizes[std::size_t(pass * n + i)] = r.size();
            }
        }
        const Eigen::ArrayXXf mask = expand_chunk_mask(make_chunk_mask(n), sizes);

        // forward with caches
        nn::zero_grads(params);
        const int t2 = 2 * total;
        Eigen::MatrixXf concat(t2, dim + detok.config_.code_emb_dim);
        for (int i = 0; i < t2; ++i)
            concat.row(i) << rows.row(i), detok.code_emb_.v.row(fcodes[std::size_t(i)]);
        nn::LinearCache in_c;
        Eigen::MatrixXf h = nn::linear_fwd(detok.in_proj_, concat, &in_c);
        for (int i = 0; i < t2; ++i)
            h.row(i) += nn::sinusoidal_embedding(float(positions[std::size_t(i)]),
                                                 detok.config_.model_dim);

        Eigen::MatrixXf sinus(t2, detok.config_.time_emb_dim);
        for (int i = 0; i < t2; ++i)
            sinus.row(i) = nn::sinusoidal_embedding(times[std::size_t(i)] * 1000.0f,
                                                    detok.config_.time_emb_dim);
        nn::LinearCache tf1_c, tf2_c;
        Eigen::MatrixXf te_pre = nn::linear_fwd(detok.time_fc1_, sinus, &tf1_c);
        Eigen::MatrixXf te = nn::linear_fwd(detok.time_fc2_, nn::gelu_fwd(te_pre), &tf2_c);

        std::vector<nn::BlockCache> bcaches(detok.blocks_.size());
        const std::vector<int> dummy_positions;
        for (std::size_t l = 0; l < detok.blocks_.size(); ++l)
            h = nn::block_fwd(detok.blocks_[l], h + te, mask, dummy_positions, &bcaches[l]);
        nn::LayerNormCache lnc;
        nn::LinearCache out_c;
        Eigen::MatrixXf velocity =
            nn::linear_fwd(detok.out_proj_, nn::layernorm_fwd(detok.final_ln_, h, &lnc), &out_c);

        // MSE over noisy rows only
        const float nelem = float(total * dim);
        Eigen::MatrixXf diff = velocity.bottomRows(total) - target.bottomRows(total);
        const float loss = diff.squaredNorm() / nelem;
        if (!std::isfinite(loss))
            throw std::runtime_error("train_detokenizer: non-finite loss at step " +
                                     std::to_string(step));
        metrics.loss.push_back(loss);

        Eigen::MatrixXf dvel = Eigen::MatrixXf::Zero(t2, dim);
        dvel.bottomRows(total) = (2.0f / nelem) * diff;

        Eigen::MatrixXf dh = nn::linear_bwd(detok.out_proj_, out_c, dvel);
        dh = nn::layernorm_bwd(detok.final_ln_, lnc, dh);
        Eigen::MatrixXf dte = Eigen::MatrixXf::Zero(t2, detok.config_.model_dim);
        for (int l = int(detok.blocks_.size()) - 1; l >= 0; --l) {
            dh = nn::block_bwd(detok.blocks_[std::size_t(l)], bcaches[std::size_t(l)], dh);
            dte += dh;
        }
        Eigen::MatrixXf dte_pre =
            nn::gelu_bwd(te_pre, nn::linear_bwd(detok.time_fc2_, tf2_c, dte));
        nn::linear_bwd(detok.time_fc1_, tf1_c, dte_pre);
        Eigen::MatrixXf dconcat = nn::linear_bwd(detok.in_proj_, in_c, dh);
        for (int i = 0; i < t2; ++i)
            detok.code_emb_.g.row(fcodes[std::size_t(i)]) +=
                dconcat.row(i).tail(detok.config_.code_emb_dim);
        adam.step(params);
    }
    return metrics;
}

}  // namespace podgen
