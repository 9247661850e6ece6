#include "podgen/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "podgen/tensor_store.hpp"

namespace podgen {

void LMConfig::validate() const {
    if (model_dim % heads != 0)
        throw std::invalid_argument("LMConfig: model_dim must be divisible by heads");
    if ((model_dim / heads) % 2 != 0)
        throw std::invalid_argument("LMConfig: head dim must be even (rotary pairs)");
    if (layers < 1 || model_dim < 1 || ffn_dim < 1)
        throw std::invalid_argument("LMConfig: bad dims");
    if (max_context_tokens < 1) throw std::invalid_argument("LMConfig: bad context");
}

void SamplerConfig::validate() const {
    if (top_k < 1) throw std::invalid_argument("SamplerConfig: top_k >= 1");
    if (!(top_p > 0.0f && top_p <= 1.0f))
        throw std::invalid_argument("SamplerConfig: top_p in (0,1]");
    if (temperature < 0.0f) throw std::invalid_argument("SamplerConfig: temperature >= 0");
}

LmModel::LmModel(const LMConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    Rng rng(seed, 211);
    tok_emb_.init_normal(config.vocab.size(), config.model_dim, rng, 0.02f);
    blocks_.resize(std::size_t(config.layers));
    for (auto& b : blocks_)
        b.init(config.model_dim, config.ffn_dim, config.heads, /*rope=*/true, rng);
    final_ln_.init(config.model_dim);
    head_.init(config.model_dim, config.vocab.size(), rng);
}

nn::ParamList LmModel::collect_params() {
    nn::ParamList params;
    params.push_back({"tok_emb", &tok_emb_});
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        blocks_[i].collect(params, "block" + std::to_string(i));
    final_ln_.collect(params, "final_ln");
    head_.collect(params, "head");
    return params;
}

namespace {

Eigen::ArrayXXf causal_mask(int t) {
    Eigen::ArrayXXf mask = Eigen::ArrayXXf::Zero(t, t);
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) mask(i, j) = -1e9f;
    return mask;
}

std::vector<int> iota_positions(int t) {
    std::vector<int> pos(static_cast<std::size_t>(t));
    std::iota(pos.begin(), pos.end(), 0);
    return pos;
}

}  // namespace

Eigen::MatrixXf LmModel::forward(const std::vector<int>& tokens) const {
    const int t = int(tokens.size());
    if (t < 1) throw std::invalid_argument("LmModel::forward: empty input");
    if (t > config_.max_context_tokens)
        throw std::invalid_argument("LmModel::forward: input exceeds max context");
    Eigen::MatrixXf h(t, config_.model_dim);
    for (int i = 0; i < t; ++i) {
        const int id = tokens[std::size_t(i)];
        if (id < 0 || id >= config_.vocab.size())
            throw std::invalid_argument("LmModel::forward: token id out of range");
        h.row(i) = tok_emb_.v.row(id);
    }
    const Eigen::ArrayXXf mask = causal_mask(t);
    const std::vector<int> positions = iota_positions(t);
    for (const auto& b : blocks_) h = nn::block_fwd(b, h, mask, positions);
    return nn::linear_fwd(head_, nn::layernorm_fwd(final_ln_, h));
}

void LmModel::save(const std::string& path) const {
    TensorStore ts;
    ts.config["kind"] = "lm";
    ts.config["layers"] = std::to_string(config_.layers);
    ts.config["heads"] = std::to_string(config_.heads);
    ts.config["model_dim"] = std::to_string(config_.model_dim);
    ts.config["ffn_dim"] = std::to_string(config_.ffn_dim);
    ts.config["max_context_tokens"] = std::to_string(config_.max_context_tokens);
    ts.config["text_vocab_size"] = std::to_string(config_.vocab.text_vocab_size);
    ts.config["code_vocab_size"] = std::to_string(config_.vocab.code_vocab_size);
    LmModel& self = const_cast<LmModel&>(*this);
    for (const auto& p : self.collect_params()) ts.tensors[p.name] = p.tensor->v;
    ts.save(path);
}

LmModel LmModel::load(const std::string& path) {
    TensorStore ts = TensorStore::load(path);
    if (ts.config_str("kind") != "lm")
        throw std::runtime_error("LmModel::load: not an lm checkpoint: " + path);
    LMConfig config;
    config.layers = ts.config_int("layers");
    config.heads = ts.config_int("heads");
    config.model_dim = ts.config_int("model_dim");
    config.ffn_dim = ts.config_int("ffn_dim");
    config.max_context_tokens = ts.config_int("max_context_tokens");
    config.vocab.text_vocab_size = ts.config_int("text_vocab_size");
    config.vocab.code_vocab_size = ts.config_int("code_vocab_size");
    LmModel model(config, 0);
    for (auto& p : model.collect_params()) p.tensor->v = ts.get(p.name);
    return model;
}

int sample_next(const Eigen::RowVectorXf& logits_row, const SamplerConfig& sampler, Rng& rng) {
    sampler.validate();
    const int v = int(logits_row.size());
    int finite_count = 0;
    for (int i = 0; i < v; ++i)
        if (logits_row(i) > -std::numeric_limits<float>::infinity()) ++finite_count;
    if (finite_count == 0)
        throw std::invalid_argument("sample_next: no admissible token (all -inf)");

    if (sampler.temperature == 0.0f) {
        int best = 0;
        for (int i = 1; i < v; ++i)
            if (logits_row(i) > logits_row(best)) best = i;
        return best;
    }

    std::vector<int> order(static_cast<std::size_t>(v));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logits_row(a) > logits_row(b); });
    const int keep = std::min(sampler.top_k, finite_count);
    order.resize(std::size_t(keep));

    // softmax over the kept set, at temperature
    std::vector<double> probs(static_cast<std::size_t>(keep));
    const double maxlogit = double(logits_row(order[0])) / double(sampler.temperature);
    double sum = 0.0;
    for (int i = 0; i < keep; ++i) {
        probs[std::size_t(i)] =
            std::exp(double(logits_row(order[std::size_t(i)])) / double(sampler.temperature) -
                     maxlogit);
        sum += probs[std::size_t(i)];
    }
    for (auto& p : probs) p /= sum;

    // smallest prefix reaching top_p, then renormalize
    int nucleus = keep;
    double cum = 0.0;
    for (int i = 0; i < keep; ++i) {
        cum += probs[std::size_t(i)];
        if (cum >= double(sampler.top_p) - 1e-12) {
            nucleus = i + 1;
            break;
        }
    }
    double nucleus_sum = 0.0;
    for (int i = 0; i < nucleus; ++i) nucleus_sum += probs[std::size_t(i)];

    double r = rng.uniform() * nucleus_sum;
    for (int i = 0; i < nucleus; ++i) {
        r -= probs[std::size_t(i)];
        if (r <= 0.0) return order[std::size_t(i)];
    }
    return order[std::size_t(nucleus - 1)];
}

BuiltSequence build_single_turn_sequence(const ScriptTurn& turn, const MixedVocab& vocab) {
    if (turn.text_tokens.empty() || turn.code_tokens.empty())
        throw std::invalid_argument("build_single_turn_sequence: empty turn");
    BuiltSequence seq;
    seq.vocab = vocab;
    auto push = [&seq](int token, Region region, bool loss) {
        seq.tokens.push_back(token);
        seq.region.push_back(region);
        seq.loss_mask.push_back(loss);
    };
    push(vocab.bos(), Region::PodcastText, false);
    push(vocab.speaker_tag(turn.speaker_id), Region::PodcastText, false);
    for (int t : turn.text_tokens) push(t, Region::PodcastText, false);
    const int start = seq.size();
    for (int c : turn.code_tokens) push(vocab.code_to_id(c), Region::PodcastSpeech, true);
    push(vocab.sc(), Region::PodcastSpeech, true);
    seq.turn_boundaries.emplace_back(start, seq.size());
    push(vocab.eos(), Region::PodcastSpeech, false);
    return seq;
}

BuiltSequence sequence_for_item(const LmTrainItem& item, const MixedVocab& vocab) {
    if (item.single_turn) {
        if (item.turns.empty())
            throw std::invalid_argument("sequence_for_item: single-turn item without turn");
        return build_single_turn_sequence(item.turns.front(), vocab);
    }
    return build_sequence(item.prompt1, item.prompt2, item.turns, BuildMode::Train, vocab);
}

namespace {

struct LmForwardState {
    Eigen::MatrixXf emb;
    std::vector<nn::BlockCache> block_caches;
    std::vector<Eigen::MatrixXf> block_inputs;
    nn::LayerNormCache lnc;
    nn::LinearCache headc;
    Eigen::MatrixXf logits;
};

void lm_forward_train(LmModel& model, nn::Tensor& tok_emb, std::vector<nn::Block>& blocks,
                      nn::LayerNorm& final_ln, nn::Linear& head,
                      const std::vector<int>& tokens, LmForwardState& st) {
    (void)model;
    const int t = int(tokens.size());
    st.emb.resize(t, tok_emb.v.cols());
    for (int i = 0; i < t; ++i) st.emb.row(i) = tok_emb.v.row(tokens[std::size_t(i)]);
    const Eigen::ArrayXXf mask = causal_mask(t);
    const std::vector<int> positions = iota_positions(t);
    st.block_caches.resize(blocks.size());
    st.block_inputs.resize(blocks.size());
    Eigen::MatrixXf h = st.emb;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        st.block_inputs[i] = h;
        h = nn::block_fwd(blocks[i], h, mask, positions, &st.block_caches[i]);
    }
    st.logits = nn::linear_fwd(head, nn::layernorm_fwd(final_ln, h, &st.lnc), &st.headc);
}

// CE with per-turn averaging; fills dlogits and returns the loss. Target at
// sequence index p is predicted from logits row p-1.
float lm_loss_and_grad(const BuiltSequence& seq, const Eigen::MatrixXf& logits,
                       Eigen::MatrixXf* dlogits) {
    if (seq.turn_boundaries.empty())
        throw std::invalid_argument("lm loss: sequence without turn boundaries");
    if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
    const float turn_weight = 1.0f / float(seq.turn_boundaries.size());
    double total = 0.0;
    for (const auto& [start, end] : seq.turn_boundaries) {
        const float w = turn_weight / float(end - start);
        for (int p = start; p < end; ++p) {
            const int target = seq.tokens[std::size_t(p)];
            const auto row = logits.row(p - 1);
            const float m = row.maxCoeff();
            Eigen::ArrayXf e = (row.array() - m).exp();
            const float z = e.sum();
            total += double(w) * (std::log(double(z)) + double(m) - double(row(target)));
            if (dlogits) {
                dlogits->row(p - 1) += (w / z) * e.matrix();
                (*dlogits)(p - 1, target) -= w;
            }
        }
    }
    return float(total);
}

}  // namespace

std::vector<LmStageMetrics> train_lm(
    LmModel& model, const LmStageCorpora& corpora, const std::vector<CurriculumStage>& stages,
    std::uint64_t seed, const std::function<void(int, const LmModel&)>& on_stage_end) {
    // curriculum order is part of the contract
    int prev = 0;
    for (const auto& s : stages) {
        if (s.stage_id < 1 || s.stage_id > 3)
            throw std::invalid_argument("train_lm: stage id must be 1..3");
        if (s.stage_id <= prev)
            throw std::invalid_argument("train_lm: stages must be configured in order 1->2->3");
        prev = s.stage_id;
    }

    nn::ParamList params = model.collect_params();
    std::vector<LmStageMetrics> all_metrics;

    for (const auto& stage : stages) {
        const std::vector<LmTrainItem>* corpus = nullptr;
        if (stage.stage_id == 1) corpus = &corpora.stage1;
        if (stage.stage_id == 2) corpus = &corpora.stage2;
        if (stage.stage_id == 3) corpus = &corpora.stage3;
        if (stage.steps > 0 && (corpus == nullptr || corpus->empty()))
            throw std::invalid_argument("train_lm: stage corpus is empty");

        Rng rng(seed, std::uint64_t(300 + stage.stage_id));
        nn::Adam adam;
        adam.lr = stage.lr;
        LmStageMetrics metrics;
        metrics.stage_id = stage.stage_id;

        for (int step = 0; step < stage.steps; ++step) {
            const LmTrainItem& item = (*corpus)[rng.uniform_int(corpus->size())];
            BuiltSequence seq = sequence_for_item(item, model.config_.vocab);
            if (seq.size() > stage.max_context || seq.size() > model.config_.max_context_tokens)
                throw std::invalid_argument("train_lm: sequence exceeds stage context");

            nn::zero_grads(params);
            LmForwardState st;
            lm_forward_train(model, model.tok_emb_, model.blocks_, model.final_ln_,
                             model.head_, seq.tokens, st);
            Eigen::MatrixXf dlogits;
            const float loss = lm_loss_and_grad(seq, st.logits, &dlogits);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_lm: non-finite loss at stage " +
                                         std::to_string(stage.stage_id) + " step " +
                                         std::to_string(step));
            metrics.loss.push_back(loss);

            Eigen::MatrixXf dh = nn::linear_bwd(model.head_, st.headc, dlogits);
            dh = nn::layernorm_bwd(model.final_ln_, st.lnc, dh);
            for (int i = int(model.blocks_.size()) - 1; i >= 0; --i)
                dh = nn::block_bwd(model.blocks_[std::size_t(i)],
                                   st.block_caches[std::size_t(i)], dh);
            for (int i = 0; i < int(seq.tokens.size()); ++i)
                model.tok_emb_.g.row(seq.tokens[std::size_t(i)]) += dh.row(i);
            adam.step(params);
        }
        if (!metrics.loss.empty()) {
            metrics.first_loss = metrics.loss.front();
            metrics.last_loss = metrics.loss.back();
        }
        all_metrics.push_back(std::move(metrics));
        if (on_stage_end) on_stage_end(stage.stage_id, model);
    }
    return all_metrics;
}

float lm_item_loss(const LmModel& model, const LmTrainItem& item) {
    BuiltSequence seq = sequence_for_item(item, model.config().vocab);
    Eigen::MatrixXf logits = model.forward(seq.tokens);
    return lm_loss_and_grad(seq, logits, nullptr);
}

float lm_teacher_forced_accuracy(const LmModel& model, const std::vector<LmTrainItem>& items) {
    std::int64_t correct = 0, total = 0;
    for (const auto& item : items) {
        BuiltSequence seq = sequence_for_item(item, model.config().vocab);
        Eigen::MatrixXf logits = model.forward(seq.tokens);
        for (const auto& [start, end] : seq.turn_boundaries)
            for (int p = start; p < end; ++p) {
                int argmax = 0;
                logits.row(p - 1).maxCoeff(&argmax);
                correct += (argmax == seq.tokens[std::size_t(p)]) ? 1 : 0;
                ++total;
            }
    }
    return total == 0 ? 0.0f : float(double(correct) / double(total));
}

GenerationResult generate(const LmModel& model, const SpeakerPrompt& prompt1,
                          const SpeakerPrompt& prompt2, const std::vector<ScriptTurn>& turns,
                          const SamplerConfig& sampler, const GenerationLimits& limits,
                          Rng& rng) {
    const MixedVocab& vocab = model.config().vocab;
    BuiltSequence seq = build_sequence(prompt1, prompt2, turns, BuildMode::Infer, vocab);
    if (seq.size() >= model.config().max_context_tokens)
        throw std::invalid_argument("generate: prompt does not fit the context window");

    GenerationResult result;
    result.expected_turns = int(turns.size());
    std::vector<int> context = seq.tokens;

    int turns_done = 0;
    int current_turn_len = 0;
    while (true) {
        if (int(result.generated_tokens.size()) >= limits.max_tokens) {
            result.runaway = true;
            break;
        }
        if (int(context.size()) >= model.config().max_context_tokens) {
            result.runaway = true;
            break;
        }
        Eigen::MatrixXf logits = model.forward(context);
        Eigen::RowVectorXf row = logits.row(logits.rows() - 1);
        // constrain to the speech region: codes, SC, EOS
        Eigen::RowVectorXf constrained =
            Eigen::RowVectorXf::Constant(row.size(), -std::numeric_limits<float>::infinity());
        for (int c = 0; c < vocab.code_vocab_size; ++c)
            constrained(vocab.code_to_id(c)) = row(vocab.code_to_id(c));
        if (current_turn_len > 0) constrained(vocab.sc()) = row(vocab.sc());
        constrained(vocab.eos()) = row(vocab.eos());

        const int token = sample_next(constrained, sampler, rng);
        if (token == vocab.eos()) {
            result.hit_eos = true;
            break;
        }
        result.generated_tokens.push_back(token);
        context.push_back(token);
        if (token == vocab.sc()) {
            ++turns_done;
            current_turn_len = 0;
            if (turns_done >= result.expected_turns) break;
        } else if (++current_turn_len > limits.per_turn_budget) {
            result.runaway = true;
            break;
        }
    }
    if (!result.generated_tokens.empty())
        result.turns = parse_generated(result.generated_tokens, turns.front().speaker_id, vocab);
    return result;
}

}  // namespace podgen
