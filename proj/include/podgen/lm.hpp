#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "podgen/nn.hpp"
#include "podgen/sequence.hpp"
#include "podgen/vocab.hpp"

namespace podgen {

struct LMConfig {
    int layers = 4;
    int heads = 4;
    int model_dim = 128;
    int ffn_dim = 512;
    int max_context_tokens = 2048;
    MixedVocab vocab;

    void validate() const;
};

struct SamplerConfig {
    int top_k = 30;
    float top_p = 0.8f;
    float temperature = 0.8f;

    void validate() const;
};

enum class StageCorpus { SingleTurn, LongNonConversational, Conversational };

struct CurriculumStage {
    int stage_id = 1;  // 1, 2, or 3
    StageCorpus corpus = StageCorpus::SingleTurn;
    int max_context = 2048;
    int steps = 0;
    float lr = 1e-3f;
};

// One training item. Stage 1 uses only `turns[0]` (single speaker, no
// prompts); stages 2 and 3 use the full prompted layout.
struct LmTrainItem {
    SpeakerPrompt prompt1, prompt2;
    std::vector<ScriptTurn> turns;
    bool single_turn = false;
};

struct LmStageCorpora {
    std::vector<LmTrainItem> stage1, stage2, stage3;
};

struct LmStageMetrics {
    int stage_id = 0;
    std::vector<float> loss;
    float first_loss = 0.0f;
    float last_loss = 0.0f;
};

struct GenerationLimits {
    int max_tokens = 0;         // 0 means nothing may be generated
    int per_turn_budget = 256;  // runaway guard per turn
};

struct GenerationResult {
    std::vector<std::pair<int, std::vector<int>>> turns;
    std::vector<int> generated_tokens;
    bool runaway = false;
    bool hit_eos = false;
    int expected_turns = 0;
};

// Decoder-only causal transformer over the mixed vocabulary, rotary positions.
class LmModel {
public:
    LmModel() = default;
    LmModel(const LMConfig& config, std::uint64_t seed);

    const LMConfig& config() const { return config_; }

    // Per-position logits over the full vocabulary; causal.
    Eigen::MatrixXf forward(const std::vector<int>& tokens) const;

    void save(const std::string& path) const;
    static LmModel load(const std::string& path);

    nn::ParamList collect_params();

    friend std::vector<LmStageMetrics> train_lm(
        LmModel& model, const LmStageCorpora& corpora,
        const std::vector<CurriculumStage>& stages, std::uint64_t seed,
        const std::function<void(int, const LmModel&)>& on_stage_end);

private:
    LMConfig config_;
    nn::Tensor tok_emb_;  // V x d
    std::vector<nn::Block> blocks_;
    nn::LayerNorm final_ln_;
    nn::Linear head_;
};

// Temperature, top-k, top-p, renormalize, sample. temperature == 0 is argmax.
int sample_next(const Eigen::RowVectorXf& logits_row, const SamplerConfig& sampler, Rng& rng);

// Stage-1 layout: BOS, speaker tag, text, codes, SC, EOS with loss over the
// codes and the SC as one turn.
BuiltSequence build_single_turn_sequence(const ScriptTurn& turn, const MixedVocab& vocab);

BuiltSequence sequence_for_item(const LmTrainItem& item, const MixedVocab& vocab);

// Stages must be configured in order 1 -> 2 -> 3; checkpoints are reported
// through on_stage_end after each stage.
std::vector<LmStageMetrics> train_lm(
    LmModel& model, const LmStageCorpora& corpora, const std::vector<CurriculumStage>& stages,
    std::uint64_t seed,
    const std::function<void(int, const LmModel&)>& on_stage_end = nullptr);

// Loss value of one item under the current model (per-turn averaged CE).
float lm_item_loss(const LmModel& model, const LmTrainItem& item);

// Teacher-forced next-token accuracy over loss-masked positions.
float lm_teacher_forced_accuracy(const LmModel& model, const std::vector<LmTrainItem>& items);

// Autoregressive generation of podcast speech codes. Text is fully
// teacher-forced as context; only speech tokens (codes, SC, EOS) are sampled.
GenerationResult generate(const LmModel& model, const SpeakerPrompt& prompt1,
                          const SpeakerPrompt& prompt2, const std::vector<ScriptTurn>& turns,
                          const SamplerConfig& sampler, const GenerationLimits& limits,
                          Rng& rng);

}  // namespace podgen
