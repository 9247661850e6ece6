#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "podgen/vocab.hpp"

namespace podgen {

enum class Region : std::uint8_t {
    PromptText,
    PodcastText,
    PromptSpeech,
    PodcastSpeech,
};

const char* region_name(Region r);

struct SpeakerPrompt {
    int speaker_id = 0;  // 1 or 2
    std::vector<int> text_tokens;
    std::vector<int> code_tokens;  // raw semantic codes, not vocabulary ids
};

struct ScriptTurn {
    int speaker_id = 0;
    std::vector<int> text_tokens;
    std::vector<int> code_tokens;  // empty in inference mode
};

enum class BuildMode { Train, Infer };

// The interleaved token stream: prompt text, podcast text, prompt speech,
// podcast speech. Loss is confined to the podcast-speech region.
struct BuiltSequence {
    std::vector<int> tokens;
    std::vector<Region> region;
    std::vector<bool> loss_mask;
    // [start, end) index pairs over the podcast-speech region, one per turn
    // (codes plus the closing SC token).
    std::vector<std::pair<int, int>> turn_boundaries;
    MixedVocab vocab;

    int size() const { return int(tokens.size()); }

    // Line-oriented fixture format: "token_id region loss_bit" per line.
    std::string to_fixture_text() const;
    static BuiltSequence from_fixture_text(const std::string& text, const MixedVocab& vocab);
};

// Collapse consecutive turns of the same speaker; output alternates.
std::vector<ScriptTurn> merge_adjacent_turns(const std::vector<ScriptTurn>& turns);

BuiltSequence build_sequence(const SpeakerPrompt& prompt1, const SpeakerPrompt& prompt2,
                             const std::vector<ScriptTurn>& turns, BuildMode mode,
                             const MixedVocab& vocab);

// Split a generated token stream (code ids, SC, optional trailing EOS) into
// per-turn code lists with alternating speakers.
std::vector<std::pair<int, std::vector<int>>> parse_generated(const std::vector<int>& tokens,
                                                              int first_speaker,
                                                              const MixedVocab& vocab);

// Mean over turns of the per-token mean cross-entropy within the turn.
// logits rows align with targets; boundaries index into both.
float per_turn_ce_loss(const Eigen::MatrixXf& logits, const std::vector<int>& targets,
                       const std::vector<std::pair<int, int>>& turn_boundaries);

}  // namespace podgen
