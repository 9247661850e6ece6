#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "podgen/codec.hpp"
#include "podgen/lm.hpp"
#include "podgen/rng.hpp"

namespace podgen {

// Metadata for one processed audio segment.
struct UtteranceRecord {
    std::string session;
    std::string speaker;
    double start_s = 0.0;
    double end_s = 0.0;
    std::string transcript;
    double score = 0.0;  // quality stand-in, [1, 5]
    bool alignment_ok = false;

    double duration_s() const { return end_s - start_s; }
    void validate() const;
};

struct SessionGroup {
    std::string id;
    std::vector<UtteranceRecord> turns;
};

// Keep records with score strictly above 2.6 and successful alignment.
std::vector<UtteranceRecord> filter_single_turn(const std::vector<UtteranceRecord>& records);

// Group records by session id, preserving first-seen order.
std::vector<SessionGroup> group_sessions(const std::vector<UtteranceRecord>& records);

// Keep sessions with exactly two distinct speakers, more than 10 turns, and
// mean turn duration below 30 seconds.
std::vector<SessionGroup> filter_conversations(const std::vector<SessionGroup>& sessions);

// JSON-lines manifest, one record per line.
void save_manifest(const std::vector<UtteranceRecord>& records, const std::string& path);
std::vector<UtteranceRecord> load_manifest(const std::string& path);

struct SynthSpec {
    std::uint64_t seed = 0;
    int num_sessions = 8;
    int min_turns = 4, max_turns = 8;        // per session (stages 2/3)
    int min_codes = 4, max_codes = 12;       // per turn
    int code_vocab = 64;
    int feature_dim = 16;
    float noise_sigma = 0.05f;
    bool conversational = true;  // stage 3 injects short response turns

    void validate() const;
};

struct SynthCorpus {
    LmStageCorpora lm;
    // code sequence / feature sequence pairs for detokenizer training
    std::vector<std::pair<std::vector<int>, FeatureSequence>> detok_pairs;
    // K x D conditional mean of the feature distribution per code
    Eigen::MatrixXf feature_map;
    std::vector<FeatureSequence> codec_features;
};

// The conditional-mean map used by synth_corpus for a given spec.
Eigen::MatrixXf synth_feature_map(int code_vocab, int feature_dim, std::uint64_t seed);

// features[t] = feature_map.row(codes[t]) + n[t], where n is AR(1) Gaussian
// noise with stationary marginal N(0, sigma^2 I) — the conditional mean per
// code is exactly the feature-map row.
FeatureSequence synth_features(const std::vector<int>& codes, const Eigen::MatrixXf& feature_map,
                               float sigma, Rng& rng);

SynthCorpus synth_corpus(const SynthSpec& spec);

// Persist to `dir`: tensor containers for the feature map and detokenizer
// pairs, JSONL for the LM items, and a JSONL utterance manifest.
void save_synth_corpus(const SynthCorpus& corpus, const SynthSpec& spec, const std::string& dir);

struct LoadedCorpus {
    SynthCorpus corpus;
    SynthSpec spec;
};
LoadedCorpus load_synth_corpus(const std::string& dir);

}  // namespace podgen
