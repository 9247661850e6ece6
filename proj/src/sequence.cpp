#include "podgen/sequence.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace podgen {

const char* region_name(Region r) {
    switch (r) {
        case Region::PromptText: return "PROMPT_TEXT";
        case Region::PodcastText: return "PODCAST_TEXT";
        case Region::PromptSpeech: return "PROMPT_SPEECH";
        case Region::PodcastSpeech: return "PODCAST_SPEECH";
    }
    return "?";
}

namespace {

Region region_from_name(const std::string& s) {
    if (s == "PROMPT_TEXT") return Region::PromptText;
    if (s == "PODCAST_TEXT") return Region::PodcastText;
    if (s == "PROMPT_SPEECH") return Region::PromptSpeech;
    if (s == "PODCAST_SPEECH") return Region::PodcastSpeech;
    throw std::invalid_argument("unknown region tag: " + s);
}

void check_speaker(int id) {
    if (id != 1 && id != 2)
        throw std::invalid_argument("speaker id must be 1 or 2, got " + std::to_string(id));
}

}  // namespace

std::vector<ScriptTurn> merge_adjacent_turns(const std::vector<ScriptTurn>& turns) {
    if (turns.empty()) throw std::invalid_argument("merge_adjacent_turns: empty input");
    std::vector<ScriptTurn> out;
    for (const auto& turn : turns) {
        check_speaker(turn.speaker_id);
        if (!out.empty() && out.back().speaker_id == turn.speaker_id) {
            auto& dst = out.back();
            dst.text_tokens.insert(dst.text_tokens.end(), turn.text_tokens.begin(),
                                   turn.text_tokens.end());
            dst.code_tokens.insert(dst.code_tokens.end(), turn.code_tokens.begin(),
                                   turn.code_tokens.end());
        } else {
            out.push_back(turn);
        }
    }
    return out;
}

BuiltSequence build_sequence(const SpeakerPrompt& prompt1, const SpeakerPrompt& prompt2,
                             const std::vector<ScriptTurn>& turns, BuildMode mode,
                             const MixedVocab& vocab) {
    check_speaker(prompt1.speaker_id);
    check_speaker(prompt2.speaker_id);
    if (prompt1.speaker_id != 1 || prompt2.speaker_id != 2)
        throw std::invalid_argument("build_sequence: prompts must be speaker 1 then speaker 2");
    if (prompt1.text_tokens.empty() || prompt1.code_tokens.empty() ||
        prompt2.text_tokens.empty() || prompt2.code_tokens.empty())
        throw std::invalid_argument("build_sequence: empty prompt");
    if (turns.empty()) throw std::invalid_argument("build_sequence: no turns");
    for (std::size_t i = 0; i < turns.size(); ++i) {
        check_speaker(turns[i].speaker_id);
        if (turns[i].text_tokens.empty())
            throw std::invalid_argument("build_sequence: empty turn text");
        if (i > 0 && turns[i].speaker_id == turns[i - 1].speaker_id)
            throw std::invalid_argument("build_sequence: turns must alternate speakers");
        if (mode == BuildMode::Train && turns[i].code_tokens.empty())
            throw std::invalid_argument("build_sequence: training turn without codes");
    }

    BuiltSequence seq;
    seq.vocab = vocab;
    auto push = [&seq](int token, Region region, bool loss) {
        seq.tokens.push_back(token);
        seq.region.push_back(region);
        seq.loss_mask.push_back(loss);
    };

    // T^P
    push(vocab.bos(), Region::PromptText, false);
    for (const auto* p : {&prompt1, &prompt2}) {
        push(vocab.speaker_tag(p->speaker_id), Region::PromptText, false);
        for (int t : p->text_tokens) push(t, Region::PromptText, false);
    }
    // T
    for (const auto& turn : turns) {
        push(vocab.speaker_tag(turn.speaker_id), Region::PodcastText, false);
        for (int t : turn.text_tokens) push(t, Region::PodcastText, false);
    }
    // S^P
    for (const auto* p : {&prompt1, &prompt2}) {
        for (int c : p->code_tokens) push(vocab.code_to_id(c), Region::PromptSpeech, false);
        push(vocab.sc(), Region::PromptSpeech, false);
    }
    if (mode == BuildMode::Infer) return seq;

    // S
    for (const auto& turn : turns) {
        int start = seq.size();
        for (int c : turn.code_tokens) push(vocab.code_to_id(c), Region::PodcastSpeech, true);
        push(vocab.sc(), Region::PodcastSpeech, true);
        seq.turn_boundaries.emplace_back(start, seq.size());
    }
    push(vocab.eos(), Region::PodcastSpeech, false);
    return seq;
}

std::vector<std::pair<int, std::vector<int>>> parse_generated(const std::vector<int>& tokens,
                                                              int first_speaker,
                                                              const MixedVocab& vocab) {
    check_speaker(first_speaker);
    std::vector<std::pair<int, std::vector<int>>> turns;
    int speaker = first_speaker;
    std::vector<int> current;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        int id = tokens[i];
        if (id == vocab.eos()) {
            if (i + 1 != tokens.size())
                throw std::invalid_argument("parse_generated: tokens after EOS");
            break;
        }
        if (id == vocab.sc()) {
            if (current.empty())
                throw std::invalid_argument("parse_generated: zero-length turn at token " +
                                            std::to_string(i));
            turns.emplace_back(speaker, std::move(current));
            current.clear();
            speaker = (speaker == 1) ? 2 : 1;
        } else if (vocab.is_code(id)) {
            current.push_back(vocab.id_to_code(id));
        } else {
            throw std::invalid_argument("parse_generated: unknown token id " + std::to_string(id));
        }
    }
    if (!current.empty()) turns.emplace_back(speaker, std::move(current));
    return turns;
}

float per_turn_ce_loss(const Eigen::MatrixXf& logits, const std::vector<int>& targets,
                       const std::vector<std::pair<int, int>>& turn_boundaries) {
    if (turn_boundaries.empty()) throw std::invalid_argument("per_turn_ce_loss: no turns");
    if (logits.rows() != Eigen::Index(targets.size()))
        throw std::invalid_argument("per_turn_ce_loss: logits/targets size mismatch");
    double total = 0.0;
    for (const auto& [start, end] : turn_boundaries) {
        if (start < 0 || end <= start || end > int(targets.size()))
            throw std::invalid_argument("per_turn_ce_loss: bad turn boundary");
        double turn_loss = 0.0;
        for (int i = start; i < end; ++i) {
            const auto row = logits.row(i);
            float m = row.maxCoeff();
            double lse = std::log(double((row.array() - m).exp().sum())) + double(m);
            turn_loss += lse - double(row(targets[std::size_t(i)]));
        }
        total += turn_loss / double(end - start);
    }
    return float(total / double(turn_boundaries.size()));
}

std::string BuiltSequence::to_fixture_text() const {
    std::ostringstream os;
    for (int i = 0; i < size(); ++i)
        os << tokens[std::size_t(i)] << ' ' << region_name(region[std::size_t(i)]) << ' '
           << (loss_mask[std::size_t(i)] ? 1 : 0) << '\n';
    return os.str();
}

BuiltSequence BuiltSequence::from_fixture_text(const std::string& text, const MixedVocab& vocab) {
    BuiltSequence seq;
    seq.vocab = vocab;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        int token, loss;
        std::string region;
        if (!(ls >> token >> region >> loss))
            throw std::invalid_argument("bad fixture line: " + line);
        seq.tokens.push_back(token);
        seq.region.push_back(region_from_name(region));
        seq.loss_mask.push_back(loss != 0);
    }
    // reconstruct turn boundaries from loss-masked runs split after SC tokens
    int start = -1;
    for (int i = 0; i < seq.size(); ++i) {
        if (!seq.loss_mask[std::size_t(i)]) continue;
        if (start < 0) start = i;
        if (seq.tokens[std::size_t(i)] == vocab.sc()) {
            seq.turn_boundaries.emplace_back(start, i + 1);
            start = -1;
        }
    }
    return seq;
}

}  // namespace podgen
