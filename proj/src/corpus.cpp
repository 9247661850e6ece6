#include "podgen/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "podgen/tensor_store.hpp"
#include "podgen/tokenizer.hpp"

namespace podgen {

void UtteranceRecord::validate() const {
    if (end_s <= start_s) throw std::invalid_argument("UtteranceRecord: end <= start");
    if (score < 1.0 || score > 5.0)
        throw std::invalid_argument("UtteranceRecord: score out of [1, 5]");
}

std::vector<UtteranceRecord> filter_single_turn(const std::vector<UtteranceRecord>& records) {
    std::vector<UtteranceRecord> kept;
    for (const auto& r : records)
        if (r.score > 2.6 && r.alignment_ok) kept.push_back(r);
    return kept;
}

std::vector<SessionGroup> group_sessions(const std::vector<UtteranceRecord>& records) {
    std::vector<SessionGroup> sessions;
    std::map<std::string, std::size_t> index;
    for (const auto& r : records) {
        auto it = index.find(r.session);
        if (it == index.end()) {
            index.emplace(r.session, sessions.size());
            sessions.push_back({r.session, {r}});
        } else {
            sessions[it->second].turns.push_back(r);
        }
    }
    return sessions;
}

std::vector<SessionGroup> filter_conversations(const std::vector<SessionGroup>& sessions) {
    std::vector<SessionGroup> kept;
    for (const auto& s : sessions) {
        std::set<std::string> speakers;
        double total = 0.0;
        for (const auto& t : s.turns) {
            speakers.insert(t.speaker);
            total += t.duration_s();
        }
        const int n = int(s.turns.size());
        if (speakers.size() == 2 && n > 10 && total / n < 30.0) kept.push_back(s);
    }
    return kept;
}

void save_manifest(const std::vector<UtteranceRecord>& records, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("save_manifest: cannot open " + path);
    for (const auto& r : records) {
        nlohmann::json j = {{"session", r.session},   {"speaker", r.speaker},
                            {"start_s", r.start_s},   {"end_s", r.end_s},
                            {"transcript", r.transcript}, {"score", r.score},
                            {"alignment_ok", r.alignment_ok}};
        os << j.dump() << "\n";
    }
}

std::vector<UtteranceRecord> load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_manifest: cannot open " + path);
    std::vector<UtteranceRecord> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        UtteranceRecord r;
        r.session = j.at("session").get<std::string>();
        r.speaker = j.at("speaker").get<std::string>();
        r.start_s = j.at("start_s").get<double>();
        r.end_s = j.at("end_s").get<double>();
        r.transcript = j.at("transcript").get<std::string>();
        r.score = j.at("score").get<double>();
        r.alignment_ok = j.at("alignment_ok").get<bool>();
        records.push_back(std::move(r));
    }
    return records;
}

void SynthSpec::validate() const {
    if (num_sessions < 1) throw std::invalid_argument("SynthSpec: num_sessions < 1");
    if (min_turns < 2 || max_turns < min_turns)
        throw std::invalid_argument("SynthSpec: bad turns range");
    if (min_codes < 1 || max_codes < min_codes)
        throw std::invalid_argument("SynthSpec: bad codes range");
    if (code_vocab < 2 || feature_dim < 1) throw std::invalid_argument("SynthSpec: bad dims");
    if (noise_sigma < 0.0f) throw std::invalid_argument("SynthSpec: sigma < 0");
}

Eigen::MatrixXf synth_feature_map(int code_vocab, int feature_dim, std::uint64_t seed) {
    Rng rng(seed, 7);
    return rng.normal_matrix(code_vocab, feature_dim);
}

FeatureSequence synth_features(const std::vector<int>& codes, const Eigen::MatrixXf& feature_map,
                               float sigma, Rng& rng) {
    FeatureSequence fs;
    fs.frames.resize(Eigen::Index(codes.size()), feature_map.cols());
    for (std::size_t t = 0; t < codes.size(); ++t) {
        if (codes[t] < 0 || codes[t] >= int(feature_map.rows()))
            throw std::invalid_argument("synth_features: code out of range");
        fs.frames.row(Eigen::Index(t)) = feature_map.row(codes[t]);
    }
    // AR(1) noise: stationary marginal N(0, sigma^2), so the per-code
    // conditional mean stays feature_map.row(code), but the noise component
    // is predictable from the preceding frames.
    if (sigma > 0.0f) {
        const float rho = 0.9f;
        Eigen::MatrixXf eps = rng.normal_matrix(fs.frames.rows(), fs.frames.cols());
        Eigen::RowVectorXf state = sigma * eps.row(0);
        fs.frames.row(0) += state;
        const float innov = sigma * std::sqrt(1.0f - rho * rho);
        for (Eigen::Index t = 1; t < fs.frames.rows(); ++t) {
            state = rho * state + innov * eps.row(t);
            fs.frames.row(t) += state;
        }
    }
    return fs;
}

namespace {

// Seeded per-speaker Markov chain over codes: mostly a speaker-specific
// stride walk, with an occasional uniform jump.
std::vector<int> markov_codes(int len, int code_vocab, int stride, Rng& rng) {
    std::vector<int> codes;
    codes.reserve(std::size_t(len));
    int c = int(rng.uniform_int(std::uint64_t(code_vocab)));
    for (int i = 0; i < len; ++i) {
        codes.push_back(c);
        if (rng.uniform() < 0.7)
            c = (c + stride) % code_vocab;
        else
            c = int(rng.uniform_int(std::uint64_t(code_vocab)));
    }
    return codes;
}

std::vector<int> random_text(int len, Rng& rng) {
    std::vector<int> text;
    text.reserve(std::size_t(len));
    for (int i = 0; i < len; ++i) {
        if (i > 0 && rng.uniform() < 0.15)
            text.push_back(' ');
        else
            text.push_back('a' + int(rng.uniform_int(26)));
    }
    return text;
}

int speaker_stride(int speaker_id, int code_vocab) {
    return 1 + (speaker_id * 3) % std::max(1, code_vocab - 1);
}

}  // namespace

SynthCorpus synth_corpus(const SynthSpec& spec) {
    spec.validate();
    SynthCorpus corpus;
    corpus.feature_map = synth_feature_map(spec.code_vocab, spec.feature_dim, spec.seed);

    Rng rng(spec.seed, 11);
    Rng noise_rng(spec.seed, 13);

    auto make_turn = [&](int speaker_id, int codes_len, int text_len) {
        ScriptTurn turn;
        turn.speaker_id = speaker_id;
        turn.text_tokens = random_text(text_len, rng);
        turn.code_tokens =
            markov_codes(codes_len, spec.code_vocab, speaker_stride(speaker_id, spec.code_vocab),
                         rng);
        return turn;
    };
    auto turn_len = [&] {
        return spec.min_codes + int(rng.uniform_int(std::uint64_t(spec.max_codes - spec.min_codes + 1)));
    };

    for (int s = 0; s < spec.num_sessions; ++s) {
        // stage 1: isolated single-speaker utterances
        LmTrainItem single;
        single.single_turn = true;
        single.turns.push_back(make_turn(1 + (s % 2), turn_len(), 6));
        corpus.lm.stage1.push_back(single);

        const int num_turns =
            spec.min_turns + int(rng.uniform_int(std::uint64_t(spec.max_turns - spec.min_turns + 1)));

        // stage 2: long two-speaker alternation, uniform turn lengths
        LmTrainItem long_item;
        long_item.prompt1 = {1, random_text(4, rng),
                             markov_codes(turn_len(), spec.code_vocab,
                                          speaker_stride(1, spec.code_vocab), rng)};
        long_item.prompt2 = {2, random_text(4, rng),
                             markov_codes(turn_len(), spec.code_vocab,
                                          speaker_stride(2, spec.code_vocab), rng)};
        for (int t = 0; t < num_turns; ++t)
            long_item.turns.push_back(make_turn(1 + (t % 2), turn_len(), 5));
        corpus.lm.stage2.push_back(long_item);

        // stage 3: conversational; short response turns interleaved
        LmTrainItem conv = long_item;
        conv.turns.clear();
        bool has_response = false;
        for (int t = 0; t < num_turns; ++t) {
            const int speaker = 1 + (t % 2);
            const bool response =
                spec.conversational && t > 0 && (rng.uniform() < 0.3 || (!has_response && t == num_turns - 1));
            const int len = response ? 1 + int(rng.uniform_int(3)) : turn_len();
            has_response = has_response || response;
            conv.turns.push_back(make_turn(speaker, len, response ? 2 : 5));
        }
        corpus.lm.stage3.push_back(conv);

        // detokenizer / codec data: one longer Markov code run per session
        std::vector<int> codes = markov_codes(
            4 * spec.max_codes, spec.code_vocab, speaker_stride(1 + (s % 2), spec.code_vocab), rng);
        FeatureSequence feats =
            synth_features(codes, corpus.feature_map, spec.noise_sigma, noise_rng);
        corpus.codec_features.push_back(feats);
        corpus.detok_pairs.emplace_back(std::move(codes), std::move(feats));
    }
    return corpus;
}

namespace {

nlohmann::json prompt_to_json(const SpeakerPrompt& p) {
    return {{"speaker", p.speaker_id}, {"text", p.text_tokens}, {"codes", p.code_tokens}};
}

SpeakerPrompt prompt_from_json(const nlohmann::json& j) {
    SpeakerPrompt p;
    p.speaker_id = j.at("speaker").get<int>();
    p.text_tokens = j.at("text").get<std::vector<int>>();
    p.code_tokens = j.at("codes").get<std::vector<int>>();
    return p;
}

nlohmann::json item_to_json(const LmTrainItem& item, int stage) {
    nlohmann::json turns = nlohmann::json::array();
    for (const auto& t : item.turns)
        turns.push_back({{"speaker", t.speaker_id}, {"text", t.text_tokens},
                         {"codes", t.code_tokens}});
    return {{"stage", stage},
            {"single_turn", item.single_turn},
            {"prompt1", prompt_to_json(item.prompt1)},
            {"prompt2", prompt_to_json(item.prompt2)},
            {"turns", turns}};
}

LmTrainItem item_from_json(const nlohmann::json& j) {
    LmTrainItem item;
    item.single_turn = j.at("single_turn").get<bool>();
    item.prompt1 = prompt_from_json(j.at("prompt1"));
    item.prompt2 = prompt_from_json(j.at("prompt2"));
    for (const auto& tj : j.at("turns")) {
        ScriptTurn t;
        t.speaker_id = tj.at("speaker").get<int>();
        t.text_tokens = tj.at("text").get<std::vector<int>>();
        t.code_tokens = tj.at("codes").get<std::vector<int>>();
        item.turns.push_back(std::move(t));
    }
    return item;
}

}  // namespace

void save_synth_corpus(const SynthCorpus& corpus, const SynthSpec& spec, const std::string& dir) {
    std::filesystem::create_directories(dir);

    TensorStore ts;
    ts.config["kind"] = "synth_corpus";
    ts.config["seed"] = std::to_string(spec.seed);
    ts.config["num_sessions"] = std::to_string(spec.num_sessions);
    ts.config["min_turns"] = std::to_string(spec.min_turns);
    ts.config["max_turns"] = std::to_string(spec.max_turns);
    ts.config["min_codes"] = std::to_string(spec.min_codes);
    ts.config["max_codes"] = std::to_string(spec.max_codes);
    ts.config["code_vocab"] = std::to_string(spec.code_vocab);
    ts.config["feature_dim"] = std::to_string(spec.feature_dim);
    ts.config["noise_sigma"] = std::to_string(spec.noise_sigma);
    ts.config["conversational"] = spec.conversational ? "1" : "0";
    ts.config["num_pairs"] = std::to_string(corpus.detok_pairs.size());
    ts.tensors["feature_map"] = corpus.feature_map;
    for (std::size_t i = 0; i < corpus.detok_pairs.size(); ++i) {
        const auto& [codes, feats] = corpus.detok_pairs[i];
        Eigen::MatrixXf cm(1, Eigen::Index(codes.size()));
        for (std::size_t t = 0; t < codes.size(); ++t) cm(0, Eigen::Index(t)) = float(codes[t]);
        ts.tensors["pair" + std::to_string(i) + "_codes"] = cm;
        ts.tensors["pair" + std::to_string(i) + "_features"] = feats.frames;
    }
    ts.save(dir + "/tensors.pgt");

    std::ofstream os(dir + "/lm_corpus.jsonl");
    if (!os) throw std::runtime_error("save_synth_corpus: cannot open lm_corpus.jsonl");
    for (const auto& item : corpus.lm.stage1) os << item_to_json(item, 1).dump() << "\n";
    for (const auto& item : corpus.lm.stage2) os << item_to_json(item, 2).dump() << "\n";
    for (const auto& item : corpus.lm.stage3) os << item_to_json(item, 3).dump() << "\n";

    // metadata manifest derived from the conversational items
    std::vector<UtteranceRecord> records;
    Rng rng(spec.seed, 19);
    TextTokenizer tok;
    for (std::size_t s = 0; s < corpus.lm.stage3.size(); ++s) {
        double clock = 0.0;
        for (const auto& turn : corpus.lm.stage3[s].turns) {
            UtteranceRecord r;
            r.session = "synth-" + std::to_string(s);
            r.speaker = "spk" + std::to_string(turn.speaker_id);
            r.start_s = clock;
            r.end_s = clock + double(turn.code_tokens.size()) / 50.0;
            clock = r.end_s;
            r.transcript = tok.decode(turn.text_tokens);
            r.score = rng.uniform(1.0, 5.0);
            r.alignment_ok = true;
            records.push_back(std::move(r));
        }
    }
    save_manifest(records, dir + "/manifest.jsonl");
}

LoadedCorpus load_synth_corpus(const std::string& dir) {
    TensorStore ts = TensorStore::load(dir + "/tensors.pgt");
    if (ts.config_str("kind") != "synth_corpus")
        throw std::runtime_error("load_synth_corpus: not a corpus dir: " + dir);
    LoadedCorpus loaded;
    SynthSpec& spec = loaded.spec;
    spec.seed = std::uint64_t(std::stoull(ts.config_str("seed")));
    spec.num_sessions = ts.config_int("num_sessions");
    spec.min_turns = ts.config_int("min_turns");
    spec.max_turns = ts.config_int("max_turns");
    spec.min_codes = ts.config_int("min_codes");
    spec.max_codes = ts.config_int("max_codes");
    spec.code_vocab = ts.config_int("code_vocab");
    spec.feature_dim = ts.config_int("feature_dim");
    spec.noise_sigma = ts.config_float("noise_sigma");
    spec.conversational = ts.config_int("conversational") != 0;

    SynthCorpus& corpus = loaded.corpus;
    corpus.feature_map = ts.get("feature_map");
    const int num_pairs = ts.config_int("num_pairs");
    for (int i = 0; i < num_pairs; ++i) {
        const Eigen::MatrixXf cm = ts.get("pair" + std::to_string(i) + "_codes");
        std::vector<int> codes;
        for (Eigen::Index t = 0; t < cm.cols(); ++t) codes.push_back(int(cm(0, t)));
        FeatureSequence feats;
        feats.frames = ts.get("pair" + std::to_string(i) + "_features");
        corpus.codec_features.push_back(feats);
        corpus.detok_pairs.emplace_back(std::move(codes), std::move(feats));
    }

    std::ifstream is(dir + "/lm_corpus.jsonl");
    if (!is) throw std::runtime_error("load_synth_corpus: cannot open lm_corpus.jsonl");
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        LmTrainItem item = item_from_json(j);
        const int stage = j.at("stage").get<int>();
        if (stage == 1) corpus.lm.stage1.push_back(std::move(item));
        else if (stage == 2) corpus.lm.stage2.push_back(std::move(item));
        else corpus.lm.stage3.push_back(std::move(item));
    }
    return loaded;
}

}  // namespace podgen
