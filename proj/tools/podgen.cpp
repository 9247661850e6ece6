// podgen: train / synthesize / eval / script / corpus pipeline driver.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "podgen/codec.hpp"
#include "podgen/config.hpp"
#include "podgen/corpus.hpp"
#include "podgen/detok.hpp"
#include "podgen/flow.hpp"
#include "podgen/llm_client.hpp"
#include "podgen/lm.hpp"
#include "podgen/script.hpp"
#include "podgen/sequence.hpp"
#include "podgen/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace podgen;

namespace {

// Expected, user-facing failures (validation, missing prerequisites): exit 1.
// Everything else escapes as an internal error: exit 2.
struct ExpectedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path))
        throw ExpectedError("missing prerequisite: " + what + " (" + path + ")");
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << j.dump(2) << "\n";
}

SynthSpec spec_from_config(const KeyValueConfig& cfg) {
    SynthSpec spec;
    spec.seed = std::uint64_t(cfg.get_int("synth_seed", 0));
    spec.num_sessions = int(cfg.get_int("synth_sessions", 8));
    spec.min_turns = int(cfg.get_int("synth_min_turns", 4));
    spec.max_turns = int(cfg.get_int("synth_max_turns", 8));
    spec.min_codes = int(cfg.get_int("synth_min_codes", 4));
    spec.max_codes = int(cfg.get_int("synth_max_codes", 12));
    spec.code_vocab = int(cfg.get_int("synth_code_vocab", 64));
    spec.feature_dim = int(cfg.get_int("synth_feature_dim", 16));
    spec.noise_sigma = float(cfg.get_float("synth_noise_sigma", 0.05));
    spec.conversational = cfg.get_int("synth_conversational", 1) != 0;
    return spec;
}

FlowConfig flow_from_config(const KeyValueConfig& cfg, int feature_dim) {
    FlowConfig flow;
    flow.sigma_min = float(cfg.get_float("flow_sigma_min", flow.sigma_min));
    flow.ode_steps = int(cfg.get_int("flow_ode_steps", flow.ode_steps));
    flow.prefill_t = float(cfg.get_float("flow_prefill_t", flow.prefill_t));
    flow.feature_dim = feature_dim;
    flow.frames_per_code = int(cfg.get_int("flow_frames_per_code", flow.frames_per_code));
    flow.code_frame_rate_hz = float(cfg.get_float("flow_code_rate_hz", flow.code_frame_rate_hz));
    flow.train_chunk_min_s = float(cfg.get_float("flow_train_chunk_min_s", flow.train_chunk_min_s));
    flow.train_chunk_max_s = float(cfg.get_float("flow_train_chunk_max_s", flow.train_chunk_max_s));
    flow.infer_chunk_s = float(cfg.get_float("flow_infer_chunk_s", flow.infer_chunk_s));
    return flow;
}

SamplerConfig sampler_from_config(const KeyValueConfig& cfg) {
    SamplerConfig sampler;
    sampler.top_k = int(cfg.get_int("sampler_top_k", sampler.top_k));
    sampler.top_p = float(cfg.get_float("sampler_top_p", sampler.top_p));
    sampler.temperature = float(cfg.get_float("sampler_temperature", sampler.temperature));
    return sampler;
}

std::string checkpoint_path(const KeyValueConfig& cfg, const std::string& name) {
    return cfg.get_str("checkpoint_dir", "checkpoints") + "/" + name + ".pgt";
}

int cmd_corpus(const KeyValueConfig& cfg) {
    const SynthSpec spec = spec_from_config(cfg);
    const std::string dir = cfg.get_str("corpus_dir", "corpus");
    SynthCorpus corpus = synth_corpus(spec);
    save_synth_corpus(corpus, spec, dir);
    std::cout << "corpus: " << corpus.lm.stage1.size() << "/" << corpus.lm.stage2.size() << "/"
              << corpus.lm.stage3.size() << " stage items, " << corpus.detok_pairs.size()
              << " detokenizer pairs -> " << dir << "\n";
    return 0;
}

int cmd_train(const std::string& target, const KeyValueConfig& cfg) {
    const std::string corpus_dir = cfg.get_str("corpus_dir", "corpus");
    require_file(corpus_dir + "/tensors.pgt", "corpus (run `podgen corpus` first)");
    LoadedCorpus loaded = load_synth_corpus(corpus_dir);
    const std::string ckpt_dir = cfg.get_str("checkpoint_dir", "checkpoints");
    fs::create_directories(ckpt_dir);
    nlohmann::json metrics;

    if (target == "codec") {
        CodecConfig config;
        config.input_dim = loaded.spec.feature_dim;
        config.codebook_size = loaded.spec.code_vocab;
        config.latent_dim = int(cfg.get_int("codec_latent_dim", config.latent_dim));
        config.hidden_dim = int(cfg.get_int("codec_hidden_dim", config.hidden_dim));
        config.kernel = int(cfg.get_int("codec_kernel", config.kernel));
        Codec codec(config, std::uint64_t(cfg.get_int("codec_seed", 0)));
        codec.set_norm_stats(compute_norm_stats(loaded.corpus.codec_features));
        CodecTrainOpts opts;
        opts.steps = int(cfg.get_int("codec_steps", 800));
        opts.lr = float(cfg.get_float("codec_lr", 1e-3));
        opts.seed = std::uint64_t(cfg.get_int("codec_seed", 0));
        CodecMetrics m = train_codec(codec, loaded.corpus.codec_features, opts);
        codec.save(checkpoint_path(cfg, "codec"));
        metrics = {{"target", "codec"},
                   {"steps", opts.steps},
                   {"final_utilization", m.final_utilization},
                   {"final_recon_mse", m.final_recon_mse},
                   {"first_loss", m.loss.empty() ? 0.0f : m.loss.front()},
                   {"last_loss", m.loss.empty() ? 0.0f : m.loss.back()}};
    } else if (target == "lm") {
        require_file(checkpoint_path(cfg, "codec"), "codec checkpoint (train codec first)");
        Codec codec = Codec::load(checkpoint_path(cfg, "codec"));
        LMConfig config;
        config.vocab = MixedVocab{256, codec.config().codebook_size};
        config.layers = int(cfg.get_int("lm_layers", config.layers));
        config.heads = int(cfg.get_int("lm_heads", config.heads));
        config.model_dim = int(cfg.get_int("lm_model_dim", config.model_dim));
        config.ffn_dim = int(cfg.get_int("lm_ffn_dim", config.ffn_dim));
        config.max_context_tokens = int(cfg.get_int("lm_max_context", config.max_context_tokens));
        LmModel model(config, std::uint64_t(cfg.get_int("lm_seed", 0)));
        std::vector<CurriculumStage> stages = {
            {1, StageCorpus::SingleTurn, config.max_context_tokens,
             int(cfg.get_int("lm_stage1_steps", 200)), float(cfg.get_float("lm_lr", 1e-3))},
            {2, StageCorpus::LongNonConversational, config.max_context_tokens,
             int(cfg.get_int("lm_stage2_steps", 200)), float(cfg.get_float("lm_lr", 1e-3))},
            {3, StageCorpus::Conversational, config.max_context_tokens,
             int(cfg.get_int("lm_stage3_steps", 200)), float(cfg.get_float("lm_lr", 1e-3))},
        };
        auto stage_metrics =
            train_lm(model, loaded.corpus.lm, stages, std::uint64_t(cfg.get_int("lm_seed", 0)));
        model.save(checkpoint_path(cfg, "lm"));
        metrics = {{"target", "lm"}, {"stages", nlohmann::json::array()}};
        for (const auto& sm : stage_metrics)
            metrics["stages"].push_back({{"stage", sm.stage_id},
                                         {"first_loss", sm.first_loss},
                                         {"last_loss", sm.last_loss}});
    } else if (target == "detok") {
        require_file(checkpoint_path(cfg, "codec"), "codec checkpoint (train codec first)");
        Codec codec = Codec::load(checkpoint_path(cfg, "codec"));
        DetokModelConfig config;
        config.code_vocab_size = codec.config().codebook_size;
        config.layers = int(cfg.get_int("detok_layers", config.layers));
        config.heads = int(cfg.get_int("detok_heads", config.heads));
        config.model_dim = int(cfg.get_int("detok_model_dim", config.model_dim));
        config.ffn_dim = int(cfg.get_int("detok_ffn_dim", config.ffn_dim));
        const FlowConfig flow = flow_from_config(cfg, loaded.spec.feature_dim);
        Detok detok(config, flow, std::uint64_t(cfg.get_int("detok_seed", 0)));
        DetokTrainOpts opts;
        opts.steps = int(cfg.get_int("detok_steps", 800));
        opts.lr = float(cfg.get_float("detok_lr", 1e-3));
        opts.seed = std::uint64_t(cfg.get_int("detok_seed", 0));
        DetokMetrics m = train_detokenizer(detok, loaded.corpus.detok_pairs, opts);
        detok.save(checkpoint_path(cfg, "detok"));
        metrics = {{"target", "detok"},
                   {"steps", opts.steps},
                   {"first_loss", m.loss.empty() ? 0.0f : m.loss.front()},
                   {"last_loss", m.loss.empty() ? 0.0f : m.loss.back()}};
    } else {
        throw ExpectedError("unknown train target: " + target);
    }

    const std::string report = ckpt_dir + "/" + target + "_metrics.json";
    write_json(metrics, report);
    std::cout << "train " << target << ": wrote " << checkpoint_path(cfg, target) << " and "
              << report << "\n";
    return 0;
}

std::string default_mock_brief(Language lang) {
    static const char* const keys_zh[5] = {"标题和作者", "摘要", "主要主题和概念", "重要引文",
                                           "总结"};
    static const char* const keys_en[5] = {"Title and Author", "Abstract",
                                           "Main Themes and Concepts", "Key Citations",
                                           "Conclusion"};
    const char* const* keys = lang == Language::Zh ? keys_zh : keys_en;
    std::string out;
    for (int i = 0; i < 5; ++i)
        out += "### " + std::string(keys[i]) + "\nSection " + std::to_string(i + 1) +
               " content for offline runs.\n\n";
    return out;
}

std::unique_ptr<LlmClient> make_client(bool mock, const KeyValueConfig& cfg) {
    if (!mock) return HttpLlmClient::from_env();
    auto client = std::make_unique<MockLlm>();
    const std::string mock_script =
        cfg.get_str("mock_script", cfg.get_str("fixtures_dir", "fixtures") + "/dialogue_en.json");
    std::ifstream is(mock_script);
    if (!is) throw ExpectedError("mock script fixture not found: " + mock_script);
    std::ostringstream buf;
    buf << is.rdbuf();
    client->add_response("### Task Description", default_mock_brief(Language::En));
    client->add_response("### 任务说明", default_mock_brief(Language::Zh));
    client->add_response("## 1. Task Overview", "```json\n" + buf.str() + "\n```");
    client->add_response("## 一、任务概述", "```json\n" + buf.str() + "\n```");
    return client;
}

SourceSpec source_from_cli(const std::string& source, const std::string& kind,
                           const std::string& language) {
    SourceSpec spec;
    spec.location = source;
    if (kind == "url") spec.kind = SourceKind::Url;
    else if (kind == "pdf_text") spec.kind = SourceKind::PdfText;
    else spec.kind = SourceKind::PlainText;
    if (!language.empty()) {
        spec.force_language = true;
        spec.language = language == "zh" ? Language::Zh : Language::En;
    }
    return spec;
}

// A missing or empty input document is user-facing, not an internal fault.
KnowledgeSource load_source_expected(const SourceSpec& spec) {
    try {
        return load_source(spec);
    } catch (const std::runtime_error& e) {
        throw ExpectedError(e.what());
    }
}

int cmd_synthesize(const KeyValueConfig& cfg, const SourceSpec& source_spec, bool mock,
                   bool dry_run, std::uint64_t seed, int max_tokens) {
    const std::string out_dir = cfg.get_str("output_dir", "out");
    fs::create_directories(out_dir);
    const std::string template_dir = cfg.get_str("template_dir", "templates");
    auto llm = make_client(mock, cfg);

    auto stage = [&](const char* name) { std::cout << "synthesize: " << name << "\n"; };

    stage("load_source");
    KnowledgeSource source = load_source_expected(source_spec);

    stage("brief");
    Brief brief = generate_brief(*llm, source, template_dir);
    {
        std::ofstream os(out_dir + "/brief.txt");
        os << brief.to_text();
    }

    stage("script");
    ScriptJSON script = generate_script(*llm, brief, template_dir);
    save_script(script, out_dir + "/script.json");

    stage("validate");
    ValidationReport report = validate_script(script);
    nlohmann::json vr = {{"pass", report.pass}, {"violations", nlohmann::json::array()}};
    for (const auto& v : report.violations)
        vr["violations"].push_back({{"rule", v.rule}, {"turn", v.turn_index}, {"detail", v.detail}});
    write_json(vr, out_dir + "/validation_report.json");
    if (!report.pass) {
        for (const auto& v : report.violations)
            std::cerr << "violation: " << v.rule << " turn " << v.turn_index << ": " << v.detail
                      << "\n";
        throw ExpectedError("script failed validation; see " + out_dir +
                            "/validation_report.json");
    }
    if (dry_run) {
        std::cout << "synthesize: dry run, stopping after validation\n";
        return 0;
    }

    require_file(checkpoint_path(cfg, "codec"), "codec checkpoint");
    require_file(checkpoint_path(cfg, "lm"), "lm checkpoint");
    require_file(checkpoint_path(cfg, "detok"), "detok checkpoint");
    const std::string corpus_dir = cfg.get_str("corpus_dir", "corpus");
    require_file(corpus_dir + "/tensors.pgt", "corpus (speaker prompts)");

    stage("generate");
    LmModel model = LmModel::load(checkpoint_path(cfg, "lm"));
    LoadedCorpus loaded = load_synth_corpus(corpus_dir);
    if (loaded.corpus.lm.stage3.empty()) throw ExpectedError("corpus has no speaker prompts");
    const LmTrainItem& prompt_item = loaded.corpus.lm.stage3.front();

    TextTokenizer tokenizer;
    std::vector<ScriptTurn> turns = normalize_script(script, tokenizer);
    SamplerConfig sampler = sampler_from_config(cfg);
    GenerationLimits limits;
    limits.max_tokens = max_tokens;
    Rng gen_rng(seed, 500);
    GenerationResult gen = generate(model, prompt_item.prompt1, prompt_item.prompt2, turns,
                                    sampler, limits, gen_rng);

    stage("detokenize");
    Detok detok = Detok::load(checkpoint_path(cfg, "detok"));
    std::vector<int> all_codes;
    nlohmann::json turn_json = nlohmann::json::array();
    for (const auto& [speaker, codes] : gen.turns) {
        turn_json.push_back({{"speaker", speaker}, {"codes", codes}});
        all_codes.insert(all_codes.end(), codes.begin(), codes.end());
    }
    write_json(turn_json, out_dir + "/codes.json");
    if (all_codes.empty()) throw ExpectedError("generation produced no codes");
    DetokenizeResult detok_result = detokenize_stream(detok, all_codes, seed);
    TensorStore fts;
    fts.config["kind"] = "features";
    fts.config["frame_rate_hz"] = std::to_string(detok_result.features.frame_rate_hz);
    fts.tensors["features"] = detok_result.features.frames;
    fts.save(out_dir + "/features.pgt");

    nlohmann::json run = {
        {"script_turns", script.turns.size()},
        {"merged_turns", turns.size()},
        {"generated_turns", gen.turns.size()},
        {"expected_turns", gen.expected_turns},
        {"runaway", gen.runaway},
        {"hit_eos", gen.hit_eos},
        {"generated_tokens", gen.generated_tokens.size()},
        {"boundary_discontinuity",
         boundary_discontinuity(detok_result.features.frames, detok_result.boundaries)},
    };
    write_json(run, out_dir + "/run_report.json");
    std::cout << "synthesize: wrote " << out_dir << "/features.pgt (" << all_codes.size()
              << " codes, " << detok_result.features.num_frames() << " frames)\n";
    return 0;
}

int cmd_eval(const KeyValueConfig& cfg, bool tamper_mask, std::uint64_t seed) {
    const std::string out_dir = cfg.get_str("output_dir", "out");
    fs::create_directories(out_dir);
    nlohmann::json report = nlohmann::json::array();
    auto add = [&](const std::string& name, bool pass, const std::string& detail) {
        report.push_back({{"criterion", name}, {"pass", pass}, {"detail", detail}});
        std::cout << (pass ? "PASS" : "FAIL") << " " << name << ": " << detail << "\n";
    };

    // flow path derivative: finite difference vs fm_target, float64
    {
        Rng rng(seed, 600);
        double max_rel = 0.0;
        for (int i = 0; i < 1000; ++i) {
            Eigen::MatrixXd clean = rng.normal_matrix_d(2, 4), noise = rng.normal_matrix_d(2, 4);
            const double t = rng.uniform(0.01, 0.99), h = 1e-6, sigma = 1e-4;
            Eigen::MatrixXd fd =
                (noise_sample(clean, t + h, noise, sigma) - noise_sample(clean, t - h, noise, sigma)) /
                (2 * h);
            Eigen::MatrixXd target = fm_target(clean, noise, sigma);
            const double rel = (fd - target).norm() / std::max(1e-12, target.norm());
            max_rel = std::max(max_rel, rel);
        }
        add("flow_path_derivative", max_rel < 1e-6, "max rel err " + std::to_string(max_rel));
    }

    // chunked-vs-monolithic equivalence on a small random model
    {
        DetokModelConfig config;
        config.layers = 2;
        config.heads = 2;
        config.model_dim = 32;
        config.ffn_dim = 64;
        config.code_vocab_size = 16;
        FlowConfig flow = flow_from_config(cfg, 8);
        flow.ode_steps = 8;
        flow.infer_chunk_s = 0.2f;  // small chunks keep this quick
        Detok detok(config, flow, seed);
        Rng rng(seed, 601);
        std::vector<int> codes;
        for (int i = 0; i < 40; ++i) codes.push_back(int(rng.uniform_int(16)));
        auto stream = detokenize_stream(detok, codes, seed);
        auto mono = detokenize_monolithic(detok, codes, seed, tamper_mask);
        const float diff = (stream.features.frames - mono.features.frames).cwiseAbs().maxCoeff();
        add("mask_equivalence", diff <= 1e-4f,
            "max abs diff " + std::to_string(diff) + (tamper_mask ? " (tampered mask)" : ""));
    }

    // sampler statistics vs the renormalized oracle
    {
        Rng rng(seed, 602);
        Eigen::RowVectorXf logits = rng.normal_matrix(1, 12).row(0);
        SamplerConfig sampler;
        sampler.top_k = 5;
        sampler.top_p = 0.9f;
        sampler.temperature = 1.0f;
        // oracle: top-k, softmax, smallest top-p prefix, renormalize
        std::vector<int> order(12);
        for (int i = 0; i < 12; ++i) order[std::size_t(i)] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return logits(a) > logits(b); });
        order.resize(std::size_t(sampler.top_k));
        Eigen::VectorXf kept(sampler.top_k);
        for (int i = 0; i < sampler.top_k; ++i) kept(i) = logits(order[std::size_t(i)]);
        Eigen::VectorXf probs = (kept.array() - kept.maxCoeff()).exp();
        probs /= probs.sum();
        int keep = sampler.top_k;
        float cum = 0.0f;
        for (int i = 0; i < sampler.top_k; ++i) {
            cum += probs(i);
            if (cum >= sampler.top_p) {
                keep = i + 1;
                break;
            }
        }
        Eigen::VectorXf oracle = probs.head(keep) / probs.head(keep).sum();
        const int draws = 20000;
        Eigen::VectorXf counts = Eigen::VectorXf::Zero(12);
        for (int i = 0; i < draws; ++i) counts(sample_next(logits, sampler, rng)) += 1.0f;
        bool ok = true;
        std::string detail;
        for (int i = 0; i < 12; ++i) {
            float p = 0.0f;
            for (int k = 0; k < keep; ++k)
                if (order[std::size_t(k)] == i) p = oracle(k);
            const float expect = p * draws;
            const float sd = std::sqrt(std::max(1.0f, p * (1 - p) * draws));
            if (std::abs(counts(i) - expect) > 4.0f * sd) {
                ok = false;
                detail = "token " + std::to_string(i) + " count " + std::to_string(counts(i)) +
                         " vs " + std::to_string(expect);
            }
        }
        add("sampler_statistics", ok, ok ? "within 4 sigma" : detail);
    }

    // boundary metric: streaming autoregressive chunks vs independent chunks
    {
        const std::string detok_path = checkpoint_path(cfg, "detok");
        require_file(detok_path, "detok checkpoint (train detok first)");
        Detok detok = Detok::load(detok_path);
        const std::string corpus_dir = cfg.get_str("corpus_dir", "corpus");
        require_file(corpus_dir + "/tensors.pgt", "corpus");
        LoadedCorpus loaded = load_synth_corpus(corpus_dir);
        const int items = int(cfg.get_int("eval_items", 20));
        int wins = 0;
        Rng rng(seed, 603);
        for (int i = 0; i < items; ++i) {
            const auto& pair =
                loaded.corpus.detok_pairs[rng.uniform_int(loaded.corpus.detok_pairs.size())];
            auto stream = detokenize_stream(detok, pair.first, seed + std::uint64_t(i));
            auto indep = detokenize_independent(detok, pair.first, seed + std::uint64_t(i));
            const float bs = boundary_discontinuity(stream.features.frames, stream.boundaries);
            const float bi = boundary_discontinuity(indep.features.frames, indep.boundaries);
            if (bs <= bi) ++wins;
        }
        add("boundary_metric", wins * 5 >= items * 4,
            std::to_string(wins) + "/" + std::to_string(items) + " items favor streaming");
    }

    write_json(report, out_dir + "/eval_report.json");
    std::cout << "eval: wrote " << out_dir << "/eval_report.json\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-speaker podcast generation pipeline"};
    app.require_subcommand(1);

    std::string config_path, source, source_kind = "plain_text", language, target;
    std::string brief_path, script_path;
    bool mock = false, dry_run = false, tamper_mask = false;
    std::uint64_t seed = 0;
    int max_tokens = 2048, ode_steps = -1;
    double chunk_seconds = -1.0, sigma_min = -1.0, top_p = -1.0, temperature = -1.0;
    int top_k = -1;

    app.add_option("--config", config_path, "key = value config file");

    auto* corpus_cmd = app.add_subcommand("corpus", "generate the synthetic corpus");
    (void)corpus_cmd;
    auto* train_cmd = app.add_subcommand("train", "train codec | lm | detok");
    train_cmd->add_option("target", target, "codec, lm, or detok")->required();
    auto* synth_cmd = app.add_subcommand("synthesize", "document -> script -> codes -> features");
    synth_cmd->add_option("--source", source, "input document path or URL")->required();
    synth_cmd->add_option("--kind", source_kind, "plain_text, pdf_text, or url");
    synth_cmd->add_option("--language", language, "force language: en or zh");
    synth_cmd->add_flag("--mock", mock, "use the offline mock LLM");
    synth_cmd->add_flag("--dry-run", dry_run, "stop after script validation");
    synth_cmd->add_option("--seed", seed, "generation seed");
    synth_cmd->add_option("--max-tokens", max_tokens, "speech token budget");
    synth_cmd->add_option("--top-k", top_k, "sampler top-k");
    synth_cmd->add_option("--top-p", top_p, "sampler top-p");
    synth_cmd->add_option("--temperature", temperature, "sampler temperature");
    synth_cmd->add_option("--ode-steps", ode_steps, "flow ODE steps");
    synth_cmd->add_option("--chunk-seconds", chunk_seconds, "inference chunk length");
    synth_cmd->add_option("--sigma-min", sigma_min, "flow sigma_min");
    auto* eval_cmd = app.add_subcommand("eval", "run the evaluation harness");
    eval_cmd->add_flag("--tamper-mask", tamper_mask, "flip one mask block (fault injection)");
    eval_cmd->add_option("--seed", seed, "evaluation seed");
    auto* script_cmd = app.add_subcommand("script", "script stage utilities");
    script_cmd->require_subcommand(1);
    auto* brief_cmd = script_cmd->add_subcommand("brief", "document -> brief");
    brief_cmd->add_option("--source", source, "input document path or URL")->required();
    brief_cmd->add_option("--kind", source_kind, "plain_text, pdf_text, or url");
    brief_cmd->add_option("--language", language, "force language: en or zh");
    brief_cmd->add_flag("--mock", mock, "use the offline mock LLM");
    auto* generate_cmd = script_cmd->add_subcommand("generate", "brief -> script JSON");
    generate_cmd->add_option("--brief", brief_path, "brief text file")->required();
    generate_cmd->add_option("--language", language, "brief language: en or zh");
    generate_cmd->add_flag("--mock", mock, "use the offline mock LLM");
    auto* validate_cmd = script_cmd->add_subcommand("validate", "validate a script JSON file");
    validate_cmd->add_option("--script", script_path, "script JSON file")->required();

    // let `podgen <sub> --config ...` reach the top-level option
    for (auto* sub : {corpus_cmd, train_cmd, synth_cmd, eval_cmd, script_cmd, brief_cmd,
                      generate_cmd, validate_cmd})
        sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        KeyValueConfig cfg;
        if (!config_path.empty()) cfg = KeyValueConfig::from_file(config_path);
        // CLI sampler/flow flags override the config file
        if (top_k >= 0) cfg.set("sampler_top_k", std::to_string(top_k));
        if (top_p >= 0) cfg.set("sampler_top_p", std::to_string(top_p));
        if (temperature >= 0) cfg.set("sampler_temperature", std::to_string(temperature));
        if (ode_steps > 0) cfg.set("flow_ode_steps", std::to_string(ode_steps));
        if (chunk_seconds > 0) cfg.set("flow_infer_chunk_s", std::to_string(chunk_seconds));
        if (sigma_min > 0) cfg.set("flow_sigma_min", std::to_string(sigma_min));

        if (corpus_cmd->parsed()) return cmd_corpus(cfg);
        if (train_cmd->parsed()) return cmd_train(target, cfg);
        if (synth_cmd->parsed())
            return cmd_synthesize(cfg, source_from_cli(source, source_kind, language), mock,
                                  dry_run, seed, max_tokens);
        if (eval_cmd->parsed()) return cmd_eval(cfg, tamper_mask, seed);
        if (script_cmd->parsed()) {
            const std::string out_dir = cfg.get_str("output_dir", "out");
            fs::create_directories(out_dir);
            const std::string template_dir = cfg.get_str("template_dir", "templates");
            if (brief_cmd->parsed()) {
                auto llm = make_client(mock, cfg);
                KnowledgeSource src =
                    load_source_expected(source_from_cli(source, source_kind, language));
                Brief brief = generate_brief(*llm, src, template_dir);
                std::ofstream os(out_dir + "/brief.txt");
                os << brief.to_text();
                std::cout << "script brief: wrote " << out_dir << "/brief.txt\n";
                return 0;
            }
            if (generate_cmd->parsed()) {
                auto llm = make_client(mock, cfg);
                std::ifstream is(brief_path);
                if (!is) throw ExpectedError("cannot open brief: " + brief_path);
                std::ostringstream buf;
                buf << is.rdbuf();
                const Language lang = language == "zh" ? Language::Zh : Language::En;
                Brief brief = parse_brief(buf.str(), lang);
                ScriptJSON script = generate_script(*llm, brief, template_dir);
                save_script(script, out_dir + "/script.json");
                std::cout << "script generate: wrote " << out_dir << "/script.json\n";
                return 0;
            }
            ScriptJSON script = load_script(script_path);
            ValidationReport report = validate_script(script);
            for (const auto& v : report.violations)
                std::cout << "violation: " << v.rule << " turn " << v.turn_index << ": "
                          << v.detail << "\n";
            std::cout << (report.pass ? "PASS" : "FAIL") << " (" << report.violations.size()
                      << " violations)\n";
            if (!report.pass) throw ExpectedError("script failed validation");
            return 0;
        }
        return 2;
    } catch (const ExpectedError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
