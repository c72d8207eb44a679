// Command-line front end: corpus generation, adversarial training with
// ablation switches, synthesis, evaluation, and spectrogram plots.
//
// Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "xis2/checkpoint.hpp"
#include "xis2/dataio.hpp"
#include "xis2/eval.hpp"
#include "xis2/plot.hpp"
#include "xis2/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xis2;

namespace {

// training runs in 32-bit precision; tests use the 64-bit instantiation
using Real = float;

uint64_t seed_with_env_override(uint64_t seed) {
    if (const char* env = std::getenv("XIS2_SEED")) {
        try {
            return std::stoull(env);
        } catch (...) {
            throw ConfigError("XIS2_SEED must be an unsigned integer, got: " + std::string(env));
        }
    }
    return seed;
}

json generator_config_json(const GeneratorConfig& g, int64_t phoneme_vocab) {
    return json{{"d_model", g.d_model},
                {"heads", g.heads},
                {"encoder_blocks", g.encoder_blocks},
                {"decoder_blocks", g.decoder_blocks},
                {"encoder_res_blocks", g.encoder_res_blocks},
                {"decoder_res_blocks", g.decoder_res_blocks},
                {"mel_dim", g.mel_dim},
                {"ffn_mult", g.ffn_mult},
                {"conv_channels", g.conv_channels},
                {"conv_kernel", g.conv_kernel},
                {"d_ph", g.d_ph},
                {"d_dur", g.d_dur},
                {"d_pitch", g.d_pitch},
                {"dur_cap", g.dur_cap},
                {"midi_vocab", g.midi_vocab},
                {"max_frames", g.max_frames},
                {"dropout", g.dropout},
                {"use_convfft", g.use_convfft},
                {"phoneme_vocab", phoneme_vocab}};
}

GeneratorConfig generator_config_from_json(const json& j, int64_t& phoneme_vocab) {
    GeneratorConfig g;
    g.d_model = j.at("d_model").get<int64_t>();
    g.heads = j.at("heads").get<int64_t>();
    g.encoder_blocks = j.at("encoder_blocks").get<int64_t>();
    g.decoder_blocks = j.at("decoder_blocks").get<int64_t>();
    g.encoder_res_blocks = j.at("encoder_res_blocks").get<int64_t>();
    g.decoder_res_blocks = j.at("decoder_res_blocks").get<int64_t>();
    g.mel_dim = j.at("mel_dim").get<int64_t>();
    g.ffn_mult = j.at("ffn_mult").get<int64_t>();
    g.conv_channels = j.at("conv_channels").get<int64_t>();
    g.conv_kernel = j.at("conv_kernel").get<int64_t>();
    g.d_ph = j.at("d_ph").get<int64_t>();
    g.d_dur = j.at("d_dur").get<int64_t>();
    g.d_pitch = j.at("d_pitch").get<int64_t>();
    g.dur_cap = j.at("dur_cap").get<int64_t>();
    g.midi_vocab = j.at("midi_vocab").get<int64_t>();
    g.max_frames = j.at("max_frames").get<int64_t>();
    g.dropout = j.at("dropout").get<double>();
    g.use_convfft = j.at("use_convfft").get<bool>();
    phoneme_vocab = j.at("phoneme_vocab").get<int64_t>();
    return g;
}

G2PTable load_table(const std::string& g2p_path, const std::string& fallback_dir = "") {
    if (!g2p_path.empty()) return G2PTable::load(g2p_path);
    if (!fallback_dir.empty()) {
        const fs::path p = fs::path(fallback_dir) / "g2p.json";
        if (fs::exists(p)) return G2PTable::load(p.string());
    }
    return G2PTable::builtin_demo();
}

GeneratorConfig preset_generator(const std::string& preset) {
    if (preset == "paper") return GeneratorConfig::paper();
    if (preset == "desk") return GeneratorConfig::desk();
    throw ConfigError("unknown preset: " + preset + " (expected desk or paper)");
}

DiscriminatorConfig preset_discriminator(const std::string& preset) {
    if (preset == "paper") return DiscriminatorConfig::paper();
    if (preset == "desk") return DiscriminatorConfig::desk();
    throw ConfigError("unknown preset: " + preset + " (expected desk or paper)");
}

int cmd_gen_corpus(const std::string& out_dir, int items, uint64_t seed,
                   const std::string& g2p_path) {
    G2PTable table = load_table(g2p_path);
    auto corpus = synth_corpus<Real>(items, seed, table);
    save_corpus(out_dir, corpus);
    table.save((fs::path(out_dir) / "g2p.json").string());
    std::cout << "wrote " << corpus.size() << " items to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& corpus_dir, const std::string& config_path,
              const std::string& out_dir, const std::string& g2p_path, const std::string& preset,
              bool no_convfft, bool no_sd, bool no_dd) {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : TrainConfig::from_file(config_path);
    if (no_convfft) cfg.use_convfft = false;
    if (no_sd) cfg.use_sd = false;
    if (no_dd) cfg.use_dd = false;
    cfg.seed = seed_with_env_override(cfg.seed);

    G2PTable table = load_table(g2p_path, corpus_dir);
    auto corpus = load_corpus<Real>(corpus_dir);

    GeneratorConfig gcfg = preset_generator(preset);
    gcfg.use_convfft = cfg.use_convfft;
    DiscriminatorConfig dcfg = preset_discriminator(preset);
    dcfg.use_sd = cfg.use_sd;
    dcfg.use_dd = cfg.use_dd;

    GeneratorT<Real> gen(gcfg, table.vocab(), cfg.seed);
    MultiBandDiscriminatorT<Real> disc(dcfg, cfg.seed);
    TrainerT<Real> trainer(gen, disc, table, cfg);

    fs::create_directories(out_dir);
    {
        std::ofstream gc(fs::path(out_dir) / "gen_config.json");
        gc << generator_config_json(gcfg, table.vocab()).dump(2) << "\n";
        table.save((fs::path(out_dir) / "g2p.json").string());
    }
    std::ofstream log(fs::path(out_dir) / "train_log.jsonl",
                      cfg.resume.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("train: cannot write log in " + out_dir);

    auto result = trainer.train(corpus, out_dir, &log);
    std::cout << "trained " << result.steps_run << " steps";
    if (cfg.holdout > 0)
        std::cout << "; holdout mel MSE " << result.holdout_mel_mse_step1 << " -> "
                  << result.holdout_mel_mse_final;
    std::cout << "\n";
    return 0;
}

std::string sibling_path(const std::string& mel_path, const std::string& tag) {
    fs::path p(mel_path);
    fs::path stem = p.parent_path() / p.stem();
    return stem.string() + "_" + tag + p.extension().string();
}

int cmd_synth(const std::string& model_path, const std::string& score_path,
              const std::string& out_path, const std::string& durations,
              const std::string& g2p_path) {
    const fs::path model_dir = fs::path(model_path).parent_path();
    const fs::path cfg_path = model_dir / "gen_config.json";
    if (!fs::exists(cfg_path))
        throw IoError("synth: no gen_config.json next to " + model_path);
    json j;
    {
        std::ifstream in(cfg_path);
        in >> j;
    }
    int64_t vocab = 0;
    GeneratorConfig gcfg = generator_config_from_json(j, vocab);
    G2PTable table = load_table(g2p_path, model_dir.string());
    if (table.vocab() != vocab)
        throw IoError("synth: g2p table vocab " + std::to_string(table.vocab()) +
                      " does not match model " + std::to_string(vocab));
    GeneratorT<Real> gen(gcfg, vocab, 0);
    load_params(model_path, gen.params(), kGeneratorMagic);

    MusicalScore score = parse_score(score_path);
    PhonemeSequence seq = g2p_expand(score, table);

    NoGradGuard ng;
    std::optional<std::vector<int64_t>> teacher;
    if (durations == "given") {
        // split each syllable's note frames evenly over its phonemes,
        // remainder to the leading phonemes, so the total is preserved
        std::vector<int64_t> frames;
        for (const auto& syl : score.syllables) {
            const auto& phs = table.lexicon().at(syl.lyric);
            const int64_t k = static_cast<int64_t>(phs.size());
            for (int64_t p = 0; p < k; ++p)
                frames.push_back(syl.note_frames / k + (p < syl.note_frames % k ? 1 : 0));
        }
        teacher = std::move(frames);
    } else if (durations != "predicted") {
        throw ConfigError("synth: --durations must be given or predicted");
    }
    auto out = gen.forward(seq, teacher ? &*teacher : nullptr, false, nullptr);
    write_tensor(out_path, out.frames.mel);
    write_tensor(sibling_path(out_path, "vuv"), out.frames.vuv);
    write_tensor(sibling_path(out_path, "logf0"), out.frames.logf0);
    std::cout << "T=" << out.frames.frames() << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& corpus_dir,
             const std::string& g2p_path) {
    const fs::path model_dir = fs::path(model_path).parent_path();
    const fs::path cfg_path = model_dir / "gen_config.json";
    if (!fs::exists(cfg_path)) throw IoError("eval: no gen_config.json next to " + model_path);
    json j;
    {
        std::ifstream in(cfg_path);
        in >> j;
    }
    int64_t vocab = 0;
    GeneratorConfig gcfg = generator_config_from_json(j, vocab);
    G2PTable table = load_table(g2p_path, model_dir.string());
    GeneratorT<Real> gen(gcfg, vocab, 0);
    load_params(model_path, gen.params(), kGeneratorMagic);

    auto corpus = load_corpus<Real>(corpus_dir);
    std::vector<const CorpusItemT<Real>*> items;
    for (const auto& c : corpus) items.push_back(&c);
    EvalMetrics m = evaluate(gen, table, items, DiscriminatorConfig{}.bands);
    std::cout << m.json() << "\n";
    return 0;
}

int cmd_plot_mel(const std::string& in_path, const std::string& out_path,
                 const std::string& band_name) {
    TensorT<double> mel = read_tensor<double>(in_path);
    std::optional<BandSpec> band;
    if (band_name != "full") {
        for (const auto& b : DiscriminatorConfig{}.bands)
            if (b.name == band_name) band = b;
        if (!band)
            throw ConfigError("plot-mel: unknown band '" + band_name +
                              "' (expected low, mid, high or full)");
    }
    render_mel_ppm(mel, out_path, band);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"XiaoiceSing2-style singing voice acoustic model"};
    app.require_subcommand(1);

    auto* gen_corpus = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
    std::string gc_out, gc_g2p;
    int gc_items = 50;
    uint64_t gc_seed = 42;
    gen_corpus->add_option("--out", gc_out, "output directory")->required();
    gen_corpus->add_option("--items", gc_items, "number of items")->check(CLI::PositiveNumber);
    gen_corpus->add_option("--seed", gc_seed, "corpus seed");
    gen_corpus->add_option("--g2p", gc_g2p, "G2P table file (default: builtin demo table)");

    auto* train = app.add_subcommand("train", "adversarial training");
    std::string tr_corpus, tr_config, tr_out, tr_g2p, tr_preset = "desk";
    bool tr_no_convfft = false, tr_no_sd = false, tr_no_dd = false;
    train->add_option("--corpus", tr_corpus, "corpus directory")->required();
    train->add_option("--config", tr_config, "key=value training config file");
    train->add_option("--out", tr_out, "output directory")->required();
    train->add_option("--g2p", tr_g2p, "G2P table file");
    train->add_option("--preset", tr_preset, "model size preset: desk or paper");
    train->add_flag("--no-convfft", tr_no_convfft, "plain FFT blocks (no conv path)");
    train->add_flag("--no-sd", tr_no_sd, "disable segment discriminators");
    train->add_flag("--no-dd", tr_no_dd, "disable detail discriminators");

    auto* synth = app.add_subcommand("synth", "synthesize acoustic frames from a score");
    std::string sy_model, sy_score, sy_out, sy_dur = "predicted", sy_g2p;
    synth->add_option("--model", sy_model, "generator checkpoint")->required();
    synth->add_option("--score", sy_score, "score JSON file")->required();
    synth->add_option("--out", sy_out, "output mel tensor path (.xten)")->required();
    synth->add_option("--durations", sy_dur, "given or predicted");
    synth->add_option("--g2p", sy_g2p, "G2P table file");

    auto* eval = app.add_subcommand("eval", "evaluate a model on a corpus");
    std::string ev_model, ev_corpus, ev_g2p;
    eval->add_option("--model", ev_model, "generator checkpoint")->required();
    eval->add_option("--corpus", ev_corpus, "corpus directory")->required();
    eval->add_option("--g2p", ev_g2p, "G2P table file");

    auto* plot = app.add_subcommand("plot-mel", "render a mel tensor as a PPM heatmap");
    std::string pl_in, pl_out, pl_band = "full";
    plot->add_option("--in", pl_in, "input mel tensor (.xten)")->required();
    plot->add_option("--out", pl_out, "output PPM file")->required();
    plot->add_option("--band", pl_band, "low, mid, high or full");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen_corpus->parsed())
            return cmd_gen_corpus(gc_out, gc_items, seed_with_env_override(gc_seed), gc_g2p);
        if (train->parsed())
            return cmd_train(tr_corpus, tr_config, tr_out, tr_g2p, tr_preset, tr_no_convfft,
                             tr_no_sd, tr_no_dd);
        if (synth->parsed()) return cmd_synth(sy_model, sy_score, sy_out, sy_dur, sy_g2p);
        if (eval->parsed()) return cmd_eval(ev_model, ev_corpus, ev_g2p);
        if (plot->parsed()) return cmd_plot_mel(pl_in, pl_out, pl_band);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
