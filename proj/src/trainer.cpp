#include "xis2/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace xis2 {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || warmup_steps < 1 || checkpoint_every < 1)
        throw ConfigError("train config: epochs/batch_size/warmup_steps/checkpoint_every must be positive");
    if (max_steps < 0 || holdout < 0) throw ConfigError("train config: negative max_steps/holdout");
    if (base_lr <= 0.0) throw ConfigError("train config: base_lr must be positive");
}

const std::vector<std::string>& TrainConfig::known_keys() {
    static const std::vector<std::string> keys = {
        "epochs",     "batch_size",       "warmup_steps", "seed",   "use_convfft",
        "use_sd",     "use_dd",           "checkpoint_every", "max_steps", "base_lr",
        "grad_clip",  "holdout",          "resume"};
    return keys;
}

namespace {
bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("train config: bad boolean for " + key + ": " + v);
}
}  // namespace

void TrainConfig::apply_kv(const std::string& key, const std::string& value) {
    try {
        if (key == "epochs") epochs = std::stoll(value);
        else if (key == "batch_size") batch_size = std::stoll(value);
        else if (key == "warmup_steps") warmup_steps = std::stoll(value);
        else if (key == "seed") seed = std::stoull(value);
        else if (key == "use_convfft") use_convfft = parse_bool(value, key);
        else if (key == "use_sd") use_sd = parse_bool(value, key);
        else if (key == "use_dd") use_dd = parse_bool(value, key);
        else if (key == "checkpoint_every") checkpoint_every = std::stoll(value);
        else if (key == "max_steps") max_steps = std::stoll(value);
        else if (key == "base_lr") base_lr = std::stod(value);
        else if (key == "grad_clip") grad_clip = std::stod(value);
        else if (key == "holdout") holdout = std::stoll(value);
        else if (key == "resume") resume = value;
        else {
            std::string keys;
            for (const auto& k : known_keys()) keys += (keys.empty() ? "" : ", ") + k;
            throw ConfigError("train config: unknown key '" + key + "' (valid keys: " + keys + ")");
        }
    } catch (const std::invalid_argument&) {
        throw ConfigError("train config: bad value for " + key + ": " + value);
    } catch (const std::out_of_range&) {
        throw ConfigError("train config: value out of range for " + key + ": " + value);
    }
}

TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("train config: no such file: " + path);
    TrainConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            bool blank = true;
            for (char c : line) blank = blank && std::isspace(static_cast<unsigned char>(c));
            if (blank) continue;
            throw ConfigError("train config: expected key=value, got: " + line);
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        cfg.apply_kv(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

namespace {

// parameters stop receiving weight grads while frozen; activations still
// propagate
template <class S>
class FreezeParams {
public:
    explicit FreezeParams(ParamStoreT<S>& store) : store_(store) {
        for (auto& p : store_.params()) p.tensor.set_requires_grad(false);
    }
    ~FreezeParams() {
        for (auto& p : store_.params()) p.tensor.set_requires_grad(true);
    }

private:
    ParamStoreT<S>& store_;
};

std::vector<size_t> epoch_permutation(size_t n, uint64_t seed, int64_t epoch) {
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, 4, static_cast<uint64_t>(epoch)));
    for (size_t i = n; i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

}  // namespace

template <class S>
TrainerT<S>::TrainerT(GeneratorT<S>& gen, MultiBandDiscriminatorT<S>& disc, const G2PTable& table,
                      const TrainConfig& cfg, LossWeights weights)
    : gen_(gen), disc_(disc), table_(table), cfg_(cfg), weights_(weights) {
    cfg_.validate();
    weights_.validate();
    opt_g_ = AdamT<S>(gen_.params());
    opt_d_ = AdamT<S>(disc_.params());
}

template <class S>
const PhonemeSequence& TrainerT<S>::seq_for(const CorpusItemT<S>& item) const {
    auto it = seq_cache_.find(&item);
    if (it != seq_cache_.end()) return it->second;
    PhonemeSequence seq = g2p_expand(item.score, table_);
    if (seq.size() != item.phoneme_durations.size())
        throw ParseError("corpus item " + item.id + ": " + std::to_string(seq.size()) +
                         " phonemes but " + std::to_string(item.phoneme_durations.size()) +
                         " durations");
    return seq_cache_.emplace(&item, std::move(seq)).first->second;
}

template <class S>
LossReport TrainerT<S>::train_step(const std::vector<const CorpusItemT<S>*>& batch,
                                   int64_t step) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const double lr = lr_schedule(step, cfg_.warmup_steps, gen_.config().d_model, cfg_.base_lr);
    const S inv_b = S(1) / static_cast<S>(batch.size());
    const bool gan = cfg_.gan_enabled();
    LossReport report;
    report.step = step;
    report.lr = lr;

    // clip offsets drawn once per item and reused for real and fake, in both
    // halves of the step
    std::vector<ClipPlan> plans(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        Rng clip_rng(derive_seed(cfg_.seed, 5, static_cast<uint64_t>(step) * 1024 + i));
        plans[i] = make_clip_plan(batch[i]->target.mel.dim(0), disc_.config(), clip_rng);
    }

    // discriminator update
    if (gan) {
        if (phase_hook_) phase_hook_("pre_d");
        disc_.params().zero_grad();
        FreezeParams<S> freeze_g(gen_.params());
        for (size_t i = 0; i < batch.size(); ++i) {
            const CorpusItemT<S>& item = *batch[i];
            TensorT<S> fake_mel;
            {
                NoGradGuard ng;
                auto out = gen_.forward(seq_for(item), &item.phoneme_durations, false, nullptr);
                fake_mel = out.frames.mel;
            }
            auto real_v = disc_.forward(item.target.mel, plans[i]);
            auto fake_v = disc_.forward(fake_mel, plans[i]);
            TensorT<S> loss_d = adv_loss_discriminator(real_v, fake_v);
            report.adv_d += static_cast<double>(loss_d.item()) / static_cast<double>(batch.size());
            mul(loss_d, inv_b).backward();
        }
        clip_grad_norm(disc_.params(), cfg_.grad_clip);
        opt_d_.step(disc_.params(), lr);
        if (phase_hook_) phase_hook_("post_d");
    }

    // generator update on a fresh forward
    gen_.params().zero_grad();
    {
        FreezeParams<S> freeze_d(disc_.params());
        for (size_t i = 0; i < batch.size(); ++i) {
            const CorpusItemT<S>& item = *batch[i];
            Rng drop_rng(derive_seed(cfg_.seed, 6, static_cast<uint64_t>(step) * 1024 + i));
            auto out = gen_.forward(seq_for(item), &item.phoneme_durations, true, &drop_rng);
            AcousticLossTerms<S> ac = acoustic_loss(out.frames, out.log_durations, item.target,
                                                    target_log_durations(item), weights_);
            TensorT<S> total = mul(ac.total, static_cast<S>(weights_.lambda2));
            if (gan) {
                auto fake_v = disc_.forward(out.frames.mel, plans[i]);
                std::vector<DiscriminatorVerdictT<S>> real_v;
                {
                    NoGradGuard ng;
                    real_v = disc_.forward(item.target.mel, plans[i]);
                }
                TensorT<S> adv = adv_loss_generator(fake_v);
                TensorT<S> feat = feature_loss(real_v, fake_v);
                report.adv_g += static_cast<double>(adv.item()) / double(batch.size());
                report.feature += static_cast<double>(feat.item()) / double(batch.size());
                total = add(total, add(mul(adv, static_cast<S>(weights_.lambda1)),
                                       mul(feat, static_cast<S>(weights_.lambda3))));
            }
            report.mel += static_cast<double>(ac.mel.item()) / double(batch.size());
            report.pitch += static_cast<double>(ac.pitch.item()) / double(batch.size());
            report.vuv += static_cast<double>(ac.vuv.item()) / double(batch.size());
            report.dur += static_cast<double>(ac.dur.item()) / double(batch.size());
            mul(total, inv_b).backward();
        }
    }
    clip_grad_norm(gen_.params(), cfg_.grad_clip);
    opt_g_.step(gen_.params(), lr);
    if (phase_hook_) phase_hook_("post_g");

    total_losses(report, weights_);
    return report;
}

template <class S>
double TrainerT<S>::holdout_mel_mse(const std::vector<const CorpusItemT<S>*>& items) const {
    if (items.empty()) return 0.0;
    NoGradGuard ng;
    double acc = 0.0;
    for (const CorpusItemT<S>* item : items) {
        auto out = gen_.forward(seq_for(*item), &item->phoneme_durations, false, nullptr);
        acc += static_cast<double>(mean(square(sub(out.frames.mel, item->target.mel))).item());
    }
    return acc / static_cast<double>(items.size());
}

template <class S>
void TrainerT<S>::save_state(const std::string& dir, int64_t step, bool numbered) const {
    fs::create_directories(dir);
    save_params((fs::path(dir) / "gen_last.ckpt").string(), gen_.params(), kGeneratorMagic);
    save_params((fs::path(dir) / "disc_last.ckpt").string(), disc_.params(), kDiscriminatorMagic);
    save_adam((fs::path(dir) / "opt_g_last.ckpt").string(), opt_g_, gen_.params());
    save_adam((fs::path(dir) / "opt_d_last.ckpt").string(), opt_d_, disc_.params());
    if (numbered) {
        std::ostringstream tag;
        tag << "step" << std::setw(6) << std::setfill('0') << step;
        save_params((fs::path(dir) / ("gen_" + tag.str() + ".ckpt")).string(), gen_.params(),
                    kGeneratorMagic);
        save_params((fs::path(dir) / ("disc_" + tag.str() + ".ckpt")).string(), disc_.params(),
                    kDiscriminatorMagic);
    }
    nlohmann::json j = {{"format_version", 1}, {"step", step}};
    std::ofstream st(fs::path(dir) / "train_state.json");
    if (!st) throw IoError("trainer: cannot write train_state.json in " + dir);
    st << j.dump(2) << "\n";
}

template <class S>
int64_t TrainerT<S>::load_state(const std::string& dir) {
    std::ifstream st(fs::path(dir) / "train_state.json");
    if (!st) throw IoError("trainer: no train_state.json in " + dir);
    nlohmann::json j;
    st >> j;
    const int64_t step = j.at("step").get<int64_t>();
    load_params((fs::path(dir) / "gen_last.ckpt").string(), gen_.params(), kGeneratorMagic);
    load_params((fs::path(dir) / "disc_last.ckpt").string(), disc_.params(), kDiscriminatorMagic);
    load_adam((fs::path(dir) / "opt_g_last.ckpt").string(), opt_g_, gen_.params());
    load_adam((fs::path(dir) / "opt_d_last.ckpt").string(), opt_d_, disc_.params());
    return step;
}

template <class S>
typename TrainerT<S>::Result TrainerT<S>::train(const std::vector<CorpusItemT<S>>& corpus,
                                                const std::string& out_dir, std::ostream* log) {
    if (corpus.empty()) throw ConfigError("train: empty corpus");
    const int64_t n_hold = std::min<int64_t>(cfg_.holdout, static_cast<int64_t>(corpus.size()) - 1);
    const int64_t n_train = static_cast<int64_t>(corpus.size()) - n_hold;
    std::vector<const CorpusItemT<S>*> train_items, holdout_items;
    for (int64_t i = 0; i < n_train; ++i) train_items.push_back(&corpus[static_cast<size_t>(i)]);
    for (int64_t i = n_train; i < static_cast<int64_t>(corpus.size()); ++i)
        holdout_items.push_back(&corpus[static_cast<size_t>(i)]);

    const int64_t spe = n_train / cfg_.batch_size;
    if (spe < 1) throw ConfigError("train: corpus smaller than one batch");
    int64_t total_steps = cfg_.epochs * spe;
    if (cfg_.max_steps > 0) total_steps = std::min(total_steps, cfg_.max_steps);

    int64_t start_step = 0;
    if (!cfg_.resume.empty()) start_step = load_state(cfg_.resume);

    Result result;
    for (int64_t step = start_step + 1; step <= total_steps; ++step) {
        const int64_t epoch = (step - 1) / spe;
        const int64_t bidx = (step - 1) % spe;
        const std::vector<size_t> order =
            epoch_permutation(static_cast<size_t>(n_train), cfg_.seed, epoch);
        std::vector<const CorpusItemT<S>*> batch;
        for (int64_t k = 0; k < cfg_.batch_size; ++k)
            batch.push_back(train_items[order[static_cast<size_t>(bidx * cfg_.batch_size + k)]]);
        LossReport report = train_step(batch, step);
        if (log) *log << report.json_line() << "\n";
        if (step == 1) {
            result.holdout_mel_mse_step1 = holdout_mel_mse(holdout_items);
            if (log && !holdout_items.empty())
                *log << "{\"step\":1,\"holdout_mel_mse\":" << result.holdout_mel_mse_step1 << "}\n";
        }
        if (step % cfg_.checkpoint_every == 0) save_state(out_dir, step, true);
        result.steps_run = step - start_step;
    }
    save_state(out_dir, total_steps, false);
    result.holdout_mel_mse_final = holdout_mel_mse(holdout_items);
    if (log && !holdout_items.empty())
        *log << "{\"step\":" << total_steps
             << ",\"holdout_mel_mse\":" << result.holdout_mel_mse_final << "}\n";
    if (log) log->flush();
    return result;
}

template class TrainerT<float>;
template class TrainerT<double>;

}  // namespace xis2
