#ifndef XIS2_TRAINER_HPP
#define XIS2_TRAINER_HPP

// Alternating adversarial training: one discriminator update then one
// generator update per batch, Adam for both, shared warmup schedule.

#include <iosfwd>
#include <string>
#include <vector>

#include "xis2/checkpoint.hpp"
#include "xis2/dataio.hpp"
#include "xis2/discriminator.hpp"
#include "xis2/generator.hpp"
#include "xis2/losses.hpp"
#include "xis2/optim.hpp"

namespace xis2 {

struct TrainConfig {
    int64_t epochs = 300;
    int64_t batch_size = 4;
    int64_t warmup_steps = 200;
    uint64_t seed = 42;
    bool use_convfft = true;
    bool use_sd = true;
    bool use_dd = true;
    int64_t checkpoint_every = 100;
    int64_t max_steps = 0;  // 0 = run all epochs
    double base_lr = 0.01;
    double grad_clip = 1.0;
    int64_t holdout = 0;  // trailing corpus items reserved for held-out eval
    std::string resume;   // checkpoint dir to resume from

    bool gan_enabled() const { return use_sd || use_dd; }
    void validate() const;
    void apply_kv(const std::string& key, const std::string& value);
    static TrainConfig from_file(const std::string& path);
    static const std::vector<std::string>& known_keys();
};

template <class S>
class TrainerT {
public:
    TrainerT(GeneratorT<S>& gen, MultiBandDiscriminatorT<S>& disc, const G2PTable& table,
             const TrainConfig& cfg, LossWeights weights = {});

    // One alternating update on a batch of teacher-forced items.
    LossReport train_step(const std::vector<const CorpusItemT<S>*>& batch, int64_t step);

    struct Result {
        int64_t steps_run = 0;
        double holdout_mel_mse_step1 = 0.0;
        double holdout_mel_mse_final = 0.0;
    };

    // Runs epochs x batches steps (capped by max_steps), writing the JSON-
    // lines log and periodic checkpoints under out_dir. On divergence the
    // last written checkpoint is left untouched and the error propagates.
    Result train(const std::vector<CorpusItemT<S>>& corpus, const std::string& out_dir,
                 std::ostream* log);

    double holdout_mel_mse(const std::vector<const CorpusItemT<S>*>& items) const;

    void save_state(const std::string& dir, int64_t step, bool numbered) const;
    int64_t load_state(const std::string& dir);

    AdamT<S>& opt_g() { return opt_g_; }
    AdamT<S>& opt_d() { return opt_d_; }

    // invoked with "pre_d" / "post_d" / "post_g" around the two half-steps
    void set_phase_hook(std::function<void(const std::string&)> hook) {
        phase_hook_ = std::move(hook);
    }

private:
    const PhonemeSequence& seq_for(const CorpusItemT<S>& item) const;

    GeneratorT<S>& gen_;
    MultiBandDiscriminatorT<S>& disc_;
    const G2PTable& table_;
    TrainConfig cfg_;
    LossWeights weights_;
    AdamT<S> opt_g_, opt_d_;
    std::function<void(const std::string&)> phase_hook_;
    mutable std::unordered_map<const CorpusItemT<S>*, PhonemeSequence> seq_cache_;
};

template <class S>
TensorT<S> target_log_durations(const CorpusItemT<S>& item) {
    Values<S> v;
    v.reserve(item.phoneme_durations.size());
    for (int64_t f : item.phoneme_durations) v.push_back(encode_duration<S>(f));
    const int64_t n = static_cast<int64_t>(v.size());
    return TensorT<S>::from({n}, std::move(v));
}

using Trainer = TrainerT<double>;
using TrainerF = TrainerT<float>;

}  // namespace xis2

#endif
