#ifndef XIS2_LOSSES_HPP
#define XIS2_LOSSES_HPP

// Training objectives: least-squares adversarial losses, the weighted
// acoustic loss, feature matching, and the weighted totals.

#include <cmath>
#include <string>
#include <vector>

#include "xis2/discriminator.hpp"
#include "xis2/generator.hpp"
#include "xis2/tensor.hpp"

namespace xis2 {

struct LossWeights {
    double lambda1 = 0.1, lambda2 = 1.0, lambda3 = 1.0;       // adversarial / acoustic / feature
    double alpha1 = 1.0, alpha2 = 0.01, alpha3 = 0.01, alpha4 = 0.1;  // mel / pitch / vuv / dur

    void validate() const {
        for (double v : {lambda1, lambda2, lambda3, alpha1, alpha2, alpha3, alpha4})
            if (v < 0.0) throw ConfigError("loss weights must be >= 0");
    }
};

struct LossReport {
    int64_t step = 0;
    double adv_g = 0.0, adv_d = 0.0;
    double mel = 0.0, pitch = 0.0, vuv = 0.0, dur = 0.0;
    double feature = 0.0;
    double total_g = 0.0, total_d = 0.0;
    double lr = 0.0;

    std::string json_line() const;
    bool finite() const;
};

namespace detail {

// mean over every element of every score map in one verdict
template <class S>
TensorT<S> verdict_score_mean(const DiscriminatorVerdictT<S>& v,
                              const std::function<TensorT<S>(const TensorT<S>&)>& f) {
    int64_t total = 0;
    for (const auto& s : v.scores) total += s.numel();
    TensorT<S> acc = TensorT<S>::scalar(S(0));
    for (const auto& s : v.scores) {
        const S w = static_cast<S>(static_cast<double>(s.numel()) / static_cast<double>(total));
        acc = add(acc, mul(f(s), w));
    }
    return acc;
}

}  // namespace detail

// mean over verdicts of the per-verdict mean of (1 - D(G(z)))^2
template <class S>
TensorT<S> adv_loss_generator(const std::vector<DiscriminatorVerdictT<S>>& fake_verdicts) {
    if (fake_verdicts.empty()) throw ContractError("adv_loss_generator: no verdicts");
    TensorT<S> acc = TensorT<S>::scalar(S(0));
    for (const auto& v : fake_verdicts) {
        TensorT<S> m = detail::verdict_score_mean<S>(
            v, [](const TensorT<S>& s) { return mean(square(add(neg(s), S(1)))); });
        acc = add(acc, m);
    }
    return mul(acc, S(1) / static_cast<S>(fake_verdicts.size()));
}

// mean of (1 - D(x))^2 over real verdicts plus mean of D(G(z))^2 over fakes
template <class S>
TensorT<S> adv_loss_discriminator(const std::vector<DiscriminatorVerdictT<S>>& real_verdicts,
                                  const std::vector<DiscriminatorVerdictT<S>>& fake_verdicts) {
    if (real_verdicts.empty() || fake_verdicts.empty())
        throw ContractError("adv_loss_discriminator: no verdicts");
    if (real_verdicts.size() != fake_verdicts.size())
        throw ContractError("adv_loss_discriminator: verdict structure mismatch");
    TensorT<S> racc = TensorT<S>::scalar(S(0));
    TensorT<S> facc = TensorT<S>::scalar(S(0));
    for (size_t i = 0; i < real_verdicts.size(); ++i) {
        if (real_verdicts[i].scores.size() != fake_verdicts[i].scores.size())
            throw ContractError("adv_loss_discriminator: score map count mismatch at verdict " +
                                std::to_string(i));
        racc = add(racc, detail::verdict_score_mean<S>(real_verdicts[i], [](const TensorT<S>& s) {
                       return mean(square(add(neg(s), S(1))));
                   }));
        facc = add(facc, detail::verdict_score_mean<S>(fake_verdicts[i], [](const TensorT<S>& s) {
                       return mean(square(s));
                   }));
    }
    const S inv = S(1) / static_cast<S>(real_verdicts.size());
    return add(mul(racc, inv), mul(facc, inv));
}

// Normalized L1 distance between paired intermediate feature maps, summed
// over every map of every verdict pair (bands and SD/DD instances).
template <class S>
TensorT<S> feature_loss(const std::vector<DiscriminatorVerdictT<S>>& real_verdicts,
                        const std::vector<DiscriminatorVerdictT<S>>& fake_verdicts) {
    if (real_verdicts.size() != fake_verdicts.size())
        throw ContractError("feature_loss: verdict count mismatch");
    TensorT<S> acc = TensorT<S>::scalar(S(0));
    for (size_t i = 0; i < real_verdicts.size(); ++i) {
        const auto& rf = real_verdicts[i].features;
        const auto& ff = fake_verdicts[i].features;
        if (rf.size() != ff.size())
            throw ContractError("feature_loss: feature map count mismatch at verdict " +
                                std::to_string(i));
        for (size_t j = 0; j < rf.size(); ++j) {
            if (rf[j].shape() != ff[j].shape())
                throw ContractError("feature_loss: feature shape mismatch at verdict " +
                                    std::to_string(i) + " map " + std::to_string(j) + ": " +
                                    shape_str(rf[j].shape()) + " vs " + shape_str(ff[j].shape()));
            acc = add(acc, mean(abs_(sub(rf[j], ff[j]))));
        }
    }
    return acc;
}

template <class S>
struct AcousticLossTerms {
    TensorT<S> mel, pitch, vuv, dur;
    TensorT<S> total;  // alpha-weighted sum
};

// alpha1*MSE(mel) + alpha2*MSE(logF0 on voiced frames) + alpha3*BCE(vuv)
// + alpha4*MSE(log durations). The pitch term is masked to frames whose
// target V/UV is 1, since logF0 is undefined for unvoiced frames.
template <class S>
AcousticLossTerms<S> acoustic_loss(const AcousticFramesT<S>& pred,
                                   const TensorT<S>& pred_log_durations,
                                   const AcousticFramesT<S>& target,
                                   const TensorT<S>& target_log_durations, const LossWeights& w) {
    check_shape(pred.mel.shape() == target.mel.shape(),
                "acoustic_loss: mel shape mismatch " + shape_str(pred.mel.shape()) + " vs " +
                    shape_str(target.mel.shape()));
    check_shape(pred.vuv.shape() == target.vuv.shape() && pred.logf0.shape() == target.logf0.shape(),
                "acoustic_loss: frame count mismatch");
    check_shape(pred_log_durations.shape() == target_log_durations.shape(),
                "acoustic_loss: duration count mismatch " + shape_str(pred_log_durations.shape()) +
                    " vs " + shape_str(target_log_durations.shape()));
    AcousticLossTerms<S> terms;
    terms.mel = mean(square(sub(pred.mel, target.mel)));

    // voiced mask from the target V/UV track
    Values<S> mask(target.vuv.data());
    S voiced = S(0);
    for (auto& m : mask) {
        m = m >= S(0.5) ? S(1) : S(0);
        voiced += m;
    }
    if (voiced > S(0)) {
        TensorT<S> mt = TensorT<S>::from(target.vuv.shape(), std::move(mask));
        TensorT<S> diff2 = square(sub(pred.logf0, target.logf0));
        terms.pitch = mul(sum(mul(diff2, mt)), S(1) / voiced);
    } else {
        terms.pitch = TensorT<S>::scalar(S(0));
    }

    const S lo = S(1e-7), hi = S(1) - S(1e-7);
    TensorT<S> p = clamp(pred.vuv, lo, hi);
    TensorT<S> t = target.vuv;
    TensorT<S> bce = neg(add(mul(t, log_(p)), mul(add(neg(t), S(1)), log_(add(neg(p), S(1))))));
    terms.vuv = mean(bce);

    terms.dur = mean(square(sub(pred_log_durations, target_log_durations)));

    terms.total = add(add(mul(terms.mel, static_cast<S>(w.alpha1)),
                          mul(terms.pitch, static_cast<S>(w.alpha2))),
                      add(mul(terms.vuv, static_cast<S>(w.alpha3)),
                          mul(terms.dur, static_cast<S>(w.alpha4))));
    return terms;
}

// L_G = lambda1*L(G;D) + lambda2*L_a + lambda3*L_f ; L_D = L(D;G)
inline void total_losses(LossReport& r, const LossWeights& w) {
    r.total_g = w.lambda1 * r.adv_g +
                w.lambda2 * (w.alpha1 * r.mel + w.alpha2 * r.pitch + w.alpha3 * r.vuv +
                             w.alpha4 * r.dur) +
                w.lambda3 * r.feature;
    r.total_d = r.adv_d;
    if (!r.finite()) throw DivergenceError("total_losses: non-finite loss component");
}

}  // namespace xis2

#endif
