#ifndef XIS2_OPTIM_HPP
#define XIS2_OPTIM_HPP

// Adam with bias correction plus the inverse-sqrt warmup schedule.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "xis2/nn.hpp"

namespace xis2 {

// lr = base_lr * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5);
// linear ramp up to the peak at step == warmup_steps, then inverse-sqrt decay
inline double lr_schedule(int64_t step, int64_t warmup_steps, int64_t d_model, double base_lr) {
    if (step < 1) throw ContractError("lr_schedule: step must be >= 1");
    if (warmup_steps < 1 || d_model < 1) throw ConfigError("lr_schedule: bad constants");
    const double s = static_cast<double>(step);
    return base_lr * std::pow(static_cast<double>(d_model), -0.5) *
           std::min(1.0 / std::sqrt(s), s * std::pow(static_cast<double>(warmup_steps), -1.5));
}

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

template <class S>
class AdamT {
public:
    AdamT() = default;
    explicit AdamT(const ParamStoreT<S>& store, AdamHyper hyper = {}) : hyper_(hyper) {
        slots_.resize(store.size());
        for (size_t i = 0; i < store.size(); ++i) {
            slots_[i].m.assign(static_cast<size_t>(store.at(i).tensor.numel()), S(0));
            slots_[i].v.assign(static_cast<size_t>(store.at(i).tensor.numel()), S(0));
        }
    }

    int64_t step_count() const { return step_; }
    const AdamHyper& hyper() const { return hyper_; }

    void step(ParamStoreT<S>& store, double lr) {
        if (slots_.size() != store.size())
            throw ConfigError("adam: optimizer state does not match parameter store");
        ++step_;
        const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
        const S b1 = static_cast<S>(hyper_.beta1), b2 = static_cast<S>(hyper_.beta2);
        for (size_t i = 0; i < store.size(); ++i) {
            auto& p = store.params()[i];
            const auto g = p.tensor.grad_or_zeros();
            for (S gv : g)
                if (!std::isfinite(static_cast<double>(gv)))
                    throw DivergenceError("adam: non-finite gradient in parameter " + p.name);
            auto& m = slots_[i].m;
            auto& v = slots_[i].v;
            S* w = p.tensor.data().data();
            for (size_t k = 0; k < g.size(); ++k) {
                m[k] = b1 * m[k] + (S(1) - b1) * g[k];
                v[k] = b2 * v[k] + (S(1) - b2) * g[k] * g[k];
                const double mhat = static_cast<double>(m[k]) / bc1;
                const double vhat = static_cast<double>(v[k]) / bc2;
                w[k] = static_cast<S>(static_cast<double>(w[k]) -
                                      lr * mhat / (std::sqrt(vhat) + hyper_.eps));
            }
        }
    }

    // state access for checkpointing
    struct Slot {
        std::vector<S> m, v;
    };
    std::vector<Slot>& slots() { return slots_; }
    const std::vector<Slot>& slots() const { return slots_; }
    void set_step(int64_t s) { step_ = s; }

private:
    AdamHyper hyper_;
    std::vector<Slot> slots_;
    int64_t step_ = 0;
};

// global gradient-norm clipping; returns the pre-clip norm
template <class S>
double clip_grad_norm(ParamStoreT<S>& store, double max_norm) {
    double sq = 0.0;
    for (auto& p : store.params())
        for (S g : p.tensor.grad())
            sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const S scale = static_cast<S>(max_norm / norm);
        for (auto& p : store.params()) {
            auto node = p.tensor.node();
            for (auto& g : node->grad) g *= scale;
        }
    }
    return norm;
}

using Adam = AdamT<double>;
using AdamF = AdamT<float>;

}  // namespace xis2

#endif
