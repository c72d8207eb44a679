#ifndef XIS2_EVAL_HPP
#include <sstream>
#define XIS2_EVAL_HPP

// Proxy metrics for synthesis quality: frame-feature errors plus per-band
// spectral variance as the over-smoothing indicator.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "xis2/dataio.hpp"
#include "xis2/discriminator.hpp"
#include "xis2/generator.hpp"

namespace xis2 {

struct EvalMetrics {
    double mel_mse = 0.0;
    double logf0_rmse_voiced = 0.0;
    double vuv_accuracy = 0.0;
    double duration_mae = 0.0;
    std::map<std::string, double> band_variance;  // per-frame spectral variance, by band
    int64_t items = 0;

    std::string json() const {
        std::ostringstream os;
        os.precision(10);
        os << "{\"items\":" << items << ",\"mel_mse\":" << mel_mse
           << ",\"logf0_rmse_voiced\":" << logf0_rmse_voiced
           << ",\"vuv_accuracy\":" << vuv_accuracy << ",\"duration_mae\":" << duration_mae
           << ",\"band_variance\":{";
        bool first = true;
        for (const auto& [k, v] : band_variance) {
            os << (first ? "" : ",") << "\"" << k << "\":" << v;
            first = false;
        }
        os << "}}";
        return os.str();
    }
};

// mean over frames of the variance of the band's bins within each frame
template <class S>
double band_variance(const TensorT<S>& mel, const BandSpec& band) {
    check_shape(mel.rank() == 2 && band.end <= mel.dim(1), "band_variance: band outside mel");
    const int64_t t = mel.dim(0), w = band.width(), c = mel.dim(1);
    double acc = 0.0;
    for (int64_t i = 0; i < t; ++i) {
        double mu = 0.0;
        for (int64_t b = band.start; b < band.end; ++b)
            mu += static_cast<double>(mel.data()[static_cast<size_t>(i * c + b)]);
        mu /= static_cast<double>(w);
        double var = 0.0;
        for (int64_t b = band.start; b < band.end; ++b) {
            const double d = static_cast<double>(mel.data()[static_cast<size_t>(i * c + b)]) - mu;
            var += d * d;
        }
        acc += var / static_cast<double>(w);
    }
    return acc / static_cast<double>(t);
}

// metrics for one item given its predictions; predicted_frames come from the
// duration predictor, the frame tracks from teacher-forced synthesis
template <class S>
EvalMetrics metrics_for(const AcousticFramesT<S>& pred,
                        const std::vector<int64_t>& predicted_frames, const CorpusItemT<S>& item,
                        const std::vector<BandSpec>& bands) {
    check_shape(pred.mel.shape() == item.target.mel.shape(), "metrics: mel shape mismatch");
    EvalMetrics m;
    m.items = 1;
    const int64_t t = pred.mel.dim(0);
    m.mel_mse = static_cast<double>(mean(square(sub(pred.mel, item.target.mel))).item());

    double f0_sq = 0.0;
    int64_t voiced = 0, correct = 0;
    for (int64_t i = 0; i < t; ++i) {
        const bool tv = item.target.vuv.data()[static_cast<size_t>(i)] >= S(0.5);
        const bool pv = pred.vuv.data()[static_cast<size_t>(i)] >= S(0.5);
        if (tv == pv) ++correct;
        if (tv) {
            const double d = static_cast<double>(pred.logf0.data()[static_cast<size_t>(i)]) -
                             static_cast<double>(item.target.logf0.data()[static_cast<size_t>(i)]);
            f0_sq += d * d;
            ++voiced;
        }
    }
    m.logf0_rmse_voiced = voiced > 0 ? std::sqrt(f0_sq / static_cast<double>(voiced)) : 0.0;
    m.vuv_accuracy = static_cast<double>(correct) / static_cast<double>(t);

    check_shape(predicted_frames.size() == item.phoneme_durations.size(),
                "metrics: duration count mismatch");
    double mae = 0.0;
    for (size_t n = 0; n < predicted_frames.size(); ++n)
        mae += std::abs(static_cast<double>(predicted_frames[n] - item.phoneme_durations[n]));
    m.duration_mae = mae / static_cast<double>(predicted_frames.size());

    for (const auto& b : bands) m.band_variance[b.name] = band_variance(pred.mel, b);
    return m;
}

template <class S>
EvalMetrics evaluate(const GeneratorT<S>& gen, const G2PTable& table,
                     const std::vector<const CorpusItemT<S>*>& items,
                     const std::vector<BandSpec>& bands) {
    if (items.empty()) throw ConfigError("evaluate: empty corpus");
    NoGradGuard ng;
    EvalMetrics total;
    for (const CorpusItemT<S>* item : items) {
        PhonemeSequence seq = g2p_expand(item->score, table);
        auto out = gen.forward(seq, &item->phoneme_durations, false, nullptr);
        std::vector<int64_t> predicted(seq.size());
        for (size_t n = 0; n < seq.size(); ++n)
            predicted[n] = decode_duration(static_cast<double>(out.log_durations.data()[n]));
        EvalMetrics m = metrics_for(out.frames, predicted, *item, bands);
        total.mel_mse += m.mel_mse;
        total.logf0_rmse_voiced += m.logf0_rmse_voiced;
        total.vuv_accuracy += m.vuv_accuracy;
        total.duration_mae += m.duration_mae;
        for (const auto& [k, v] : m.band_variance) total.band_variance[k] += v;
        ++total.items;
    }
    const double n = static_cast<double>(total.items);
    total.mel_mse /= n;
    total.logf0_rmse_voiced /= n;
    total.vuv_accuracy /= n;
    total.duration_mae /= n;
    for (auto& [k, v] : total.band_variance) v /= n;
    return total;
}

}  // namespace xis2

#endif
