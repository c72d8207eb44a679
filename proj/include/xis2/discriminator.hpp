#ifndef XIS2_DISCRIMINATOR_HPP
#define XIS2_DISCRIMINATOR_HPP

// Multi-band mel discriminator: three overlapping frequency bands, each
// judged by segment discriminators (1-d CNNs over random temporal clips)
// and detail discriminators (dilated 2-d CNNs over time-frequency patches).

#include <cstdint>
#include <string>
#include <vector>

#include "xis2/nn.hpp"
#include "xis2/rng.hpp"
#include "xis2/tensor.hpp"

namespace xis2 {

struct BandSpec {
    std::string name;
    int64_t start = 0, end = 0;  // half-open mel bin range

    int64_t width() const { return end - start; }
};

// whole-segment sentinel in a window list
inline constexpr int64_t kFullSegment = -1;

struct DiscriminatorConfig {
    int64_t mel_dim = 120;
    std::vector<BandSpec> bands = {{"low", 0, 60}, {"mid", 30, 90}, {"high", 60, 120}};
    std::vector<int64_t> windows = {200, 400, 600, 800, kFullSegment};

    // segment discriminator: sd_layers 1-d convs, then a 1x1 score projection
    int64_t sd_layers = 10;
    int64_t sd_channels = 128;
    int64_t sd_kernel = 3;

    // detail discriminator: stem conv, then alternating downsampling/output convs
    int64_t dd_stem_channels = 32;
    int64_t dd_down_layers = 5;
    std::pair<int64_t, int64_t> dd_down_kernel = {3, 3};
    std::pair<int64_t, int64_t> dd_down_dilation = {2, 2};
    std::pair<int64_t, int64_t> dd_down_stride = {2, 2};
    std::pair<int64_t, int64_t> dd_down_padding = {2, 2};
    std::pair<int64_t, int64_t> dd_out_kernel = {1, 3};
    std::pair<int64_t, int64_t> dd_out_padding = {0, 1};
    bool dd_feature_include_stem = true;

    double leaky_slope = 0.2;
    bool use_sd = true;
    bool use_dd = true;

    static DiscriminatorConfig paper() { return DiscriminatorConfig{}; }

    static DiscriminatorConfig desk() {
        DiscriminatorConfig c;
        c.sd_layers = 3;
        c.sd_channels = 32;
        c.dd_stem_channels = 8;
        return c;
    }

    static DiscriminatorConfig toy() {
        DiscriminatorConfig c;
        c.sd_layers = 2;
        c.sd_channels = 8;
        c.dd_stem_channels = 4;
        return c;
    }

    void validate() const;
    int64_t discriminators_per_band() const {
        return (use_sd ? static_cast<int64_t>(windows.size()) : 0) +
               (use_dd ? static_cast<int64_t>(windows.size()) : 0);
    }
};

enum class DiscKind { SD, DD };

struct VerdictOrigin {
    std::string band;
    DiscKind kind = DiscKind::SD;
    int64_t window = kFullSegment;  // SD: window length; DD: kFullSegment
    int64_t index = 0;              // instance index within the band
    int64_t clip_start = 0;         // SD clip offset actually used
};

template <class S>
struct DiscriminatorVerdictT {
    std::vector<TensorT<S>> scores;
    std::vector<TensorT<S>> features;
    VerdictOrigin origin;
};

// (T,120) -> low (T,60), mid (T,60), high (T,60) per the band table
template <class S>
std::vector<TensorT<S>> split_bands(const TensorT<S>& mel, const std::vector<BandSpec>& bands) {
    check_shape(mel.rank() == 2, "split_bands: expected rank-2 mel");
    std::vector<TensorT<S>> out;
    for (const auto& b : bands) {
        check_shape(b.end <= mel.dim(1), "split_bands: band '" + b.name + "' [" +
                                             std::to_string(b.start) + "," + std::to_string(b.end) +
                                             ") exceeds mel width " + std::to_string(mel.dim(1)));
        out.push_back(slice_cols(mel, b.start, b.end));
    }
    return out;
}

// Uniform-random temporal clip; windows longer than the input (and the
// whole-segment sentinel) return the input unchanged.
template <class S>
TensorT<S> clip_segment(const TensorT<S>& band, int64_t window, int64_t start) {
    const int64_t t = band.dim(0);
    if (window == kFullSegment || window >= t) return band;
    check_shape(start >= 0 && start + window <= t, "clip_segment: clip [" + std::to_string(start) +
                                                       "," + std::to_string(start + window) +
                                                       ") outside T=" + std::to_string(t));
    return slice_rows(band, start, start + window);
}

// Clip offsets for one training step, drawn once and reused for the real and
// fake inputs so each SD compares aligned regions.
struct ClipPlan {
    std::vector<std::vector<int64_t>> starts;  // [band][window]
};

ClipPlan make_clip_plan(int64_t frames, const DiscriminatorConfig& cfg, Rng& rng);

template <class S>
class SegmentDiscriminatorT {
public:
    SegmentDiscriminatorT() = default;
    SegmentDiscriminatorT(ParamStoreT<S>& store, const std::string& prefix,
                          const DiscriminatorConfig& cfg, int64_t in_channels, Rng& rng);

    // seg: (T',band_width) -> scores [1 map (1,T')], features [sd_layers maps]
    DiscriminatorVerdictT<S> forward(const TensorT<S>& seg) const;

private:
    std::vector<Conv1dLayerT<S>> convs_;
    Conv1dLayerT<S> score_;
    double slope_ = 0.2;
};

template <class S>
class DetailDiscriminatorT {
public:
    DetailDiscriminatorT() = default;
    DetailDiscriminatorT(ParamStoreT<S>& store, const std::string& prefix,
                         const DiscriminatorConfig& cfg, int64_t band_width, Rng& rng);

    // band: (T,band_width) -> scores [down_layers maps], features [stem? + down maps]
    DiscriminatorVerdictT<S> forward(const TensorT<S>& band) const;

    // smallest frame count the layer stack accepts
    int64_t min_frames() const { return min_frames_; }

private:
    Conv2dLayerT<S> stem_;
    std::vector<Conv2dLayerT<S>> downs_;
    std::vector<Conv2dLayerT<S>> outs_;
    int64_t band_width_ = 0;
    int64_t min_frames_ = 1;
    bool include_stem_ = true;
    double slope_ = 0.2;
};

// Symbolic shape propagation through the DD stack for input extent (f,t);
// returns false if any layer extent falls below 1.
bool dd_shape_valid(const DiscriminatorConfig& cfg, int64_t f, int64_t t);
int64_t dd_min_frames(const DiscriminatorConfig& cfg, int64_t band_width);

template <class S>
class MultiBandDiscriminatorT {
public:
    MultiBandDiscriminatorT(const DiscriminatorConfig& cfg, uint64_t seed);

    // All verdicts for one mel: per band, one SD per window on its clip and
    // one DD per window slot on the full band.
    std::vector<DiscriminatorVerdictT<S>> forward(const TensorT<S>& mel,
                                                  const ClipPlan& plan) const;

    ParamStoreT<S>& params() { return store_; }
    const ParamStoreT<S>& params() const { return store_; }
    const DiscriminatorConfig& config() const { return cfg_; }
    const SegmentDiscriminatorT<S>& sd(size_t band, size_t window) const {
        return sds_[band][window];
    }
    const DetailDiscriminatorT<S>& dd(size_t band, size_t idx) const { return dds_[band][idx]; }

private:
    DiscriminatorConfig cfg_;
    ParamStoreT<S> store_;
    std::vector<std::vector<SegmentDiscriminatorT<S>>> sds_;  // [band][window]
    std::vector<std::vector<DetailDiscriminatorT<S>>> dds_;   // [band][instance]
};

using MultiBandDiscriminator = MultiBandDiscriminatorT<double>;
using MultiBandDiscriminatorF = MultiBandDiscriminatorT<float>;

}  // namespace xis2

#endif
