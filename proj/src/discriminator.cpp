#include "xis2/discriminator.hpp"

namespace xis2 {

void DiscriminatorConfig::validate() const {
    if (bands.empty()) throw ConfigError("discriminator: no bands configured");
    for (const auto& b : bands)
        if (b.start < 0 || b.end <= b.start || b.end > mel_dim)
            throw ConfigError("discriminator: bad band '" + b.name + "'");
    if (windows.empty()) throw ConfigError("discriminator: empty window list");
    int64_t prev = 0;
    for (size_t i = 0; i < windows.size(); ++i) {
        const int64_t w = windows[i];
        if (w == kFullSegment) {
            if (i + 1 != windows.size())
                throw ConfigError("discriminator: whole-segment sentinel must come last");
        } else {
            if (w < 1) throw ConfigError("discriminator: window must be >= 1");
            if (w <= prev) throw ConfigError("discriminator: windows must be strictly increasing");
            prev = w;
        }
    }
    if (sd_layers < 1 || sd_channels < 1 || sd_kernel < 1 || sd_kernel % 2 == 0)
        throw ConfigError("discriminator: bad SD geometry (kernel must be odd)");
    if (dd_stem_channels < 1 || dd_down_layers < 1)
        throw ConfigError("discriminator: bad DD geometry");
}

ClipPlan make_clip_plan(int64_t frames, const DiscriminatorConfig& cfg, Rng& rng) {
    ClipPlan plan;
    plan.starts.resize(cfg.bands.size());
    for (size_t b = 0; b < cfg.bands.size(); ++b) {
        for (int64_t w : cfg.windows) {
            int64_t start = 0;
            if (w != kFullSegment && w < frames) start = rng.uniform_int(0, frames - w);
            plan.starts[b].push_back(start);
        }
    }
    return plan;
}

template <class S>
SegmentDiscriminatorT<S>::SegmentDiscriminatorT(ParamStoreT<S>& store, const std::string& prefix,
                                                const DiscriminatorConfig& cfg,
                                                int64_t in_channels, Rng& rng)
    : slope_(cfg.leaky_slope) {
    const int64_t pad = cfg.sd_kernel / 2;
    for (int64_t l = 0; l < cfg.sd_layers; ++l) {
        const int64_t cin = l == 0 ? in_channels : cfg.sd_channels;
        convs_.emplace_back(store, prefix + ".conv" + std::to_string(l), cin, cfg.sd_channels,
                            cfg.sd_kernel, rng, 1, pad);
    }
    score_ = Conv1dLayerT<S>(store, prefix + ".score", cfg.sd_channels, 1, 1, rng, 1, 0);
}

template <class S>
DiscriminatorVerdictT<S> SegmentDiscriminatorT<S>::forward(const TensorT<S>& seg) const {
    DiscriminatorVerdictT<S> v;
    TensorT<S> h = transpose(seg);  // (band_width, T')
    for (const auto& conv : convs_) {
        h = leaky_relu(conv.forward(h), static_cast<S>(slope_));
        v.features.push_back(h);
    }
    v.scores.push_back(score_.forward(h));  // (1, T'), same length as input
    return v;
}

namespace {

struct DdExtents {
    bool valid = false;
    std::vector<std::pair<int64_t, int64_t>> per_layer;
};

DdExtents dd_propagate(const DiscriminatorConfig& cfg, int64_t f, int64_t t) {
    DdExtents e;
    auto out1 = [](int64_t in, int64_t k, int64_t s, int64_t d, int64_t p) {
        return conv_out_extent(in, k, s, p, d);
    };
    // stem (3,3) stride 1 dilation 1 padding (1,1)
    f = out1(f, 3, 1, 1, 1);
    t = out1(t, 3, 1, 1, 1);
    if (f < 1 || t < 1) return e;
    e.per_layer.emplace_back(f, t);
    for (int64_t i = 0; i < cfg.dd_down_layers; ++i) {
        f = out1(f, cfg.dd_down_kernel.first, cfg.dd_down_stride.first,
                 cfg.dd_down_dilation.first, cfg.dd_down_padding.first);
        t = out1(t, cfg.dd_down_kernel.second, cfg.dd_down_stride.second,
                 cfg.dd_down_dilation.second, cfg.dd_down_padding.second);
        if (f < 1 || t < 1) return e;
        e.per_layer.emplace_back(f, t);
        const int64_t fo = out1(f, cfg.dd_out_kernel.first, 1, 1, cfg.dd_out_padding.first);
        const int64_t to = out1(t, cfg.dd_out_kernel.second, 1, 1, cfg.dd_out_padding.second);
        if (fo < 1 || to < 1) return e;
        e.per_layer.emplace_back(fo, to);
    }
    e.valid = true;
    return e;
}

}  // namespace

bool dd_shape_valid(const DiscriminatorConfig& cfg, int64_t f, int64_t t) {
    return dd_propagate(cfg, f, t).valid;
}

int64_t dd_min_frames(const DiscriminatorConfig& cfg, int64_t band_width) {
    for (int64_t t = 1; t <= 1 << 16; ++t)
        if (dd_shape_valid(cfg, band_width, t)) return t;
    throw ConfigError("detail discriminator: no viable input length below 65536 frames");
}

template <class S>
DetailDiscriminatorT<S>::DetailDiscriminatorT(ParamStoreT<S>& store, const std::string& prefix,
                                              const DiscriminatorConfig& cfg, int64_t band_width,
                                              Rng& rng)
    : band_width_(band_width),
      include_stem_(cfg.dd_feature_include_stem),
      slope_(cfg.leaky_slope) {
    // fail fast if the configured stack cannot accept any input
    min_frames_ = dd_min_frames(cfg, band_width);
    stem_ = Conv2dLayerT<S>(store, prefix + ".stem", 1, cfg.dd_stem_channels, {3, 3}, rng, {1, 1},
                            {1, 1}, {1, 1});
    for (int64_t i = 0; i < cfg.dd_down_layers; ++i) {
        downs_.emplace_back(store, prefix + ".down" + std::to_string(i), cfg.dd_stem_channels,
                            cfg.dd_stem_channels, cfg.dd_down_kernel, rng, cfg.dd_down_stride,
                            cfg.dd_down_dilation, cfg.dd_down_padding);
        outs_.emplace_back(store, prefix + ".out" + std::to_string(i), cfg.dd_stem_channels, 1,
                           cfg.dd_out_kernel, rng, std::pair<int64_t, int64_t>{1, 1},
                           std::pair<int64_t, int64_t>{1, 1}, cfg.dd_out_padding);
    }
}

template <class S>
DiscriminatorVerdictT<S> DetailDiscriminatorT<S>::forward(const TensorT<S>& band) const {
    check_shape(band.rank() == 2 && band.dim(1) == band_width_,
                "detail discriminator: expected (T," + std::to_string(band_width_) + "), got " +
                    shape_str(band.shape()));
    if (band.dim(0) < min_frames_)
        throw DimensionError("detail discriminator: input too short, T=" +
                             std::to_string(band.dim(0)) + " < minimum " +
                             std::to_string(min_frames_));
    DiscriminatorVerdictT<S> v;
    // (T,F) -> (1,F,T)
    TensorT<S> x = reshape(transpose(band), {1, band_width_, band.dim(0)});
    TensorT<S> h = leaky_relu(stem_.forward(x), static_cast<S>(slope_));
    if (include_stem_) v.features.push_back(h);
    for (size_t i = 0; i < downs_.size(); ++i) {
        h = leaky_relu(downs_[i].forward(h), static_cast<S>(slope_));
        v.features.push_back(h);
        v.scores.push_back(outs_[i].forward(h));
    }
    return v;
}

template <class S>
MultiBandDiscriminatorT<S>::MultiBandDiscriminatorT(const DiscriminatorConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 2));
    for (size_t b = 0; b < cfg_.bands.size(); ++b) {
        const auto& band = cfg_.bands[b];
        std::vector<SegmentDiscriminatorT<S>> sds;
        std::vector<DetailDiscriminatorT<S>> dds;
        if (cfg_.use_sd) {
            for (size_t w = 0; w < cfg_.windows.size(); ++w) {
                const std::string wname = cfg_.windows[w] == kFullSegment
                                              ? std::string("full")
                                              : std::to_string(cfg_.windows[w]);
                sds.emplace_back(store_, "band_" + band.name + ".sd_" + wname, cfg_, band.width(),
                                 rng);
            }
        }
        if (cfg_.use_dd) {
            for (size_t i = 0; i < cfg_.windows.size(); ++i)
                dds.emplace_back(store_, "band_" + band.name + ".dd_" + std::to_string(i), cfg_,
                                 band.width(), rng);
        }
        sds_.push_back(std::move(sds));
        dds_.push_back(std::move(dds));
    }
}

template <class S>
std::vector<DiscriminatorVerdictT<S>> MultiBandDiscriminatorT<S>::forward(
    const TensorT<S>& mel, const ClipPlan& plan) const {
    check_shape(mel.rank() == 2 && mel.dim(1) == cfg_.mel_dim,
                "multiband: expected (T," + std::to_string(cfg_.mel_dim) + "), got " +
                    shape_str(mel.shape()));
    check_shape(plan.starts.size() == cfg_.bands.size(), "multiband: clip plan band mismatch");
    std::vector<DiscriminatorVerdictT<S>> verdicts;
    std::vector<TensorT<S>> bands = split_bands(mel, cfg_.bands);
    for (size_t b = 0; b < cfg_.bands.size(); ++b) {
        if (cfg_.use_sd) {
            for (size_t w = 0; w < cfg_.windows.size(); ++w) {
                const int64_t start = plan.starts[b][w];
                TensorT<S> seg = clip_segment(bands[b], cfg_.windows[w], start);
                DiscriminatorVerdictT<S> v = sds_[b][w].forward(seg);
                v.origin = {cfg_.bands[b].name, DiscKind::SD, cfg_.windows[w],
                            static_cast<int64_t>(w), start};
                verdicts.push_back(std::move(v));
            }
        }
        if (cfg_.use_dd) {
            for (size_t i = 0; i < dds_[b].size(); ++i) {
                DiscriminatorVerdictT<S> v = dds_[b][i].forward(bands[b]);
                v.origin = {cfg_.bands[b].name, DiscKind::DD, kFullSegment,
                            static_cast<int64_t>(i), 0};
                verdicts.push_back(std::move(v));
            }
        }
    }
    return verdicts;
}

template class SegmentDiscriminatorT<float>;
template class SegmentDiscriminatorT<double>;
template class DetailDiscriminatorT<float>;
template class DetailDiscriminatorT<double>;
template class MultiBandDiscriminatorT<float>;
template class MultiBandDiscriminatorT<double>;

}  // namespace xis2
