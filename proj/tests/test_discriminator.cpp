#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "xis2/discriminator.hpp"

using namespace xis2;

namespace {

DiscriminatorConfig toy() { return DiscriminatorConfig::toy(); }

template <class S>
void zero_params(ParamStoreT<S>& store) {
    for (auto& p : store.params())
        std::fill(p.tensor.data().begin(), p.tensor.data().end(), S(0));
}

}  // namespace

TEST_CASE("split_bands slices the documented ranges") {
    Tensor mel = Tensor::uninit({3, 120});
    for (int t = 0; t < 3; ++t)
        for (int b = 0; b < 120; ++b) mel.data()[size_t(t) * 120 + b] = b;
    auto bands = split_bands(mel, DiscriminatorConfig{}.bands);
    REQUIRE(bands.size() == 3);
    for (const auto& band : bands) CHECK(band.shape() == Shape{3, 60});
    CHECK(bands[0].data()[0] == 0.0);
    CHECK(bands[0].data()[59] == 59.0);
    CHECK(bands[1].data()[0] == 30.0);
    CHECK(bands[1].data()[59] == 89.0);
    CHECK(bands[2].data()[0] == 60.0);
    CHECK(bands[2].data()[59] == 119.0);

    Tensor z = Tensor::zeros({2, 120});
    auto zb = split_bands(z, DiscriminatorConfig{}.bands);
    for (const auto& band : zb)
        for (double v : band.data()) CHECK(v == 0.0);

    Tensor narrow = Tensor::zeros({2, 100});
    CHECK_THROWS_AS(split_bands(narrow, DiscriminatorConfig{}.bands), DimensionError);
}

TEST_CASE("per-bin band coverage matches brute-force membership") {
    const auto bands = DiscriminatorConfig{}.bands;
    for (int b = 0; b < 120; ++b) {
        int count = 0;
        for (const auto& band : bands)
            if (b >= band.start && b < band.end) ++count;
        const int expect = (b < 30 || b >= 90) ? 1 : 2;
        CHECK(count == expect);
        CHECK(count >= 1);  // no bin uncovered
    }
}

TEST_CASE("clip_segment") {
    Rng rng(1);
    Tensor band = Tensor::randn({1000, 60}, rng);
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng r(seed);
        const int64_t start = r.uniform_int(0, 800);
        Tensor seg = clip_segment(band, 200, start);
        CHECK(seg.shape() == Shape{200, 60});
        CHECK(seg.data()[0] == band.data()[size_t(start) * 60]);
    }
    Tensor whole = clip_segment(band, kFullSegment, 0);
    CHECK(whole.data() == band.data());
    Tensor small = Tensor::randn({150, 60}, rng);
    Tensor deg = clip_segment(small, 200, 0);
    CHECK(deg.shape() == Shape{150, 60});
    CHECK(deg.data() == small.data());
}

TEST_CASE("clip plans are deterministic and within range") {
    DiscriminatorConfig cfg;
    Rng r1(5), r2(5);
    ClipPlan a = make_clip_plan(900, cfg, r1);
    ClipPlan b = make_clip_plan(900, cfg, r2);
    REQUIRE(a.starts.size() == 3);
    for (size_t band = 0; band < 3; ++band) {
        REQUIRE(a.starts[band].size() == cfg.windows.size());
        CHECK(a.starts[band] == b.starts[band]);
        for (size_t w = 0; w < cfg.windows.size(); ++w) {
            const int64_t win = cfg.windows[w];
            if (win != kFullSegment && win < 900)
                CHECK(a.starts[band][w] <= 900 - win);
            else
                CHECK(a.starts[band][w] == 0);
        }
    }
}

TEST_CASE("segment discriminator structure") {
    ParamStoreT<double> store;
    Rng rng(3);
    DiscriminatorConfig cfg = toy();
    SegmentDiscriminatorT<double> sd(store, "sd", cfg, 60, rng);
    Rng xr(9);
    for (int64_t t : {1, 7, 200}) {
        Tensor seg = Tensor::randn({t, 60}, xr);
        auto v = sd.forward(seg);
        REQUIRE(v.scores.size() == 1);
        CHECK(v.scores[0].shape() == Shape{1, t});  // same padding preserves length
        CHECK(v.features.size() == size_t(cfg.sd_layers));
        for (const auto& f : v.features) CHECK(f.shape() == Shape{cfg.sd_channels, t});
    }
    zero_params(store);
    Tensor seg = Tensor::randn({5, 60}, xr);
    auto v = sd.forward(seg);
    for (double s : v.scores[0].data()) CHECK(s == 0.0);
}

TEST_CASE("paper segment discriminator has 10 layers of 128 channels") {
    ParamStoreT<double> store;
    Rng rng(3);
    DiscriminatorConfig cfg;  // paper defaults
    SegmentDiscriminatorT<double> sd(store, "sd", cfg, 60, rng);
    Rng xr(9);
    Tensor seg = Tensor::randn({13, 60}, xr);
    auto v = sd.forward(seg);
    CHECK(v.features.size() == 10);
    for (const auto& f : v.features) CHECK(f.shape() == Shape{128, 13});
}

TEST_CASE("detail discriminator structure and score/feature counts") {
    ParamStoreT<double> store;
    Rng rng(4);
    DiscriminatorConfig cfg = toy();
    DetailDiscriminatorT<double> dd(store, "dd", cfg, 60, rng);
    Rng xr(10);
    Tensor band = Tensor::randn({64, 60}, xr);
    auto v = dd.forward(band);
    CHECK(v.scores.size() == 5);
    CHECK(v.features.size() == 6);  // stem + 5 downsampling maps

    // successive down layers roughly halve both axes
    int64_t f = 60, t = 64;
    auto halve = [](int64_t e) { return (e - 1) / 2 + 1; };
    for (size_t i = 1; i < v.features.size(); ++i) {
        f = halve(f);
        t = halve(t);
        CHECK(v.features[i].dim(1) == f);
        CHECK(v.features[i].dim(2) == t);
    }

    zero_params(store);
    auto vz = dd.forward(band);
    for (const auto& s : vz.scores)
        for (double x : s.data()) CHECK(x == 0.0);
}

TEST_CASE("detail discriminator stem-feature flag") {
    ParamStoreT<double> store;
    Rng rng(4);
    DiscriminatorConfig cfg = toy();
    cfg.dd_feature_include_stem = false;
    DetailDiscriminatorT<double> dd(store, "dd", cfg, 60, rng);
    Rng xr(10);
    Tensor band = Tensor::randn({32, 60}, xr);
    CHECK(dd.forward(band).features.size() == 5);
}

TEST_CASE("dd shape propagation validates and names the minimum length") {
    DiscriminatorConfig cfg = toy();
    CHECK(dd_min_frames(cfg, 60) == 1);  // generous padding keeps all lengths valid

    DiscriminatorConfig tight = toy();
    tight.dd_down_padding = {2, 0};
    tight.dd_out_padding = {0, 0};
    const int64_t min_t = dd_min_frames(tight, 60);
    CHECK(min_t > 1);
    CHECK(dd_shape_valid(tight, 60, min_t));
    CHECK_FALSE(dd_shape_valid(tight, 60, min_t - 1));

    ParamStoreT<double> store;
    Rng rng(4);
    DetailDiscriminatorT<double> dd(store, "dd", tight, 60, rng);
    Rng xr(2);
    Tensor shorty = Tensor::randn({min_t - 1, 60}, xr);
    CHECK_THROWS_WITH_AS(dd.forward(shorty), doctest::Contains(std::to_string(min_t).c_str()),
                         DimensionError);
}

TEST_CASE("multiband forward: verdict count, origins, determinism") {
    DiscriminatorConfig cfg = toy();
    MultiBandDiscriminatorT<double> disc(cfg, 5);
    Rng xr(6);
    Tensor mel = Tensor::randn({250, 120}, xr);
    Rng pr(7);
    ClipPlan plan = make_clip_plan(250, cfg, pr);
    auto verdicts = disc.forward(mel, plan);
    CHECK(verdicts.size() == 30);

    // origins partition into {low,mid,high} x {SD x5, DD x5}
    std::map<std::pair<std::string, int>, int> counts;
    for (const auto& v : verdicts)
        counts[{v.origin.band, v.origin.kind == DiscKind::SD ? 0 : 1}]++;
    for (const std::string& band : {"low", "mid", "high"}) {
        CHECK(counts[{band, 0}] == 5);
        CHECK(counts[{band, 1}] == 5);
    }

    Rng pr2(7);
    ClipPlan plan2 = make_clip_plan(250, cfg, pr2);
    for (size_t b = 0; b < 3; ++b) CHECK(plan.starts[b] == plan2.starts[b]);
    auto verdicts2 = disc.forward(mel, plan2);
    for (size_t i = 0; i < verdicts.size(); ++i)
        CHECK(verdicts[i].scores[0].data() == verdicts2[i].scores[0].data());

    Tensor bad = Tensor::zeros({10, 100});
    CHECK_THROWS_AS(disc.forward(bad, plan), DimensionError);
}

TEST_CASE("ablation flags change the verdict mix") {
    DiscriminatorConfig sd_only = toy();
    sd_only.use_dd = false;
    MultiBandDiscriminatorT<double> d1(sd_only, 5);
    Rng xr(6);
    Tensor mel = Tensor::randn({64, 120}, xr);
    Rng pr(7);
    ClipPlan plan = make_clip_plan(64, sd_only, pr);
    auto v1 = d1.forward(mel, plan);
    CHECK(v1.size() == 15);
    for (const auto& v : v1) CHECK(v.origin.kind == DiscKind::SD);

    DiscriminatorConfig dd_only = toy();
    dd_only.use_sd = false;
    MultiBandDiscriminatorT<double> d2(dd_only, 5);
    auto v2 = d2.forward(mel, plan);
    CHECK(v2.size() == 15);
    for (const auto& v : v2) CHECK(v.origin.kind == DiscKind::DD);
}

TEST_CASE("every verdict is finite and gradients reach the input mel") {
    DiscriminatorConfig cfg = toy();
    MultiBandDiscriminatorT<double> disc(cfg, 5);
    Rng xr(8);
    Tensor mel = Tensor::randn({48, 120}, xr);
    mel.set_requires_grad(true);
    Rng pr(3);
    ClipPlan plan = make_clip_plan(48, cfg, pr);
    auto verdicts = disc.forward(mel, plan);
    for (size_t i = 0; i < verdicts.size(); ++i) {
        for (const auto& s : verdicts[i].scores)
            for (double v : s.data()) CHECK(std::isfinite(v));
        for (const auto& f : verdicts[i].features)
            for (double v : f.data()) CHECK(std::isfinite(v));

        mel.zero_grad();
        Tensor probe = TensorT<double>::scalar(0.0);
        for (const auto& s : verdicts[i].scores) probe = add(probe, sum(s));
        probe.backward();
        double gnorm = 0.0;
        for (double g : mel.grad_or_zeros()) gnorm += std::abs(g);
        CAPTURE(i);
        CHECK(gnorm > 0.0);
    }
}

TEST_CASE("discriminator config validation") {
    DiscriminatorConfig bad;
    bad.windows = {400, 200, kFullSegment};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    DiscriminatorConfig bad2;
    bad2.windows = {kFullSegment, 200};
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
    DiscriminatorConfig bad3;
    bad3.bands[0].end = 130;
    CHECK_THROWS_AS(bad3.validate(), ConfigError);
    DiscriminatorConfig bad4;
    bad4.sd_kernel = 4;
    CHECK_THROWS_AS(bad4.validate(), ConfigError);
}
