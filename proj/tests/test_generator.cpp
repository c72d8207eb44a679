#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "xis2/generator.hpp"
#include "xis2/losses.hpp"
#include "xis2/trainer.hpp"

using namespace xis2;

namespace {

GeneratorConfig toy() { return GeneratorConfig::toy(); }

PhonemeSequence toy_seq() {
    PhonemeSequence seq;
    seq.phoneme_ids = {6, 1};
    seq.note_midi_per_phoneme = {69, 69};
    seq.note_frames_per_phoneme = {6, 6};
    return seq;
}

template <class S>
void zero_all(ParamStoreT<S>& store, const std::string& substring) {
    for (auto& p : store.params())
        if (p.name.find(substring) != std::string::npos)
            std::fill(p.tensor.data().begin(), p.tensor.data().end(), S(0));
}

}  // namespace

TEST_CASE("convfft block preserves shape for a range of lengths") {
    ParamStoreT<double> store;
    Rng rng(5);
    ConvFFTConfig cfg;
    cfg.d_model = 12;
    cfg.heads = 2;
    cfg.n_res_blocks = 2;
    cfg.conv_channels = 8;
    cfg.conv_kernel = 3;
    cfg.ffn_mult = 2;
    ConvFFTBlockT<double> blk(store, "blk", cfg, rng);
    for (int64_t t : {1, 2, 3, 17, 64}) {
        Tensor x = Tensor::randn({t, 12}, rng);
        CHECK(blk.forward(x).shape() == Shape{t, 12});
    }
    Tensor bad = Tensor::zeros({4, 8});
    CHECK_THROWS_AS(blk.forward(bad), DimensionError);
}

TEST_CASE("convfft with zero weights reduces to the layer-norm chain") {
    ParamStoreT<double> store;
    Rng rng(5);
    ConvFFTConfig cfg;
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.n_res_blocks = 1;
    cfg.conv_channels = 8;
    cfg.ffn_mult = 2;
    ConvFFTBlockT<double> blk(store, "blk", cfg, rng);
    for (auto& p : store.params())
        if (p.name.find(".norm") == std::string::npos)
            std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    Tensor x = Tensor::randn({5, 8}, rng);
    Tensor out = blk.forward(x);
    // residual paths carry the input: MHSA contributes 0, the conv unit echoes
    // x, so the block is LayerNorm(LayerNorm(2x) + 0), and LayerNorm is
    // scale-invariant
    Tensor gamma = Tensor::filled({8}, 1.0), beta = Tensor::zeros({8});
    Tensor expect = layer_norm(layer_norm(mul(x, 2.0), gamma, beta), gamma, beta);
    for (size_t i = 0; i < out.data().size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-9));
}

TEST_CASE("convfft with zero residual blocks equals an independent FFT block") {
    // independently coded plain FFT block: LN(x + MHSA(x)) then LN(h + FFN(h))
    ParamStoreT<double> store;
    Rng rng(9);
    ConvFFTConfig cfg;
    cfg.d_model = 12;
    cfg.heads = 2;
    cfg.n_res_blocks = 0;
    cfg.conv_channels = 12;
    cfg.ffn_mult = 2;
    ConvFFTBlockT<double> blk(store, "blk", cfg, rng);

    Tensor x = Tensor::randn({7, 12}, rng);
    Tensor out = blk.forward(x);

    auto P = [&](const std::string& n) { return store.find("blk" + n); };
    Tensor attn = multi_head_self_attention(x, cfg.heads, P(".mhsa.wq"), P(".mhsa.wk"),
                                            P(".mhsa.wv"), P(".mhsa.wo"));
    Tensor h = layer_norm(add(x, attn), P(".norm1.gamma"), P(".norm1.beta"));
    Tensor f = add_rowwise(
        matmul(relu(add_rowwise(matmul(h, P(".ffn.l1.w")), P(".ffn.l1.b"))), P(".ffn.l2.w")),
        P(".ffn.l2.b"));
    Tensor expect = layer_norm(add(h, f), P(".norm2.gamma"), P(".norm2.beta"));
    for (size_t i = 0; i < out.data().size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-10));
}

TEST_CASE("length regulator laws") {
    Rng rng(2);
    Tensor h = Tensor::randn({3, 4}, rng);

    Tensor same = length_regulate(h, {1, 1, 1});
    CHECK(same.data() == h.data());

    Tensor ex = length_regulate(h, {2, 0, 3});
    REQUIRE(ex.shape() == Shape{5, 4});
    for (int j = 0; j < 4; ++j) {
        CHECK(ex.data()[size_t(j)] == h.data()[size_t(j)]);
        CHECK(ex.data()[size_t(4 + j)] == h.data()[size_t(j)]);
        for (int r = 2; r < 5; ++r) CHECK(ex.data()[size_t(r * 4 + j)] == h.data()[size_t(8 + j)]);
    }

    CHECK_THROWS_AS(length_regulate(h, {0, 0, 0}), DimensionError);
    CHECK_THROWS_AS(length_regulate(h, {1, 1}), DimensionError);

    // frame-sum law on random duration vectors
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        Rng r(seed);
        std::vector<int64_t> frames(3);
        int64_t total = 0;
        for (auto& f : frames) {
            f = r.uniform_int(0, 5);
            total += f;
        }
        if (total == 0) {
            CHECK_THROWS_AS(length_regulate(h, frames), DimensionError);
        } else {
            CHECK(length_regulate(h, frames).dim(0) == total);
        }
    }
}

TEST_CASE("length regulator gradient is frames[n] per row") {
    Rng rng(4);
    Tensor h = Tensor::randn({3, 2}, rng);
    h.set_requires_grad(true);
    sum(length_regulate(h, {2, 0, 3})).backward();
    const auto& g = h.grad();
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 2.0);
    CHECK(g[2] == 0.0);
    CHECK(g[3] == 0.0);
    CHECK(g[4] == 3.0);
    CHECK(g[5] == 3.0);
    auto rep = grad_check<double>([&] { return sum(square(length_regulate(h, {2, 0, 3}))); }, {h});
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("duration encoding round trip") {
    for (int64_t f : {1, 2, 7, 40, 200}) {
        CHECK(decode_duration(encode_duration<double>(f)) == f);
    }
    CHECK(encode_duration<double>(40) == doctest::Approx(std::log(41.0)));
}

TEST_CASE("duration predictor output shape and zero-weight bias law") {
    GeneratorT<double> gen(toy(), 13, 7);
    Rng rng(3);
    for (int64_t n : {1, 2, 5}) {
        Tensor h = Tensor::randn({n, toy().d_model}, rng);
        CHECK(gen.predict_durations(h).shape() == Shape{n});
    }
    // zero weights: every output equals the head bias
    zero_all(gen.params(), "duration_predictor");
    for (auto& p : gen.params().params())
        if (p.name.find("duration_predictor") != std::string::npos &&
            p.name.find("head.b") != std::string::npos)
            p.tensor.data()[0] = 1.25;
        else if (p.name.find("duration_predictor") != std::string::npos &&
                 p.name.find("norm") != std::string::npos &&
                 p.name.find("gamma") != std::string::npos)
            std::fill(p.tensor.data().begin(), p.tensor.data().end(), 1.0);
    Tensor h = Tensor::randn({4, toy().d_model}, rng);
    Tensor out = gen.predict_durations(h);
    for (double v : out.data()) CHECK(v == doctest::Approx(1.25).epsilon(1e-9));
}

TEST_CASE("decode heads: shapes, sigmoid range, pitch residual identity") {
    GeneratorConfig cfg = toy();
    GeneratorT<double> gen(cfg, 13, 7);
    Rng rng(8);
    for (int64_t t : {1, 5, 12}) {
        Tensor expanded = Tensor::randn({t, cfg.d_model}, rng);
        Tensor pitch = Tensor::randn({t}, rng);
        AcousticFramesT<double> out = gen.decode(expanded, pitch);
        CHECK(out.mel.shape() == Shape{t, cfg.mel_dim});
        CHECK(out.vuv.shape() == Shape{t});
        CHECK(out.logf0.shape() == Shape{t});
        for (double v : out.vuv.data()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    Tensor expanded = Tensor::randn({4, cfg.d_model}, rng);
    Tensor wrong = Tensor::randn({5}, rng);
    CHECK_THROWS_AS(gen.decode(expanded, wrong), DimensionError);

    // zero logf0 head: predicted logF0 equals the note logF0 exactly
    zero_all(gen.params(), "head_logf0");
    Tensor pitch = Tensor::randn({4}, rng);
    AcousticFramesT<double> out = gen.decode(expanded, pitch);
    CHECK(out.logf0.data() == pitch.data());
}

TEST_CASE("generate: teacher-forced length law, determinism, stage composition") {
    GeneratorConfig cfg = toy();
    G2PTable table = G2PTable::builtin_demo();
    GeneratorT<double> gen(cfg, table.vocab(), 11);
    MusicalScore score;
    score.syllables = {{"la", 69, 80}};
    PhonemeSequence seq = g2p_expand(score, table);
    std::vector<int64_t> teacher = {40, 40};

    AcousticFramesT<double> out = gen.generate(score, table, &teacher);
    CHECK(out.frames() == 80);

    auto out2 = gen.generate(score, table, &teacher);
    CHECK(out.mel.data() == out2.mel.data());

    // manual composition of the stage ops is bitwise identical
    Tensor emb = gen.embed(seq);
    Tensor h = gen.encode(emb);
    Tensor expanded = length_regulate(h, teacher);
    AcousticFramesT<double> manual = gen.decode(expanded, gen.frame_pitch(seq, teacher));
    CHECK(manual.mel.data() == out.mel.data());
    CHECK(manual.vuv.data() == out.vuv.data());
    CHECK(manual.logf0.data() == out.logf0.data());

    // free-running is deterministic too
    auto free1 = gen.generate(score, table);
    auto free2 = gen.generate(score, table);
    CHECK(free1.mel.data() == free2.mel.data());
}

TEST_CASE("encoder raises on wrong input width") {
    GeneratorT<double> gen(toy(), 13, 7);
    Tensor bad = Tensor::zeros({3, toy().concat_width() + 1});
    CHECK_THROWS_AS(gen.encode(bad), DimensionError);
}

TEST_CASE("generator config validation") {
    GeneratorConfig c = toy();
    c.d_model = 13;  // not divisible by heads=2
    CHECK_THROWS_AS(GeneratorT<double>(c, 13, 7), ConfigError);
    GeneratorConfig k = toy();
    k.conv_kernel = 4;
    CHECK_THROWS_AS(GeneratorT<double>(k, 13, 7), ConfigError);
}

TEST_CASE("end-to-end acoustic-loss gradient check on a 2-phoneme toy") {
    GeneratorConfig cfg = toy();
    G2PTable table = G2PTable::builtin_demo();
    GeneratorT<double> gen(cfg, table.vocab(), 3);
    PhonemeSequence seq = toy_seq();
    std::vector<int64_t> teacher = {3, 3};

    Rng trng(99);
    AcousticFramesT<double> target;
    target.mel = Tensor::randn({6, cfg.mel_dim}, trng);
    target.vuv = Tensor::from({6}, {1, 1, 1, 0, 0, 1});
    target.logf0 = Tensor::randn({6}, trng);
    Tensor tdur = Tensor::from({2}, {encode_duration<double>(3), encode_duration<double>(3)});

    LossWeights w;
    std::vector<Tensor> leaves;
    for (auto& p : gen.params().params()) leaves.push_back(p.tensor);
    auto loss_fn = [&] {
        auto out = gen.forward(seq, &teacher, false, nullptr);
        auto terms = acoustic_loss(out.frames, out.log_durations, target, tdur, w);
        return terms.total;
    };
    auto rep = grad_check<double>(loss_fn, leaves, 1e-5);
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.elements_checked == gen.params().total_elements());
}
