#ifndef XIS2_GENERATOR_HPP
#define XIS2_GENERATOR_HPP

// FastSpeech-style acoustic generator: encoder of ConvFFT blocks, duration
// predictor + length regulator, decoder of ConvFFT blocks, and output heads
// for mel / V-UV / logF0 with a residual connection from the note pitch to
// the predicted logF0.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xis2/nn.hpp"
#include "xis2/score.hpp"
#include "xis2/tensor.hpp"

namespace xis2 {

struct ConvFFTConfig {
    int64_t d_model = 384;
    int64_t heads = 2;
    int64_t n_res_blocks = 2;
    int64_t conv_channels = 384;
    int64_t conv_kernel = 3;  // odd
    int64_t ffn_mult = 4;
    double dropout = 0.1;

    void validate() const {
        if (d_model < 1 || heads < 1 || d_model % heads != 0)
            throw ConfigError("convfft: d_model must be divisible by heads");
        if (conv_kernel % 2 == 0) throw ConfigError("convfft: conv_kernel must be odd");
        if (n_res_blocks < 0) throw ConfigError("convfft: n_res_blocks must be >= 0");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("convfft: dropout in [0,1)");
    }
};

struct GeneratorConfig {
    int64_t d_model = 384;
    int64_t heads = 2;
    int64_t encoder_blocks = 6;
    int64_t decoder_blocks = 6;
    int64_t encoder_res_blocks = 2;
    int64_t decoder_res_blocks = 5;
    int64_t mel_dim = 120;
    int64_t ffn_mult = 4;
    int64_t conv_channels = 0;  // 0 means d_model
    int64_t conv_kernel = 3;
    int64_t d_ph = 128, d_dur = 128, d_pitch = 128;
    int64_t dur_cap = 512;    // duration-embedding clamp, vocab = dur_cap+1
    int64_t midi_vocab = 128;
    int64_t max_frames = 4000;
    double dropout = 0.1;
    bool use_convfft = true;  // false drops the parallel conv path (plain FFT block)

    static GeneratorConfig paper() { return GeneratorConfig{}; }

    // small model for fast CPU training; d_model stays at 384
    static GeneratorConfig desk() {
        GeneratorConfig c;
        c.encoder_blocks = 1;
        c.decoder_blocks = 1;
        c.encoder_res_blocks = 1;
        c.decoder_res_blocks = 1;
        c.ffn_mult = 2;
        c.conv_channels = 96;
        return c;
    }

    // tiny instance for finite-difference checks
    static GeneratorConfig toy() {
        GeneratorConfig c;
        c.d_model = 12;
        c.heads = 2;
        c.encoder_blocks = 1;
        c.decoder_blocks = 1;
        c.encoder_res_blocks = 1;
        c.decoder_res_blocks = 1;
        c.ffn_mult = 2;
        c.conv_channels = 8;
        c.d_ph = c.d_dur = c.d_pitch = 4;
        c.dur_cap = 64;
        c.dropout = 0.0;
        return c;
    }

    int64_t conv_channels_or_default() const { return conv_channels > 0 ? conv_channels : d_model; }
    int64_t concat_width() const { return d_ph + d_dur + d_pitch; }
    void validate() const;
    ConvFFTConfig block_config(bool encoder) const;
};

template <class S>
struct AcousticFramesT {
    TensorT<S> mel;    // (T, mel_dim)
    TensorT<S> vuv;    // (T), probabilities in [0,1]
    TensorT<S> logf0;  // (T), log Hz

    int64_t frames() const { return mel.dim(0); }
};

// Row n of the input is repeated frames[n] times; zero drops the row.
template <class S>
TensorT<S> length_regulate(const TensorT<S>& h, const std::vector<int64_t>& frames) {
    check_shape(h.rank() == 2, "length_regulate: expected rank-2 input");
    check_shape(static_cast<int64_t>(frames.size()) == h.dim(0),
                "length_regulate: " + std::to_string(frames.size()) + " durations for " +
                    std::to_string(h.dim(0)) + " rows");
    std::vector<int64_t> idx;
    for (size_t n = 0; n < frames.size(); ++n) {
        if (frames[n] < 0)
            throw DimensionError("length_regulate: negative duration at " + std::to_string(n));
        for (int64_t r = 0; r < frames[n]; ++r) idx.push_back(static_cast<int64_t>(n));
    }
    if (idx.empty())
        throw DimensionError("length_regulate: all durations zero, cannot emit zero frames");
    return gather_rows(h, idx);
}

// log(frames+1) target encoding and its inference-time inverse
template <class S>
S encode_duration(int64_t frames) {
    return static_cast<S>(std::log(static_cast<double>(frames) + 1.0));
}
inline int64_t decode_duration(double log_pred) {
    return std::max<int64_t>(1, static_cast<int64_t>(std::llround(std::exp(log_pred) - 1.0)));
}

// ConvFFT block: multi-head self-attention in parallel with a stack of
// residual convolutional units over the same input; the two paths are summed
// with the residual and normalized, then a position-wise FFN with its own
// residual + norm.
template <class S>
class ConvFFTBlockT {
public:
    ConvFFTBlockT(ParamStoreT<S>& store, const std::string& prefix, const ConvFFTConfig& cfg,
                  Rng& rng);

    TensorT<S> forward(const TensorT<S>& x, bool training = false, Rng* rng = nullptr) const;

    const ConvFFTConfig& config() const { return cfg_; }

private:
    ConvFFTConfig cfg_;
    TensorT<S> wq_, wk_, wv_, wo_;
    struct ResConvUnit {
        Conv1dLayerT<S> c1, c2;
    };
    std::vector<ResConvUnit> res_units_;
    LinearT<S> ffn1_, ffn2_;
    LayerNormLayerT<S> norm1_, norm2_;
};

template <class S>
class DurationPredictorT {
public:
    DurationPredictorT() = default;
    DurationPredictorT(ParamStoreT<S>& store, const std::string& prefix, int64_t d_model,
                       int64_t kernel, double dropout, Rng& rng);

    // (N,d) -> (N,) predicted log(frames+1)
    TensorT<S> forward(const TensorT<S>& h, bool training = false, Rng* rng = nullptr) const;

private:
    struct Unit {
        Conv1dLayerT<S> conv;
        LayerNormLayerT<S> norm;
    };
    std::vector<Unit> units_;
    LinearT<S> head_;
    double dropout_ = 0.1;
};

template <class S>
class GeneratorT {
public:
    struct Output {
        AcousticFramesT<S> frames;
        TensorT<S> log_durations;          // (N,) predicted log(frames+1)
        std::vector<int64_t> frames_used;  // expansion actually applied
    };

    GeneratorT(const GeneratorConfig& cfg, int64_t phoneme_vocab, uint64_t seed);

    // pipeline stages, composable for tests
    TensorT<S> embed(const PhonemeSequence& seq) const;
    TensorT<S> encode(const TensorT<S>& concat_embeddings, bool training = false,
                      Rng* rng = nullptr) const;
    TensorT<S> predict_durations(const TensorT<S>& h, bool training = false,
                                 Rng* rng = nullptr) const;
    AcousticFramesT<S> decode(const TensorT<S>& expanded, const TensorT<S>& frame_pitch_logf0,
                              bool training = false, Rng* rng = nullptr) const;

    // frame-level note logF0 expanded by the given durations, as an untracked input
    TensorT<S> frame_pitch(const PhonemeSequence& seq, const std::vector<int64_t>& frames) const;

    // teacher_frames non-null selects teacher-forced expansion;
    // otherwise durations come from the predictor (free running)
    Output forward(const PhonemeSequence& seq, const std::vector<int64_t>* teacher_frames,
                   bool training = false, Rng* rng = nullptr) const;

    AcousticFramesT<S> generate(const MusicalScore& score, const G2PTable& table,
                                const std::vector<int64_t>* teacher_frames = nullptr) const;

    ParamStoreT<S>& params() { return store_; }
    const ParamStoreT<S>& params() const { return store_; }
    const GeneratorConfig& config() const { return cfg_; }
    const std::vector<ConvFFTBlockT<S>>& encoder_blocks() const { return encoder_; }
    const std::vector<ConvFFTBlockT<S>>& decoder_blocks() const { return decoder_; }

private:
    GeneratorConfig cfg_;
    ParamStoreT<S> store_;
    EmbeddingT<S> emb_ph_, emb_dur_, emb_pitch_;
    LinearT<S> input_proj_;
    std::vector<ConvFFTBlockT<S>> encoder_;
    DurationPredictorT<S> dur_pred_;
    std::vector<ConvFFTBlockT<S>> decoder_;
    LinearT<S> head_mel_, head_vuv_, head_logf0_;
};

using Generator = GeneratorT<double>;
using GeneratorF = GeneratorT<float>;

}  // namespace xis2

#endif
