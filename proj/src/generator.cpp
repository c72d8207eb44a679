#include "xis2/generator.hpp"

namespace xis2 {

void GeneratorConfig::validate() const {
    if (d_model < 1 || encoder_blocks < 1 || decoder_blocks < 1 || mel_dim < 1)
        throw ConfigError("generator config: nonpositive dimension");
    if (encoder_res_blocks < 0 || decoder_res_blocks < 0)
        throw ConfigError("generator config: negative residual block count");
    if (d_model % heads != 0) throw ConfigError("generator config: d_model % heads != 0");
    if (conv_kernel % 2 == 0) throw ConfigError("generator config: conv_kernel must be odd");
    if (dur_cap < 1) throw ConfigError("generator config: dur_cap must be >= 1");
    if (max_frames < 1) throw ConfigError("generator config: max_frames must be >= 1");
}

ConvFFTConfig GeneratorConfig::block_config(bool encoder) const {
    ConvFFTConfig c;
    c.d_model = d_model;
    c.heads = heads;
    c.n_res_blocks = use_convfft ? (encoder ? encoder_res_blocks : decoder_res_blocks) : 0;
    c.conv_channels = conv_channels_or_default();
    c.conv_kernel = conv_kernel;
    c.ffn_mult = ffn_mult;
    c.dropout = dropout;
    return c;
}

template <class S>
ConvFFTBlockT<S>::ConvFFTBlockT(ParamStoreT<S>& store, const std::string& prefix,
                                const ConvFFTConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    cfg_.validate();
    const int64_t d = cfg_.d_model;
    wq_ = store.add(prefix + ".mhsa.wq", init::glorot<S>({d, d}, d, d, rng));
    wk_ = store.add(prefix + ".mhsa.wk", init::glorot<S>({d, d}, d, d, rng));
    wv_ = store.add(prefix + ".mhsa.wv", init::glorot<S>({d, d}, d, d, rng));
    wo_ = store.add(prefix + ".mhsa.wo", init::glorot<S>({d, d}, d, d, rng));
    const int64_t pad = cfg_.conv_kernel / 2;
    for (int64_t i = 0; i < cfg_.n_res_blocks; ++i) {
        const std::string rp = prefix + ".res" + std::to_string(i);
        ResConvUnit u;
        u.c1 = Conv1dLayerT<S>(store, rp + ".c1", d, cfg_.conv_channels, cfg_.conv_kernel, rng, 1,
                               pad);
        u.c2 = Conv1dLayerT<S>(store, rp + ".c2", cfg_.conv_channels, d, cfg_.conv_kernel, rng, 1,
                               pad);
        res_units_.push_back(std::move(u));
    }
    ffn1_ = LinearT<S>(store, prefix + ".ffn.l1", d, d * cfg_.ffn_mult, rng);
    ffn2_ = LinearT<S>(store, prefix + ".ffn.l2", d * cfg_.ffn_mult, d, rng);
    norm1_ = LayerNormLayerT<S>(store, prefix + ".norm1", d);
    norm2_ = LayerNormLayerT<S>(store, prefix + ".norm2", d);
}

template <class S>
TensorT<S> ConvFFTBlockT<S>::forward(const TensorT<S>& x, bool training, Rng* rng) const {
    check_shape(x.rank() == 2 && x.dim(1) == cfg_.d_model,
                "convfft: expected width " + std::to_string(cfg_.d_model) + ", got " +
                    shape_str(x.shape()));
    auto drop = [&](const TensorT<S>& t) {
        return (training && rng) ? dropout(t, cfg_.dropout, *rng, true) : t;
    };
    TensorT<S> attn = drop(multi_head_self_attention(x, cfg_.heads, wq_, wk_, wv_, wo_));
    TensorT<S> fused = add(x, attn);
    if (!res_units_.empty()) {
        // local path: stacked residual conv units over the same input as MHSA
        TensorT<S> c = transpose(x);  // (d, T)
        for (const auto& u : res_units_) {
            TensorT<S> y = u.c2.forward(relu(u.c1.forward(c)));
            c = add(c, y);
        }
        fused = add(fused, drop(transpose(c)));
    }
    TensorT<S> h = norm1_.forward(fused);
    TensorT<S> f = drop(ffn2_.forward(relu(ffn1_.forward(h))));
    return norm2_.forward(add(h, f));
}

template <class S>
DurationPredictorT<S>::DurationPredictorT(ParamStoreT<S>& store, const std::string& prefix,
                                          int64_t d_model, int64_t kernel, double dropout,
                                          Rng& rng)
    : dropout_(dropout) {
    const int64_t pad = kernel / 2;
    for (int i = 0; i < 2; ++i) {
        Unit u;
        u.conv = Conv1dLayerT<S>(store, prefix + ".conv" + std::to_string(i), d_model, d_model,
                                 kernel, rng, 1, pad);
        u.norm = LayerNormLayerT<S>(store, prefix + ".norm" + std::to_string(i), d_model);
        units_.push_back(std::move(u));
    }
    head_ = LinearT<S>(store, prefix + ".head", d_model, 1, rng);
}

template <class S>
TensorT<S> DurationPredictorT<S>::forward(const TensorT<S>& h, bool training, Rng* rng) const {
    TensorT<S> x = h;
    for (const auto& u : units_) {
        TensorT<S> y = transpose(u.conv.forward(transpose(x)));  // conv along phoneme axis
        y = u.norm.forward(relu(y));
        if (training && rng) y = dropout(y, dropout_, *rng, true);
        x = y;
    }
    TensorT<S> out = head_.forward(x);  // (N,1)
    return reshape(out, {out.dim(0)});
}

template <class S>
GeneratorT<S>::GeneratorT(const GeneratorConfig& cfg, int64_t phoneme_vocab, uint64_t seed)
    : cfg_(cfg) {
    cfg_.validate();
    if (phoneme_vocab < 2) throw ConfigError("generator: phoneme vocab must be >= 2");
    Rng rng(derive_seed(seed, 1));
    emb_ph_ = EmbeddingT<S>(store_, "frontend.emb_phoneme", phoneme_vocab, cfg_.d_ph, rng);
    emb_dur_ = EmbeddingT<S>(store_, "frontend.emb_duration", cfg_.dur_cap + 1, cfg_.d_dur, rng);
    emb_pitch_ = EmbeddingT<S>(store_, "frontend.emb_pitch", cfg_.midi_vocab, cfg_.d_pitch, rng);
    input_proj_ = LinearT<S>(store_, "encoder.input_proj", cfg_.concat_width(), cfg_.d_model, rng);
    for (int64_t b = 0; b < cfg_.encoder_blocks; ++b)
        encoder_.emplace_back(store_, "encoder.block" + std::to_string(b),
                              cfg_.block_config(true), rng);
    dur_pred_ = DurationPredictorT<S>(store_, "duration_predictor", cfg_.d_model, cfg_.conv_kernel,
                                      cfg_.dropout, rng);
    for (int64_t b = 0; b < cfg_.decoder_blocks; ++b)
        decoder_.emplace_back(store_, "decoder.block" + std::to_string(b),
                              cfg_.block_config(false), rng);
    head_mel_ = LinearT<S>(store_, "decoder.head_mel", cfg_.d_model, cfg_.mel_dim, rng);
    head_vuv_ = LinearT<S>(store_, "decoder.head_vuv", cfg_.d_model, 1, rng);
    head_logf0_ = LinearT<S>(store_, "decoder.head_logf0", cfg_.d_model, 1, rng);
}

template <class S>
TensorT<S> GeneratorT<S>::embed(const PhonemeSequence& seq) const {
    return embed_and_concat(seq, emb_ph_, emb_dur_, emb_pitch_, cfg_.dur_cap);
}

template <class S>
TensorT<S> GeneratorT<S>::encode(const TensorT<S>& concat_embeddings, bool training,
                                 Rng* rng) const {
    check_shape(concat_embeddings.rank() == 2 && concat_embeddings.dim(1) == cfg_.concat_width(),
                "encode: expected width " + std::to_string(cfg_.concat_width()) + ", got " +
                    shape_str(concat_embeddings.shape()));
    TensorT<S> h = input_proj_.forward(concat_embeddings);
    h = add(h, positional_encoding<S>(h.dim(0), cfg_.d_model));
    for (const auto& blk : encoder_) h = blk.forward(h, training, rng);
    return h;
}

template <class S>
TensorT<S> GeneratorT<S>::predict_durations(const TensorT<S>& h, bool training, Rng* rng) const {
    return dur_pred_.forward(h, training, rng);
}

template <class S>
AcousticFramesT<S> GeneratorT<S>::decode(const TensorT<S>& expanded,
                                         const TensorT<S>& frame_pitch_logf0, bool training,
                                         Rng* rng) const {
    check_shape(frame_pitch_logf0.rank() == 1 && frame_pitch_logf0.dim(0) == expanded.dim(0),
                "decode: frame pitch length " + shape_str(frame_pitch_logf0.shape()) +
                    " vs expanded " + shape_str(expanded.shape()));
    TensorT<S> h = add(expanded, positional_encoding<S>(expanded.dim(0), cfg_.d_model));
    for (const auto& blk : decoder_) h = blk.forward(h, training, rng);
    const int64_t t = h.dim(0);
    AcousticFramesT<S> out;
    out.mel = head_mel_.forward(h);
    out.vuv = reshape(sigmoid(head_vuv_.forward(h)), {t});
    TensorT<S> f0 = reshape(head_logf0_.forward(h), {t});
    out.logf0 = add(f0, frame_pitch_logf0);  // residual from the note pitch
    return out;
}

template <class S>
TensorT<S> GeneratorT<S>::frame_pitch(const PhonemeSequence& seq,
                                      const std::vector<int64_t>& frames) const {
    check_shape(frames.size() == seq.size(), "frame_pitch: durations do not match phonemes");
    Values<S> vals;
    for (size_t n = 0; n < frames.size(); ++n) {
        const S lf0 =
            static_cast<S>(note_midi_to_logf0(static_cast<int>(seq.note_midi_per_phoneme[n])));
        for (int64_t r = 0; r < frames[n]; ++r) vals.push_back(lf0);
    }
    if (vals.empty()) throw DimensionError("frame_pitch: all durations zero");
    const int64_t n = static_cast<int64_t>(vals.size());
    return TensorT<S>::from({n}, std::move(vals));
}

template <class S>
typename GeneratorT<S>::Output GeneratorT<S>::forward(const PhonemeSequence& seq,
                                                      const std::vector<int64_t>* teacher_frames,
                                                      bool training, Rng* rng) const {
    Output out;
    TensorT<S> x = embed(seq);
    TensorT<S> h = encode(x, training, rng);
    out.log_durations = predict_durations(h, training, rng);
    if (teacher_frames) {
        check_shape(teacher_frames->size() == seq.size(),
                    "generate: teacher durations do not match phoneme count");
        out.frames_used = *teacher_frames;
    } else {
        out.frames_used.resize(seq.size());
        for (size_t n = 0; n < seq.size(); ++n)
            out.frames_used[n] =
                decode_duration(static_cast<double>(out.log_durations.data()[n]));
    }
    int64_t total = 0;
    for (int64_t f : out.frames_used) total += f;
    if (total > cfg_.max_frames)
        throw DimensionError("generate: " + std::to_string(total) + " frames exceeds max_frames " +
                             std::to_string(cfg_.max_frames));
    TensorT<S> expanded = length_regulate(h, out.frames_used);
    out.frames = decode(expanded, frame_pitch(seq, out.frames_used), training, rng);
    return out;
}

template <class S>
AcousticFramesT<S> GeneratorT<S>::generate(const MusicalScore& score, const G2PTable& table,
                                           const std::vector<int64_t>* teacher_frames) const {
    PhonemeSequence seq = g2p_expand(score, table);
    return forward(seq, teacher_frames).frames;
}

template class ConvFFTBlockT<float>;
template class ConvFFTBlockT<double>;
template class DurationPredictorT<float>;
template class DurationPredictorT<double>;
template class GeneratorT<float>;
template class GeneratorT<double>;

}  // namespace xis2
