#ifndef XIS2_DATAIO_HPP
#define XIS2_DATAIO_HPP

// Audio front end (STFT + triangular mel filterbank at the 48 kHz / 20 ms /
// 5 ms configuration), on-disk tensor format, WAV reading, and the synthetic
// corpus generator that stands in for a real singing corpus.

#include <cstdint>
#include <string>
#include <vector>

#include "xis2/generator.hpp"
#include "xis2/score.hpp"
#include "xis2/tensor.hpp"

namespace xis2 {

struct MelConfig {
    int sample_rate = 48000;
    int win_length = 960;  // 20 ms
    int hop_length = 240;  // 5 ms
    int n_mels = 120;
    double fmin = 0.0;
    double fmax = 24000.0;
    int fft_size = 1024;
    double log_floor = 1e-5;

    void validate() const {
        if (win_length != sample_rate / 50 || hop_length != sample_rate / 200)
            throw ConfigError("mel config: window/hop must be 20 ms / 5 ms of the sample rate");
        if (fft_size < win_length) throw ConfigError("mel config: fft_size < win_length");
        if ((fft_size & (fft_size - 1)) != 0) throw ConfigError("mel config: fft_size not 2^k");
        if (n_mels < 1 || fmax <= fmin) throw ConfigError("mel config: bad filterbank range");
    }

    int spectrum_bins() const { return fft_size / 2 + 1; }
    int frame_count(int64_t samples) const {
        return 1 + static_cast<int>((samples - win_length) / hop_length);
    }
};

double hz_to_mel(double hz);   // HTK: 2595 log10(1 + f/700)
double mel_to_hz(double mel);

// Triangular filterbank rows (n_mels x spectrum_bins). Guarantees every row
// has positive weight and every FFT bin in [fmin,fmax] is covered; at this
// resolution the lowest triangles are narrower than one FFT bin and would
// otherwise be empty.
std::vector<double> build_mel_filterbank(const MelConfig& cfg);

// center frequency (Hz) of each mel filter, used by the corpus synthesizer
std::vector<double> mel_center_frequencies(const MelConfig& cfg);

// magnitude STFT -> mel -> natural log with floor
template <class S>
TensorT<S> extract_mel(const std::vector<double>& samples, const MelConfig& cfg);

struct WavData {
    int sample_rate = 0;
    std::vector<double> samples;  // mono, in [-1,1]
};
WavData read_wav(const std::string& path);

// tensor container: magic "XTEN", version u32, rank u32, dims u32[], f32 payload
template <class S>
void write_tensor(const std::string& path, const TensorT<S>& t);
template <class S>
TensorT<S> read_tensor(const std::string& path);

// round every element to its nearest f32 value so disk round-trips are exact
template <class S>
void quantize_f32(TensorT<S>& t) {
    for (auto& v : t.data()) v = static_cast<S>(static_cast<float>(v));
}

template <class S>
struct CorpusItemT {
    std::string id;
    MusicalScore score;
    std::vector<int64_t> phoneme_durations;  // per phoneme, sums to target frames
    AcousticFramesT<S> target;
};

// Deterministic pseudo-random scores with analytically generated targets:
// logF0 = note logF0 + vibrato, V/UV from phoneme class, mel = harmonic
// template of (logF0, phoneme) plus noise concentrated in the high band.
template <class S>
std::vector<CorpusItemT<S>> synth_corpus(int n_items, uint64_t seed, const G2PTable& g2p,
                                         const MelConfig& mel_cfg = MelConfig{});

template <class S>
void save_corpus(const std::string& dir, const std::vector<CorpusItemT<S>>& items);
template <class S>
std::vector<CorpusItemT<S>> load_corpus(const std::string& dir);

}  // namespace xis2

#endif
