#include "xis2/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace xis2 {

using nlohmann::json;
namespace fs = std::filesystem;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const MelConfig& cfg) {
    const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
    std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
    for (size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                                      static_cast<double>(cfg.n_mels + 1));
    return edges;
}

// iterative radix-2 FFT, in place
void fft_inplace(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

}  // namespace

std::vector<double> mel_center_frequencies(const MelConfig& cfg) {
    const std::vector<double> edges = mel_edges(cfg);
    std::vector<double> centers(static_cast<size_t>(cfg.n_mels));
    for (int i = 0; i < cfg.n_mels; ++i) centers[static_cast<size_t>(i)] = edges[size_t(i) + 1];
    return centers;
}

std::vector<double> build_mel_filterbank(const MelConfig& cfg) {
    cfg.validate();
    const int bins = cfg.spectrum_bins();
    const std::vector<double> edges = mel_edges(cfg);
    std::vector<double> fb(static_cast<size_t>(cfg.n_mels) * bins, 0.0);
    const double hz_per_bin = static_cast<double>(cfg.sample_rate) / cfg.fft_size;
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double left = edges[size_t(m)], center = edges[size_t(m) + 1],
                     right = edges[size_t(m) + 2];
        for (int b = 0; b < bins; ++b) {
            const double hz = b * hz_per_bin;
            double w = 0.0;
            if (hz > left && hz < right)
                w = hz <= center ? (hz - left) / (center - left) : (right - hz) / (right - center);
            fb[static_cast<size_t>(m) * bins + b] = w;
        }
    }
    // At 48 kHz with 120 filters the lowest triangles are narrower than one
    // FFT bin; give any empty filter its peak-nearest bin so every row sums
    // to a positive value.
    for (int m = 0; m < cfg.n_mels; ++m) {
        double row_sum = 0.0;
        for (int b = 0; b < bins; ++b) row_sum += fb[static_cast<size_t>(m) * bins + b];
        if (row_sum <= 0.0) {
            const int nearest =
                std::clamp(static_cast<int>(std::lround(edges[size_t(m) + 1] / hz_per_bin)), 0,
                           bins - 1);
            fb[static_cast<size_t>(m) * bins + nearest] = 1.0;
        }
    }
    // and give any uncovered in-range bin (the exact fmin/fmax edges) to the
    // filter with the nearest peak
    for (int b = 0; b < bins; ++b) {
        const double hz = b * hz_per_bin;
        if (hz < cfg.fmin || hz > cfg.fmax) continue;
        double col_sum = 0.0;
        for (int m = 0; m < cfg.n_mels; ++m) col_sum += fb[static_cast<size_t>(m) * bins + b];
        if (col_sum <= 0.0) {
            int best = 0;
            double best_d = std::abs(edges[1] - hz);
            for (int m = 1; m < cfg.n_mels; ++m) {
                const double d = std::abs(edges[size_t(m) + 1] - hz);
                if (d < best_d) {
                    best = m;
                    best_d = d;
                }
            }
            fb[static_cast<size_t>(best) * bins + b] = 1.0;
        }
    }
    return fb;
}

template <class S>
TensorT<S> extract_mel(const std::vector<double>& samples, const MelConfig& cfg) {
    cfg.validate();
    if (static_cast<int64_t>(samples.size()) < cfg.win_length)
        throw DimensionError("extract_mel: audio too short, " + std::to_string(samples.size()) +
                             " samples < window " + std::to_string(cfg.win_length));
    const int frames = cfg.frame_count(static_cast<int64_t>(samples.size()));
    const int bins = cfg.spectrum_bins();
    const std::vector<double> fb = build_mel_filterbank(cfg);
    std::vector<double> window(static_cast<size_t>(cfg.win_length));
    for (int i = 0; i < cfg.win_length; ++i)
        window[static_cast<size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * M_PI * i / static_cast<double>(cfg.win_length));
    TensorT<S> out = TensorT<S>::uninit({frames, cfg.n_mels});
    std::vector<std::complex<double>> buf(static_cast<size_t>(cfg.fft_size));
    for (int t = 0; t < frames; ++t) {
        const int64_t off = static_cast<int64_t>(t) * cfg.hop_length;
        for (int i = 0; i < cfg.fft_size; ++i)
            buf[static_cast<size_t>(i)] =
                i < cfg.win_length
                    ? std::complex<double>(samples[static_cast<size_t>(off + i)] *
                                               window[static_cast<size_t>(i)],
                                           0.0)
                    : std::complex<double>(0.0, 0.0);
        fft_inplace(buf);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            const double* row = fb.data() + static_cast<size_t>(m) * bins;
            for (int b = 0; b < bins; ++b) acc += row[b] * std::abs(buf[static_cast<size_t>(b)]);
            out.data()[static_cast<size_t>(t) * cfg.n_mels + m] =
                static_cast<S>(std::log(std::max(acc, cfg.log_floor)));
        }
    }
    return out;
}

WavData read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("wav: no such file: " + path);
    auto read_bytes = [&](char* dst, size_t n) {
        if (!in.read(dst, static_cast<std::streamsize>(n)))
            throw IoError("wav: truncated file: " + path);
    };
    auto read_u32 = [&]() {
        unsigned char b[4];
        read_bytes(reinterpret_cast<char*>(b), 4);
        return static_cast<uint32_t>(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
               (uint32_t(b[3]) << 24);
    };
    auto read_u16 = [&]() {
        unsigned char b[2];
        read_bytes(reinterpret_cast<char*>(b), 2);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    };
    char tag[4];
    read_bytes(tag, 4);
    if (std::memcmp(tag, "RIFF", 4) != 0) throw ParseError("wav: not a RIFF file: " + path);
    read_u32();
    read_bytes(tag, 4);
    if (std::memcmp(tag, "WAVE", 4) != 0) throw ParseError("wav: not a WAVE file: " + path);

    WavData wav;
    uint16_t format = 0, channels = 0, bits = 0;
    bool got_fmt = false;
    while (in.peek() != EOF) {
        if (!in.read(tag, 4)) break;
        const uint32_t size = read_u32();
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            format = read_u16();
            channels = read_u16();
            wav.sample_rate = static_cast<int>(read_u32());
            read_u32();  // byte rate
            read_u16();  // block align
            bits = read_u16();
            if (size > 16) in.seekg(size - 16, std::ios::cur);
            got_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!got_fmt) throw ParseError("wav: data chunk before fmt chunk: " + path);
            if (channels != 1) throw ParseError("wav: expected mono, got " +
                                                std::to_string(channels) + " channels: " + path);
            std::vector<char> raw(size);
            read_bytes(raw.data(), size);
            if (format == 1 && bits == 16) {
                for (size_t i = 0; i + 1 < raw.size(); i += 2) {
                    int16_t v;
                    std::memcpy(&v, raw.data() + i, 2);
                    wav.samples.push_back(v / 32768.0);
                }
            } else if (format == 1 && bits == 24) {
                for (size_t i = 0; i + 2 < raw.size(); i += 3) {
                    int32_t v = (static_cast<unsigned char>(raw[i])) |
                                (static_cast<unsigned char>(raw[i + 1]) << 8) |
                                (static_cast<unsigned char>(raw[i + 2]) << 16);
                    if (v & 0x800000) v |= ~0xFFFFFF;
                    wav.samples.push_back(v / 8388608.0);
                }
            } else if (format == 3 && bits == 32) {
                for (size_t i = 0; i + 3 < raw.size(); i += 4) {
                    float v;
                    std::memcpy(&v, raw.data() + i, 4);
                    wav.samples.push_back(static_cast<double>(v));
                }
            } else {
                throw ParseError("wav: unsupported format (" + std::to_string(format) + "/" +
                                 std::to_string(bits) + " bit): " + path);
            }
            return wav;
        } else {
            in.seekg(size + (size & 1), std::ios::cur);
        }
    }
    throw ParseError("wav: no data chunk: " + path);
}

namespace {

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IoError("tensor file " + path + ": truncated");
    return static_cast<uint32_t>(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
           (uint32_t(b[3]) << 24);
}

constexpr uint32_t kTensorVersion = 1;

}  // namespace

template <class S>
void write_tensor(const std::string& path, const TensorT<S>& t) {
    for (S v : t.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw IoError("tensor file " + path + ": refusing to write non-finite values");
    for (int64_t d : t.shape())
        if (d < 1) throw IoError("tensor file " + path + ": zero-length dim");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("tensor file: cannot write " + path);
    out.write("XTEN", 4);
    put_u32(out, kTensorVersion);
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
    for (S v : t.data()) {
        const float f = static_cast<float>(v);
        uint32_t u;
        std::memcpy(&u, &f, 4);
        put_u32(out, u);
    }
    if (!out) throw IoError("tensor file: write failed for " + path);
}

template <class S>
TensorT<S> read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("tensor file: no such file: " + path);
    char magic[4];
    if (!in.read(magic, 4)) throw IoError("tensor file " + path + ": truncated");
    if (std::memcmp(magic, "XTEN", 4) != 0)
        throw IoError("tensor file " + path + ": bad magic");
    if (get_u32(in, path) != kTensorVersion)
        throw IoError("tensor file " + path + ": unsupported version");
    const uint32_t rank = get_u32(in, path);
    if (rank == 0 || rank > 8) throw IoError("tensor file " + path + ": implausible rank");
    Shape shape;
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint32_t d = get_u32(in, path);
        if (d == 0) throw IoError("tensor file " + path + ": zero dim");
        shape.push_back(static_cast<int64_t>(d));
        n *= d;
    }
    Values<S> values(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const uint32_t u = get_u32(in, path);
        float f;
        std::memcpy(&f, &u, 4);
        values[static_cast<size_t>(i)] = static_cast<S>(f);
    }
    return TensorT<S>::from(shape, std::move(values));
}

namespace {

// deterministic per-phoneme pseudo formants
void phoneme_formants(int64_t id, double& f1, double& f2) {
    f1 = 280.0 + 140.0 * static_cast<double>(id % 5);
    f2 = 800.0 + 260.0 * static_cast<double>(id % 7);
}

}  // namespace

template <class S>
std::vector<CorpusItemT<S>> synth_corpus(int n_items, uint64_t seed, const G2PTable& g2p,
                                         const MelConfig& mel_cfg) {
    if (n_items < 1) throw ConfigError("synth_corpus: n_items must be >= 1");
    std::vector<std::string> lyrics;
    for (const auto& [k, v] : g2p.lexicon()) lyrics.push_back(k);
    std::sort(lyrics.begin(), lyrics.end());
    if (lyrics.empty()) throw ConfigError("synth_corpus: empty lexicon");

    const std::vector<double> centers = mel_center_frequencies(mel_cfg);
    const int n_mels = mel_cfg.n_mels;
    const double log_floor = std::log(mel_cfg.log_floor);

    std::vector<CorpusItemT<S>> items;
    items.reserve(static_cast<size_t>(n_items));
    for (int it = 0; it < n_items; ++it) {
        Rng rng(derive_seed(seed, 100, static_cast<uint64_t>(it)));
        CorpusItemT<S> item;
        {
            std::ostringstream id;
            id << "item_" << seed << "_" << it;
            item.id = id.str();
        }
        const int n_syl = static_cast<int>(rng.uniform_int(3, 8));
        for (int s = 0; s < n_syl; ++s) {
            Syllable syl;
            syl.lyric = lyrics[static_cast<size_t>(rng.uniform_int(
                0, static_cast<int64_t>(lyrics.size()) - 1))];
            syl.note_midi = static_cast<int>(rng.uniform_int(50, 80));
            const auto& phs = g2p.lexicon().at(syl.lyric);
            int64_t frames = 0;
            for (size_t p = 0; p < phs.size(); ++p) {
                const int64_t d = rng.uniform_int(10, 60);
                item.phoneme_durations.push_back(d);
                frames += d;
            }
            syl.note_frames = static_cast<int>(frames);
            item.score.syllables.push_back(std::move(syl));
        }
        PhonemeSequence seq = g2p_expand(item.score, g2p);
        int64_t total = 0;
        for (int64_t d : item.phoneme_durations) total += d;
        const int64_t t_frames = total;

        const double vibrato_phase = rng.uniform(0.0, 2.0 * M_PI);
        Values<S> logf0(static_cast<size_t>(t_frames));
        Values<S> vuv(static_cast<size_t>(t_frames));
        Values<S> mel(static_cast<size_t>(t_frames * n_mels));

        int64_t t0 = 0;
        for (size_t n = 0; n < seq.size(); ++n) {
            const int64_t dur = item.phoneme_durations[n];
            const int64_t pid = seq.phoneme_ids[n];
            const bool voiced = !is_unvoiced_phoneme(g2p.phoneme_name(pid));
            const double note_lf0 =
                note_midi_to_logf0(static_cast<int>(seq.note_midi_per_phoneme[n]));
            double f1, f2;
            phoneme_formants(pid, f1, f2);
            for (int64_t k = 0; k < dur; ++k) {
                const int64_t t = t0 + k;
                const double sec = static_cast<double>(t) * 0.005;
                const double lf0 =
                    note_lf0 + 0.02 * std::sin(2.0 * M_PI * 5.5 * sec + vibrato_phase);
                logf0[static_cast<size_t>(t)] = static_cast<S>(lf0);
                vuv[static_cast<size_t>(t)] = voiced ? S(1) : S(0);
                const double f0 = std::exp(lf0);
                for (int b = 0; b < n_mels; ++b) {
                    const double hz = centers[static_cast<size_t>(b)];
                    double power = 0.015 + 0.08 * (hz / mel_cfg.fmax);
                    if (voiced) {
                        const int kc = std::max(1, static_cast<int>(std::lround(hz / f0)));
                        for (int h = std::max(1, kc - 1); h <= kc + 1; ++h) {
                            const double fh = h * f0;
                            if (fh > mel_cfg.fmax) break;
                            const double bw = std::max(50.0, 0.035 * fh);
                            const double amp =
                                std::exp(-0.06 * (h - 1)) *
                                (1.0 + 1.2 * std::exp(-std::pow((fh - f1) / 350.0, 2)) +
                                 0.8 * std::exp(-std::pow((fh - f2) / 500.0, 2)));
                            power += amp * std::exp(-std::pow((hz - fh) / bw, 2));
                        }
                    } else if (pid == 0) {
                        power *= 0.1;  // silence
                    } else {
                        power += 0.25 * (hz / mel_cfg.fmax) *
                                 (1.0 + 0.5 * static_cast<double>((pid * 37) % 10) / 10.0);
                    }
                    // noise concentrated in the high band gives it genuine
                    // frame-to-frame structure a plain MSE model averages out
                    const double sigma =
                        0.05 + 0.45 * std::clamp((static_cast<double>(b) - 60.0) / 40.0, 0.0, 1.0);
                    const double val = std::log(power + 1e-5) + sigma * rng.normal();
                    mel[static_cast<size_t>(t * n_mels + b)] =
                        static_cast<S>(std::max(val, log_floor));
                }
            }
            t0 += dur;
        }

        item.target.mel = TensorT<S>::from({t_frames, n_mels}, std::move(mel));
        item.target.vuv = TensorT<S>::from({t_frames}, std::move(vuv));
        item.target.logf0 = TensorT<S>::from({t_frames}, std::move(logf0));
        quantize_f32(item.target.mel);
        quantize_f32(item.target.vuv);
        quantize_f32(item.target.logf0);
        items.push_back(std::move(item));
    }
    return items;
}

template <class S>
void save_corpus(const std::string& dir, const std::vector<CorpusItemT<S>>& items) {
    fs::create_directories(dir);
    std::ofstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw IoError("corpus: cannot write manifest in " + dir);
    for (const auto& item : items) {
        json syl = json::array();
        for (const auto& s : item.score.syllables)
            syl.push_back({{"lyric", s.lyric},
                           {"note_midi", s.note_midi},
                           {"note_frames", s.note_frames}});
        json line = {{"id", item.id},
                     {"score", {{"format_version", 1}, {"syllables", syl}}},
                     {"phoneme_durations", item.phoneme_durations},
                     {"mel", item.id + "_mel.xten"},
                     {"vuv", item.id + "_vuv.xten"},
                     {"logf0", item.id + "_logf0.xten"}};
        manifest << line.dump() << "\n";
        write_tensor((fs::path(dir) / (item.id + "_mel.xten")).string(), item.target.mel);
        write_tensor((fs::path(dir) / (item.id + "_vuv.xten")).string(), item.target.vuv);
        write_tensor((fs::path(dir) / (item.id + "_logf0.xten")).string(), item.target.logf0);
    }
}

template <class S>
std::vector<CorpusItemT<S>> load_corpus(const std::string& dir) {
    std::ifstream manifest(fs::path(dir) / "manifest.jsonl");
    if (!manifest) throw IoError("corpus: no manifest.jsonl in " + dir);
    std::vector<CorpusItemT<S>> items;
    std::string line;
    size_t lineno = 0;
    while (std::getline(manifest, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("corpus manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        CorpusItemT<S> item;
        item.id = j.at("id").get<std::string>();
        item.score = parse_score_json(j.at("score").dump(),
                                      "manifest line " + std::to_string(lineno));
        for (const auto& d : j.at("phoneme_durations")) {
            const int64_t v = d.get<int64_t>();
            if (v < 1)
                throw ParseError("corpus item " + item.id + ": phoneme duration must be >= 1");
            item.phoneme_durations.push_back(v);
        }
        item.target.mel = read_tensor<S>((fs::path(dir) / j.at("mel").get<std::string>()).string());
        item.target.vuv = read_tensor<S>((fs::path(dir) / j.at("vuv").get<std::string>()).string());
        item.target.logf0 =
            read_tensor<S>((fs::path(dir) / j.at("logf0").get<std::string>()).string());
        int64_t total = 0;
        for (int64_t d : item.phoneme_durations) total += d;
        if (total != item.target.mel.dim(0) || item.target.vuv.dim(0) != total ||
            item.target.logf0.dim(0) != total)
            throw ParseError("corpus item " + item.id +
                             ": durations do not sum to target frame count");
        items.push_back(std::move(item));
    }
    if (items.empty()) throw ConfigError("corpus: empty manifest in " + dir);
    return items;
}

template TensorT<float> extract_mel<float>(const std::vector<double>&, const MelConfig&);
template TensorT<double> extract_mel<double>(const std::vector<double>&, const MelConfig&);
template void write_tensor<float>(const std::string&, const TensorT<float>&);
template void write_tensor<double>(const std::string&, const TensorT<double>&);
template TensorT<float> read_tensor<float>(const std::string&);
template TensorT<double> read_tensor<double>(const std::string&);
template std::vector<CorpusItemT<float>> synth_corpus<float>(int, uint64_t, const G2PTable&,
                                                             const MelConfig&);
template std::vector<CorpusItemT<double>> synth_corpus<double>(int, uint64_t, const G2PTable&,
                                                               const MelConfig&);
template void save_corpus<float>(const std::string&, const std::vector<CorpusItemT<float>>&);
template void save_corpus<double>(const std::string&, const std::vector<CorpusItemT<double>>&);
template std::vector<CorpusItemT<float>> load_corpus<float>(const std::string&);
template std::vector<CorpusItemT<double>> load_corpus<double>(const std::string&);

}  // namespace xis2
