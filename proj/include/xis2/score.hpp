#ifndef XIS2_SCORE_HPP
#define XIS2_SCORE_HPP

// Musical-score parsing, grapheme-to-phoneme expansion and input embeddings.
// Scores arrive as JSON; the G2P tool is replaced by a declarative table
// file so the pipeline has no external language dependency.

#include <string>
#include <unordered_map>
#include <vector>

#include "xis2/nn.hpp"
#include "xis2/tensor.hpp"

namespace xis2 {

struct Syllable {
    std::string lyric;
    int note_midi = 0;    // [0,127]
    int note_frames = 0;  // >= 1
};

struct MusicalScore {
    std::vector<Syllable> syllables;
};

struct PhonemeSequence {
    std::vector<int64_t> phoneme_ids;
    std::vector<int64_t> note_midi_per_phoneme;
    std::vector<int64_t> note_frames_per_phoneme;

    size_t size() const { return phoneme_ids.size(); }
};

// Phoneme inventory with dense ids; id 0 is the reserved silence/padding
// symbol. The lexicon maps each lyric token to an ordered phoneme list.
class G2PTable {
public:
    G2PTable() = default;
    G2PTable(std::vector<std::string> phonemes,
             std::unordered_map<std::string, std::vector<std::string>> lexicon);

    static G2PTable load(const std::string& path);
    static G2PTable builtin_demo();

    int64_t vocab() const { return static_cast<int64_t>(phonemes_.size()); }
    int64_t phoneme_id(const std::string& name) const;
    const std::string& phoneme_name(int64_t id) const { return phonemes_.at(size_t(id)); }
    const std::vector<std::string>& phonemes() const { return phonemes_; }
    const std::unordered_map<std::string, std::vector<std::string>>& lexicon() const {
        return lexicon_;
    }
    bool has_lyric(const std::string& lyric) const { return lexicon_.count(lyric) > 0; }

    void save(const std::string& path) const;

private:
    std::vector<std::string> phonemes_;
    std::unordered_map<std::string, std::vector<std::string>> lexicon_;
};

MusicalScore parse_score(const std::string& path);
MusicalScore parse_score_json(const std::string& text, const std::string& origin);
void save_score(const MusicalScore& score, const std::string& path);

PhonemeSequence g2p_expand(const MusicalScore& score, const G2PTable& table);

// natural log of 440 * 2^((midi-69)/12)
double note_midi_to_logf0(int midi);

// Unvoiced phoneme classification used when synthesizing V/UV targets.
bool is_unvoiced_phoneme(const std::string& name);

// Row n is [E_ph[ph_n]; E_dur[min(frames_n,cap)]; E_pitch[midi_n]].
template <class S>
TensorT<S> embed_and_concat(const PhonemeSequence& seq, const EmbeddingT<S>& ph,
                            const EmbeddingT<S>& dur, const EmbeddingT<S>& pitch,
                            int64_t dur_cap) {
    check_shape(!seq.phoneme_ids.empty(), "embed_and_concat: empty phoneme sequence");
    std::vector<int64_t> clamped(seq.note_frames_per_phoneme.size());
    for (size_t i = 0; i < clamped.size(); ++i)
        clamped[i] = std::min<int64_t>(seq.note_frames_per_phoneme[i], dur_cap);
    return concat_cols<S>({ph.forward(seq.phoneme_ids), dur.forward(clamped),
                           pitch.forward(seq.note_midi_per_phoneme)});
}

}  // namespace xis2

#endif
