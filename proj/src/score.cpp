#include "xis2/score.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace xis2 {

using nlohmann::json;

namespace {

json load_json_file(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) throw IoError(std::string(what) + ": no such file: " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string(what) + ": malformed JSON in " + path + ": " + e.what());
    }
}

}  // namespace

G2PTable::G2PTable(std::vector<std::string> phonemes,
                   std::unordered_map<std::string, std::vector<std::string>> lexicon)
    : phonemes_(std::move(phonemes)), lexicon_(std::move(lexicon)) {
    if (phonemes_.size() < 2) throw ParseError("g2p table: phoneme inventory must have >= 2 entries");
    std::set<std::string> seen;
    for (const auto& p : phonemes_) {
        if (p.empty()) throw ParseError("g2p table: empty phoneme name");
        if (!seen.insert(p).second) throw ParseError("g2p table: duplicate phoneme: " + p);
    }
    for (const auto& [lyric, phs] : lexicon_) {
        if (phs.empty()) throw ParseError("g2p table: lyric '" + lyric + "' expands to nothing");
        for (const auto& p : phs)
            if (!seen.count(p))
                throw ParseError("g2p table: lyric '" + lyric + "' uses unknown phoneme '" + p +
                                 "'");
    }
}

int64_t G2PTable::phoneme_id(const std::string& name) const {
    for (size_t i = 0; i < phonemes_.size(); ++i)
        if (phonemes_[i] == name) return static_cast<int64_t>(i);
    throw ParseError("g2p table: unknown phoneme: " + name);
}

G2PTable G2PTable::load(const std::string& path) {
    json j = load_json_file(path, "g2p table");
    if (!j.is_object() || j.value("format_version", 0) != 1)
        throw ParseError("g2p table: missing or unsupported format_version in " + path);
    if (!j.contains("phonemes") || !j["phonemes"].is_array())
        throw ParseError("g2p table: missing 'phonemes' array in " + path);
    if (!j.contains("lexicon") || !j["lexicon"].is_object())
        throw ParseError("g2p table: missing 'lexicon' object in " + path);
    std::vector<std::string> phonemes;
    for (const auto& p : j["phonemes"]) phonemes.push_back(p.get<std::string>());
    std::unordered_map<std::string, std::vector<std::string>> lexicon;
    for (auto it = j["lexicon"].begin(); it != j["lexicon"].end(); ++it) {
        std::vector<std::string> phs;
        for (const auto& p : it.value()) phs.push_back(p.get<std::string>());
        lexicon[it.key()] = phs;
    }
    return G2PTable(std::move(phonemes), std::move(lexicon));
}

void G2PTable::save(const std::string& path) const {
    json j;
    j["format_version"] = 1;
    j["phonemes"] = phonemes_;
    json lex = json::object();
    for (const auto& [k, v] : lexicon_) lex[k] = v;
    j["lexicon"] = lex;
    std::ofstream out(path);
    if (!out) throw IoError("g2p table: cannot write " + path);
    out << j.dump(2) << "\n";
}

G2PTable G2PTable::builtin_demo() {
    std::vector<std::string> phonemes = {"sil", "a", "e", "i", "o", "u", "l",
                                         "n",   "m", "s", "t", "k", "j"};
    std::unordered_map<std::string, std::vector<std::string>> lexicon = {
        {"a", {"a"}},       {"e", {"e"}},       {"i", {"i"}},       {"o", {"o"}},
        {"u", {"u"}},       {"n", {"n"}},       {"m", {"m"}},       {"l", {"l"}},
        {"j", {"j"}},       {"la", {"l", "a"}}, {"mi", {"m", "i"}}, {"sa", {"s", "a"}},
        {"ta", {"t", "a"}}, {"ka", {"k", "e"}}, {"ju", {"j", "u"}}, {"sil", {"sil"}},
    };
    return G2PTable(std::move(phonemes), std::move(lexicon));
}

bool is_unvoiced_phoneme(const std::string& name) {
    static const std::set<std::string> unvoiced = {"sil", "s", "t", "k", "f", "p", "h", "sh", "ch"};
    return unvoiced.count(name) > 0;
}

MusicalScore parse_score_json(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError("score: malformed JSON in " + origin + ": " + e.what());
    }
    if (!j.is_object() || j.value("format_version", 0) != 1)
        throw ParseError("score: missing or unsupported format_version in " + origin);
    if (!j.contains("syllables") || !j["syllables"].is_array())
        throw ParseError("score: missing 'syllables' array in " + origin);
    MusicalScore score;
    size_t idx = 0;
    for (const auto& s : j["syllables"]) {
        std::ostringstream where;
        where << origin << ", syllable " << idx;
        if (!s.is_object() || !s.contains("lyric") || !s.contains("note_midi") ||
            !s.contains("note_frames"))
            throw ParseError("score: syllable must have lyric/note_midi/note_frames (" +
                             where.str() + ")");
        Syllable syl;
        syl.lyric = s["lyric"].get<std::string>();
        syl.note_midi = s["note_midi"].get<int>();
        syl.note_frames = s["note_frames"].get<int>();
        if (syl.lyric.empty()) throw ParseError("score: empty lyric (" + where.str() + ")");
        if (syl.note_midi < 0 || syl.note_midi > 127)
            throw ParseError("score: midi out of range [0,127]: " + std::to_string(syl.note_midi) +
                             " (" + where.str() + ")");
        if (syl.note_frames < 1)
            throw ParseError("score: note_frames must be >= 1 (" + where.str() + ")");
        score.syllables.push_back(std::move(syl));
        ++idx;
    }
    if (score.syllables.empty()) throw ParseError("score: empty score in " + origin);
    return score;
}

MusicalScore parse_score(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("score: no such file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_score_json(buf.str(), path);
}

void save_score(const MusicalScore& score, const std::string& path) {
    json j;
    j["format_version"] = 1;
    j["syllables"] = json::array();
    for (const auto& s : score.syllables)
        j["syllables"].push_back(
            {{"lyric", s.lyric}, {"note_midi", s.note_midi}, {"note_frames", s.note_frames}});
    std::ofstream out(path);
    if (!out) throw IoError("score: cannot write " + path);
    out << j.dump(2) << "\n";
}

PhonemeSequence g2p_expand(const MusicalScore& score, const G2PTable& table) {
    PhonemeSequence seq;
    for (const auto& syl : score.syllables) {
        auto it = table.lexicon().find(syl.lyric);
        if (it == table.lexicon().end())
            throw ParseError("g2p: lyric not in table: '" + syl.lyric + "'");
        for (const auto& ph : it->second) {
            seq.phoneme_ids.push_back(table.phoneme_id(ph));
            seq.note_midi_per_phoneme.push_back(syl.note_midi);
            seq.note_frames_per_phoneme.push_back(syl.note_frames);
        }
    }
    return seq;
}

double note_midi_to_logf0(int midi) {
    if (midi < 0 || midi > 127)
        throw ConfigError("note_midi_to_logf0: midi out of range: " + std::to_string(midi));
    return std::log(440.0 * std::pow(2.0, (midi - 69) / 12.0));
}

}  // namespace xis2
