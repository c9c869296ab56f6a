#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "duovox/common.hpp"

namespace duovox {

// Joint token ID space of the unit language model.
//
// Layout: [0, n_content_units) unit IDs (the first n_pitch_bins of them double
// as pitch units), then phoneme symbols, then the nine special tokens, then
// speaker IDs. The ID spaces are disjoint except for that documented
// content/pitch sharing.
class Vocabulary {
public:
    static constexpr int kNumSpecials = 9;

    Vocabulary() = default;
    Vocabulary(int n_content_units, int n_pitch_bins,
               std::vector<std::string> phoneme_symbols,
               std::vector<std::string> speaker_ids);

    int size() const { return total_; }
    int n_content_units() const { return n_units_; }
    int n_pitch_bins() const { return n_pitch_; }
    int n_phonemes() const { return static_cast<int>(phonemes_.size()); }
    int n_speakers() const { return static_cast<int>(speakers_.size()); }

    int unit_token(int unit_id) const;
    int pitch_token(int bin) const;

    // Special tokens.
    int bos() const { return special_base_ + 0; }
    int eos() const { return special_base_ + 1; }
    int pad() const { return special_base_ + 2; }
    int nxt() const { return special_base_ + 3; }
    int ctx() const { return special_base_ + 4; }
    int sep() const { return special_base_ + 5; }
    int lis() const { return special_base_ + 6; }
    int unk() const { return special_base_ + 7; }
    int lau() const { return special_base_ + 8; }

    // Unknown symbols map to UNK (with a warning at the call site).
    std::optional<int> phoneme_token(const std::string& symbol) const;
    std::optional<int> speaker_token(const std::string& speaker_id) const;

    bool is_unit(int token) const { return token >= 0 && token < n_units_; }
    bool is_pitch_unit(int token) const { return token >= 0 && token < n_pitch_; }
    bool is_phoneme(int token) const {
        return token >= phoneme_base_ && token < phoneme_base_ + n_phonemes();
    }

    const std::vector<std::string>& phoneme_symbols() const { return phonemes_; }
    const std::vector<std::string>& speaker_ids() const { return speakers_; }

    // Surface form used by the persisted text format, one token per line.
    std::string token_surface(int token) const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

private:
    int n_units_ = 0;
    int n_pitch_ = 0;
    int phoneme_base_ = 0;
    int special_base_ = 0;
    int speaker_base_ = 0;
    int total_ = 0;
    std::vector<std::string> phonemes_;
    std::vector<std::string> speakers_;
    std::unordered_map<std::string, int> phoneme_index_;
    std::unordered_map<std::string, int> speaker_index_;
};

}  // namespace duovox
