#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "duovox/dialogue.hpp"

namespace duovox {

// Synthetic two-channel dialogue generator. Dialogues come with ground-truth
// unit streams, timing, and backchannel labels, and the phoneme→unit map is a
// bijection, so downstream accuracy can be measured without any recognizer.

struct SyntheticCorpusSpec {
    int phoneme_set_size = 24;   // last four phonemes form the backchannel set
    uint64_t map_seed = 7;       // seeds the phoneme→unit permutation
    double backchannel_rate = 0.2;
    double overlap_rate = 0.3;
    int speakers = 8;
    int dialogues = 40;
    int utterances_per_dialogue = 12;
    uint64_t seed = 11;
    int n_units = 64;            // content codebook size (unit 0 = silence)
    int n_pitch_bins = 8;        // pitch codebook size (bin 0 = unvoiced)

    void validate() const;
};

struct CorpusUtterance {
    int channel = 1;             // 1 or 2
    std::string speaker_id;
    long start_frame = 0;
    long n_frames = 0;
    std::vector<int> phonemes;   // indices into the phoneme set
    bool backchannel = false;

    long end_frame() const { return start_frame + n_frames; }
};

struct CorpusDialogue {
    std::string id;
    std::array<std::string, 2> speaker_pair;  // channel 1, channel 2
    std::vector<CorpusUtterance> utterances;  // start-frame order
    long total_frames = 0;
    std::array<std::vector<int>, 2> content;  // per-channel frame streams
    std::array<std::vector<int>, 2> pitch;
};

struct SyntheticCorpus {
    SyntheticCorpusSpec spec;
    std::vector<std::string> phoneme_names;   // "p00", "p01", ...
    std::vector<int> phoneme_to_unit;         // bijection into [1, n_units)
    std::vector<int> backchannel_phonemes;    // the injected listener inventory
    std::vector<std::string> speaker_ids;
    std::vector<CorpusDialogue> dialogues;

    bool is_backchannel_phoneme(int phoneme) const;
    // Inverse of phoneme_to_unit; -1 for units outside the mapped range.
    int unit_to_phoneme(int unit) const;
};

SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusSpec& spec);

// The dialogue's utterances as transcript rows (phonemes by name, frame
// timing converted to seconds).
std::vector<TimedUtterance> corpus_transcript(const SyntheticCorpus& corpus,
                                              const CorpusDialogue& dialogue);

// Ground-truth pitch bin for one speaker and in-utterance phoneme position.
int corpus_pitch_bin(const SyntheticCorpusSpec& spec, int speaker_index, int phoneme_pos);

constexpr int kCorpusFramesPerPhoneme = 4;

}  // namespace duovox
