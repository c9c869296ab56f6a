#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "duovox/vocab.hpp"

namespace duovox {

// Frame-synchronous content/pitch token sequences for one channel at 50 Hz.
struct StreamPair {
    std::vector<int> content;
    std::vector<int> pitch;
};

// Run-length element: a unit and the positive frame count of its run.
struct EdgeRun {
    int unit = 0;
    int duration = 1;
};

// Per-channel prefix: BOS, speaker, current-utterance phonemes (or LIS),
// NXT, next-utterance phonemes (or LIS), CTX, context units, SEP.
// Content and pitch streams share every position except the CTX section,
// which carries stream-specific context units.
struct PrefixSequence {
    std::vector<int> content;
    std::vector<int> pitch;
};

struct PrefixSpec {
    std::array<std::string, 2> speaker_pair;      // channel 1, channel 2
    int utterance_channel = 1;                    // who utters phonemes_n
    std::vector<std::string> phonemes_n;
    int next_channel = 0;                         // 0 when there is no next utterance
    std::vector<std::string> phonemes_next;       // empty for the last utterance
    std::array<StreamPair, 2> context;            // per channel, at most C frames
};

// Builds both channels' prefixes. Phoneme positions on the non-uttering
// channel are replaced position-wise with LIS, so prefix lengths always agree
// across channels. Unknown phonemes become UNK with a warning.
std::array<PrefixSequence, 2> build_prefix(const Vocabulary& vocab, const PrefixSpec& spec,
                                           int context_capacity);

// Simplified prefix for single-channel pre-training: BOS, speaker, phonemes,
// SEP. No NXT section, no CTX section.
PrefixSequence build_pretrain_prefix(const Vocabulary& vocab, const std::string& speaker_id,
                                     const std::vector<std::string>& phonemes);

// Shifts the pitch stream one step later: content gains a trailing PAD, pitch
// a leading PAD. Empty input stays empty.
StreamPair delay_pitch(const StreamPair& pair, const Vocabulary& vocab);

// Inverse of delay_pitch.
StreamPair align_pitch(const StreamPair& delayed, const Vocabulary& vocab);

// Run-length codec. t = 0 always starts a run.
std::vector<EdgeRun> edge_encode(const std::vector<int>& frames);
std::vector<int> edge_decode(const std::vector<EdgeRun>& runs);

// One channel of an assembled training example.
struct ChannelExample {
    std::vector<int> input_content;
    std::vector<int> input_pitch;
    std::vector<int> target_content;
    std::vector<int> target_pitch;
    std::vector<uint8_t> edge_content;  // aligned with targets; false in the prefix
    std::vector<uint8_t> edge_pitch;
    std::vector<int> dur_content;       // run length starting at the edge, 0 elsewhere
    std::vector<int> dur_pitch;
    int prefix_len = 0;
};

struct TrainingExample {
    std::array<ChannelExample, 2> channels;
    bool single_channel = false;  // pre-training examples use channel 0 only
};

constexpr int kDefaultMaxDuration = 256;

// prefix + delayed target streams -> model input, shifted target, edge masks
// and capped durations. The prefix region carries no loss.
TrainingExample assemble_example(const std::array<PrefixSequence, 2>& prefixes,
                                 const std::array<StreamPair, 2>& targets,
                                 const Vocabulary& vocab,
                                 int max_duration = kDefaultMaxDuration);

// Single-channel variant used for pre-training.
TrainingExample assemble_pretrain_example(const PrefixSequence& prefix, const StreamPair& target,
                                          const Vocabulary& vocab,
                                          int max_duration = kDefaultMaxDuration);

// Binary record file with a trailing index.
void save_dataset(const std::string& path, const std::vector<TrainingExample>& examples);
std::vector<TrainingExample> load_dataset(const std::string& path);

}  // namespace duovox
