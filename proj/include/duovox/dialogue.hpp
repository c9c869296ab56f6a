#pragma once

#include <array>
#include <string>
#include <vector>

#include "duovox/common.hpp"

namespace duovox {

// One time-stamped verbal event on a single channel of a two-channel
// transcript. Phonemes are taken as input; no grapheme-to-phoneme here.
struct TimedUtterance {
    int channel = 1;  // 1 or 2
    std::string speaker_id;
    double start_s = 0.0;
    double end_s = 0.0;
    std::string text;
    std::vector<std::string> phonemes;
};

enum class IpuLabel { Speaker, Listener, Undefined };

// Maximal run of same-channel utterances with internal silences below the
// merge threshold.
struct InterPausalUnit {
    int channel = 1;
    double start_s = 0.0;
    double end_s = 0.0;
    std::vector<TimedUtterance> members;
    IpuLabel label = IpuLabel::Undefined;

    std::string speaker_id() const {
        return members.empty() ? std::string() : members.front().speaker_id;
    }
    std::vector<std::string> phonemes() const;
    double duration_s() const { return end_s - start_s; }
};

struct WrittenTurn {
    std::string speaker_id;
    std::vector<std::string> phonemes;  // may contain the LAU laughter tag
    // Source-time metadata, kept apart from the textual content for
    // training-time alignment.
    int channel = 1;
    double source_start_s = 0.0;
    double source_end_s = 0.0;
};

struct WrittenDialogue {
    std::vector<WrittenTurn> turns;
    std::array<std::string, 2> speaker_pair;  // channel 1, channel 2
};

constexpr double kDefaultGapThresholdS = 0.2;

// Merge per-channel utterances into IPUs: two successive utterances share an
// IPU iff the silence between them is < gap_threshold_s. Input must be sorted
// by start and non-overlapping within the channel.
std::vector<InterPausalUnit> merge_into_ipus(const std::vector<TimedUtterance>& utterances,
                                             double gap_threshold_s = kDefaultGapThresholdS);

// Containment rule over both channels. An IPU whose span encloses an
// opposite-channel IPU (boundary ties count as containment) becomes Speaker,
// the enclosed one Listener. IPUs matching neither or both descriptions stay
// Undefined.
void label_by_containment(std::vector<InterPausalUnit>& ipus);

// Drops Listener IPUs and emits the remaining ones in start-time order.
// Requires every label resolved: a residual Undefined is a precondition error.
WrittenDialogue build_written_dialogue(const std::vector<InterPausalUnit>& ipus);

}  // namespace duovox
