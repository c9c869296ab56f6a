#pragma once

#include <array>
#include <string>
#include <vector>

#include "duovox/codec.hpp"
#include "duovox/common.hpp"

namespace duovox {

// Original and modified boundaries for one utterance. Modified boundaries
// tile the dialogue: b_hat of utterance n equals a_hat of utterance n+1.
struct TurnEntry {
    int index = 0;  // n, 1-based
    int channel = 1;
    std::string speaker_id;
    double a_s = 0.0;
    double b_s = 0.0;
    double a_hat_s = 0.0;
    double b_hat_s = 0.0;
    // Overlap with the previous utterance, judged on unmodified boundaries.
    bool overlaps_previous = false;
};

struct TurnTimeline {
    std::vector<TurnEntry> entries;
};

struct UtteranceSpan {
    int channel = 1;
    std::string speaker_id;
    double a_s = 0.0;
    double b_s = 0.0;
};

// Boundary rewrite: b_hat_n = a_hat_{n+1} = max(b_n, a_{n+1}). Starts must be
// strictly increasing; an utterance reaching past its successor's modified
// span (overlap with two predecessors) is rejected.
TurnTimeline modify_boundaries(const std::vector<UtteranceSpan>& utterances);

// One sliced training segment: frame window plus overlap flag. Frame indices
// use round-half-up at 50 Hz; the boundary frame belongs to the later segment.
struct TrainingSegment {
    int index = 0;  // n, 1-based
    long begin_frame = 0;
    long end_frame = 0;
    long context_begin_frame = 0;  // max(0, begin - C)
    bool overlaps_previous = false;
};

std::vector<TrainingSegment> slice_training_segments(const TurnTimeline& timeline,
                                                     long total_frames, int context_frames);

// Extracts [begin, end) from a full-dialogue stream.
StreamPair slice_stream(const StreamPair& stream, long begin_frame, long end_frame);

// Context-reduction variants: ten truncated context lengths
// {0, floor(0.1 C), ..., floor(0.9 C)} for non-overlapping segments, none for
// overlapping ones. Truncation keeps the most recent frames.
std::vector<int> augment_context_lengths(int context_frames);
std::vector<StreamPair> augment_context(const StreamPair& context, bool overlaps_previous,
                                        int context_frames);

// Concatenates per-utterance generated streams into the full dialogue.
std::array<StreamPair, 2> stitch_inference(
    const std::vector<std::array<StreamPair, 2>>& segments);

}  // namespace duovox
