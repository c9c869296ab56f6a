#include "duovox/turn_taking.hpp"

#include <algorithm>

namespace duovox {

TurnTimeline modify_boundaries(const std::vector<UtteranceSpan>& utterances) {
    TurnTimeline timeline;
    const int n = static_cast<int>(utterances.size());
    for (int i = 0; i < n; ++i) {
        const auto& u = utterances[i];
        if (u.b_s <= u.a_s) {
            throw InputError("utterance " + std::to_string(i + 1) +
                             " has non-positive duration");
        }
        if (i > 0 && utterances[i - 1].a_s >= u.a_s) {
            throw InputError("utterance starts must be strictly increasing (index " +
                             std::to_string(i + 1) + ")");
        }
        if (u.channel != 1 && u.channel != 2) {
            throw InputError("utterance channel must be 1 or 2");
        }
    }

    for (int i = 0; i < n; ++i) {
        const auto& u = utterances[i];
        TurnEntry e;
        e.index = i + 1;
        e.channel = u.channel;
        e.speaker_id = u.speaker_id;
        e.a_s = u.a_s;
        e.b_s = u.b_s;
        // End moves to max(own end, next start); the successor's start moves to
        // the same point so consecutive spans tile without gaps.
        e.b_hat_s = (i + 1 < n) ? std::max(u.b_s, utterances[i + 1].a_s) : u.b_s;
        e.a_hat_s = (i > 0) ? timeline.entries[i - 1].b_hat_s : u.a_s;
        e.overlaps_previous = (i > 0) && (utterances[i - 1].b_s > u.a_s);
        if (e.a_hat_s > e.b_hat_s) {
            // Happens when utterance i-1 runs past both the end of utterance i
            // and the start of utterance i+1: three-way simultaneous speech.
            throw PreconditionError("utterance " + std::to_string(i + 1) +
                                    " is swallowed by the previous utterance; "
                                    "three-way overlap is not representable");
        }
        if (e.a_hat_s == e.b_hat_s) {
            log_warn("utterance " + std::to_string(i + 1) + " has an empty modified span");
        }
        timeline.entries.push_back(std::move(e));
    }
    return timeline;
}

std::vector<TrainingSegment> slice_training_segments(const TurnTimeline& timeline,
                                                     long total_frames, int context_frames) {
    if (total_frames < 0) throw InputError("total_frames must be non-negative");
    if (context_frames < 0) throw InputError("context_frames must be non-negative");
    std::vector<TrainingSegment> segments;
    const int n = static_cast<int>(timeline.entries.size());
    for (int i = 0; i < n; ++i) {
        const auto& e = timeline.entries[i];
        TrainingSegment seg;
        seg.index = e.index;
        seg.begin_frame = seconds_to_frame(e.a_hat_s);
        // The final utterance keeps going to the end of the recording so the
        // model sees dialogue-final silence before the stop token.
        seg.end_frame = (i + 1 < n) ? seconds_to_frame(e.b_hat_s) : total_frames;
        if (seg.end_frame > total_frames) {
            throw InputError("utterance " + std::to_string(e.index) +
                             " extends past the end of the unit streams");
        }
        if (seg.begin_frame > seg.end_frame) {
            throw InputError("utterance " + std::to_string(e.index) +
                             " begins after the end of the unit streams");
        }
        seg.context_begin_frame = std::max(0L, seg.begin_frame - context_frames);
        seg.overlaps_previous = e.overlaps_previous;
        segments.push_back(seg);
    }
    return segments;
}

StreamPair slice_stream(const StreamPair& stream, long begin_frame, long end_frame) {
    if (stream.content.size() != stream.pitch.size()) {
        throw PreconditionError("content and pitch streams have different lengths");
    }
    if (begin_frame < 0 || end_frame < begin_frame ||
        end_frame > static_cast<long>(stream.content.size())) {
        throw InputError("slice [" + std::to_string(begin_frame) + ", " +
                         std::to_string(end_frame) + ") is out of range for stream of " +
                         std::to_string(stream.content.size()) + " frames");
    }
    StreamPair out;
    out.content.assign(stream.content.begin() + begin_frame, stream.content.begin() + end_frame);
    out.pitch.assign(stream.pitch.begin() + begin_frame, stream.pitch.begin() + end_frame);
    return out;
}

std::vector<int> augment_context_lengths(int context_frames) {
    if (context_frames < 0) throw InputError("context_frames must be non-negative");
    std::vector<int> lengths;
    lengths.reserve(10);
    for (int k = 0; k < 10; ++k) {
        lengths.push_back(context_frames * k / 10);
    }
    return lengths;
}

std::vector<StreamPair> augment_context(const StreamPair& context, bool overlaps_previous,
                                        int context_frames) {
    std::vector<StreamPair> variants;
    if (overlaps_previous) return variants;  // keep full context only
    if (context.content.size() != context.pitch.size()) {
        throw PreconditionError("content and pitch context have different lengths");
    }
    const long have = static_cast<long>(context.content.size());
    for (int len : augment_context_lengths(context_frames)) {
        const long keep = std::min<long>(len, have);
        StreamPair v;
        v.content.assign(context.content.end() - keep, context.content.end());
        v.pitch.assign(context.pitch.end() - keep, context.pitch.end());
        variants.push_back(std::move(v));
    }
    return variants;
}

std::array<StreamPair, 2> stitch_inference(
    const std::vector<std::array<StreamPair, 2>>& segments) {
    std::array<StreamPair, 2> out;
    for (size_t s = 0; s < segments.size(); ++s) {
        const auto& seg = segments[s];
        const size_t len = seg[0].content.size();
        for (int c = 0; c < 2; ++c) {
            if (seg[c].content.size() != len || seg[c].pitch.size() != len) {
                throw PreconditionError("segment " + std::to_string(s + 1) +
                                        " has misaligned channel streams");
            }
            out[c].content.insert(out[c].content.end(), seg[c].content.begin(),
                                  seg[c].content.end());
            out[c].pitch.insert(out[c].pitch.end(), seg[c].pitch.begin(), seg[c].pitch.end());
        }
    }
    return out;
}

}  // namespace duovox
