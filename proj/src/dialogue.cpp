#include "duovox/dialogue.hpp"

#include <algorithm>
#include <set>

namespace duovox {

std::vector<std::string> InterPausalUnit::phonemes() const {
    std::vector<std::string> out;
    for (const auto& u : members) out.insert(out.end(), u.phonemes.begin(), u.phonemes.end());
    return out;
}

std::vector<InterPausalUnit> merge_into_ipus(const std::vector<TimedUtterance>& utterances,
                                             double gap_threshold_s) {
    std::vector<InterPausalUnit> out;
    for (const auto& u : utterances) {
        if (u.end_s <= u.start_s)
            throw InputError("utterance with non-positive duration at " +
                             std::to_string(u.start_s) + "s");
        if (!out.empty()) {
            const auto& prev = out.back();
            if (u.channel != prev.channel)
                throw InputError("merge_into_ipus expects a single channel per call");
            if (u.start_s < prev.members.back().start_s)
                throw InputError("utterances not sorted by start time");
            if (u.start_s < prev.end_s)
                throw InputError("overlapping utterances within one channel at " +
                                 std::to_string(u.start_s) + "s");
        }
        if (!out.empty() && u.start_s - out.back().end_s < gap_threshold_s) {
            out.back().members.push_back(u);
            out.back().end_s = u.end_s;
        } else {
            InterPausalUnit ipu;
            ipu.channel = u.channel;
            ipu.start_s = u.start_s;
            ipu.end_s = u.end_s;
            ipu.members.push_back(u);
            out.push_back(std::move(ipu));
        }
    }
    return out;
}

void label_by_containment(std::vector<InterPausalUnit>& ipus) {
    const size_t n = ipus.size();
    std::vector<char> contains(n, 0), contained(n, 0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) {
            if (i == j || ipus[i].channel == ipus[j].channel) continue;
            if (ipus[i].start_s <= ipus[j].start_s && ipus[j].end_s <= ipus[i].end_s) {
                contains[i] = 1;
                contained[j] = 1;
            }
        }
    }
    // An IPU matching both descriptions (identical spans, nested chains) is
    // ambiguous and stays Undefined for the classifier.
    for (size_t i = 0; i < n; ++i) {
        if (contains[i] && !contained[i])
            ipus[i].label = IpuLabel::Speaker;
        else if (contained[i] && !contains[i])
            ipus[i].label = IpuLabel::Listener;
        else
            ipus[i].label = IpuLabel::Undefined;
    }
}

WrittenDialogue build_written_dialogue(const std::vector<InterPausalUnit>& ipus) {
    for (const auto& ipu : ipus)
        if (ipu.label == IpuLabel::Undefined)
            throw PreconditionError("unresolved Undefined IPU at " +
                                    std::to_string(ipu.start_s) + "s");

    std::vector<const InterPausalUnit*> speakers;
    WrittenDialogue dialogue;
    for (const auto& ipu : ipus) {
        if (ipu.channel == 1 && dialogue.speaker_pair[0].empty())
            dialogue.speaker_pair[0] = ipu.speaker_id();
        if (ipu.channel == 2 && dialogue.speaker_pair[1].empty())
            dialogue.speaker_pair[1] = ipu.speaker_id();
        if (ipu.label == IpuLabel::Speaker) speakers.push_back(&ipu);
    }
    std::stable_sort(speakers.begin(), speakers.end(),
                     [](const InterPausalUnit* a, const InterPausalUnit* b) {
                         return a->start_s < b->start_s;
                     });
    for (const InterPausalUnit* ipu : speakers) {
        WrittenTurn turn;
        turn.speaker_id = ipu->speaker_id();
        turn.phonemes = ipu->phonemes();
        turn.channel = ipu->channel;
        turn.source_start_s = ipu->start_s;
        turn.source_end_s = ipu->end_s;
        dialogue.turns.push_back(std::move(turn));
    }
    return dialogue;
}

}  // namespace duovox
