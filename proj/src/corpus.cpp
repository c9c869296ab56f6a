#include "duovox/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "duovox/common.hpp"
#include "duovox/rng.hpp"

namespace duovox {

namespace {

constexpr int kBackchannelInventory = 4;
// Frame-count ranges that keep the generated layouts well separated: every
// same-channel silence stays above the IPU merge threshold, overlaps stay
// shorter than either utterance, and backchannels sit strictly inside their
// host utterance.
constexpr int kMinUtterancePhonemes = 10;
constexpr int kMaxUtterancePhonemes = 16;
constexpr int kMinBackchannelPhonemes = 2;
constexpr int kMaxBackchannelPhonemes = 3;
constexpr long kMinChannelClearance = 11;  // 220 ms: never merges into a neighbor
constexpr long kMinOverlapFrames = 4;
constexpr long kMaxOverlapFrames = 10;
constexpr long kMinGapFrames = 12;
constexpr long kMaxGapFrames = 40;
constexpr long kMinPauseFrames = 15;
constexpr long kMaxPauseFrames = 40;
constexpr long kLeadInFrames = 25;
constexpr long kTailFrames = 25;
// Backchannels end well before their host does so that a following overlapped
// utterance on the same channel still clears them.
constexpr long kBackchannelHeadMargin = 4;
constexpr long kBackchannelTailMargin = 22;
constexpr double kChannelSwitchProbability = 0.7;

std::string two_digits(int v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d", v);
    return buf;
}

}  // namespace

void SyntheticCorpusSpec::validate() const {
    if (phoneme_set_size < 2 * kBackchannelInventory) {
        throw PreconditionError("phoneme set too small to hold a backchannel inventory");
    }
    if (!(backchannel_rate >= 0.0 && backchannel_rate <= 1.0) ||
        !(overlap_rate >= 0.0 && overlap_rate <= 1.0)) {
        throw PreconditionError("injection rates must lie in [0, 1]");
    }
    if (speakers < 2) throw PreconditionError("need at least two speakers");
    if (dialogues < 1 || utterances_per_dialogue < 1) {
        throw PreconditionError("corpus must contain at least one dialogue and utterance");
    }
    if (n_units < phoneme_set_size + 1) {
        throw PreconditionError("unit inventory too small for an invertible phoneme map");
    }
    if (n_pitch_bins < 2) throw PreconditionError("need at least one voiced pitch bin");
}

bool SyntheticCorpus::is_backchannel_phoneme(int phoneme) const {
    return std::find(backchannel_phonemes.begin(), backchannel_phonemes.end(), phoneme) !=
           backchannel_phonemes.end();
}

int SyntheticCorpus::unit_to_phoneme(int unit) const {
    for (size_t i = 0; i < phoneme_to_unit.size(); ++i) {
        if (phoneme_to_unit[i] == unit) return static_cast<int>(i);
    }
    return -1;
}

int corpus_pitch_bin(const SyntheticCorpusSpec& spec, int speaker_index, int phoneme_pos) {
    const int voiced = spec.n_pitch_bins - 1;
    const int base = speaker_index % voiced;
    return 1 + (base + (phoneme_pos & 1)) % voiced;
}

SyntheticCorpus make_synthetic_corpus(const SyntheticCorpusSpec& spec) {
    spec.validate();
    SyntheticCorpus corpus;
    corpus.spec = spec;
    for (int i = 0; i < spec.phoneme_set_size; ++i) {
        corpus.phoneme_names.push_back("p" + two_digits(i));
    }
    for (int i = spec.phoneme_set_size - kBackchannelInventory; i < spec.phoneme_set_size; ++i) {
        corpus.backchannel_phonemes.push_back(i);
    }
    for (int i = 0; i < spec.speakers; ++i) {
        corpus.speaker_ids.push_back("spk" + two_digits(i));
    }

    // Invertible phoneme→unit map: a seeded permutation of [1, set_size].
    corpus.phoneme_to_unit.resize(spec.phoneme_set_size);
    std::iota(corpus.phoneme_to_unit.begin(), corpus.phoneme_to_unit.end(), 1);
    Rng map_rng(spec.map_seed);
    map_rng.shuffle(corpus.phoneme_to_unit);

    const int regular_phonemes = spec.phoneme_set_size - kBackchannelInventory;
    for (int d = 0; d < spec.dialogues; ++d) {
        Rng rng(hash_mix(spec.seed, static_cast<uint64_t>(d)));
        CorpusDialogue dlg;
        dlg.id = "dlg" + two_digits(d);
        const int s1 = (2 * d) % spec.speakers;
        const int s2 = (2 * d + 1) % spec.speakers;
        dlg.speaker_pair = {corpus.speaker_ids[s1], corpus.speaker_ids[s2]};
        const std::array<int, 2> speaker_index = {s1, s2};

        std::array<long, 3> last_end = {0, -1000, -1000};  // index by channel
        int prev_channel = 0;
        long prev_end = 0;
        for (int u = 0; u < spec.utterances_per_dialogue; ++u) {
            int channel;
            long start;
            if (u == 0) {
                channel = 1;
                start = kLeadInFrames;
            } else if (rng.uniform() >= kChannelSwitchProbability &&
                       prev_channel != 0) {
                channel = prev_channel;  // same speaker continues after a pause
                start = prev_end +
                        rng.uniform_int(static_cast<int>(kMinPauseFrames),
                                        static_cast<int>(kMaxPauseFrames));
            } else {
                channel = prev_channel == 1 ? 2 : 1;
                if (rng.uniform() < spec.overlap_rate) {
                    start = prev_end -
                            rng.uniform_int(static_cast<int>(kMinOverlapFrames),
                                            static_cast<int>(kMaxOverlapFrames));
                } else {
                    start = prev_end +
                            rng.uniform_int(static_cast<int>(kMinGapFrames),
                                            static_cast<int>(kMaxGapFrames));
                }
            }
            start = std::max(start, last_end[channel] + kMinChannelClearance);

            CorpusUtterance utt;
            utt.channel = channel;
            utt.speaker_id = dlg.speaker_pair[channel - 1];
            utt.start_frame = start;
            const int n_ph = rng.uniform_int(kMinUtterancePhonemes, kMaxUtterancePhonemes);
            for (int k = 0; k < n_ph; ++k) {
                // No immediate repeats: adjacent equal phonemes would be
                // indistinguishable from one long phoneme after unit decoding.
                int pick;
                if (k == 0) {
                    pick = rng.uniform_int(0, regular_phonemes - 1);
                } else {
                    pick = rng.uniform_int(0, regular_phonemes - 2);
                    if (pick >= utt.phonemes.back()) ++pick;
                }
                utt.phonemes.push_back(pick);
            }
            utt.n_frames = static_cast<long>(n_ph) * kCorpusFramesPerPhoneme;
            dlg.utterances.push_back(utt);

            // Backchannel on the opposite channel, strictly inside this
            // utterance and clear of that channel's neighbors.
            if (rng.uniform() < spec.backchannel_rate) {
                const int bc_channel = 3 - channel;
                const int bc_ph = rng.uniform_int(kMinBackchannelPhonemes,
                                                  kMaxBackchannelPhonemes);
                const long bc_len = static_cast<long>(bc_ph) * kCorpusFramesPerPhoneme;
                const long earliest = std::max(start + kBackchannelHeadMargin,
                                               last_end[bc_channel] + kMinChannelClearance);
                const long latest = utt.end_frame() - bc_len - kBackchannelTailMargin;
                if (latest >= earliest) {
                    CorpusUtterance bc;
                    bc.channel = bc_channel;
                    bc.speaker_id = dlg.speaker_pair[bc_channel - 1];
                    bc.start_frame = rng.uniform_int(static_cast<int>(earliest),
                                                     static_cast<int>(latest));
                    int prev_pick = -1;
                    for (int k = 0; k < bc_ph; ++k) {
                        int pick;
                        if (k == 0) {
                            pick = rng.uniform_int(0, kBackchannelInventory - 1);
                        } else {
                            pick = rng.uniform_int(0, kBackchannelInventory - 2);
                            if (pick >= prev_pick) ++pick;
                        }
                        prev_pick = pick;
                        bc.phonemes.push_back(corpus.backchannel_phonemes[pick]);
                    }
                    bc.n_frames = bc_len;
                    bc.backchannel = true;
                    dlg.utterances.push_back(bc);
                    last_end[bc_channel] = bc.end_frame();
                }
            }
            prev_channel = channel;
            prev_end = utt.end_frame();
            last_end[channel] = prev_end;
        }

        std::stable_sort(dlg.utterances.begin(), dlg.utterances.end(),
                         [](const CorpusUtterance& a, const CorpusUtterance& b) {
                             return a.start_frame < b.start_frame;
                         });
        long max_end = 0;
        for (const auto& utt : dlg.utterances) max_end = std::max(max_end, utt.end_frame());
        dlg.total_frames = max_end + kTailFrames;

        for (int c = 0; c < 2; ++c) {
            dlg.content[c].assign(dlg.total_frames, 0);
            dlg.pitch[c].assign(dlg.total_frames, 0);
        }
        for (const auto& utt : dlg.utterances) {
            const int sp = speaker_index[utt.channel - 1];
            for (long f = 0; f < utt.n_frames; ++f) {
                const int k = static_cast<int>(f / kCorpusFramesPerPhoneme);
                const long frame = utt.start_frame + f;
                dlg.content[utt.channel - 1][frame] = corpus.phoneme_to_unit[utt.phonemes[k]];
                dlg.pitch[utt.channel - 1][frame] = corpus_pitch_bin(spec, sp, k);
            }
        }
        corpus.dialogues.push_back(std::move(dlg));
    }
    return corpus;
}

std::vector<TimedUtterance> corpus_transcript(const SyntheticCorpus& corpus,
                                              const CorpusDialogue& dialogue) {
    std::vector<TimedUtterance> rows;
    for (const auto& utt : dialogue.utterances) {
        TimedUtterance row;
        row.channel = utt.channel;
        row.speaker_id = utt.speaker_id;
        row.start_s = frame_to_seconds(utt.start_frame);
        row.end_s = frame_to_seconds(utt.end_frame());
        for (int ph : utt.phonemes) {
            if (!row.text.empty()) row.text += ' ';
            row.text += corpus.phoneme_names[ph];
            row.phonemes.push_back(corpus.phoneme_names[ph]);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace duovox
