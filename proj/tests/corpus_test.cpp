#include <doctest.h>

#include <algorithm>
#include <set>

#include "duovox/corpus.hpp"
#include "test_util.hpp"

using namespace duovox;

namespace {

SyntheticCorpusSpec small_spec() {
    SyntheticCorpusSpec spec;
    spec.phoneme_set_size = 12;
    spec.speakers = 4;
    spec.dialogues = 6;
    spec.utterances_per_dialogue = 8;
    spec.n_units = 32;
    spec.n_pitch_bins = 8;
    return spec;
}

}  // namespace

TEST_CASE("corpus generation is deterministic") {
    const SyntheticCorpus a = make_synthetic_corpus(small_spec());
    const SyntheticCorpus b = make_synthetic_corpus(small_spec());
    REQUIRE(a.dialogues.size() == b.dialogues.size());
    CHECK(a.phoneme_to_unit == b.phoneme_to_unit);
    for (size_t d = 0; d < a.dialogues.size(); ++d) {
        CHECK(a.dialogues[d].content[0] == b.dialogues[d].content[0]);
        CHECK(a.dialogues[d].pitch[1] == b.dialogues[d].pitch[1]);
        CHECK(a.dialogues[d].total_frames == b.dialogues[d].total_frames);
    }

    SyntheticCorpusSpec reseeded = small_spec();
    reseeded.seed += 1;
    const SyntheticCorpus c = make_synthetic_corpus(reseeded);
    CHECK(c.dialogues[0].content[0] != a.dialogues[0].content[0]);
}

TEST_CASE("the phoneme-to-unit map is a bijection into the nonzero units") {
    const SyntheticCorpus corpus = make_synthetic_corpus(small_spec());
    REQUIRE(corpus.phoneme_to_unit.size() == 12);
    std::set<int> units;
    for (int ph = 0; ph < 12; ++ph) {
        const int u = corpus.phoneme_to_unit[ph];
        CHECK(u >= 1);
        CHECK(u < corpus.spec.n_units);
        units.insert(u);
        CHECK(corpus.unit_to_phoneme(u) == ph);
    }
    CHECK(units.size() == 12);  // injective
    CHECK(corpus.unit_to_phoneme(0) == -1);
    // The backchannel inventory is the tail of the phoneme set.
    CHECK(corpus.backchannel_phonemes == std::vector<int>{8, 9, 10, 11});
    CHECK(corpus.is_backchannel_phoneme(8));
    CHECK_FALSE(corpus.is_backchannel_phoneme(7));
}

TEST_CASE("frame streams render each phoneme as four frames of its mapped unit") {
    const SyntheticCorpus corpus = make_synthetic_corpus(small_spec());
    for (const auto& dlg : corpus.dialogues) {
        for (int c = 0; c < 2; ++c) {
            CHECK(static_cast<long>(dlg.content[c].size()) == dlg.total_frames);
            CHECK(dlg.pitch[c].size() == dlg.content[c].size());
        }
        for (const auto& utt : dlg.utterances) {
            const auto& stream = dlg.content[utt.channel - 1];
            const auto& pitch = dlg.pitch[utt.channel - 1];
            REQUIRE(utt.n_frames ==
                    static_cast<long>(utt.phonemes.size()) * kCorpusFramesPerPhoneme);
            for (long f = 0; f < utt.n_frames; ++f) {
                const int ph = utt.phonemes[static_cast<size_t>(f / kCorpusFramesPerPhoneme)];
                CHECK(stream[static_cast<size_t>(utt.start_frame + f)] ==
                      corpus.phoneme_to_unit[ph]);
                CHECK(pitch[static_cast<size_t>(utt.start_frame + f)] > 0);
            }
        }
    }
}

TEST_CASE("utterances never repeat a phoneme back to back") {
    // Adjacent equal phonemes would fuse into one run after unit decoding, so
    // the generator forbids them.
    const SyntheticCorpus corpus = make_synthetic_corpus(small_spec());
    for (const auto& dlg : corpus.dialogues) {
        for (const auto& utt : dlg.utterances) {
            for (size_t i = 1; i < utt.phonemes.size(); ++i) {
                CHECK(utt.phonemes[i] != utt.phonemes[i - 1]);
            }
        }
    }
}

TEST_CASE("backchannel and overlap rates are steerable") {
    SyntheticCorpusSpec none = small_spec();
    none.backchannel_rate = 0.0;
    none.overlap_rate = 0.0;
    const SyntheticCorpus quiet = make_synthetic_corpus(none);
    for (const auto& dlg : quiet.dialogues) {
        for (const auto& utt : dlg.utterances) CHECK_FALSE(utt.backchannel);
        // No overlap: within a dialogue all utterance spans are disjoint.
        for (size_t i = 1; i < dlg.utterances.size(); ++i) {
            CHECK(dlg.utterances[i].start_frame >= dlg.utterances[i - 1].end_frame());
        }
    }

    SyntheticCorpusSpec lots = small_spec();
    lots.backchannel_rate = 1.0;
    lots.dialogues = 4;
    const SyntheticCorpus chatty = make_synthetic_corpus(lots);
    long bc = 0, host = 0;
    for (const auto& dlg : chatty.dialogues) {
        for (const auto& utt : dlg.utterances) {
            (utt.backchannel ? bc : host) += 1;
        }
    }
    CHECK(bc > 0);
    CHECK(host > 0);  // hosts always remain; backchannels ride on them
    // Backchannels draw from the reserved inventory only.
    for (const auto& dlg : chatty.dialogues) {
        for (const auto& utt : dlg.utterances) {
            if (!utt.backchannel) continue;
            for (int ph : utt.phonemes) CHECK(chatty.is_backchannel_phoneme(ph));
        }
    }
}

TEST_CASE("every overlapping utterance pair crosses channels") {
    SyntheticCorpusSpec spec = small_spec();
    spec.overlap_rate = 1.0;
    const SyntheticCorpus corpus = make_synthetic_corpus(spec);
    long overlaps = 0;
    for (const auto& dlg : corpus.dialogues) {
        const auto& u = dlg.utterances;
        for (size_t i = 0; i + 1 < u.size(); ++i) {
            for (size_t j = i + 1; j < u.size(); ++j) {
                const long lo = std::max(u[i].start_frame, u[j].start_frame);
                const long hi = std::min(u[i].end_frame(), u[j].end_frame());
                if (hi > lo) {
                    CHECK(u[i].channel != u[j].channel);
                    ++overlaps;
                }
            }
        }
    }
    CHECK(overlaps > 0);
}

TEST_CASE("same-channel utterances sit far enough apart to stay separate IPUs") {
    const SyntheticCorpus corpus = make_synthetic_corpus(small_spec());
    for (const auto& dlg : corpus.dialogues) {
        std::array<long, 3> last_end{-1000, -1000, -1000};
        for (const auto& utt : dlg.utterances) {
            if (last_end[utt.channel] > -1000) {
                // The 0.2 s merge threshold is 10 frames; clearance exceeds it.
                CHECK(utt.start_frame - last_end[utt.channel] >= 11);
            }
            last_end[utt.channel] = std::max(last_end[utt.channel], utt.end_frame());
        }
    }
}

TEST_CASE("the transcript view mirrors utterance timing and phoneme names") {
    const SyntheticCorpus corpus = make_synthetic_corpus(small_spec());
    const CorpusDialogue& dlg = corpus.dialogues[0];
    const auto rows = corpus_transcript(corpus, dlg);
    REQUIRE(rows.size() == dlg.utterances.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& utt = dlg.utterances[i];
        CHECK(rows[i].channel == utt.channel);
        CHECK(rows[i].speaker_id == utt.speaker_id);
        CHECK(rows[i].start_s == doctest::Approx(utt.start_frame / 50.0));
        CHECK(rows[i].end_s == doctest::Approx(utt.end_frame() / 50.0));
        REQUIRE(rows[i].phonemes.size() == utt.phonemes.size());
        for (size_t p = 0; p < utt.phonemes.size(); ++p) {
            CHECK(rows[i].phonemes[p] == corpus.phoneme_names[utt.phonemes[p]]);
        }
    }
}

TEST_CASE("ground-truth pitch bins stay voiced and inside the codebook") {
    const SyntheticCorpusSpec spec = small_spec();
    for (int s = 0; s < spec.speakers; ++s) {
        for (int pos = 0; pos < 20; ++pos) {
            const int bin = corpus_pitch_bin(spec, s, pos);
            CHECK(bin >= 1);
            CHECK(bin < spec.n_pitch_bins);
        }
    }
}

TEST_CASE("corpus specs are validated") {
    SyntheticCorpusSpec spec = small_spec();
    spec.phoneme_set_size = 4;  // nothing left outside the backchannel tail
    CHECK_THROWS_AS(spec.validate(), PreconditionError);

    spec = small_spec();
    spec.n_units = 12;  // cannot embed 12 phonemes into units 1..11
    CHECK_THROWS_AS(spec.validate(), PreconditionError);

    spec = small_spec();
    spec.backchannel_rate = 1.5;
    CHECK_THROWS_AS(spec.validate(), PreconditionError);

    spec = small_spec();
    spec.speakers = 1;
    CHECK_THROWS_AS(spec.validate(), PreconditionError);
}
