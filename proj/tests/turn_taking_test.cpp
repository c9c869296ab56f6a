#include <doctest.h>

#include <algorithm>

#include "duovox/rng.hpp"
#include "duovox/turn_taking.hpp"

using namespace duovox;

namespace {

UtteranceSpan span(int channel, double a, double b, const std::string& speaker = "s") {
    return {channel, speaker, a, b};
}

}  // namespace

TEST_CASE("boundary rewrite moves each end to max(own end, next start)") {
    // Gap between 1 and 2; overlap between 2 and 3.
    const auto tl = modify_boundaries(
        {span(1, 0.0, 2.0), span(2, 2.5, 4.0), span(1, 3.7, 5.0)});
    REQUIRE(tl.entries.size() == 3);

    CHECK(tl.entries[0].a_hat_s == doctest::Approx(0.0));
    CHECK(tl.entries[0].b_hat_s == doctest::Approx(2.5));  // max(2.0, 2.5)
    CHECK_FALSE(tl.entries[0].overlaps_previous);

    CHECK(tl.entries[1].a_hat_s == doctest::Approx(2.5));
    CHECK(tl.entries[1].b_hat_s == doctest::Approx(4.0));  // max(4.0, 3.7)
    CHECK_FALSE(tl.entries[1].overlaps_previous);

    CHECK(tl.entries[2].a_hat_s == doctest::Approx(4.0));
    CHECK(tl.entries[2].b_hat_s == doctest::Approx(5.0));  // last keeps its own end
    CHECK(tl.entries[2].overlaps_previous);  // 4.0 > 3.7 on raw boundaries

    // Modified spans tile: b_hat_n == a_hat_{n+1} with no gap or overlap.
    for (size_t i = 0; i + 1 < tl.entries.size(); ++i) {
        CHECK(tl.entries[i].b_hat_s == tl.entries[i + 1].a_hat_s);
    }
}

TEST_CASE("boundary rewrite validates its input") {
    CHECK_THROWS_AS(modify_boundaries({span(1, 1.0, 1.0)}), InputError);  // empty span
    CHECK_THROWS_AS(modify_boundaries({span(1, 0.0, 1.0), span(2, 0.0, 2.0)}),
                    InputError);  // starts not strictly increasing
    CHECK_THROWS_AS(modify_boundaries({span(3, 0.0, 1.0)}), InputError);  // bad channel
}

TEST_CASE("an utterance swallowed by three-way overlap is rejected") {
    // Utterance 1 runs past both the end of 2 and the start of 3, so 3 would
    // overlap two active utterances at once.
    CHECK_THROWS_AS(
        modify_boundaries({span(1, 0.0, 10.0), span(2, 1.0, 2.0), span(1, 2.5, 3.0)}),
        PreconditionError);
}

TEST_CASE("training segments follow modified boundaries and the last extends to the end") {
    const auto tl = modify_boundaries({span(1, 0.5, 2.0), span(2, 2.5, 4.0)});
    const auto segs = slice_training_segments(tl, 300, 50);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].begin_frame == seconds_to_frame(0.5));
    CHECK(segs[0].end_frame == seconds_to_frame(2.5));
    CHECK(segs[0].context_begin_frame == 0);  // 25 - 50 clamps to 0
    CHECK(segs[1].begin_frame == seconds_to_frame(2.5));
    CHECK(segs[1].end_frame == 300);  // extends past b_hat to total_frames
    CHECK(segs[1].context_begin_frame == seconds_to_frame(2.5) - 50);

    // Segments tile in frame space.
    CHECK(segs[0].end_frame >= segs[1].begin_frame);
    CHECK(segs[0].end_frame == seconds_to_frame(tl.entries[1].a_hat_s));
}

TEST_CASE("segments past the end of the unit streams are rejected") {
    const auto tl = modify_boundaries({span(1, 0.5, 2.0), span(2, 2.5, 4.0)});
    CHECK_THROWS_AS(slice_training_segments(tl, 100, 50), InputError);  // 2.5s = frame 125
}

TEST_CASE("stream slicing returns the requested half-open window") {
    StreamPair s;
    s.content = {10, 11, 12, 13, 14};
    s.pitch = {1, 2, 3, 4, 5};
    const auto cut = slice_stream(s, 1, 4);
    CHECK(cut.content == std::vector<int>{11, 12, 13});
    CHECK(cut.pitch == std::vector<int>{2, 3, 4});
    CHECK(slice_stream(s, 2, 2).content.empty());
    CHECK_THROWS_AS(slice_stream(s, 3, 6), InputError);
    CHECK_THROWS_AS(slice_stream(s, -1, 2), InputError);
}

TEST_CASE("augmentation lengths are the ten floored tenths of the context size") {
    CHECK(augment_context_lengths(500) ==
          std::vector<int>{0, 50, 100, 150, 200, 250, 300, 350, 400, 450});
    CHECK(augment_context_lengths(50) ==
          std::vector<int>{0, 5, 10, 15, 20, 25, 30, 35, 40, 45});
    CHECK(augment_context_lengths(7) == std::vector<int>{0, 0, 1, 2, 2, 3, 4, 4, 5, 6});
    CHECK(augment_context_lengths(0) == std::vector<int>(10, 0));
}

TEST_CASE("context augmentation truncates from the old end and skips overlapping segments") {
    StreamPair ctx;
    for (int i = 0; i < 40; ++i) {
        ctx.content.push_back(100 + i);
        ctx.pitch.push_back(i);
    }
    const auto variants = augment_context(ctx, false, 50);
    REQUIRE(variants.size() == 10);
    const auto lengths = augment_context_lengths(50);
    for (size_t k = 0; k < variants.size(); ++k) {
        const long keep = std::min<long>(lengths[k], 40);
        CHECK(static_cast<long>(variants[k].content.size()) == keep);
        if (keep > 0) {
            // Most recent frames survive.
            CHECK(variants[k].content.back() == 139);
            CHECK(variants[k].content.front() == 100 + 40 - keep);
        }
    }
    CHECK(augment_context(ctx, true, 50).empty());
}

TEST_CASE("inference stitching concatenates aligned segments and rejects misaligned ones") {
    std::array<StreamPair, 2> seg1, seg2;
    seg1[0] = {{1, 2}, {0, 1}};
    seg1[1] = {{3, 4}, {1, 0}};
    seg2[0] = {{5}, {2}};
    seg2[1] = {{6}, {3}};
    const auto full = stitch_inference({seg1, seg2});
    CHECK(full[0].content == std::vector<int>{1, 2, 5});
    CHECK(full[1].content == std::vector<int>{3, 4, 6});
    CHECK(full[1].pitch == std::vector<int>{1, 0, 3});

    std::array<StreamPair, 2> bad;
    bad[0] = {{1, 2}, {0, 1}};
    bad[1] = {{3}, {1}};
    CHECK_THROWS_AS(stitch_inference({bad}), PreconditionError);
}

TEST_CASE("boundary rewrite matches the max formula on randomized pairs") {
    Rng rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        const double a1 = rng.uniform(0.0, 10.0);
        const double b1 = a1 + rng.uniform(0.1, 5.0);
        const double a2 = a1 + rng.uniform(0.01, 6.0);
        const double b2 = a2 + rng.uniform(0.1, 5.0);
        if (b1 >= b2) continue;  // avoid the rejected swallowed case
        const auto tl = modify_boundaries({span(1, a1, b1), span(2, a2, b2)});
        CHECK(tl.entries[0].b_hat_s == std::max(b1, a2));
        CHECK(tl.entries[1].a_hat_s == tl.entries[0].b_hat_s);
        CHECK(tl.entries[1].overlaps_previous == (b1 > a2));
    }
}
