#include <doctest.h>

#include <cmath>

#include "duovox/metrics.hpp"
#include "duovox/synth.hpp"
#include "duovox/wav.hpp"
#include "test_util.hpp"

using namespace duovox;

namespace {

SpeakerPitchStats test_stats() {
    SpeakerPitchStats stats;
    stats.speaker_id = "spk";
    stats.mean_log_f0 = std::log(160.0);
    stats.std_log_f0 = 0.2;
    return stats;
}

}  // namespace

TEST_CASE("synthesis emits exactly hop samples per frame, inside [-1, 1]") {
    SynthConfig cfg;
    const std::vector<int> content{3, 3, 7, 7, 0, 5};
    const std::vector<int> pitch{10, 10, 12, 0, 0, 20};
    const auto samples = synthesize(content, pitch, test_stats(), PitchQuantizer{}, cfg);
    CHECK(samples.size() == content.size() * static_cast<size_t>(cfg.hop()));
    for (double s : samples) {
        CHECK(s <= 1.0);
        CHECK(s >= -1.0);
    }
}

TEST_CASE("synthesis is a pure function of its arguments") {
    SynthConfig cfg;
    cfg.speaker_seed = 42;
    const std::vector<int> content{1, 1, 2, 0, 2};
    const std::vector<int> pitch{5, 5, 6, 0, 6};
    const auto a = synthesize(content, pitch, test_stats(), PitchQuantizer{}, cfg);
    const auto b = synthesize(content, pitch, test_stats(), PitchQuantizer{}, cfg);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    SynthConfig other = cfg;
    other.speaker_seed = 43;
    const auto c = synthesize(content, pitch, test_stats(), PitchQuantizer{}, other);
    double diff = 0.0;
    for (size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - c[i]));
    CHECK(diff > 0.0);
}

TEST_CASE("the silence unit renders as digital silence") {
    SynthConfig cfg;
    const auto samples =
        synthesize({0, 0, 0, 0}, {0, 0, 0, 0}, test_stats(), PitchQuantizer{}, cfg);
    for (double s : samples) CHECK(s == 0.0);
    CHECK(synthesize({}, {}, test_stats(), PitchQuantizer{}, cfg).empty());
}

TEST_CASE("synthesis validates stream alignment and sample rate") {
    SynthConfig cfg;
    CHECK_THROWS_AS(synthesize({1, 2}, {1}, test_stats(), PitchQuantizer{}, cfg), InputError);
    cfg.sample_rate = 16001;  // not divisible by the 50 Hz frame rate
    CHECK_THROWS_AS(synthesize({1}, {1}, test_stats(), PitchQuantizer{}, cfg), InputError);
}

TEST_CASE("a sustained voiced unit comes out at its dequantized pitch") {
    SynthConfig cfg;
    const SpeakerPitchStats stats = test_stats();
    const PitchQuantizer q;
    const int bin = 16;
    const double expected_f0 = dequantize_pitch(bin, stats, q);

    // One second of a single voiced unit at one pitch bin.
    const std::vector<int> content(50, 9);
    const std::vector<int> pitch(50, bin);
    const auto samples = synthesize(content, pitch, stats, q, cfg);

    const std::vector<double> track = estimate_f0_track(samples, cfg.sample_rate);
    REQUIRE(!track.empty());
    std::vector<double> voiced;
    for (double f : track) {
        if (f > 0.0) voiced.push_back(f);
    }
    REQUIRE(voiced.size() >= track.size() / 2);
    const double med = median(voiced);
    CHECK(med == doctest::Approx(expected_f0).epsilon(0.05));
}

TEST_CASE("wav files round-trip 16-bit samples") {
    const auto dir = duovox::testing::scratch_dir("wav_roundtrip");
    SynthConfig cfg;
    const auto samples = synthesize({4, 4, 8, 8}, {10, 10, 14, 14}, test_stats(),
                                    PitchQuantizer{}, cfg);
    const std::string path = (dir / "tone.wav").string();
    write_wav(path, samples, cfg.sample_rate);

    const WavData back = read_wav(path);
    CHECK(back.sample_rate == cfg.sample_rate);
    REQUIRE(back.samples.size() == samples.size());
    double max_err = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        max_err = std::max(max_err, std::abs(back.samples[i] - samples[i]));
    }
    // 16-bit quantization error bound.
    CHECK(max_err <= 1.0 / 32767.0 + 1e-9);
}

TEST_CASE("wav writing clamps out-of-range samples instead of wrapping") {
    const auto dir = duovox::testing::scratch_dir("wav_clamp");
    const std::string path = (dir / "clamp.wav").string();
    write_wav(path, {2.0, -2.0, 0.5}, 16000);
    const WavData back = read_wav(path);
    REQUIRE(back.samples.size() == 3);
    CHECK(back.samples[0] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(back.samples[1] == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(back.samples[2] == doctest::Approx(0.5).epsilon(1e-3));
}
