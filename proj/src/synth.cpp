#include "duovox/synth.hpp"

#include <cmath>

#include "duovox/common.hpp"
#include "duovox/rng.hpp"

namespace duovox {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr int kMaxHarmonics = 10;
constexpr double kVoicedPeak = 0.3;   // sum of harmonic amplitudes
constexpr double kNoisePeak = 0.04;

struct FrameSource {
    enum Kind { Silence, Voiced, Unvoiced } kind = Silence;
    double f0 = 0.0;
    uint64_t key = 0;
    std::vector<double> amps;  // voiced harmonic amplitudes

    bool operator==(const FrameSource& o) const {
        return kind == o.kind && f0 == o.f0 && key == o.key;
    }
};

FrameSource make_source(int content, int pitch, const SpeakerPitchStats& stats,
                        const PitchQuantizer& quantizer, const SynthConfig& config) {
    FrameSource s;
    if (content == config.silence_unit) return s;
    if (pitch > 0) {
        s.kind = FrameSource::Voiced;
        s.f0 = dequantize_pitch(pitch, stats, quantizer);
        s.key = hash_mix(config.speaker_seed, static_cast<uint64_t>(content));
        const int harmonics = std::max(
            1, std::min(kMaxHarmonics,
                        static_cast<int>(0.45 * config.sample_rate / std::max(s.f0, 1.0))));
        s.amps.resize(harmonics);
        double total = 0.0;
        for (int h = 0; h < harmonics; ++h) {
            s.amps[h] = (0.4 + 0.6 * hash_unit_interval(s.key, static_cast<uint64_t>(h))) /
                        static_cast<double>(h + 1);
            total += s.amps[h];
        }
        for (double& a : s.amps) a *= kVoicedPeak / total;
    } else {
        s.kind = FrameSource::Unvoiced;
        s.key = hash_mix(0x6e6f697365ULL, static_cast<uint64_t>(content));
    }
    return s;
}

// Sample of one source at global sample index n. Voiced phase is a function
// of global time, so consecutive frames with the same source are continuous.
double render(const FrameSource& s, long n, int sample_rate) {
    switch (s.kind) {
        case FrameSource::Silence:
            return 0.0;
        case FrameSource::Voiced: {
            double out = 0.0;
            const double t = static_cast<double>(n) / static_cast<double>(sample_rate);
            for (size_t h = 0; h < s.amps.size(); ++h) {
                const double cycles = std::fmod(static_cast<double>(h + 1) * s.f0 * t, 1.0);
                out += s.amps[h] * std::sin(kTwoPi * cycles);
            }
            return out;
        }
        case FrameSource::Unvoiced: {
            const double a = 2.0 * hash_unit_interval(s.key, static_cast<uint64_t>(n)) - 1.0;
            const double b =
                n > 0 ? 2.0 * hash_unit_interval(s.key, static_cast<uint64_t>(n - 1)) - 1.0
                      : 0.0;
            return kNoisePeak * 0.5 * (a + b);
        }
    }
    return 0.0;
}

}  // namespace

std::vector<double> synthesize(const std::vector<int>& content, const std::vector<int>& pitch,
                               const SpeakerPitchStats& stats, const PitchQuantizer& quantizer,
                               const SynthConfig& config) {
    if (content.size() != pitch.size()) {
        throw InputError("content and pitch streams have different lengths (" +
                         std::to_string(content.size()) + " vs " +
                         std::to_string(pitch.size()) + ")");
    }
    if (config.sample_rate <= 0 || config.sample_rate % kFrameRateHz != 0) {
        throw InputError("sample rate must be a positive multiple of 50 Hz");
    }
    const int hop = config.hop();
    const long xfade = std::lround(config.crossfade_ms * config.sample_rate / 1000.0);
    if (xfade < 0 || xfade >= hop) {
        throw InputError("crossfade must be shorter than one 20 ms frame");
    }

    const long n_frames = static_cast<long>(content.size());
    std::vector<FrameSource> sources(n_frames);
    for (long i = 0; i < n_frames; ++i) {
        sources[i] = make_source(content[i], pitch[i], stats, quantizer, config);
    }

    std::vector<double> out(static_cast<size_t>(n_frames) * hop, 0.0);
    for (long i = 0; i < n_frames; ++i) {
        const bool blend = i > 0 && !(sources[i] == sources[i - 1]);
        for (int j = 0; j < hop; ++j) {
            const long n = i * hop + j;
            double s = render(sources[i], n, config.sample_rate);
            if (blend && j < xfade) {
                const double w = static_cast<double>(j + 1) / static_cast<double>(xfade + 1);
                s = (1.0 - w) * render(sources[i - 1], n, config.sample_rate) + w * s;
            }
            out[static_cast<size_t>(n)] = s;
        }
    }
    return out;
}

}  // namespace duovox
