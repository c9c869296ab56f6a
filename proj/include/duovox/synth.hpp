#pragma once

#include <string>
#include <vector>

#include "duovox/s2u.hpp"

namespace duovox {

struct SynthConfig {
    int sample_rate = 16000;  // must be divisible by the 50 Hz frame rate
    double crossfade_ms = 5.0;
    int silence_unit = 0;  // content unit rendered as digital silence
    uint64_t speaker_seed = 0;

    int hop() const { return sample_rate / 50; }
};

// Renders aligned content/pitch unit streams to samples in [-1, 1]. Voiced
// frames are a harmonic tone at the dequantized bin-center F0 with amplitudes
// keyed by (content unit, speaker seed); unvoiced frames are low-amplitude
// smoothed noise keyed by the content unit; the silence unit is digital
// silence. Adjacent frames with different sources are joined by a linear
// crossfade. Output length is exactly frames * hop; the result is a pure
// function of its arguments.
std::vector<double> synthesize(const std::vector<int>& content, const std::vector<int>& pitch,
                               const SpeakerPitchStats& stats, const PitchQuantizer& quantizer,
                               const SynthConfig& config);

}  // namespace duovox
