#pragma once

#include <string>
#include <vector>

namespace duovox {

// 16-bit PCM mono WAV. Samples are doubles in [-1, 1]; values outside are
// clamped on write.
void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate);

struct WavData {
    std::vector<double> samples;
    int sample_rate = 0;
};

WavData read_wav(const std::string& path);

}  // namespace duovox
