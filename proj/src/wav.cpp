#include "duovox/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "duovox/common.hpp"

namespace duovox {

namespace {

void put_u32(std::ofstream& out, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

void put_u16(std::ofstream& out, uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
    out.write(b, 2);
}

uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw InputError("truncated WAV file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16(std::ifstream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw InputError("truncated WAV file");
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate) {
    if (sample_rate <= 0) throw InputError("sample rate must be positive");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open " + path + " for writing");

    const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    out.write("RIFF", 4);
    put_u32(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(sample_rate));
    put_u32(out, static_cast<uint32_t>(sample_rate) * 2);
    put_u16(out, 2);
    put_u16(out, 16);
    out.write("data", 4);
    put_u32(out, data_bytes);
    for (double s : samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        const auto v = static_cast<int16_t>(std::lround(c * 32767.0));
        put_u16(out, static_cast<uint16_t>(v));
    }
    if (!out) throw InputError("failed writing " + path);
}

WavData read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);

    char tag[4];
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "RIFF", 4) != 0) throw InputError(path + " is not a WAV file");
    get_u32(in);  // riff size
    in.read(tag, 4);
    if (!in || std::memcmp(tag, "WAVE", 4) != 0) throw InputError(path + " is not a WAV file");

    WavData wav;
    int bits = 0, channels = 0;
    bool have_fmt = false;
    while (in.read(tag, 4)) {
        const uint32_t size = get_u32(in);
        if (std::memcmp(tag, "fmt ", 4) == 0) {
            const uint16_t format = get_u16(in);
            channels = get_u16(in);
            wav.sample_rate = static_cast<int>(get_u32(in));
            get_u32(in);  // byte rate
            get_u16(in);  // block align
            bits = get_u16(in);
            if (size > 16) in.seekg(size - 16, std::ios::cur);
            if (format != 1) throw InputError(path + ": only PCM WAV is supported");
            have_fmt = true;
        } else if (std::memcmp(tag, "data", 4) == 0) {
            if (!have_fmt) throw InputError(path + ": data chunk before fmt chunk");
            if (channels != 1) throw InputError(path + ": only mono WAV is supported");
            if (bits != 16) throw InputError(path + ": only 16-bit WAV is supported");
            const uint32_t n = size / 2;
            wav.samples.resize(n);
            for (uint32_t i = 0; i < n; ++i) {
                const auto v = static_cast<int16_t>(get_u16(in));
                wav.samples[i] = static_cast<double>(v) / 32767.0;
            }
            return wav;
        } else {
            in.seekg(size + (size & 1), std::ios::cur);  // skip unknown chunk (word-aligned)
        }
    }
    throw InputError(path + ": no data chunk found");
}

}  // namespace duovox
