#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "duovox/common.hpp"

namespace duovox {

// Little-endian binary file helpers used by every persisted model artifact.
// Each file starts with a 4-byte magic and a u32 format version.

class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw InputError("cannot open for writing: " + path);
    }

    void magic(const char tag[4], uint32_t version) {
        out_.write(tag, 4);
        u32(version);
    }

    void u8(uint8_t v) { out_.write(reinterpret_cast<const char*>(&v), 1); }
    void u32(uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), 4); }
    void u64(uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
    void i32(int32_t v) { out_.write(reinterpret_cast<const char*>(&v), 4); }
    void i64(int64_t v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
    void f64(double v) { out_.write(reinterpret_cast<const char*>(&v), 8); }

    void str(const std::string& s) {
        u64(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    void vec_i32(const std::vector<int32_t>& v) {
        u64(v.size());
        out_.write(reinterpret_cast<const char*>(v.data()),
                   static_cast<std::streamsize>(v.size() * 4));
    }

    void vec_f64(const std::vector<double>& v) {
        u64(v.size());
        out_.write(reinterpret_cast<const char*>(v.data()),
                   static_cast<std::streamsize>(v.size() * 8));
    }

    void raw(const void* data, size_t bytes) {
        out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    }

    bool good() const { return out_.good(); }

private:
    std::ofstream out_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw InputError("cannot open for reading: " + path);
    }

    // Checks magic and returns the stored version; caller validates the range.
    uint32_t magic(const char tag[4]) {
        char got[4];
        in_.read(got, 4);
        if (!in_ || std::memcmp(got, tag, 4) != 0)
            throw InputError("bad file magic in " + path_ + " (expected " +
                             std::string(tag, 4) + ")");
        return u32();
    }

    // Checks magic and requires an exact format version.
    void magic(const char tag[4], uint32_t expected_version) {
        const uint32_t got = magic(tag);
        if (got != expected_version)
            throw InputError("unsupported " + std::string(tag, 4) + " version " +
                             std::to_string(got) + " in " + path_);
    }

    uint8_t u8() { uint8_t v; read(&v, 1); return v; }
    uint32_t u32() { uint32_t v; read(&v, 4); return v; }
    uint64_t u64() { uint64_t v; read(&v, 8); return v; }
    int32_t i32() { int32_t v; read(&v, 4); return v; }
    int64_t i64() { int64_t v; read(&v, 8); return v; }
    double f64() { double v; read(&v, 8); return v; }

    std::string str() {
        size_t n = u64();
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }

    std::vector<int32_t> vec_i32() {
        size_t n = u64();
        std::vector<int32_t> v(n);
        read(v.data(), n * 4);
        return v;
    }

    std::vector<double> vec_f64() {
        size_t n = u64();
        std::vector<double> v(n);
        read(v.data(), n * 8);
        return v;
    }

    void read(void* dst, size_t bytes) {
        in_.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(bytes));
        if (!in_) throw InputError("truncated file: " + path_);
    }

private:
    std::ifstream in_;
    std::string path_;
};

}  // namespace duovox
