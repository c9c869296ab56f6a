#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace duovox {

// Malformed or missing input data. CLI maps this to exit code 2.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// A documented precondition of an operation was violated. Exit code 3.
struct PreconditionError : std::runtime_error {
    explicit PreconditionError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Quiet = 4 };

// Level comes from DUOVOX_LOG (debug|info|warn|error|quiet), default warn.
inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("DUOVOX_LOG");
        if (!env) return LogLevel::Warn;
        std::string v(env);
        if (v == "debug") return LogLevel::Debug;
        if (v == "info") return LogLevel::Info;
        if (v == "warn") return LogLevel::Warn;
        if (v == "error") return LogLevel::Error;
        if (v == "quiet") return LogLevel::Quiet;
        return LogLevel::Warn;
    }();
    return level;
}

inline void log_at(LogLevel lvl, const char* tag, const std::string& msg) {
    if (lvl < log_level()) return;
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

inline void log_debug(const std::string& msg) { log_at(LogLevel::Debug, "debug", msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::Info, "info", msg); }
inline void log_warn(const std::string& msg) { log_at(LogLevel::Warn, "warn", msg); }
inline void log_error(const std::string& msg) { log_at(LogLevel::Error, "error", msg); }

// Frame rate shared by every unit stream in the system.
inline constexpr int kFrameRateHz = 50;

// Seconds -> frame index, round half up. The boundary frame belongs to the
// later segment.
inline long seconds_to_frame(double seconds) {
    return static_cast<long>(std::floor(seconds * kFrameRateHz + 0.5));
}

inline double frame_to_seconds(long frame) {
    return static_cast<double>(frame) / kFrameRateHz;
}

}  // namespace duovox
