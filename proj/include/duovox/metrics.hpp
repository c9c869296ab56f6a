#pragma once

#include <map>
#include <string>
#include <vector>

#include "duovox/dialogue.hpp"

namespace duovox {

struct VadSegment {
    int channel = 1;
    double start_s = 0.0;
    double end_s = 0.0;

    double duration_s() const { return end_s - start_s; }
};

// Energy-threshold voice activity detection on mono PCM. Segments are maximal
// runs of frames whose RMS exceeds threshold_db (relative to full scale);
// interior dips shorter than min_silence_ms are bridged.
std::vector<VadSegment> energy_vad(const std::vector<double>& samples, int sample_rate,
                                   int channel, double threshold_db = -40.0,
                                   double frame_ms = 20.0, double min_silence_ms = 200.0);

enum class TurnEventKind { Ipu, Pause, Gap, Overlap };

struct TurnEvent {
    TurnEventKind kind = TurnEventKind::Ipu;
    // Ipu/Pause: the owning channel. Gap: the channel taking the turn.
    // Overlap: the channel that started speaking second (tie -> 1).
    int channel = 1;
    double start_s = 0.0;
    double end_s = 0.0;

    double duration_s() const { return end_s - start_s; }
};

const char* turn_event_kind_name(TurnEventKind kind);

// Classifies a two-channel VAD layout into IPUs, pauses, gaps, and overlaps.
// Within a channel, segments closer than merge_gap_s are first merged into
// IPUs. A joint-silence interval is a pause when the surrounding IPUs share a
// channel and a gap when the turn changes; an overlap is a maximal interval
// voiced on both channels. Leading and trailing silences yield no event.
std::vector<TurnEvent> extract_events(const std::vector<VadSegment>& channel1,
                                      const std::vector<VadSegment>& channel2,
                                      double merge_gap_s = 0.2);

struct BackchannelStats {
    long q_bc = 0;
    long q_all = 0;
    double d_bc = 0.0;
    double d_all = 0.0;

    double ratio_freq() const;  // 100 * q_bc / q_all
    double ratio_dur() const;   // 100 * d_bc / d_all
};

// Counts listener-labeled IPUs against all IPUs. Requires labels resolved
// (no Undefined) and at least one IPU.
BackchannelStats backchannel_stats(const std::vector<InterPausalUnit>& ipus);

struct SpeakerComparison {
    double mae = 0.0;
    bool r_defined = false;
    double r = 0.0;
    double p_value = 1.0;  // two-sided, t-distribution
    long n = 0;
};

// Compares one per-speaker scalar between reference and generated dialogues.
// Requires identical speaker sets; r needs at least two speakers and nonzero
// variance on both sides.
SpeakerComparison speaker_comparison(const std::map<std::string, double>& reference,
                                     const std::map<std::string, double>& generated);

// "‡" for p < 0.01, "†" for p < 0.05, "" otherwise.
std::string significance_marker(double p_value);

// Levenshtein distance with unit costs.
long edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b);

// edit_distance(reference, hypothesis) / |reference|; reference must be
// non-empty.
double phoneme_error_rate(const std::vector<std::string>& reference,
                          const std::vector<std::string>& hypothesis);

// Autocorrelation F0 estimator: one value per 20 ms frame, 0 where unvoiced.
std::vector<double> estimate_f0_track(const std::vector<double>& samples, int sample_rate,
                                      double frame_ms = 20.0, double f0_min = 60.0,
                                      double f0_max = 400.0);

struct F0Statistics {
    double mean_hz = 0.0;
    double variance_hz2 = 0.0;
    long n_utterances = 0;  // utterances that contributed voiced frames
};

// Mean/variance of F0 over voiced frames, pooled within each utterance and
// then averaged across utterances. Errors when no utterance has voiced frames.
F0Statistics f0_statistics(const std::vector<std::vector<double>>& utterance_waveforms,
                           int sample_rate);

struct LaughterInterval {
    double start_s = 0.0;
    double end_s = 0.0;
};

struct LaughterStats {
    long frequency = 0;
    double duration_s = 0.0;
};

// Counts labeled laughter intervals as given; adjacent intervals stay
// separate.
LaughterStats laughter_stats(const std::vector<LaughterInterval>& intervals);

// Median of a non-empty sample (average of the middle two for even sizes).
double median(std::vector<double> values);

}  // namespace duovox
