#include "duovox/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "duovox/common.hpp"

namespace duovox {

namespace {

// Sorts by start and merges same-channel segments separated by less than
// merge_gap_s (touching and overlapping segments included).
std::vector<VadSegment> merge_channel(std::vector<VadSegment> segments, double merge_gap_s,
                                      int channel) {
    for (auto& s : segments) {
        if (s.end_s <= s.start_s) {
            throw InputError("VAD segment with non-positive duration on channel " +
                             std::to_string(channel));
        }
        s.channel = channel;
    }
    std::stable_sort(segments.begin(), segments.end(),
                     [](const VadSegment& a, const VadSegment& b) {
                         return a.start_s < b.start_s;
                     });
    std::vector<VadSegment> merged;
    for (const auto& s : segments) {
        if (!merged.empty() && s.start_s - merged.back().end_s < merge_gap_s) {
            merged.back().end_s = std::max(merged.back().end_s, s.end_s);
        } else {
            merged.push_back(s);
        }
    }
    return merged;
}

// Regularized incomplete beta via Lentz's continued fraction.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 200;
    constexpr double kEps = 3e-14;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

double reg_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * betacf(a, b, x) / a;
    }
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

// Two-sided p-value of Pearson r under the null, via Student's t with
// n-2 degrees of freedom.
double pearson_p_value(double r, long n) {
    if (n < 3) return 1.0;
    const double nu = static_cast<double>(n - 2);
    const double denom = 1.0 - r * r;
    if (denom <= 0.0) return 0.0;
    const double t2 = r * r * nu / denom;
    return reg_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t2));
}

}  // namespace

std::vector<VadSegment> energy_vad(const std::vector<double>& samples, int sample_rate,
                                   int channel, double threshold_db, double frame_ms,
                                   double min_silence_ms) {
    if (samples.empty()) throw InputError("empty audio");
    if (sample_rate <= 0) throw InputError("sample rate must be positive");
    const long frame_len = std::lround(frame_ms / 1000.0 * sample_rate);
    if (frame_len < 1) throw InputError("VAD frame shorter than one sample");
    const long n = static_cast<long>(samples.size());
    const long n_frames = (n + frame_len - 1) / frame_len;

    std::vector<char> voiced(n_frames, 0);
    for (long i = 0; i < n_frames; ++i) {
        const long begin = i * frame_len;
        const long end = std::min(n, begin + frame_len);
        double energy = 0.0;
        for (long t = begin; t < end; ++t) energy += samples[t] * samples[t];
        const double rms = std::sqrt(energy / static_cast<double>(end - begin));
        voiced[i] = 20.0 * std::log10(rms + 1e-12) > threshold_db;
    }

    // Bridge interior silence runs shorter than min_silence_ms.
    long i = 0;
    while (i < n_frames) {
        if (!voiced[i]) {
            long j = i;
            while (j < n_frames && !voiced[j]) ++j;
            const bool interior = i > 0 && j < n_frames;
            if (interior && static_cast<double>(j - i) * frame_ms < min_silence_ms) {
                std::fill(voiced.begin() + i, voiced.begin() + j, 1);
            }
            i = j;
        } else {
            ++i;
        }
    }

    std::vector<VadSegment> segments;
    i = 0;
    while (i < n_frames) {
        if (voiced[i]) {
            long j = i;
            while (j < n_frames && voiced[j]) ++j;
            VadSegment seg;
            seg.channel = channel;
            seg.start_s = static_cast<double>(i * frame_len) / sample_rate;
            seg.end_s = static_cast<double>(std::min(n, j * frame_len)) / sample_rate;
            segments.push_back(seg);
            i = j;
        } else {
            ++i;
        }
    }
    return segments;
}

const char* turn_event_kind_name(TurnEventKind kind) {
    switch (kind) {
        case TurnEventKind::Ipu: return "ipu";
        case TurnEventKind::Pause: return "pause";
        case TurnEventKind::Gap: return "gap";
        case TurnEventKind::Overlap: return "overlap";
    }
    return "?";
}

std::vector<TurnEvent> extract_events(const std::vector<VadSegment>& channel1,
                                      const std::vector<VadSegment>& channel2,
                                      double merge_gap_s) {
    const auto ch1 = merge_channel(channel1, merge_gap_s, 1);
    const auto ch2 = merge_channel(channel2, merge_gap_s, 2);

    std::vector<TurnEvent> events;
    for (const auto& list : {ch1, ch2}) {
        for (const auto& s : list) {
            events.push_back({TurnEventKind::Ipu, s.channel, s.start_s, s.end_s});
        }
    }

    // Overlaps: pairwise intersections. IPUs within a channel are disjoint, so
    // each non-empty intersection is maximal.
    for (size_t i = 0, j = 0; i < ch1.size() && j < ch2.size();) {
        const double lo = std::max(ch1[i].start_s, ch2[j].start_s);
        const double hi = std::min(ch1[i].end_s, ch2[j].end_s);
        if (hi > lo) {
            // Attributed to whichever channel joined the conversation second.
            const int ch = ch2[j].start_s > ch1[i].start_s ? 2 : 1;
            events.push_back({TurnEventKind::Overlap, ch, lo, hi});
        }
        if (ch1[i].end_s < ch2[j].end_s) {
            ++i;
        } else {
            ++j;
        }
    }

    // Joint silences: gaps in the union of both channels' IPUs. The IPU
    // ending at the silence start and the IPU starting at its end decide
    // pause (same channel) versus gap (turn change).
    std::vector<VadSegment> all = ch1;
    all.insert(all.end(), ch2.begin(), ch2.end());
    std::sort(all.begin(), all.end(), [](const VadSegment& a, const VadSegment& b) {
        return a.start_s < b.start_s;
    });
    std::vector<std::pair<double, double>> unions;
    for (const auto& s : all) {
        if (!unions.empty() && s.start_s <= unions.back().second) {
            unions.back().second = std::max(unions.back().second, s.end_s);
        } else {
            unions.emplace_back(s.start_s, s.end_s);
        }
    }
    for (size_t u = 0; u + 1 < unions.size(); ++u) {
        const double s = unions[u].second;
        const double e = unions[u + 1].first;
        const VadSegment* prev = nullptr;
        for (const auto& seg : all) {
            if (seg.end_s > s) continue;
            if (!prev || seg.end_s > prev->end_s ||
                (seg.end_s == prev->end_s &&
                 (seg.start_s > prev->start_s ||
                  (seg.start_s == prev->start_s && seg.channel < prev->channel)))) {
                prev = &seg;
            }
        }
        const VadSegment* next = nullptr;
        for (const auto& seg : all) {
            if (seg.start_s < e) continue;
            if (!next || seg.start_s < next->start_s ||
                (seg.start_s == next->start_s &&
                 (seg.end_s < next->end_s ||
                  (seg.end_s == next->end_s && seg.channel < next->channel)))) {
                next = &seg;
            }
        }
        if (!prev || !next) continue;
        const bool same = prev->channel == next->channel;
        events.push_back(
            {same ? TurnEventKind::Pause : TurnEventKind::Gap, next->channel, s, e});
    }

    std::stable_sort(events.begin(), events.end(), [](const TurnEvent& a, const TurnEvent& b) {
        return a.start_s < b.start_s;
    });
    return events;
}

double BackchannelStats::ratio_freq() const {
    if (q_all == 0) throw PreconditionError("no utterances counted");
    return 100.0 * static_cast<double>(q_bc) / static_cast<double>(q_all);
}

double BackchannelStats::ratio_dur() const {
    if (d_all <= 0.0) throw PreconditionError("no utterance duration counted");
    return 100.0 * d_bc / d_all;
}

BackchannelStats backchannel_stats(const std::vector<InterPausalUnit>& ipus) {
    if (ipus.empty()) throw InputError("no IPUs to count");
    BackchannelStats stats;
    for (const auto& ipu : ipus) {
        if (ipu.label == IpuLabel::Undefined) {
            throw PreconditionError("undefined IPU label; run classification first");
        }
        ++stats.q_all;
        stats.d_all += ipu.duration_s();
        if (ipu.label == IpuLabel::Listener) {
            ++stats.q_bc;
            stats.d_bc += ipu.duration_s();
        }
    }
    return stats;
}

SpeakerComparison speaker_comparison(const std::map<std::string, double>& reference,
                                     const std::map<std::string, double>& generated) {
    if (reference.empty()) throw InputError("no speakers to compare");
    if (reference.size() != generated.size()) {
        throw InputError("speaker sets differ in size");
    }
    std::vector<double> ref, gen;
    for (const auto& [speaker, value] : reference) {
        auto it = generated.find(speaker);
        if (it == generated.end()) {
            throw InputError("speaker " + speaker + " missing from generated values");
        }
        ref.push_back(value);
        gen.push_back(it->second);
    }

    SpeakerComparison cmp;
    cmp.n = static_cast<long>(ref.size());
    for (size_t i = 0; i < ref.size(); ++i) cmp.mae += std::fabs(ref[i] - gen[i]);
    cmp.mae /= static_cast<double>(ref.size());

    if (cmp.n < 2) return cmp;
    const double nd = static_cast<double>(cmp.n);
    double mr = 0.0, mg = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        mr += ref[i];
        mg += gen[i];
    }
    mr /= nd;
    mg /= nd;
    double srr = 0.0, sgg = 0.0, srg = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        srr += (ref[i] - mr) * (ref[i] - mr);
        sgg += (gen[i] - mg) * (gen[i] - mg);
        srg += (ref[i] - mr) * (gen[i] - mg);
    }
    if (srr == 0.0 || sgg == 0.0) return cmp;  // r undefined on constant input
    cmp.r_defined = true;
    cmp.r = srg / std::sqrt(srr * sgg);
    cmp.p_value = pearson_p_value(cmp.r, cmp.n);
    return cmp;
}

std::string significance_marker(double p_value) {
    if (p_value < 0.01) return "‡";
    if (p_value < 0.05) return "†";
    return "";
}

long edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<long> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<long>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<long>(i);
        for (size_t j = 1; j <= m; ++j) {
            const long sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

double phoneme_error_rate(const std::vector<std::string>& reference,
                          const std::vector<std::string>& hypothesis) {
    if (reference.empty()) throw InputError("reference phoneme sequence is empty");
    return static_cast<double>(edit_distance(reference, hypothesis)) /
           static_cast<double>(reference.size());
}

std::vector<double> estimate_f0_track(const std::vector<double>& samples, int sample_rate,
                                      double frame_ms, double f0_min, double f0_max) {
    if (sample_rate <= 0) throw InputError("sample rate must be positive");
    if (f0_min <= 0.0 || f0_max <= f0_min) throw InputError("invalid F0 search range");
    const long hop = std::lround(frame_ms / 1000.0 * sample_rate);
    const long window = 2 * hop;
    const long tau_min = static_cast<long>(std::ceil(sample_rate / f0_max));
    const long tau_max = static_cast<long>(std::floor(sample_rate / f0_min));
    if (tau_min < 1 || tau_max + 16 > window) {
        throw InputError("analysis window too short for the requested F0 range");
    }

    const long n = static_cast<long>(samples.size());
    const long n_frames = n / hop;
    std::vector<double> track(n_frames, 0.0);
    std::vector<double> ncc(tau_max + 1, 0.0);
    for (long f = 0; f < n_frames; ++f) {
        const long begin = f * hop;
        if (begin + window > n) break;  // tail frames without a full window stay unvoiced
        const double* w = samples.data() + begin;

        double energy = 0.0;
        for (long t = 0; t < window; ++t) energy += w[t] * w[t];
        if (std::sqrt(energy / static_cast<double>(window)) < 1e-4) continue;

        double best = 0.0;
        for (long tau = tau_min; tau <= tau_max; ++tau) {
            double r = 0.0, e1 = 0.0, e2 = 0.0;
            for (long t = 0; t + tau < window; ++t) {
                r += w[t] * w[t + tau];
                e1 += w[t] * w[t];
                e2 += w[t + tau] * w[t + tau];
            }
            ncc[tau] = (e1 > 0.0 && e2 > 0.0) ? r / std::sqrt(e1 * e2) : 0.0;
            best = std::max(best, ncc[tau]);
        }
        if (best < 0.6) continue;

        // Smallest near-maximal lag defeats period-doubling to sub-octaves.
        long tau_star = tau_min;
        const double accept = std::max(0.6, 0.95 * best);
        for (long tau = tau_min; tau <= tau_max; ++tau) {
            if (ncc[tau] >= accept) {
                tau_star = tau;
                break;
            }
        }
        // Refuse local non-peaks: walk to the nearest local maximum.
        while (tau_star + 1 <= tau_max && ncc[tau_star + 1] > ncc[tau_star]) ++tau_star;

        double delta = 0.0;
        if (tau_star > tau_min && tau_star < tau_max) {
            const double a = ncc[tau_star - 1], b = ncc[tau_star], c = ncc[tau_star + 1];
            const double denom = a - 2.0 * b + c;
            if (std::fabs(denom) > 1e-12) delta = std::clamp(0.5 * (a - c) / denom, -1.0, 1.0);
        }
        const double f0 = static_cast<double>(sample_rate) / (static_cast<double>(tau_star) + delta);
        track[f] = std::clamp(f0, f0_min, f0_max);
    }
    return track;
}

F0Statistics f0_statistics(const std::vector<std::vector<double>>& utterance_waveforms,
                           int sample_rate) {
    F0Statistics stats;
    double mean_sum = 0.0, var_sum = 0.0;
    for (const auto& wave : utterance_waveforms) {
        if (wave.empty()) continue;
        const auto track = estimate_f0_track(wave, sample_rate);
        std::vector<double> voiced;
        for (double f0 : track) {
            if (f0 > 0.0) voiced.push_back(f0);
        }
        if (voiced.empty()) {
            log_debug("utterance without voiced frames skipped in F0 statistics");
            continue;
        }
        double mean = 0.0;
        for (double v : voiced) mean += v;
        mean /= static_cast<double>(voiced.size());
        double var = 0.0;
        for (double v : voiced) var += (v - mean) * (v - mean);
        var /= static_cast<double>(voiced.size());
        mean_sum += mean;
        var_sum += var;
        ++stats.n_utterances;
    }
    if (stats.n_utterances == 0) throw InputError("no voiced frames in any utterance");
    stats.mean_hz = mean_sum / static_cast<double>(stats.n_utterances);
    stats.variance_hz2 = var_sum / static_cast<double>(stats.n_utterances);
    return stats;
}

LaughterStats laughter_stats(const std::vector<LaughterInterval>& intervals) {
    LaughterStats stats;
    for (const auto& iv : intervals) {
        if (iv.end_s < iv.start_s) throw InputError("laughter interval with negative duration");
        ++stats.frequency;
        stats.duration_s += iv.end_s - iv.start_s;
    }
    return stats;
}

double median(std::vector<double> values) {
    if (values.empty()) throw InputError("median of an empty sample");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace duovox
