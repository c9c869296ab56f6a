#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "duovox/common.hpp"
#include "duovox/rng.hpp"

namespace duovox {

// K-means codebook over fixed-dimension acoustic feature frames.
struct Codebook {
    Eigen::MatrixXd centroids;  // k rows, one centroid per row

    int k() const { return static_cast<int>(centroids.rows()); }
    int dim() const { return static_cast<int>(centroids.cols()); }

    void save(const std::string& path) const;
    static Codebook load(const std::string& path);
};

// Fits k centroids with k-means++ seeding followed by Lloyd iterations until
// the assignment reaches a fixpoint (or max_iters). Deterministic given seed.
Codebook fit_kmeans(const Eigen::MatrixXd& features, int k, uint64_t seed,
                    int max_iters = 100);

// Mean squared distance from each row to its nearest centroid.
double kmeans_objective(const Eigen::MatrixXd& features, const Codebook& codebook);

// Nearest-centroid index per frame; ties break toward the lowest index.
std::vector<int> quantize_content(const Eigen::MatrixXd& features, const Codebook& codebook);

// Per-speaker statistics of log F0 over voiced frames.
struct SpeakerPitchStats {
    std::string speaker_id;
    double mean_log_f0 = 0.0;
    double std_log_f0 = 1.0;
    long n_voiced = 0;
};

constexpr double kMinPitchStd = 1e-3;

// Requires at least two voiced frames; std is floored at kMinPitchStd so a
// constant track stays usable.
SpeakerPitchStats fit_pitch_stats(const std::string& speaker_id,
                                  const std::vector<double>& f0_track);
SpeakerPitchStats fit_pitch_stats(const std::string& speaker_id,
                                  const std::vector<std::vector<double>>& f0_tracks);

struct PitchQuantizer {
    int n_bins = 32;  // bin 0 reserved for unvoiced frames
    double z_clamp = 3.0;
};

// f0 <= 0 -> bin 0; otherwise z = (log f0 - mean)/std clamped to ±z_clamp and
// mapped uniformly onto bins 1..n_bins-1.
int quantize_pitch_frame(double f0, const SpeakerPitchStats& stats, const PitchQuantizer& q);
std::vector<int> quantize_pitch(const std::vector<double>& f0_track,
                                const SpeakerPitchStats& stats, const PitchQuantizer& q);

// Bin-center F0 in Hz; bin 0 -> 0. Inverse of quantize_pitch_frame up to half
// a bin width.
double dequantize_pitch(int unit, const SpeakerPitchStats& stats, const PitchQuantizer& q);

// Speaker id -> pitch stats, persisted together with the quantizer shape.
struct PitchModel {
    PitchQuantizer quantizer;
    std::map<std::string, SpeakerPitchStats> by_speaker;

    const SpeakerPitchStats& stats_for(const std::string& speaker_id) const;
    void save(const std::string& path) const;
    static PitchModel load(const std::string& path);
};

// Stand-in for a learned feature extractor: emits one deterministic feature
// vector per (phoneme, pitch) frame. Distinct phonemes map to well-separated
// directions so clustering can recover them.
class SyntheticFeatureProvider {
  public:
    SyntheticFeatureProvider(int dim, uint64_t seed);

    int dim() const { return dim_; }
    // frame_key decorrelates the jitter between frames of the same phoneme.
    Eigen::VectorXd frame(int phoneme_index, int pitch_bin, uint64_t frame_key) const;

  private:
    int dim_;
    uint64_t seed_;
};

}  // namespace duovox
