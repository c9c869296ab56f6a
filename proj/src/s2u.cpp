#include "duovox/s2u.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "duovox/binio.hpp"

namespace duovox {

namespace {

// Index of the centroid closest to row `r`, lowest index on ties.
int nearest_centroid(const Eigen::MatrixXd& features, Eigen::Index r,
                     const Eigen::MatrixXd& centroids) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d = (features.row(r) - centroids.row(c)).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

}  // namespace

void Codebook::save(const std::string& path) const {
    BinWriter w(path);
    w.magic("DVCB", 1);
    w.u32(static_cast<uint32_t>(centroids.rows()));
    w.u32(static_cast<uint32_t>(centroids.cols()));
    for (Eigen::Index r = 0; r < centroids.rows(); ++r)
        for (Eigen::Index c = 0; c < centroids.cols(); ++c) w.f64(centroids(r, c));
}

Codebook Codebook::load(const std::string& path) {
    BinReader r(path);
    r.magic("DVCB", 1);
    const uint32_t k = r.u32();
    const uint32_t d = r.u32();
    Codebook cb;
    cb.centroids.resize(k, d);
    for (uint32_t i = 0; i < k; ++i)
        for (uint32_t j = 0; j < d; ++j) cb.centroids(i, j) = r.f64();
    return cb;
}

Codebook fit_kmeans(const Eigen::MatrixXd& features, int k, uint64_t seed, int max_iters) {
    const Eigen::Index n = features.rows();
    if (k < 1) throw InputError("cluster count must be at least 1");
    if (n < k) {
        throw InputError("need at least " + std::to_string(k) + " feature frames, got " +
                         std::to_string(n));
    }
    Rng rng(seed);
    Eigen::MatrixXd centroids(k, features.cols());

    // k-means++ seeding: each next centroid drawn proportionally to the
    // squared distance from the already-chosen ones.
    centroids.row(0) = features.row(rng.uniform_int(0, static_cast<int>(n) - 1));
    Eigen::VectorXd d2 = (features.rowwise() - centroids.row(0)).rowwise().squaredNorm();
    for (int c = 1; c < k; ++c) {
        const double total = d2.sum();
        Eigen::Index pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (acc >= target) {
                    pick = i;
                    break;
                }
                pick = i;
            }
        } else {
            pick = rng.uniform_int(0, static_cast<int>(n) - 1);  // all points coincide
        }
        centroids.row(c) = features.row(pick);
        d2 = d2.cwiseMin((features.rowwise() - centroids.row(c)).rowwise().squaredNorm());
    }

    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int a = nearest_centroid(features, i, centroids);
            if (a != assign[i]) {
                assign[i] = a;
                changed = true;
            }
        }
        if (!changed) break;

        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, features.cols());
        std::vector<long> counts(k, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assign[i]) += features.row(i);
            ++counts[assign[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                centroids.row(c) = sums.row(c) / static_cast<double>(counts[c]);
            } else {
                // Empty cluster: adopt the point farthest from its centroid.
                Eigen::Index far = 0;
                double far_d = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double d =
                        (features.row(i) - centroids.row(assign[i])).squaredNorm();
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                centroids.row(c) = features.row(far);
            }
        }
    }

    Codebook cb;
    cb.centroids = std::move(centroids);
    return cb;
}

double kmeans_objective(const Eigen::MatrixXd& features, const Codebook& codebook) {
    if (features.rows() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        const int a = nearest_centroid(features, i, codebook.centroids);
        total += (features.row(i) - codebook.centroids.row(a)).squaredNorm();
    }
    return total / static_cast<double>(features.rows());
}

std::vector<int> quantize_content(const Eigen::MatrixXd& features, const Codebook& codebook) {
    if (features.rows() > 0 && features.cols() != codebook.centroids.cols()) {
        throw InputError("feature dimension " + std::to_string(features.cols()) +
                         " does not match codebook dimension " +
                         std::to_string(codebook.centroids.cols()));
    }
    std::vector<int> units(features.rows());
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        units[i] = nearest_centroid(features, i, codebook.centroids);
    }
    return units;
}

SpeakerPitchStats fit_pitch_stats(const std::string& speaker_id,
                                  const std::vector<double>& f0_track) {
    return fit_pitch_stats(speaker_id, std::vector<std::vector<double>>{f0_track});
}

SpeakerPitchStats fit_pitch_stats(const std::string& speaker_id,
                                  const std::vector<std::vector<double>>& f0_tracks) {
    double sum = 0.0, sum_sq = 0.0;
    long n = 0;
    for (const auto& track : f0_tracks) {
        for (double f0 : track) {
            if (f0 > 0.0) {
                const double z = std::log(f0);
                sum += z;
                sum_sq += z * z;
                ++n;
            }
        }
    }
    if (n < 2) {
        throw InputError("speaker " + speaker_id + " has fewer than two voiced frames");
    }
    SpeakerPitchStats stats;
    stats.speaker_id = speaker_id;
    stats.n_voiced = n;
    stats.mean_log_f0 = sum / static_cast<double>(n);
    const double var =
        std::max(0.0, sum_sq / static_cast<double>(n) - stats.mean_log_f0 * stats.mean_log_f0);
    stats.std_log_f0 = std::max(std::sqrt(var), kMinPitchStd);
    return stats;
}

int quantize_pitch_frame(double f0, const SpeakerPitchStats& stats, const PitchQuantizer& q) {
    if (q.n_bins < 2) throw PreconditionError("pitch quantizer needs at least 2 bins");
    if (!(f0 > 0.0)) return 0;
    double z = (std::log(f0) - stats.mean_log_f0) / stats.std_log_f0;
    z = std::clamp(z, -q.z_clamp, q.z_clamp);
    const int voiced_bins = q.n_bins - 1;
    int bin = 1 + static_cast<int>(std::floor((z + q.z_clamp) / (2.0 * q.z_clamp) *
                                              static_cast<double>(voiced_bins)));
    return std::clamp(bin, 1, q.n_bins - 1);
}

std::vector<int> quantize_pitch(const std::vector<double>& f0_track,
                                const SpeakerPitchStats& stats, const PitchQuantizer& q) {
    std::vector<int> units(f0_track.size());
    for (size_t i = 0; i < f0_track.size(); ++i) {
        units[i] = quantize_pitch_frame(f0_track[i], stats, q);
    }
    return units;
}

double dequantize_pitch(int unit, const SpeakerPitchStats& stats, const PitchQuantizer& q) {
    if (unit < 0 || unit >= q.n_bins) {
        throw InputError("pitch unit " + std::to_string(unit) + " out of range [0, " +
                         std::to_string(q.n_bins) + ")");
    }
    if (unit == 0) return 0.0;
    const int voiced_bins = q.n_bins - 1;
    const double width = 2.0 * q.z_clamp / static_cast<double>(voiced_bins);
    const double z = -q.z_clamp + (static_cast<double>(unit - 1) + 0.5) * width;
    return std::exp(stats.mean_log_f0 + z * stats.std_log_f0);
}

const SpeakerPitchStats& PitchModel::stats_for(const std::string& speaker_id) const {
    auto it = by_speaker.find(speaker_id);
    if (it == by_speaker.end()) {
        throw InputError("no pitch statistics for speaker " + speaker_id);
    }
    return it->second;
}

void PitchModel::save(const std::string& path) const {
    BinWriter w(path);
    w.magic("DVPS", 1);
    w.u32(static_cast<uint32_t>(quantizer.n_bins));
    w.f64(quantizer.z_clamp);
    w.u64(by_speaker.size());
    for (const auto& [id, stats] : by_speaker) {
        w.str(id);
        w.f64(stats.mean_log_f0);
        w.f64(stats.std_log_f0);
        w.i64(stats.n_voiced);
    }
}

PitchModel PitchModel::load(const std::string& path) {
    BinReader r(path);
    r.magic("DVPS", 1);
    PitchModel model;
    model.quantizer.n_bins = static_cast<int>(r.u32());
    model.quantizer.z_clamp = r.f64();
    const uint64_t n = r.u64();
    for (uint64_t i = 0; i < n; ++i) {
        SpeakerPitchStats stats;
        stats.speaker_id = r.str();
        stats.mean_log_f0 = r.f64();
        stats.std_log_f0 = r.f64();
        stats.n_voiced = r.i64();
        model.by_speaker.emplace(stats.speaker_id, stats);
    }
    return model;
}

SyntheticFeatureProvider::SyntheticFeatureProvider(int dim, uint64_t seed)
    : dim_(dim), seed_(seed) {
    if (dim < 1) throw InputError("feature dimension must be at least 1");
}

Eigen::VectorXd SyntheticFeatureProvider::frame(int phoneme_index, int pitch_bin,
                                                uint64_t frame_key) const {
    // A fixed random direction per phoneme (scaled well above the jitter), a
    // small pitch component, and per-frame jitter keyed by frame_key.
    Eigen::VectorXd v(dim_);
    Rng base(hash_mix(seed_, static_cast<uint64_t>(phoneme_index) + 1));
    for (int i = 0; i < dim_; ++i) v(i) = 4.0 * base.normal();
    const uint64_t jitter_key = hash_mix(seed_ ^ 0x9e3779b97f4a7c15ULL, frame_key);
    for (int i = 0; i < dim_; ++i) {
        v(i) += 0.1 * (2.0 * hash_unit_interval(jitter_key, static_cast<uint64_t>(i)) - 1.0);
    }
    v(0) += 0.05 * static_cast<double>(pitch_bin);
    return v;
}

}  // namespace duovox
