#include <doctest.h>

#include <cmath>

#include "duovox/s2u.hpp"
#include "test_util.hpp"

using namespace duovox;

namespace {

// Three tight, well-separated 2-D blobs of 30 points each.
Eigen::MatrixXd three_blobs(uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd features(90, 2);
    const double cx[3] = {0.0, 10.0, -8.0};
    const double cy[3] = {0.0, 1.0, 9.0};
    for (int b = 0; b < 3; ++b) {
        for (int i = 0; i < 30; ++i) {
            features(b * 30 + i, 0) = cx[b] + rng.normal(0.0, 0.15);
            features(b * 30 + i, 1) = cy[b] + rng.normal(0.0, 0.15);
        }
    }
    return features;
}

}  // namespace

TEST_CASE("k-means recovers well-separated blobs") {
    const Eigen::MatrixXd features = three_blobs(4);
    const Codebook cb = fit_kmeans(features, 3, /*seed=*/1);
    REQUIRE(cb.k() == 3);
    REQUIRE(cb.dim() == 2);

    // Every blob center must be close to exactly one centroid.
    const double cx[3] = {0.0, 10.0, -8.0};
    const double cy[3] = {0.0, 1.0, 9.0};
    std::vector<bool> used(3, false);
    for (int b = 0; b < 3; ++b) {
        int best = -1;
        double best_d = 1e18;
        for (int c = 0; c < 3; ++c) {
            const double d = std::hypot(cb.centroids(c, 0) - cx[b], cb.centroids(c, 1) - cy[b]);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        CHECK(best_d < 0.2);
        CHECK_FALSE(used[best]);
        used[best] = true;
    }

    // All points of one blob quantize to the same unit.
    const std::vector<int> units = quantize_content(features, cb);
    for (int b = 0; b < 3; ++b) {
        for (int i = 1; i < 30; ++i) CHECK(units[b * 30 + i] == units[b * 30]);
    }

    // With k == number of blobs the objective is the within-blob variance.
    CHECK(kmeans_objective(features, cb) < 0.1);
}

TEST_CASE("k-means is deterministic and monotone in k") {
    const Eigen::MatrixXd features = three_blobs(9);
    const Codebook a = fit_kmeans(features, 3, 42);
    const Codebook b = fit_kmeans(features, 3, 42);
    CHECK((a.centroids - b.centroids).cwiseAbs().maxCoeff() == 0.0);

    const double obj1 = kmeans_objective(features, fit_kmeans(features, 1, 7));
    const double obj3 = kmeans_objective(features, fit_kmeans(features, 3, 7));
    CHECK(obj3 < obj1);
}

TEST_CASE("k-means rejects degenerate inputs") {
    Eigen::MatrixXd two_rows(2, 2);
    two_rows << 0.0, 0.0, 1.0, 1.0;
    CHECK_THROWS_AS(fit_kmeans(two_rows, 3, 1), InputError);
    CHECK_THROWS_AS(fit_kmeans(two_rows, 0, 1), InputError);
    CHECK_THROWS_AS(fit_kmeans(Eigen::MatrixXd(0, 2), 1, 1), InputError);
}

TEST_CASE("quantization ties break toward the lowest centroid index") {
    Codebook cb;
    cb.centroids.resize(2, 1);
    cb.centroids << -1.0, 1.0;
    Eigen::MatrixXd mid(1, 1);
    mid << 0.0;  // exactly equidistant
    CHECK(quantize_content(mid, cb) == std::vector<int>{0});
}

TEST_CASE("pitch statistics floor the deviation and need two voiced frames") {
    const SpeakerPitchStats s = fit_pitch_stats("spk", {100.0, 100.0, 0.0, 100.0});
    CHECK(s.mean_log_f0 == doctest::Approx(std::log(100.0)));
    CHECK(s.std_log_f0 == doctest::Approx(kMinPitchStd));
    CHECK(s.n_voiced == 3);

    CHECK_THROWS_AS(fit_pitch_stats("spk", std::vector<double>{100.0}), InputError);
    CHECK_THROWS_AS(fit_pitch_stats("spk", std::vector<double>{0.0, 0.0}), InputError);

    // The multi-track overload pools frames.
    const SpeakerPitchStats pooled =
        fit_pitch_stats("spk", std::vector<std::vector<double>>{{90.0, 0.0}, {110.0}});
    CHECK(pooled.n_voiced == 2);
    CHECK(pooled.mean_log_f0 == doctest::Approx(0.5 * (std::log(90.0) + std::log(110.0))));
}

TEST_CASE("pitch round trip lands in the original bin") {
    SpeakerPitchStats stats;
    stats.speaker_id = "spk";
    stats.mean_log_f0 = std::log(120.0);
    stats.std_log_f0 = 0.25;
    PitchQuantizer q;  // 32 bins, bin 0 unvoiced

    CHECK(quantize_pitch_frame(0.0, stats, q) == 0);
    CHECK(quantize_pitch_frame(-5.0, stats, q) == 0);
    CHECK(dequantize_pitch(0, stats, q) == 0.0);

    for (int bin = 1; bin < q.n_bins; ++bin) {
        const double f0 = dequantize_pitch(bin, stats, q);
        CHECK(f0 > 0.0);
        CHECK(quantize_pitch_frame(f0, stats, q) == bin);
    }

    // Extreme values clamp into the outermost voiced bins.
    CHECK(quantize_pitch_frame(1e6, stats, q) == q.n_bins - 1);
    CHECK(quantize_pitch_frame(1e-6, stats, q) == 1);

    const std::vector<int> track = quantize_pitch({0.0, 120.0, 240.0}, stats, q);
    REQUIRE(track.size() == 3);
    CHECK(track[0] == 0);
    CHECK(track[1] > 0);
    CHECK(track[2] > track[1]);
}

TEST_CASE("pitch models persist their per-speaker tables") {
    const auto dir = duovox::testing::scratch_dir("pitch_model");
    PitchModel model;
    model.quantizer.n_bins = 8;
    model.by_speaker["a"] = fit_pitch_stats("a", {100.0, 110.0, 120.0});
    model.by_speaker["b"] = fit_pitch_stats("b", {200.0, 210.0});
    const std::string path = (dir / "pitch.bin").string();
    model.save(path);

    const PitchModel loaded = PitchModel::load(path);
    CHECK(loaded.quantizer.n_bins == 8);
    REQUIRE(loaded.by_speaker.size() == 2);
    CHECK(loaded.stats_for("a").mean_log_f0 ==
          doctest::Approx(model.stats_for("a").mean_log_f0).epsilon(1e-15));
    CHECK(loaded.stats_for("b").n_voiced == 2);
    CHECK_THROWS_AS(loaded.stats_for("missing"), InputError);
}

TEST_CASE("codebooks persist bit-exactly") {
    const auto dir = duovox::testing::scratch_dir("codebook");
    const Codebook cb = fit_kmeans(three_blobs(2), 3, 5);
    const std::string path = (dir / "cb.bin").string();
    cb.save(path);
    const Codebook loaded = Codebook::load(path);
    CHECK(loaded.k() == cb.k());
    CHECK((loaded.centroids - cb.centroids).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the synthetic feature provider is deterministic and separates phonemes") {
    SyntheticFeatureProvider provider(16, 77);
    const Eigen::VectorXd a1 = provider.frame(3, 5, 1000);
    const Eigen::VectorXd a2 = provider.frame(3, 5, 1000);
    CHECK((a1 - a2).cwiseAbs().maxCoeff() == 0.0);

    // Frames of the same phoneme stay much closer than frames of different
    // phonemes, so k-means can recover the phoneme identity.
    const Eigen::VectorXd same = provider.frame(3, 5, 2000);
    const Eigen::VectorXd other = provider.frame(4, 5, 1000);
    CHECK((a1 - same).norm() < (a1 - other).norm());

    SyntheticFeatureProvider reseeded(16, 78);
    CHECK((reseeded.frame(3, 5, 1000) - a1).cwiseAbs().maxCoeff() > 0.0);
}
