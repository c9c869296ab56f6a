#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "duovox/codec.hpp"
#include "duovox/rng.hpp"
#include "duovox/vocab.hpp"

namespace duovox {

// Two weight-shared transformer towers (one per dialogue channel) over joint
// content/pitch token streams. Self-attention is causal within a channel;
// the last num_cross_layers layers additionally cross-attend to the other
// tower's same-layer input states at aligned timesteps (positions <= t).
struct ModelConfig {
    // Token-space shape, taken from the vocabulary.
    int vocab_size = 0;
    int n_units = 0;   // content unit IDs occupy [0, n_units)
    int n_pitch = 0;   // pitch unit IDs occupy [0, n_pitch)
    int pad_id = 0;
    int eos_id = 0;

    int num_layers = 6;
    int num_cross_layers = 4;
    int heads = 8;
    int embed_dim = 512;
    int ffn_dim = 2048;
    int context_frames = 500;   // C
    int max_duration = 256;     // regression-target cap, shared with the codec
    double nucleus_p = 0.9;
    int max_generation_frames = 6000;

    static ModelConfig desk_scale(const Vocabulary& vocab);
    static ModelConfig paper_scale(const Vocabulary& vocab);
    void validate() const;
};

// Per-channel forward outputs. Logits rows are masked so only unit IDs of the
// stream plus PAD and EOS carry probability; durations are softplus-positive.
struct StreamLogits {
    Eigen::MatrixXd content_logits;  // T x V
    Eigen::MatrixXd pitch_logits;    // T x V
    Eigen::VectorXd content_dur;     // T
    Eigen::VectorXd pitch_dur;       // T
};

struct LossBreakdown {
    double total = 0.0;
    double unit_nll = 0.0;     // L_EU: NLL summed over edge positions
    double duration_l1 = 0.0;  // L_ED: |d - d_hat| summed over edge positions
    long edges = 0;

    double per_edge_nll() const { return edges > 0 ? unit_nll / static_cast<double>(edges) : 0.0; }
};

struct GenerateOptions {
    int max_frames = 0;      // 0: config.max_generation_frames
    double nucleus_p = 0.0;  // 0: config.nucleus_p
    bool greedy = false;     // argmax instead of sampling
};

// Keeps the smallest set of highest-probability entries whose cumulative mass
// reaches p, renormalized; everything else drops to exactly zero. Ties in
// probability resolve toward the lower index.
Eigen::VectorXd nucleus_filter(const Eigen::VectorXd& probabilities, double p);

class MsDlm {
  public:
    MsDlm(const ModelConfig& config, uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    Eigen::VectorXd& parameters() { return params_; }
    const Eigen::VectorXd& parameters() const { return params_; }

    // Batch forward over an assembled example (teacher forcing). For
    // single-channel examples only element 0 of the result is populated.
    std::array<StreamLogits, 2> forward(const TrainingExample& example) const;

    // Same outputs computed through the stepwise decoding path with KV
    // caches; exists so tests can pin the two paths to each other.
    std::array<StreamLogits, 2> forward_incremental(const TrainingExample& example) const;

    LossBreakdown loss(const TrainingExample& example) const;

    // Accumulates (+=) analytic gradients of the summed loss into grad, which
    // must have parameter_count() entries.
    LossBreakdown loss_and_gradient(const TrainingExample& example,
                                    Eigen::VectorXd& grad) const;

    // Autoregressive two-channel decoding from per-channel prefixes. Units
    // are sampled at run edges (nucleus-filtered) and written for round(d)
    // frames; decoding stops at EOS on any channel's content stream or the
    // frame cap. Returns aligned per-channel streams.
    std::array<StreamPair, 2> generate(const std::array<PrefixSequence, 2>& prefixes,
                                       const GenerateOptions& options, Rng& rng) const;

    void save(const std::string& path) const;
    static MsDlm load(const std::string& path);

    size_t parameter_count() const { return static_cast<size_t>(params_.size()); }

  private:
    ModelConfig cfg_;
    Eigen::VectorXd params_;
};

struct TrainConfig {
    int steps = 1000;
    int batch_size = 1;
    double peak_lr = 2e-3;
    double initial_lr = 1e-7;
    int warmup_steps = 100;
    double rms_decay = 0.99;  // second-moment decay of the adaptive update
    double eps = 1e-8;
    uint64_t seed = 1;
    int threads = 1;
    int log_every = 0;  // 0 disables progress logging
};

struct StepRecord {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double unit_nll = 0.0;
    double duration_l1 = 0.0;
    long edges = 0;
};

struct TrainResult {
    std::vector<StepRecord> curve;
    double final_per_edge_nll = 0.0;
};

// Inverse-square-root learning rate with linear warmup.
double lr_schedule(int step, const TrainConfig& config);

// Seeded, deterministic training: batches are drawn in shuffled epoch order
// and per-example gradients are reduced in index order regardless of thread
// count. NaN loss aborts.
TrainResult train(MsDlm& model, const std::vector<TrainingExample>& dataset,
                  const TrainConfig& config);

void save_loss_curve(const std::string& path, const std::vector<StepRecord>& curve);

}  // namespace duovox
