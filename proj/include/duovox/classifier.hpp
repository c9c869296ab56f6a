#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "duovox/dialogue.hpp"
#include "duovox/rng.hpp"

namespace duovox {

// Binary sequence classifier that resolves ambiguous inter-pausal units into
// speaker turns vs. listener backchannels. The input is the unit ID sequence
// of one IPU; the output is the listener-class posterior.

struct ClassifierConfig {
    int vocab_size = 0;      // number of distinct content units
    int num_layers = 3;      // stacked bidirectional recurrent layers
    int embedding_dim = 256;
    int hidden_dim = 512;    // per direction
    double learning_rate = 1e-2;
    int max_steps = 2000;
    uint64_t seed = 1;

    void validate() const;
};

struct LabeledUnitSequence {
    std::vector<int> content_units;
    IpuLabel label = IpuLabel::Speaker;  // Speaker or Listener only
};

struct Classification {
    IpuLabel label = IpuLabel::Speaker;
    double probability = 0.0;  // listener-class posterior
};

class ClassifierModel {
public:
    ClassifierModel(const ClassifierConfig& config, uint64_t init_seed);

    const ClassifierConfig& config() const { return cfg_; }
    Eigen::VectorXd& parameters() { return params_; }
    const Eigen::VectorXd& parameters() const { return params_; }
    size_t parameter_count() const { return static_cast<size_t>(params_.size()); }

    // Listener-class logit for one unit sequence.
    double logit(const std::vector<int>& content_units) const;

    // BCE loss and its gradient (accumulated into grad) for one example.
    double loss_and_gradient(const LabeledUnitSequence& example, Eigen::VectorXd& grad) const;

    void save(const std::string& path) const;
    static ClassifierModel load(const std::string& path);

private:
    ClassifierConfig cfg_;
    Eigen::VectorXd params_;
};

struct ClassifierTrainResult {
    ClassifierModel model;
    double final_loss = 0.0;            // mean training BCE after the last step
    double best_validation_loss = -1.0; // -1 when no validation split was given
};

// Trains with plain seeded SGD; when a validation split is supplied the
// checkpoint with the lowest validation loss is returned.
ClassifierTrainResult train_classifier(const std::vector<LabeledUnitSequence>& examples,
                                       const ClassifierConfig& config,
                                       const std::vector<LabeledUnitSequence>& validation = {});

// Listener iff posterior > 0.5; an exact tie resolves to Speaker so ambiguous
// content is kept rather than dropped.
Classification classify(const ClassifierModel& model, const std::vector<int>& content_units);

double evaluate_classifier(const ClassifierModel& model,
                           const std::vector<LabeledUnitSequence>& examples);

}  // namespace duovox
