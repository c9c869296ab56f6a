#pragma once

#include <string>
#include <vector>

#include "duovox/classifier.hpp"
#include "duovox/corpus.hpp"
#include "duovox/metrics.hpp"
#include "duovox/model.hpp"

namespace duovox {

// Command-level plumbing: configuration, JSONL ingestion, and the pipeline
// steps behind each CLI subcommand. Every command is deterministic given the
// config and its seeds.

struct PipelineConfig {
    SyntheticCorpusSpec corpus;
    ClassifierConfig classifier;

    std::string model_preset = "desk";  // "desk" or "paper"
    uint64_t model_seed = 1;
    int model_context = -1;             // -1 keeps the preset value
    double model_nucleus_p = -1.0;
    int model_max_generation = -1;
    int model_max_duration = -1;

    TrainConfig train;

    uint64_t generate_seed = 99;
    int generate_max_segment_frames = 250;  // per-utterance cap; 0 = model cap
    bool generate_greedy = false;

    int synth_sample_rate = 16000;
    double synth_crossfade_ms = 5.0;
    uint64_t synth_seed = 3;

    int units_feature_dim = 16;
    int units_kmeans_iters = 50;
    uint64_t units_seed = 17;

    PipelineConfig();  // desk-scale defaults
};

// Flat sectioned key-value text: "[section]" headers, "key = value" lines,
// '#' comments. Unknown sections or keys are rejected.
PipelineConfig load_pipeline_config(const std::string& path);

// Applies one "section.key=value" assignment (the CLI override form).
void apply_config_override(PipelineConfig& config, const std::string& assignment);

// Builds the model configuration implied by preset + overrides.
ModelConfig resolve_model_config(const PipelineConfig& config, const Vocabulary& vocab);

// make-corpus: transcripts.jsonl, units.jsonl, meta.json into out_dir.
void cmd_make_corpus(const PipelineConfig& config, const std::string& out_dir);

// prepare: transcripts (+ unit streams) -> written.jsonl, timeline.jsonl,
// dialogues.jsonl. With emit_examples_path set, emits classifier training
// examples from containment-resolved IPUs instead of written output.
// classifier_path may be empty when no IPU is left unresolved.
void cmd_prepare(const PipelineConfig& config, const std::string& transcripts_path,
                 const std::string& units_path, const std::string& classifier_path,
                 const std::string& out_dir, const std::string& emit_examples_path = "");

// train-classifier: labeled examples JSONL -> model binary. The last tenth of
// the examples (in file order) serves as the validation split.
void cmd_train_classifier(const PipelineConfig& config, const std::string& examples_path,
                          const std::string& out_path);

// units: transcripts -> codebook.bin, pitch.bin, units.jsonl via the
// deterministic synthetic feature provider.
void cmd_units(const PipelineConfig& config, const std::string& transcripts_path,
               const std::string& out_dir);

// dataset: prepared dialogues + unit streams -> dataset.bin + vocab.txt.
// pretrain_mode builds single-channel per-utterance examples instead of
// two-channel turn segments.
void cmd_dataset(const PipelineConfig& config, const std::string& prepared_dir,
                 const std::string& units_path, const std::string& out_dir,
                 bool pretrain_mode);

// pretrain / train: dataset -> model checkpoint (+ .loss.csv). train may warm
// start from a checkpoint with the same architecture.
void cmd_train(const PipelineConfig& config, const std::string& dataset_dir,
               const std::string& out_model, const std::string& init_model = "");

// generate: prepared dialogues + model + vocab -> units.jsonl, timeline.jsonl.
void cmd_generate(const PipelineConfig& config, const std::string& prepared_dir,
                  const std::string& model_path, const std::string& vocab_path,
                  const std::string& out_dir);

// synthesize: unit streams (+ dialogues.jsonl for speakers) -> one WAV per
// channel per dialogue.
void cmd_synthesize(const PipelineConfig& config, const std::string& units_path,
                    const std::string& dialogues_path, const std::string& out_dir);

struct EvaluationSummary {
    double per = -1.0;  // -1 when no generated timeline was available
    double ref_backchannel_freq = 0.0;  // percent of IPUs
    double gen_backchannel_freq = 0.0;
    double ref_backchannel_dur = 0.0;   // percent of speech time
    double gen_backchannel_dur = 0.0;
    long ref_overlap_count = 0, gen_overlap_count = 0;
    long ref_gap_count = 0, gen_gap_count = 0;
    long ref_pause_count = 0, gen_pause_count = 0;
    double ref_overlap_median = 0.0, gen_overlap_median = 0.0;
    double ref_gap_median = 0.0, gen_gap_median = 0.0;
    double ref_pause_median = 0.0, gen_pause_median = 0.0;
    bool pitch_r_defined = false;
    double pitch_mae = 0.0, pitch_r = 0.0, pitch_p = 1.0;
    bool backchannel_r_defined = false;
    double backchannel_r = 0.0, backchannel_p = 1.0;
};

// evaluate: reference corpus dir (units.jsonl + meta.json) + prepared dir
// (written.jsonl + dialogues.jsonl) + generated dir (units.jsonl +
// timeline.jsonl) -> metrics.csv, histograms.csv, events.svg in out_dir.
EvaluationSummary cmd_evaluate(const PipelineConfig& config, const std::string& ref_dir,
                               const std::string& prepared_dir, const std::string& gen_dir,
                               const std::string& out_dir);

// plot: renders a loss-curve CSV or a histogram CSV as a standalone SVG.
void cmd_plot(const std::string& csv_path, const std::string& out_svg);

// Speech segments of a 50 Hz unit stream: non-silence runs, with silences
// shorter than the IPU merge threshold bridged.
std::vector<VadSegment> unit_stream_segments(const std::vector<int>& content, int channel);

}  // namespace duovox
