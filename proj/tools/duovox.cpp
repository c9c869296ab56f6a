// Command-line front end for the duovox dialogue pipeline.
//
// Typical flow:
//   duovox make-corpus --out corpus/
//   duovox prepare --transcripts corpus/transcripts.jsonl --units corpus/units.jsonl
//          --emit-examples examples.jsonl
//   duovox train-classifier --examples examples.jsonl --out classifier.bin
//   duovox prepare --transcripts ... --units ... --classifier classifier.bin --out prepared/
//   duovox dataset --prepared prepared/ --units corpus/units.jsonl --out data/
//   duovox train --dataset data/ --out model.bin
//   duovox generate --prepared prepared/ --model model.bin --vocab data/vocab.txt --out gen/
//   duovox synthesize --units gen/units.jsonl --dialogues prepared/dialogues.jsonl --out wav/
//   duovox evaluate --reference corpus/ --prepared prepared/ --generated gen/ --out report/

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "duovox/pipeline.hpp"

namespace {

struct CommonOptions {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& common) {
    cmd->add_option("--config", common.config_path, "pipeline configuration file");
    cmd->add_option("--set", common.overrides,
                    "override a config value, e.g. --set corpus.dialogues=10");
}

duovox::PipelineConfig resolve_config(const CommonOptions& common) {
    duovox::PipelineConfig cfg;
    if (!common.config_path.empty()) cfg = duovox::load_pipeline_config(common.config_path);
    for (const auto& assignment : common.overrides) {
        duovox::apply_config_override(cfg, assignment);
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"duovox: written dialogue to two-channel spoken dialogue"};
    app.require_subcommand(1);

    CommonOptions common;

    // make-corpus
    std::string out_dir;
    auto* make_corpus = app.add_subcommand("make-corpus", "generate a synthetic corpus");
    add_common(make_corpus, common);
    make_corpus->add_option("--out", out_dir, "output directory")->required();

    // prepare
    std::string transcripts_path, units_path, classifier_path, examples_path;
    auto* prepare = app.add_subcommand(
        "prepare", "turn timed transcripts into written dialogues and turn timelines");
    add_common(prepare, common);
    prepare->add_option("--transcripts", transcripts_path, "transcripts.jsonl")->required();
    prepare->add_option("--units", units_path, "units.jsonl (needed for classification)");
    prepare->add_option("--classifier", classifier_path, "trained classifier checkpoint");
    prepare->add_option("--out", out_dir, "output directory");
    prepare->add_option("--emit-examples", examples_path,
                        "write classifier training examples instead of prepared output");

    // train-classifier
    auto* train_clf = app.add_subcommand("train-classifier",
                                         "train the speaker/listener classifier");
    add_common(train_clf, common);
    train_clf->add_option("--examples", examples_path, "labeled examples jsonl")->required();
    train_clf->add_option("--out", out_dir, "output checkpoint path")->required();

    // units
    auto* units = app.add_subcommand(
        "units", "fit a unit codebook and pitch bins, then code the corpus");
    add_common(units, common);
    units->add_option("--transcripts", transcripts_path, "transcripts.jsonl")->required();
    units->add_option("--out", out_dir, "output directory")->required();

    // dataset / pretrain-dataset
    std::string prepared_dir, dataset_dir, model_path, vocab_path, init_model;
    auto* dataset = app.add_subcommand("dataset", "build the training dataset");
    add_common(dataset, common);
    dataset->add_option("--prepared", prepared_dir, "prepared directory")->required();
    dataset->add_option("--units", units_path, "units.jsonl")->required();
    dataset->add_option("--out", out_dir, "output directory")->required();
    bool pretrain_mode = false;
    dataset->add_flag("--pretrain", pretrain_mode,
                      "emit single-channel turn examples for pre-training");

    // train
    auto* train = app.add_subcommand("train", "train the dialogue model");
    add_common(train, common);
    train->add_option("--dataset", dataset_dir, "dataset directory")->required();
    train->add_option("--out", model_path, "output model path")->required();
    train->add_option("--init", init_model, "warm-start checkpoint");

    // generate
    std::string gen_dir;
    auto* generate = app.add_subcommand("generate",
                                        "generate unit streams from written dialogues");
    add_common(generate, common);
    generate->add_option("--prepared", prepared_dir, "prepared directory")->required();
    generate->add_option("--model", model_path, "trained model")->required();
    generate->add_option("--vocab", vocab_path, "vocabulary file")->required();
    generate->add_option("--out", gen_dir, "output directory")->required();

    // synthesize
    std::string dialogues_path;
    auto* synthesize = app.add_subcommand("synthesize", "render unit streams to WAV files");
    add_common(synthesize, common);
    synthesize->add_option("--units", units_path, "units.jsonl")->required();
    synthesize->add_option("--dialogues", dialogues_path,
                           "dialogues.jsonl (for speaker identities)");
    synthesize->add_option("--out", out_dir, "output directory")->required();

    // evaluate
    std::string ref_dir, report_dir;
    auto* evaluate = app.add_subcommand("evaluate",
                                        "compare generated dialogues against the reference");
    add_common(evaluate, common);
    evaluate->add_option("--reference", ref_dir, "reference corpus directory")->required();
    evaluate->add_option("--prepared", prepared_dir, "prepared directory")->required();
    evaluate->add_option("--generated", gen_dir, "generated directory")->required();
    evaluate->add_option("--out", report_dir, "report directory")->required();

    // plot
    std::string csv_path, svg_path;
    auto* plot = app.add_subcommand("plot", "render a loss curve or histogram CSV to SVG");
    plot->add_option("--csv", csv_path, "input CSV")->required();
    plot->add_option("--out", svg_path, "output SVG")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(make_corpus)) {
            duovox::cmd_make_corpus(resolve_config(common), out_dir);
        } else if (app.got_subcommand(prepare)) {
            if (out_dir.empty() && examples_path.empty()) {
                throw duovox::InputError("prepare needs --out or --emit-examples");
            }
            duovox::cmd_prepare(resolve_config(common), transcripts_path, units_path,
                                classifier_path, out_dir, examples_path);
        } else if (app.got_subcommand(train_clf)) {
            duovox::cmd_train_classifier(resolve_config(common), examples_path, out_dir);
        } else if (app.got_subcommand(units)) {
            duovox::cmd_units(resolve_config(common), transcripts_path, out_dir);
        } else if (app.got_subcommand(dataset)) {
            duovox::cmd_dataset(resolve_config(common), prepared_dir, units_path, out_dir,
                                pretrain_mode);
        } else if (app.got_subcommand(train)) {
            duovox::cmd_train(resolve_config(common), dataset_dir, model_path, init_model);
        } else if (app.got_subcommand(generate)) {
            duovox::cmd_generate(resolve_config(common), prepared_dir, model_path, vocab_path,
                                 gen_dir);
        } else if (app.got_subcommand(synthesize)) {
            duovox::cmd_synthesize(resolve_config(common), units_path, dialogues_path, out_dir);
        } else if (app.got_subcommand(evaluate)) {
            duovox::cmd_evaluate(resolve_config(common), ref_dir, prepared_dir, gen_dir,
                                 report_dir);
        } else if (app.got_subcommand(plot)) {
            duovox::cmd_plot(csv_path, svg_path);
        }
    } catch (const duovox::InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const duovox::PreconditionError& e) {
        std::fprintf(stderr, "precondition violated: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected failure: %s\n", e.what());
        return 1;
    }
    return 0;
}
