#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "duovox/pipeline.hpp"
#include "test_util.hpp"

using namespace duovox;
namespace fs = std::filesystem;

namespace {

std::string write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    return path.string();
}

bool nonempty_file(const fs::path& path) {
    return fs::exists(path) && fs::file_size(path) > 0;
}

}  // namespace

TEST_CASE("config files parse sections, comments, and typed values") {
    const auto dir = duovox::testing::scratch_dir("pipeline_config");
    const std::string path = write_text(dir / "duovox.cfg",
                                        "# comment\n"
                                        "[corpus]\n"
                                        "dialogues = 5\n"
                                        "backchannel_rate = 0.4  \n"
                                        "\n"
                                        "[train]\n"
                                        "steps = 12\n"
                                        "peak_lr = 1e-3\n"
                                        "[generate]\n"
                                        "greedy = true\n");
    const PipelineConfig cfg = load_pipeline_config(path);
    CHECK(cfg.corpus.dialogues == 5);
    CHECK(cfg.corpus.backchannel_rate == doctest::Approx(0.4));
    CHECK(cfg.train.steps == 12);
    CHECK(cfg.train.peak_lr == doctest::Approx(1e-3));
    CHECK(cfg.generate_greedy);
    // Untouched keys keep their defaults.
    CHECK(cfg.corpus.speakers == 8);
    CHECK(cfg.model_preset == "desk");
}

TEST_CASE("config parsing rejects unknown keys, bad values, and orphan lines") {
    const auto dir = duovox::testing::scratch_dir("pipeline_config_bad");
    CHECK_THROWS_AS(
        load_pipeline_config(write_text(dir / "a.cfg", "[corpus]\nno_such_key = 1\n")),
        InputError);
    CHECK_THROWS_AS(
        load_pipeline_config(write_text(dir / "b.cfg", "[corpus]\ndialogues = soon\n")),
        InputError);
    CHECK_THROWS_AS(load_pipeline_config(write_text(dir / "c.cfg", "dialogues = 1\n")),
                    InputError);
    CHECK_THROWS_AS(load_pipeline_config(write_text(dir / "d.cfg", "[nowhere]\nx = 1\n")),
                    InputError);
    CHECK_THROWS_AS(load_pipeline_config((dir / "missing.cfg").string()), InputError);
}

TEST_CASE("CLI overrides use the section.key=value form") {
    PipelineConfig cfg;
    apply_config_override(cfg, "corpus.units=48");
    apply_config_override(cfg, "model.preset=paper");
    apply_config_override(cfg, "train.threads=2");
    CHECK(cfg.corpus.n_units == 48);
    CHECK(cfg.model_preset == "paper");
    CHECK(cfg.train.threads == 2);

    CHECK_THROWS_AS(apply_config_override(cfg, "corpus.units"), InputError);
    CHECK_THROWS_AS(apply_config_override(cfg, "units=48"), InputError);
    CHECK_THROWS_AS(apply_config_override(cfg, "corpus.nope=1"), InputError);
    CHECK_THROWS_AS(apply_config_override(cfg, "model.preset=huge"), InputError);
}

TEST_CASE("the resolved model config honours preset and overrides") {
    PipelineConfig cfg;
    const Vocabulary vocab(16, 4, {"aa"}, {"s1", "s2"});
    ModelConfig mc = resolve_model_config(cfg, vocab);
    CHECK(mc.num_layers == 2);  // desk preset
    CHECK(mc.n_units == 16);

    cfg.model_context = 77;
    cfg.model_nucleus_p = 0.8;
    cfg.model_max_generation = 123;
    mc = resolve_model_config(cfg, vocab);
    CHECK(mc.context_frames == 77);
    CHECK(mc.nucleus_p == doctest::Approx(0.8));
    CHECK(mc.max_generation_frames == 123);

    cfg.model_nucleus_p = 1.5;
    CHECK_THROWS_AS(resolve_model_config(cfg, vocab), PreconditionError);
}

TEST_CASE("unit stream segmentation bridges sub-threshold silences") {
    // 12 speech frames, 9 silent frames (bridged), 5 speech frames,
    // 10 silent frames (split), 5 speech frames.
    std::vector<int> content;
    auto append = [&content](int value, int count) {
        content.insert(content.end(), count, value);
    };
    append(0, 7);
    append(3, 12);
    append(0, 9);
    append(4, 5);
    append(0, 10);
    append(5, 5);
    append(0, 30);

    const auto segments = unit_stream_segments(content, 2);
    REQUIRE(segments.size() == 2);
    CHECK(segments[0].channel == 2);
    CHECK(segments[0].start_s == doctest::Approx(7 / 50.0));
    CHECK(segments[0].end_s == doctest::Approx(33 / 50.0));  // bridge kept inside
    CHECK(segments[1].start_s == doctest::Approx(43 / 50.0));
    CHECK(segments[1].end_s == doctest::Approx(48 / 50.0));

    CHECK(unit_stream_segments({}, 1).empty());
    CHECK(unit_stream_segments(std::vector<int>(40, 0), 1).empty());
}

TEST_CASE("make-corpus writes transcripts, unit streams, and metadata") {
    const auto dir = duovox::testing::scratch_dir("pipeline_make_corpus");
    PipelineConfig cfg;
    cfg.corpus.dialogues = 2;
    cfg.corpus.utterances_per_dialogue = 4;
    cfg.corpus.speakers = 2;
    cmd_make_corpus(cfg, dir.string());
    CHECK(nonempty_file(dir / "transcripts.jsonl"));
    CHECK(nonempty_file(dir / "units.jsonl"));
    CHECK(nonempty_file(dir / "meta.json"));

    // Two unit-stream rows per dialogue, one per channel.
    std::ifstream units(dir / "units.jsonl");
    long rows = 0;
    std::string line;
    while (std::getline(units, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 4);
}

TEST_CASE("prepare, classifier, and dataset steps run end to end on a tiny corpus") {
    const auto root = duovox::testing::scratch_dir("pipeline_tiny_e2e");
    const fs::path corpus_dir = root / "corpus";
    const fs::path prepared_dir = root / "prepared";
    const fs::path dataset_dir = root / "dataset";
    fs::create_directories(corpus_dir);
    fs::create_directories(prepared_dir);
    fs::create_directories(dataset_dir);

    PipelineConfig cfg;
    cfg.corpus.dialogues = 3;
    cfg.corpus.utterances_per_dialogue = 6;
    cfg.corpus.speakers = 4;
    cfg.corpus.phoneme_set_size = 12;
    cfg.corpus.n_units = 16;
    cfg.corpus.backchannel_rate = 0.5;
    cfg.classifier.max_steps = 60;
    cfg.classifier.embedding_dim = 8;
    cfg.classifier.hidden_dim = 8;

    cmd_make_corpus(cfg, corpus_dir.string());

    // Emit labeled examples from containment-resolved IPUs, train on them.
    const std::string examples = (root / "examples.jsonl").string();
    cmd_prepare(cfg, (corpus_dir / "transcripts.jsonl").string(),
                (corpus_dir / "units.jsonl").string(), "", "", examples);
    CHECK(nonempty_file(examples));
    const std::string clf_path = (root / "classifier.bin").string();
    cmd_train_classifier(cfg, examples, clf_path);
    CHECK(nonempty_file(clf_path));

    cmd_prepare(cfg, (corpus_dir / "transcripts.jsonl").string(),
                (corpus_dir / "units.jsonl").string(), clf_path, prepared_dir.string());
    CHECK(nonempty_file(prepared_dir / "written.jsonl"));
    CHECK(nonempty_file(prepared_dir / "timeline.jsonl"));
    CHECK(nonempty_file(prepared_dir / "dialogues.jsonl"));

    cmd_dataset(cfg, prepared_dir.string(), (corpus_dir / "units.jsonl").string(),
                dataset_dir.string(), false);
    CHECK(nonempty_file(dataset_dir / "dataset.bin"));
    CHECK(nonempty_file(dataset_dir / "vocab.txt"));

    const auto examples_bin = load_dataset((dataset_dir / "dataset.bin").string());
    CHECK(!examples_bin.empty());
    const Vocabulary vocab = Vocabulary::load((dataset_dir / "vocab.txt").string());
    CHECK(vocab.n_content_units() == 16);

    // Evaluating the reference against itself reports matched statistics and
    // no phoneme error rate (the reference has no generated timeline).
    const fs::path eval_dir = root / "eval";
    fs::create_directories(eval_dir);
    const EvaluationSummary summary =
        cmd_evaluate(cfg, corpus_dir.string(), prepared_dir.string(), corpus_dir.string(),
                     eval_dir.string());
    CHECK(summary.per == -1.0);
    CHECK(summary.gen_backchannel_freq == doctest::Approx(summary.ref_backchannel_freq));
    CHECK(summary.gen_overlap_count == summary.ref_overlap_count);
    CHECK(summary.gen_gap_median == doctest::Approx(summary.ref_gap_median));
    CHECK(nonempty_file(eval_dir / "metrics.csv"));
    CHECK(nonempty_file(eval_dir / "histograms.csv"));
    CHECK(nonempty_file(eval_dir / "events.svg"));

    // The histogram CSV renders as an SVG; the loss CSV path is covered by
    // training runs.
    cmd_plot((eval_dir / "histograms.csv").string(), (eval_dir / "hist.svg").string());
    CHECK(nonempty_file(eval_dir / "hist.svg"));
    CHECK_THROWS_AS(cmd_plot((eval_dir / "events.svg").string(),
                             (eval_dir / "x.svg").string()),
                    InputError);
}

TEST_CASE("prepare without a classifier fails actionably on unresolved IPUs") {
    const auto root = duovox::testing::scratch_dir("pipeline_unresolved");
    const fs::path corpus_dir = root / "corpus";
    fs::create_directories(corpus_dir);
    PipelineConfig cfg;
    cfg.corpus.dialogues = 2;
    cfg.corpus.utterances_per_dialogue = 4;
    cfg.corpus.backchannel_rate = 0.0;  // nothing is contained: no IPU resolves
    cmd_make_corpus(cfg, corpus_dir.string());

    // Containment alone cannot label any of these IPUs, so prepare must point
    // at the classifier workflow.
    bool threw = false;
    try {
        cmd_prepare(cfg, (corpus_dir / "transcripts.jsonl").string(),
                    (corpus_dir / "units.jsonl").string(), "", (root / "out").string());
    } catch (const InputError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("train-classifier") != std::string::npos);
    }
    CHECK(threw);
}
