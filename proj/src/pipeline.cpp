#include "duovox/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "duovox/codec.hpp"
#include "duovox/s2u.hpp"
#include "duovox/synth.hpp"
#include "duovox/turn_taking.hpp"
#include "duovox/wav.hpp"

namespace duovox {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::vector<json> rows;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

template <typename T>
T field(const json& row, const char* key, const std::string& where) {
    if (!row.contains(key)) {
        throw InputError(where + ": missing field '" + key + "'");
    }
    try {
        return row.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InputError(where + ": field '" + key + "': " + e.what());
    }
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open " + path + " for writing");
    return out;
}

// ---------------------------------------------------------------------------
// Configuration

long parse_long(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const long v = std::stol(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw InputError("config key " + key + ": not an integer: '" + value + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const unsigned long long v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw InputError("config key " + key + ": not an unsigned integer: '" + value + "'");
    }
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        const double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw InputError("config key " + key + ": not a number: '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw InputError("config key " + key + ": expected true/false: '" + value + "'");
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value) {
    auto i = [&] { return static_cast<int>(parse_long(key, value)); };
    auto u = [&] { return parse_u64(key, value); };
    auto d = [&] { return parse_double(key, value); };

    if (key == "corpus.phonemes") c.corpus.phoneme_set_size = i();
    else if (key == "corpus.map_seed") c.corpus.map_seed = u();
    else if (key == "corpus.backchannel_rate") c.corpus.backchannel_rate = d();
    else if (key == "corpus.overlap_rate") c.corpus.overlap_rate = d();
    else if (key == "corpus.speakers") c.corpus.speakers = i();
    else if (key == "corpus.dialogues") c.corpus.dialogues = i();
    else if (key == "corpus.utterances") c.corpus.utterances_per_dialogue = i();
    else if (key == "corpus.seed") c.corpus.seed = u();
    else if (key == "corpus.units") c.corpus.n_units = i();
    else if (key == "corpus.pitch_bins") c.corpus.n_pitch_bins = i();
    else if (key == "classifier.layers") c.classifier.num_layers = i();
    else if (key == "classifier.embedding") c.classifier.embedding_dim = i();
    else if (key == "classifier.hidden") c.classifier.hidden_dim = i();
    else if (key == "classifier.lr") c.classifier.learning_rate = d();
    else if (key == "classifier.steps") c.classifier.max_steps = i();
    else if (key == "classifier.seed") c.classifier.seed = u();
    else if (key == "model.preset") {
        if (value != "desk" && value != "paper") {
            throw InputError("model.preset must be 'desk' or 'paper', got '" + value + "'");
        }
        c.model_preset = value;
    } else if (key == "model.seed") c.model_seed = u();
    else if (key == "model.context") c.model_context = i();
    else if (key == "model.nucleus_p") c.model_nucleus_p = d();
    else if (key == "model.max_generation") c.model_max_generation = i();
    else if (key == "model.max_duration") c.model_max_duration = i();
    else if (key == "train.steps") c.train.steps = i();
    else if (key == "train.batch") c.train.batch_size = i();
    else if (key == "train.peak_lr") c.train.peak_lr = d();
    else if (key == "train.initial_lr") c.train.initial_lr = d();
    else if (key == "train.warmup") c.train.warmup_steps = i();
    else if (key == "train.rms_decay") c.train.rms_decay = d();
    else if (key == "train.threads") c.train.threads = i();
    else if (key == "train.seed") c.train.seed = u();
    else if (key == "train.log_every") c.train.log_every = i();
    else if (key == "generate.seed") c.generate_seed = u();
    else if (key == "generate.max_segment_frames") c.generate_max_segment_frames = i();
    else if (key == "generate.greedy") c.generate_greedy = parse_bool(key, value);
    else if (key == "synth.sample_rate") c.synth_sample_rate = i();
    else if (key == "synth.crossfade_ms") c.synth_crossfade_ms = d();
    else if (key == "synth.seed") c.synth_seed = u();
    else if (key == "units.feature_dim") c.units_feature_dim = i();
    else if (key == "units.kmeans_iters") c.units_kmeans_iters = i();
    else if (key == "units.seed") c.units_seed = u();
    else throw InputError("unknown config key '" + key + "'");
}

}  // namespace

PipelineConfig::PipelineConfig() {
    // Desk-scale defaults; a full-size recurrent classifier would be far
    // larger than the synthetic task warrants.
    classifier.num_layers = 1;
    classifier.embedding_dim = 16;
    classifier.hidden_dim = 32;
    classifier.learning_rate = 0.05;
    classifier.max_steps = 1500;
    classifier.seed = 5;
    train.steps = 1500;
    train.batch_size = 4;
    train.peak_lr = 2e-3;
    train.warmup_steps = 100;
    train.seed = 1;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file " + path);
    PipelineConfig cfg;
    std::string line, section;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw InputError(path + ":" + std::to_string(line_no) + ": malformed section");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw InputError(path + ":" + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) {
            throw InputError(path + ":" + std::to_string(line_no) + ": key outside a section");
        }
        set_config_value(cfg, section + "." + key, value);
    }
    return cfg;
}

void apply_config_override(PipelineConfig& config, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw InputError("override must look like section.key=value: '" + assignment + "'");
    }
    set_config_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ModelConfig resolve_model_config(const PipelineConfig& config, const Vocabulary& vocab) {
    ModelConfig mc = config.model_preset == "paper" ? ModelConfig::paper_scale(vocab)
                                                    : ModelConfig::desk_scale(vocab);
    if (config.model_context >= 0) mc.context_frames = config.model_context;
    if (config.model_nucleus_p > 0.0) mc.nucleus_p = config.model_nucleus_p;
    if (config.model_max_generation > 0) mc.max_generation_frames = config.model_max_generation;
    if (config.model_max_duration > 0) mc.max_duration = config.model_max_duration;
    mc.validate();
    return mc;
}

// ---------------------------------------------------------------------------
// Shared readers

namespace {

struct TranscriptDialogue {
    std::string id;
    std::vector<TimedUtterance> rows;
};

std::vector<TranscriptDialogue> read_transcripts(const std::string& path) {
    std::vector<TranscriptDialogue> dialogues;
    std::map<std::string, size_t> index;
    for (const auto& row : read_jsonl(path)) {
        const std::string id = field<std::string>(row, "dialogue_id", path);
        TimedUtterance u;
        u.channel = field<int>(row, "channel", path);
        u.speaker_id = field<std::string>(row, "speaker_id", path);
        u.start_s = field<double>(row, "start_s", path);
        u.end_s = field<double>(row, "end_s", path);
        u.text = row.value("text", std::string());
        u.phonemes = field<std::vector<std::string>>(row, "phonemes", path);
        if (u.channel != 1 && u.channel != 2) {
            throw InputError(path + ": dialogue " + id + " has channel " +
                             std::to_string(u.channel) + "; expected 1 or 2");
        }
        auto it = index.find(id);
        if (it == index.end()) {
            index.emplace(id, dialogues.size());
            dialogues.push_back({id, {}});
            it = index.find(id);
        }
        dialogues[it->second].rows.push_back(std::move(u));
    }
    if (dialogues.empty()) throw InputError(path + ": no transcript rows");
    return dialogues;
}

struct UnitStreams {
    std::array<std::vector<int>, 2> content;
    std::array<std::vector<int>, 2> pitch;
};

struct UnitFile {
    std::vector<std::string> order;
    std::map<std::string, UnitStreams> by_id;
};

UnitFile read_units(const std::string& path) {
    UnitFile file;
    for (const auto& row : read_jsonl(path)) {
        const std::string id = field<std::string>(row, "dialogue_id", path);
        const int channel = field<int>(row, "channel", path);
        if (channel != 1 && channel != 2) {
            throw InputError(path + ": dialogue " + id + " has channel " +
                             std::to_string(channel));
        }
        auto it = file.by_id.find(id);
        if (it == file.by_id.end()) {
            file.order.push_back(id);
            it = file.by_id.emplace(id, UnitStreams{}).first;
        }
        it->second.content[channel - 1] = field<std::vector<int>>(row, "content", path);
        it->second.pitch[channel - 1] = field<std::vector<int>>(row, "pitch", path);
        if (it->second.content[channel - 1].size() != it->second.pitch[channel - 1].size()) {
            throw InputError(path + ": dialogue " + id + " channel " +
                             std::to_string(channel) + ": content/pitch length mismatch");
        }
    }
    if (file.order.empty()) throw InputError(path + ": no unit rows");
    return file;
}

struct PreparedTurn {
    int turn_index = 0;  // 1-based
    int channel = 1;
    std::string speaker_id;
    double a_s = 0.0;
    double b_s = 0.0;
    std::vector<std::string> phonemes;
};

struct PreparedDialogue {
    std::string id;
    std::array<std::string, 2> speaker_pair;
    long total_frames = 0;
    std::vector<PreparedTurn> turns;
    TurnTimeline timeline;
};

std::vector<PreparedDialogue> read_prepared(const std::string& dir) {
    const std::string dlg_path = dir + "/dialogues.jsonl";
    const std::string wr_path = dir + "/written.jsonl";
    std::vector<PreparedDialogue> out;
    std::map<std::string, size_t> index;
    for (const auto& row : read_jsonl(dlg_path)) {
        PreparedDialogue d;
        d.id = field<std::string>(row, "dialogue_id", dlg_path);
        const auto pair = field<std::vector<std::string>>(row, "speaker_pair", dlg_path);
        if (pair.size() != 2) throw InputError(dlg_path + ": speaker_pair must have 2 entries");
        d.speaker_pair = {pair[0], pair[1]};
        d.total_frames = field<long>(row, "total_frames", dlg_path);
        index.emplace(d.id, out.size());
        out.push_back(std::move(d));
    }
    for (const auto& row : read_jsonl(wr_path)) {
        const std::string id = field<std::string>(row, "dialogue_id", wr_path);
        auto it = index.find(id);
        if (it == index.end()) {
            throw InputError(wr_path + ": dialogue " + id + " missing from dialogues.jsonl");
        }
        PreparedTurn t;
        t.turn_index = field<int>(row, "turn_index", wr_path);
        t.channel = field<int>(row, "channel", wr_path);
        t.speaker_id = field<std::string>(row, "speaker_id", wr_path);
        t.a_s = field<double>(row, "a_s", wr_path);
        t.b_s = field<double>(row, "b_s", wr_path);
        t.phonemes = field<std::vector<std::string>>(row, "phonemes", wr_path);
        out[it->second].turns.push_back(std::move(t));
    }
    for (auto& d : out) {
        if (d.turns.empty()) throw InputError("dialogue " + d.id + " has no written turns");
        std::sort(d.turns.begin(), d.turns.end(),
                  [](const PreparedTurn& a, const PreparedTurn& b) {
                      return a.turn_index < b.turn_index;
                  });
        std::vector<UtteranceSpan> spans;
        for (const auto& t : d.turns) {
            spans.push_back({t.channel, t.speaker_id, t.a_s, t.b_s});
        }
        d.timeline = modify_boundaries(spans);
    }
    return out;
}

// Last `keep` frames of a context window.
StreamPair tail_context(const StreamPair& s, long keep) {
    const long have = static_cast<long>(s.content.size());
    const long k = std::min(keep, have);
    StreamPair out;
    out.content.assign(s.content.end() - k, s.content.end());
    out.pitch.assign(s.pitch.end() - k, s.pitch.end());
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// make-corpus

void cmd_make_corpus(const PipelineConfig& config, const std::string& out_dir) {
    const SyntheticCorpus corpus = make_synthetic_corpus(config.corpus);
    fs::create_directories(out_dir);

    auto transcripts = open_out(out_dir + "/transcripts.jsonl");
    auto units = open_out(out_dir + "/units.jsonl");
    json meta;
    meta["phoneme_names"] = corpus.phoneme_names;
    meta["phoneme_to_unit"] = corpus.phoneme_to_unit;
    meta["backchannel_phonemes"] = corpus.backchannel_phonemes;
    meta["speaker_ids"] = corpus.speaker_ids;
    meta["n_units"] = corpus.spec.n_units;
    meta["n_pitch_bins"] = corpus.spec.n_pitch_bins;
    json labels = json::array();

    for (const auto& dlg : corpus.dialogues) {
        const auto rows = corpus_transcript(corpus, dlg);
        for (size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            json row{{"dialogue_id", dlg.id},      {"channel", r.channel},
                     {"speaker_id", r.speaker_id}, {"start_s", r.start_s},
                     {"end_s", r.end_s},           {"text", r.text},
                     {"phonemes", r.phonemes}};
            transcripts << row.dump() << '\n';
            labels.push_back(json{{"dialogue_id", dlg.id},
                                  {"channel", dlg.utterances[i].channel},
                                  {"start_s", r.start_s},
                                  {"end_s", r.end_s},
                                  {"backchannel", dlg.utterances[i].backchannel}});
        }
        for (int c = 0; c < 2; ++c) {
            json row{{"dialogue_id", dlg.id},
                     {"channel", c + 1},
                     {"content", dlg.content[c]},
                     {"pitch", dlg.pitch[c]}};
            units << row.dump() << '\n';
        }
    }
    meta["labels"] = std::move(labels);
    auto meta_out = open_out(out_dir + "/meta.json");
    meta_out << meta.dump(2) << '\n';
    log_info("wrote synthetic corpus: " + std::to_string(corpus.dialogues.size()) +
             " dialogues to " + out_dir);
}

// ---------------------------------------------------------------------------
// prepare

void cmd_prepare(const PipelineConfig& config, const std::string& transcripts_path,
                 const std::string& units_path, const std::string& classifier_path,
                 const std::string& out_dir, const std::string& emit_examples_path) {
    (void)config;
    const auto dialogues = read_transcripts(transcripts_path);
    std::optional<UnitFile> units;
    if (!units_path.empty()) units = read_units(units_path);
    std::optional<ClassifierModel> clf;
    if (!classifier_path.empty()) clf = ClassifierModel::load(classifier_path);

    const bool emitting = !emit_examples_path.empty();
    std::ofstream written_out, timeline_out, dialogues_out, examples_out;
    if (emitting) {
        examples_out = open_out(emit_examples_path);
    } else {
        fs::create_directories(out_dir);
        written_out = open_out(out_dir + "/written.jsonl");
        timeline_out = open_out(out_dir + "/timeline.jsonl");
        dialogues_out = open_out(out_dir + "/dialogues.jsonl");
    }

    auto ipu_units = [&](const std::string& dlg_id,
                         const InterPausalUnit& ipu) -> std::vector<int> {
        if (!units) {
            throw InputError("unit streams required to classify IPUs; pass --units");
        }
        auto it = units->by_id.find(dlg_id);
        if (it == units->by_id.end()) {
            throw InputError("no unit streams for dialogue " + dlg_id);
        }
        const auto& stream = it->second.content[ipu.channel - 1];
        long b = seconds_to_frame(ipu.start_s);
        long e = std::min<long>(seconds_to_frame(ipu.end_s),
                                static_cast<long>(stream.size()));
        b = std::min(b, e);
        return std::vector<int>(stream.begin() + b, stream.begin() + e);
    };

    for (const auto& dlg : dialogues) {
        std::array<std::vector<TimedUtterance>, 2> per_channel;
        for (const auto& u : dlg.rows) per_channel[u.channel - 1].push_back(u);
        for (auto& ch : per_channel) {
            std::stable_sort(ch.begin(), ch.end(),
                             [](const TimedUtterance& a, const TimedUtterance& b) {
                                 return a.start_s < b.start_s;
                             });
        }
        std::vector<InterPausalUnit> ipus;
        for (int c = 0; c < 2; ++c) {
            if (per_channel[c].empty()) continue;
            auto merged = merge_into_ipus(per_channel[c]);
            ipus.insert(ipus.end(), merged.begin(), merged.end());
        }
        label_by_containment(ipus);

        if (emitting) {
            for (const auto& ipu : ipus) {
                if (ipu.label == IpuLabel::Undefined) continue;
                json row{{"units", ipu_units(dlg.id, ipu)},
                         {"label", ipu.label == IpuLabel::Listener ? "listener" : "speaker"}};
                examples_out << row.dump() << '\n';
            }
            continue;
        }

        for (auto& ipu : ipus) {
            if (ipu.label != IpuLabel::Undefined) continue;
            if (!clf) {
                throw InputError(
                    "dialogue " + dlg.id +
                    " has IPUs unresolved by containment; train a classifier with "
                    "`train-classifier` and pass it via --classifier");
            }
            ipu.label = classify(*clf, ipu_units(dlg.id, ipu)).label;
        }
        const WrittenDialogue written = build_written_dialogue(ipus);

        std::vector<UtteranceSpan> spans;
        for (const auto& t : written.turns) {
            spans.push_back({t.channel, t.speaker_id, t.source_start_s, t.source_end_s});
        }
        const TurnTimeline timeline = modify_boundaries(spans);

        long total_frames = 0;
        if (units) {
            auto it = units->by_id.find(dlg.id);
            if (it != units->by_id.end()) {
                total_frames = static_cast<long>(it->second.content[0].size());
            }
        }
        if (total_frames == 0) {
            double last = 0.0;
            for (const auto& u : dlg.rows) last = std::max(last, u.end_s);
            total_frames = seconds_to_frame(last) + 25;
        }

        for (size_t n = 0; n < written.turns.size(); ++n) {
            const auto& t = written.turns[n];
            json row{{"dialogue_id", dlg.id},
                     {"turn_index", static_cast<int>(n) + 1},
                     {"channel", t.channel},
                     {"speaker_id", t.speaker_id},
                     {"a_s", t.source_start_s},
                     {"b_s", t.source_end_s},
                     {"phonemes", t.phonemes}};
            written_out << row.dump() << '\n';
        }
        for (const auto& e : timeline.entries) {
            json row{{"dialogue_id", dlg.id},
                     {"n", e.index},
                     {"channel", e.channel},
                     {"a_s", e.a_s},
                     {"b_s", e.b_s},
                     {"a_hat_s", e.a_hat_s},
                     {"b_hat_s", e.b_hat_s},
                     {"overlaps_previous", e.overlaps_previous}};
            timeline_out << row.dump() << '\n';
        }
        json drow{{"dialogue_id", dlg.id},
                  {"speaker_pair", std::vector<std::string>{written.speaker_pair[0],
                                                            written.speaker_pair[1]}},
                  {"total_frames", total_frames}};
        dialogues_out << drow.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// train-classifier

void cmd_train_classifier(const PipelineConfig& config, const std::string& examples_path,
                          const std::string& out_path) {
    std::vector<LabeledUnitSequence> all;
    for (const auto& row : read_jsonl(examples_path)) {
        LabeledUnitSequence ex;
        ex.content_units = field<std::vector<int>>(row, "units", examples_path);
        const std::string label = field<std::string>(row, "label", examples_path);
        if (label == "speaker") ex.label = IpuLabel::Speaker;
        else if (label == "listener") ex.label = IpuLabel::Listener;
        else throw InputError(examples_path + ": unknown label '" + label + "'");
        all.push_back(std::move(ex));
    }
    ClassifierConfig cc = config.classifier;
    cc.vocab_size = config.corpus.n_units;

    std::vector<LabeledUnitSequence> train_set = all, val_set;
    if (all.size() >= 10) {
        const size_t n_val = all.size() / 10;
        val_set.assign(all.end() - n_val, all.end());
        train_set.assign(all.begin(), all.end() - n_val);
    }
    const auto result = train_classifier(train_set, cc, val_set);
    result.model.save(out_path);
    log_info("classifier: final loss " + std::to_string(result.final_loss) + ", accuracy " +
             std::to_string(evaluate_classifier(result.model, all)));
}

// ---------------------------------------------------------------------------
// units (synthetic feature path)

void cmd_units(const PipelineConfig& config, const std::string& transcripts_path,
               const std::string& out_dir) {
    const auto dialogues = read_transcripts(transcripts_path);
    fs::create_directories(out_dir);

    // Stable phoneme indexing across the whole transcript file.
    std::set<std::string> phoneme_set;
    for (const auto& dlg : dialogues) {
        for (const auto& u : dlg.rows) phoneme_set.insert(u.phonemes.begin(), u.phonemes.end());
    }
    std::map<std::string, int> phoneme_index;
    for (const auto& p : phoneme_set) {
        const int id = static_cast<int>(phoneme_index.size());
        phoneme_index.emplace(p, id);
    }

    struct FrameInfo {
        int phoneme = -1;  // -1 = silence
        double f0 = 0.0;
        std::string speaker;
    };
    auto synth_f0 = [](const std::string& speaker, long frame, long utt_start) {
        const double mean = 110.0 * std::exp(0.5 * hash_unit_interval(fnv1a(speaker), 1));
        const double wobble =
            0.12 * std::sin(2.0 * std::numbers::pi * (frame - utt_start) / 37.0);
        return mean * std::exp(wobble);
    };

    // Pass 1: per-dialogue frame maps and pooled statistics.
    std::vector<std::array<std::vector<FrameInfo>, 2>> frame_maps(dialogues.size());
    std::map<std::string, std::vector<std::vector<double>>> f0_by_speaker;
    long speech_frames = 0;
    for (size_t d = 0; d < dialogues.size(); ++d) {
        const auto& dlg = dialogues[d];
        long total = 0;
        for (const auto& u : dlg.rows) total = std::max(total, seconds_to_frame(u.end_s));
        total += 25;
        for (int c = 0; c < 2; ++c) frame_maps[d][c].assign(total, FrameInfo{});
        std::map<std::string, std::vector<double>> dialogue_f0;
        for (const auto& u : dlg.rows) {
            const long b = seconds_to_frame(u.start_s);
            const long e = seconds_to_frame(u.end_s);
            if (u.phonemes.empty()) {
                throw InputError(transcripts_path + ": utterance without phonemes in " + dlg.id);
            }
            const long span = std::max<long>(1, e - b);
            for (long f = b; f < e; ++f) {
                FrameInfo& info = frame_maps[d][u.channel - 1][f];
                const size_t k = std::min<size_t>(
                    u.phonemes.size() - 1,
                    static_cast<size_t>((f - b) * static_cast<long>(u.phonemes.size()) / span));
                info.phoneme = phoneme_index.at(u.phonemes[k]);
                info.f0 = synth_f0(u.speaker_id, f, b);
                info.speaker = u.speaker_id;
                dialogue_f0[u.speaker_id].push_back(info.f0);
                ++speech_frames;
            }
        }
        for (auto& [speaker, track] : dialogue_f0) {
            f0_by_speaker[speaker].push_back(std::move(track));
        }
    }
    if (speech_frames < config.corpus.n_units) {
        throw InputError("too few speech frames to fit a codebook of " +
                         std::to_string(config.corpus.n_units) + " units");
    }

    // Codebook over a deterministic subsample of speech-frame features.
    const SyntheticFeatureProvider provider(config.units_feature_dim, config.units_seed);
    const long cap = 20000;
    const long stride = std::max<long>(1, speech_frames / cap);
    std::vector<Eigen::VectorXd> sampled;
    long seen = 0;
    for (size_t d = 0; d < dialogues.size(); ++d) {
        for (int c = 0; c < 2; ++c) {
            const auto& frames = frame_maps[d][c];
            for (size_t f = 0; f < frames.size(); ++f) {
                if (frames[f].phoneme < 0) continue;
                if (seen++ % stride != 0) continue;
                sampled.push_back(provider.frame(frames[f].phoneme, 0,
                                                 hash_mix(fnv1a(dialogues[d].id),
                                                          static_cast<uint64_t>(f * 2 + c))));
            }
        }
    }
    Eigen::MatrixXd features(static_cast<long>(sampled.size()), config.units_feature_dim);
    for (size_t i = 0; i < sampled.size(); ++i) features.row(static_cast<long>(i)) = sampled[i];
    const Codebook codebook =
        fit_kmeans(features, config.corpus.n_units - 1, config.units_seed,
                   config.units_kmeans_iters);
    codebook.save(out_dir + "/codebook.bin");

    PitchModel pitch_model;
    pitch_model.quantizer.n_bins = config.corpus.n_pitch_bins;
    for (const auto& [speaker, tracks] : f0_by_speaker) {
        pitch_model.by_speaker.emplace(speaker, fit_pitch_stats(speaker, tracks));
    }
    pitch_model.save(out_dir + "/pitch.bin");

    // Pass 2: quantize every frame.
    auto units_out = open_out(out_dir + "/units.jsonl");
    for (size_t d = 0; d < dialogues.size(); ++d) {
        for (int c = 0; c < 2; ++c) {
            const auto& frames = frame_maps[d][c];
            std::vector<int> content(frames.size(), 0), pitch(frames.size(), 0);
            std::vector<long> speech_idx;
            for (size_t f = 0; f < frames.size(); ++f) {
                if (frames[f].phoneme >= 0) speech_idx.push_back(static_cast<long>(f));
            }
            if (!speech_idx.empty()) {
                Eigen::MatrixXd m(static_cast<long>(speech_idx.size()),
                                  config.units_feature_dim);
                for (size_t i = 0; i < speech_idx.size(); ++i) {
                    const long f = speech_idx[i];
                    m.row(static_cast<long>(i)) =
                        provider.frame(frames[f].phoneme, 0,
                                       hash_mix(fnv1a(dialogues[d].id),
                                                static_cast<uint64_t>(f * 2 + c)));
                }
                const auto ids = quantize_content(m, codebook);
                for (size_t i = 0; i < speech_idx.size(); ++i) {
                    const long f = speech_idx[i];
                    content[f] = 1 + ids[i];
                    pitch[f] = quantize_pitch_frame(
                        frames[f].f0, pitch_model.stats_for(frames[f].speaker),
                        pitch_model.quantizer);
                }
            }
            json row{{"dialogue_id", dialogues[d].id},
                     {"channel", c + 1},
                     {"content", content},
                     {"pitch", pitch}};
            units_out << row.dump() << '\n';
        }
    }
    log_info("units: codebook of " + std::to_string(codebook.k()) + " + silence, " +
             std::to_string(pitch_model.by_speaker.size()) + " speakers");
}

// ---------------------------------------------------------------------------
// dataset

void cmd_dataset(const PipelineConfig& config, const std::string& prepared_dir,
                 const std::string& units_path, const std::string& out_dir,
                 bool pretrain_mode) {
    const auto prepared = read_prepared(prepared_dir);
    const auto units = read_units(units_path);

    std::set<std::string> phoneme_set, speaker_set;
    for (const auto& d : prepared) {
        for (const auto& t : d.turns) {
            phoneme_set.insert(t.phonemes.begin(), t.phonemes.end());
            speaker_set.insert(t.speaker_id);
        }
    }
    const Vocabulary vocab(config.corpus.n_units, config.corpus.n_pitch_bins,
                           {phoneme_set.begin(), phoneme_set.end()},
                           {speaker_set.begin(), speaker_set.end()});
    const ModelConfig mc = resolve_model_config(config, vocab);

    std::vector<TrainingExample> examples;
    for (const auto& d : prepared) {
        auto it = units.by_id.find(d.id);
        if (it == units.by_id.end()) {
            throw InputError("no unit streams for dialogue " + d.id);
        }
        const UnitStreams& us = it->second;
        const long stream_len = static_cast<long>(us.content[0].size());
        if (static_cast<long>(us.content[1].size()) != stream_len) {
            throw InputError("dialogue " + d.id + ": channel stream lengths differ");
        }
        long total = d.total_frames;
        if (total != stream_len) {
            log_warn("dialogue " + d.id + ": total_frames " + std::to_string(total) +
                     " != stream length " + std::to_string(stream_len) + "; using stream");
            total = stream_len;
        }

        if (pretrain_mode) {
            for (const auto& t : d.turns) {
                const long b = seconds_to_frame(t.a_s);
                const long e = std::min<long>(seconds_to_frame(t.b_s), total);
                if (e <= b) {
                    log_warn("dialogue " + d.id + ": empty pre-training slice skipped");
                    continue;
                }
                const int c = t.channel - 1;
                StreamPair target = slice_stream({us.content[c], us.pitch[c]}, b, e);
                const PrefixSequence prefix =
                    build_pretrain_prefix(vocab, t.speaker_id, t.phonemes);
                examples.push_back(
                    assemble_pretrain_example(prefix, target, vocab, mc.max_duration));
            }
            continue;
        }

        const auto segments = slice_training_segments(d.timeline, total, mc.context_frames);
        for (const auto& seg : segments) {
            const size_t n = static_cast<size_t>(seg.index) - 1;
            const auto& entry = d.timeline.entries[n];
            std::array<StreamPair, 2> targets, context_full;
            for (int c = 0; c < 2; ++c) {
                targets[c] = slice_stream({us.content[c], us.pitch[c]}, seg.begin_frame,
                                          seg.end_frame);
                context_full[c] = slice_stream({us.content[c], us.pitch[c]},
                                               seg.context_begin_frame, seg.begin_frame);
            }
            PrefixSpec spec;
            spec.speaker_pair = d.speaker_pair;
            spec.utterance_channel = entry.channel;
            spec.phonemes_n = d.turns[n].phonemes;
            if (n + 1 < d.turns.size()) {
                spec.next_channel = d.turns[n + 1].channel;
                spec.phonemes_next = d.turns[n + 1].phonemes;
            }
            std::vector<long> lengths;
            if (seg.overlaps_previous) {
                lengths.push_back(static_cast<long>(context_full[0].content.size()));
            } else {
                for (int len : augment_context_lengths(mc.context_frames)) {
                    lengths.push_back(len);
                }
            }
            for (long keep : lengths) {
                for (int c = 0; c < 2; ++c) spec.context[c] = tail_context(context_full[c], keep);
                examples.push_back(assemble_example(build_prefix(vocab, spec, mc.context_frames),
                                                    targets, vocab, mc.max_duration));
            }
        }
    }
    if (examples.empty()) throw InputError("dataset construction produced no examples");
    fs::create_directories(out_dir);
    save_dataset(out_dir + "/dataset.bin", examples);
    vocab.save(out_dir + "/vocab.txt");
    log_info("dataset: " + std::to_string(examples.size()) + " examples, vocabulary of " +
             std::to_string(vocab.size()) + " tokens");
}

// ---------------------------------------------------------------------------
// train / pretrain

void cmd_train(const PipelineConfig& config, const std::string& dataset_dir,
               const std::string& out_model, const std::string& init_model) {
    const auto examples = load_dataset(dataset_dir + "/dataset.bin");
    const Vocabulary vocab = Vocabulary::load(dataset_dir + "/vocab.txt");
    const ModelConfig mc = resolve_model_config(config, vocab);

    std::optional<MsDlm> model;
    if (init_model.empty()) {
        model.emplace(mc, config.model_seed);
    } else {
        model.emplace(MsDlm::load(init_model));
        const ModelConfig& got = model->config();
        if (got.vocab_size != mc.vocab_size || got.n_units != mc.n_units ||
            got.n_pitch != mc.n_pitch || got.num_layers != mc.num_layers ||
            got.num_cross_layers != mc.num_cross_layers || got.heads != mc.heads ||
            got.embed_dim != mc.embed_dim || got.ffn_dim != mc.ffn_dim) {
            throw InputError("warm-start checkpoint architecture differs from configuration");
        }
    }
    const TrainResult result = train(*model, examples, config.train);
    model->save(out_model);
    save_loss_curve(out_model + ".loss.csv", result.curve);
    log_info("train: " + std::to_string(config.train.steps) + " steps, final per-edge NLL " +
             std::to_string(result.final_per_edge_nll));
}

// ---------------------------------------------------------------------------
// generate

void cmd_generate(const PipelineConfig& config, const std::string& prepared_dir,
                  const std::string& model_path, const std::string& vocab_path,
                  const std::string& out_dir) {
    const auto prepared = read_prepared(prepared_dir);
    const MsDlm model = MsDlm::load(model_path);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const int context = model.config().context_frames;
    fs::create_directories(out_dir);
    auto units_out = open_out(out_dir + "/units.jsonl");
    auto timeline_out = open_out(out_dir + "/timeline.jsonl");

    for (const auto& d : prepared) {
        Rng rng(hash_mix(config.generate_seed, fnv1a(d.id)));
        std::array<StreamPair, 2> acc;
        GenerateOptions opt;
        opt.greedy = config.generate_greedy;
        if (config.model_nucleus_p > 0.0) opt.nucleus_p = config.model_nucleus_p;
        if (config.generate_max_segment_frames > 0) {
            opt.max_frames = std::min(config.generate_max_segment_frames,
                                      model.config().max_generation_frames);
        }
        for (size_t n = 0; n < d.turns.size(); ++n) {
            PrefixSpec spec;
            spec.speaker_pair = d.speaker_pair;
            spec.utterance_channel = d.turns[n].channel;
            spec.phonemes_n = d.turns[n].phonemes;
            if (n + 1 < d.turns.size()) {
                spec.next_channel = d.turns[n + 1].channel;
                spec.phonemes_next = d.turns[n + 1].phonemes;
            }
            for (int c = 0; c < 2; ++c) spec.context[c] = tail_context(acc[c], context);
            const auto prefixes = build_prefix(vocab, spec, context);
            const auto segment = model.generate(prefixes, opt, rng);
            const long before = static_cast<long>(acc[0].content.size());
            for (int c = 0; c < 2; ++c) {
                acc[c].content.insert(acc[c].content.end(), segment[c].content.begin(),
                                      segment[c].content.end());
                acc[c].pitch.insert(acc[c].pitch.end(), segment[c].pitch.begin(),
                                    segment[c].pitch.end());
            }
            const long after = static_cast<long>(acc[0].content.size());
            json row{{"dialogue_id", d.id},
                     {"n", static_cast<int>(n) + 1},
                     {"channel", d.turns[n].channel},
                     {"a_s", frame_to_seconds(before)},
                     {"b_s", frame_to_seconds(after)},
                     {"a_hat_s", frame_to_seconds(before)},
                     {"b_hat_s", frame_to_seconds(after)}};
            timeline_out << row.dump() << '\n';
        }
        for (int c = 0; c < 2; ++c) {
            json row{{"dialogue_id", d.id},
                     {"channel", c + 1},
                     {"content", acc[c].content},
                     {"pitch", acc[c].pitch}};
            units_out << row.dump() << '\n';
        }
        log_info("generated " + d.id + ": " + std::to_string(acc[0].content.size()) +
                 " frames");
    }
}

// ---------------------------------------------------------------------------
// synthesize

namespace {

SpeakerPitchStats default_speaker_stats(const std::string& speaker) {
    SpeakerPitchStats st;
    st.speaker_id = speaker;
    st.mean_log_f0 = std::log(110.0) + 0.5 * hash_unit_interval(fnv1a(speaker), 1);
    st.std_log_f0 = 0.2 + 0.1 * hash_unit_interval(fnv1a(speaker), 2);
    st.n_voiced = 1000;
    return st;
}

}  // namespace

void cmd_synthesize(const PipelineConfig& config, const std::string& units_path,
                    const std::string& dialogues_path, const std::string& out_dir) {
    const auto units = read_units(units_path);
    std::map<std::string, std::array<std::string, 2>> speakers;
    if (!dialogues_path.empty()) {
        for (const auto& row : read_jsonl(dialogues_path)) {
            const auto pair =
                field<std::vector<std::string>>(row, "speaker_pair", dialogues_path);
            if (pair.size() != 2) {
                throw InputError(dialogues_path + ": speaker_pair must have 2 entries");
            }
            speakers[field<std::string>(row, "dialogue_id", dialogues_path)] = {pair[0],
                                                                                pair[1]};
        }
    }
    PitchQuantizer quantizer;
    quantizer.n_bins = config.corpus.n_pitch_bins;
    fs::create_directories(out_dir);

    for (const auto& id : units.order) {
        const UnitStreams& us = units.by_id.at(id);
        for (int c = 0; c < 2; ++c) {
            std::string speaker = "ch" + std::to_string(c + 1);
            auto it = speakers.find(id);
            if (it != speakers.end() && !it->second[c].empty()) speaker = it->second[c];
            SynthConfig sc;
            sc.sample_rate = config.synth_sample_rate;
            sc.crossfade_ms = config.synth_crossfade_ms;
            sc.speaker_seed = hash_mix(config.synth_seed, fnv1a(speaker));
            const auto samples = synthesize(us.content[c], us.pitch[c],
                                            default_speaker_stats(speaker), quantizer, sc);
            write_wav(out_dir + "/" + id + "_ch" + std::to_string(c + 1) + ".wav", samples,
                      config.synth_sample_rate);
        }
    }
    log_info("synthesized " + std::to_string(units.order.size()) + " dialogues to " + out_dir);
}

// ---------------------------------------------------------------------------
// evaluate

std::vector<VadSegment> unit_stream_segments(const std::vector<int>& content, int channel) {
    std::vector<VadSegment> segments;
    const long n = static_cast<long>(content.size());
    const long bridge = seconds_to_frame(kDefaultGapThresholdS);  // 10 frames
    long run_start = -1;
    long last_speech = -1;
    for (long f = 0; f <= n; ++f) {
        const bool speech = f < n && content[f] != 0;
        if (speech) {
            if (run_start < 0) {
                run_start = f;
            } else if (f - last_speech - 1 >= bridge) {
                segments.push_back({channel, frame_to_seconds(run_start),
                                    frame_to_seconds(last_speech + 1)});
                run_start = f;
            }
            last_speech = f;
        }
    }
    if (run_start >= 0) {
        segments.push_back(
            {channel, frame_to_seconds(run_start), frame_to_seconds(last_speech + 1)});
    }
    return segments;
}

namespace {

struct SideStats {
    std::vector<TurnEvent> events;
    long q_bc = 0, q_all = 0;
    double d_bc = 0.0, d_all = 0.0;
    std::map<std::string, std::array<long, 2>> speaker_bc;       // {bc, all}
    std::map<std::string, std::array<double, 2>> speaker_pitch;  // {sum, count}
};

// Majority-frame rule: a segment whose speech frames mostly map to the
// injected listener inventory counts as a backchannel.
bool is_backchannel_segment(const std::vector<int>& content, long b, long e,
                            const std::set<int>& bc_units) {
    long bc = 0, speech = 0;
    for (long f = b; f < e && f < static_cast<long>(content.size()); ++f) {
        if (content[f] == 0) continue;
        ++speech;
        if (bc_units.count(content[f])) ++bc;
    }
    return speech > 0 && 2 * bc > speech;
}

SideStats collect_side(const std::vector<PreparedDialogue>& prepared, const UnitFile& units,
                       const std::set<int>& bc_units) {
    SideStats s;
    for (const auto& d : prepared) {
        auto it = units.by_id.find(d.id);
        if (it == units.by_id.end()) continue;
        const UnitStreams& us = it->second;
        std::array<std::vector<VadSegment>, 2> segs;
        for (int c = 0; c < 2; ++c) {
            segs[c] = unit_stream_segments(us.content[c], c + 1);
            for (const auto& seg : segs[c]) {
                const bool bc = is_backchannel_segment(us.content[c],
                                                       seconds_to_frame(seg.start_s),
                                                       seconds_to_frame(seg.end_s), bc_units);
                ++s.q_all;
                s.d_all += seg.duration_s();
                auto& per = s.speaker_bc[d.speaker_pair[c]];
                ++per[1];
                if (bc) {
                    ++s.q_bc;
                    s.d_bc += seg.duration_s();
                    ++per[0];
                }
            }
            auto& pitch_acc = s.speaker_pitch[d.speaker_pair[c]];
            for (int p : us.pitch[c]) {
                if (p > 0) {
                    pitch_acc[0] += p;
                    pitch_acc[1] += 1.0;
                }
            }
        }
        const auto events = extract_events(segs[0], segs[1]);
        s.events.insert(s.events.end(), events.begin(), events.end());
    }
    return s;
}

std::vector<double> event_durations(const std::vector<TurnEvent>& events, TurnEventKind kind) {
    std::vector<double> out;
    for (const auto& e : events) {
        if (e.kind == kind) out.push_back(e.end_s - e.start_s);
    }
    return out;
}

double median_or_zero(std::vector<double> v) {
    if (v.empty()) return 0.0;
    return median(std::move(v));
}

constexpr int kHistogramBins = 20;
constexpr double kHistogramStep = 0.1;  // seconds

std::vector<long> histogram(const std::vector<double>& durations) {
    std::vector<long> bins(kHistogramBins, 0);
    for (double d : durations) {
        int b = static_cast<int>(d / kHistogramStep);
        b = std::clamp(b, 0, kHistogramBins - 1);
        ++bins[b];
    }
    return bins;
}

void write_histogram_svg(const std::string& path,
                         const std::vector<std::pair<std::string,
                                                     std::array<std::vector<long>, 2>>>& panels) {
    const int panel_w = 760, panel_h = 150, margin = 40, gap = 30;
    const int width = panel_w + 2 * margin;
    const int height = static_cast<int>(panels.size()) * (panel_h + gap) + margin;
    auto out = open_out(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    int y0 = margin;
    for (const auto& [name, pair] : panels) {
        long peak = 1;
        for (int side = 0; side < 2; ++side) {
            for (long v : pair[side]) peak = std::max(peak, v);
        }
        out << "<text x=\"" << margin << "\" y=\"" << y0 - 8
            << "\" font-family=\"sans-serif\" font-size=\"13\">" << name
            << " (reference blue, generated orange)</text>\n";
        const double bar_w = static_cast<double>(panel_w) / kHistogramBins / 2.0;
        for (int b = 0; b < kHistogramBins; ++b) {
            for (int side = 0; side < 2; ++side) {
                const double h =
                    static_cast<double>(pair[side][b]) / static_cast<double>(peak) * panel_h;
                const double x = margin + (2 * b + side) * bar_w;
                out << "<rect x=\"" << x << "\" y=\"" << y0 + panel_h - h << "\" width=\""
                    << bar_w - 1 << "\" height=\"" << h << "\" fill=\""
                    << (side == 0 ? "#4878a8" : "#e08030") << "\"/>\n";
            }
        }
        out << "<line x1=\"" << margin << "\" y1=\"" << y0 + panel_h << "\" x2=\""
            << margin + panel_w << "\" y2=\"" << y0 + panel_h
            << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << margin << "\" y=\"" << y0 + panel_h + 14
            << "\" font-family=\"sans-serif\" font-size=\"10\">0 s</text>\n";
        out << "<text x=\"" << margin + panel_w - 20 << "\" y=\"" << y0 + panel_h + 14
            << "\" font-family=\"sans-serif\" font-size=\"10\">"
            << kHistogramBins * kHistogramStep << " s</text>\n";
        y0 += panel_h + gap;
    }
    out << "</svg>\n";
}

}  // namespace

EvaluationSummary cmd_evaluate(const PipelineConfig& config, const std::string& ref_dir,
                               const std::string& prepared_dir, const std::string& gen_dir,
                               const std::string& out_dir) {
    (void)config;
    const auto prepared = read_prepared(prepared_dir);
    const auto ref_units = read_units(ref_dir + "/units.jsonl");
    const auto gen_units = read_units(gen_dir + "/units.jsonl");

    std::ifstream meta_in(ref_dir + "/meta.json");
    if (!meta_in) throw InputError("cannot open " + ref_dir + "/meta.json");
    json meta;
    try {
        meta_in >> meta;
    } catch (const json::exception& e) {
        throw InputError(ref_dir + "/meta.json: " + e.what());
    }
    const auto phoneme_names = field<std::vector<std::string>>(meta, "phoneme_names", "meta");
    const auto phoneme_to_unit = field<std::vector<int>>(meta, "phoneme_to_unit", "meta");
    const auto bc_phonemes = field<std::vector<int>>(meta, "backchannel_phonemes", "meta");
    std::set<int> bc_units;
    for (int p : bc_phonemes) {
        if (p < 0 || p >= static_cast<int>(phoneme_to_unit.size())) {
            throw InputError("meta.json: backchannel phoneme index out of range");
        }
        bc_units.insert(phoneme_to_unit[p]);
    }
    std::map<int, std::string> unit_to_name;
    for (size_t p = 0; p < phoneme_to_unit.size(); ++p) {
        unit_to_name[phoneme_to_unit[p]] = phoneme_names.at(p);
    }

    const SideStats ref = collect_side(prepared, ref_units, bc_units);
    const SideStats gen = collect_side(prepared, gen_units, bc_units);

    EvaluationSummary sum;
    sum.ref_backchannel_freq = ref.q_all > 0 ? 100.0 * ref.q_bc / ref.q_all : 0.0;
    sum.gen_backchannel_freq = gen.q_all > 0 ? 100.0 * gen.q_bc / gen.q_all : 0.0;
    sum.ref_backchannel_dur = ref.d_all > 0 ? 100.0 * ref.d_bc / ref.d_all : 0.0;
    sum.gen_backchannel_dur = gen.d_all > 0 ? 100.0 * gen.d_bc / gen.d_all : 0.0;

    const auto ref_overlaps = event_durations(ref.events, TurnEventKind::Overlap);
    const auto gen_overlaps = event_durations(gen.events, TurnEventKind::Overlap);
    const auto ref_gaps = event_durations(ref.events, TurnEventKind::Gap);
    const auto gen_gaps = event_durations(gen.events, TurnEventKind::Gap);
    const auto ref_pauses = event_durations(ref.events, TurnEventKind::Pause);
    const auto gen_pauses = event_durations(gen.events, TurnEventKind::Pause);
    const auto ref_ipus = event_durations(ref.events, TurnEventKind::Ipu);
    const auto gen_ipus = event_durations(gen.events, TurnEventKind::Ipu);
    sum.ref_overlap_count = static_cast<long>(ref_overlaps.size());
    sum.gen_overlap_count = static_cast<long>(gen_overlaps.size());
    sum.ref_gap_count = static_cast<long>(ref_gaps.size());
    sum.gen_gap_count = static_cast<long>(gen_gaps.size());
    sum.ref_pause_count = static_cast<long>(ref_pauses.size());
    sum.gen_pause_count = static_cast<long>(gen_pauses.size());
    sum.ref_overlap_median = median_or_zero(ref_overlaps);
    sum.gen_overlap_median = median_or_zero(gen_overlaps);
    sum.ref_gap_median = median_or_zero(ref_gaps);
    sum.gen_gap_median = median_or_zero(gen_gaps);
    sum.ref_pause_median = median_or_zero(ref_pauses);
    sum.gen_pause_median = median_or_zero(gen_pauses);

    // Prompted-content accuracy through the invertible unit→phoneme map.
    const std::string gen_timeline_path = gen_dir + "/timeline.jsonl";
    if (fs::exists(gen_timeline_path)) {
        std::map<std::string, std::vector<json>> rows_by_dialogue;
        for (auto& row : read_jsonl(gen_timeline_path)) {
            rows_by_dialogue[field<std::string>(row, "dialogue_id", gen_timeline_path)]
                .push_back(row);
        }
        long total_dist = 0, total_ref = 0;
        for (const auto& d : prepared) {
            auto rit = rows_by_dialogue.find(d.id);
            auto uit = gen_units.by_id.find(d.id);
            if (rit == rows_by_dialogue.end() || uit == gen_units.by_id.end()) continue;
            for (const auto& row : rit->second) {
                const int n = field<int>(row, "n", gen_timeline_path);
                if (n < 1 || n > static_cast<int>(d.turns.size())) {
                    throw InputError("generated timeline indexes a missing turn in " + d.id);
                }
                const auto& turn = d.turns[n - 1];
                const auto& stream = uit->second.content[turn.channel - 1];
                const long b = seconds_to_frame(field<double>(row, "a_hat_s", "timeline"));
                const long e = std::min<long>(
                    seconds_to_frame(field<double>(row, "b_hat_s", "timeline")),
                    static_cast<long>(stream.size()));
                std::vector<std::string> hyp;
                int prev = 0;
                for (long f = b; f < e; ++f) {
                    const int u = stream[f];
                    if (u != 0 && u != prev) {
                        auto nit = unit_to_name.find(u);
                        hyp.push_back(nit != unit_to_name.end() ? nit->second : "?");
                    }
                    prev = u;
                }
                total_dist += edit_distance(turn.phonemes, hyp);
                total_ref += static_cast<long>(turn.phonemes.size());
            }
        }
        if (total_ref > 0) sum.per = static_cast<double>(total_dist) / total_ref;
    }

    // Per-speaker comparisons over the speakers measurable on both sides.
    std::map<std::string, double> ref_pitch, gen_pitch;
    for (const auto& [speaker, acc] : ref.speaker_pitch) {
        auto git = gen.speaker_pitch.find(speaker);
        if (acc[1] > 0 && git != gen.speaker_pitch.end() && git->second[1] > 0) {
            ref_pitch[speaker] = acc[0] / acc[1];
            gen_pitch[speaker] = git->second[0] / git->second[1];
        }
    }
    if (ref_pitch.size() >= 2) {
        const auto cmp = speaker_comparison(ref_pitch, gen_pitch);
        sum.pitch_mae = cmp.mae;
        sum.pitch_r_defined = cmp.r_defined;
        sum.pitch_r = cmp.r;
        sum.pitch_p = cmp.p_value;
    } else if (ref_pitch.size() == 1) {
        sum.pitch_mae = std::fabs(ref_pitch.begin()->second - gen_pitch.begin()->second);
    }

    std::map<std::string, double> ref_bc_rate, gen_bc_rate;
    for (const auto& [speaker, counts] : ref.speaker_bc) {
        auto git = gen.speaker_bc.find(speaker);
        if (counts[1] > 0 && git != gen.speaker_bc.end() && git->second[1] > 0) {
            ref_bc_rate[speaker] = 100.0 * counts[0] / counts[1];
            gen_bc_rate[speaker] = 100.0 * git->second[0] / git->second[1];
        }
    }
    if (ref_bc_rate.size() >= 2) {
        const auto cmp = speaker_comparison(ref_bc_rate, gen_bc_rate);
        sum.backchannel_r_defined = cmp.r_defined;
        sum.backchannel_r = cmp.r;
        sum.backchannel_p = cmp.p_value;
    }

    // Reports.
    fs::create_directories(out_dir);
    auto metrics = open_out(out_dir + "/metrics.csv");
    metrics << "metric,reference,generated,note\n";
    auto row = [&metrics](const std::string& name, double r, double g,
                          const std::string& note = "") {
        metrics << name << ',' << r << ',' << g << ',' << note << '\n';
    };
    row("backchannel_freq_percent", sum.ref_backchannel_freq, sum.gen_backchannel_freq);
    row("backchannel_dur_percent", sum.ref_backchannel_dur, sum.gen_backchannel_dur);
    row("ipu_count", static_cast<double>(ref_ipus.size()),
        static_cast<double>(gen_ipus.size()));
    row("ipu_median_s", median_or_zero(ref_ipus), median_or_zero(gen_ipus));
    row("pause_count", static_cast<double>(sum.ref_pause_count),
        static_cast<double>(sum.gen_pause_count));
    row("pause_median_s", sum.ref_pause_median, sum.gen_pause_median);
    row("gap_count", static_cast<double>(sum.ref_gap_count),
        static_cast<double>(sum.gen_gap_count));
    row("gap_median_s", sum.ref_gap_median, sum.gen_gap_median);
    row("overlap_count", static_cast<double>(sum.ref_overlap_count),
        static_cast<double>(sum.gen_overlap_count));
    row("overlap_median_s", sum.ref_overlap_median, sum.gen_overlap_median);
    if (sum.per >= 0.0) row("per", 0.0, sum.per);
    row("speaker_pitch_mae", 0.0, sum.pitch_mae);
    if (sum.pitch_r_defined) {
        row("speaker_pitch_r", 1.0, sum.pitch_r, significance_marker(sum.pitch_p));
        row("speaker_pitch_p", 0.0, sum.pitch_p);
    }
    if (sum.backchannel_r_defined) {
        row("speaker_backchannel_r", 1.0, sum.backchannel_r,
            significance_marker(sum.backchannel_p));
        row("speaker_backchannel_p", 0.0, sum.backchannel_p);
    }

    auto hist = open_out(out_dir + "/histograms.csv");
    hist << "kind,bin_lo,bin_hi,reference,generated\n";
    std::vector<std::pair<std::string, std::array<std::vector<long>, 2>>> panels;
    const std::vector<std::pair<std::string, std::array<const std::vector<double>*, 2>>>
        kinds = {{"ipu", {&ref_ipus, &gen_ipus}},
                 {"pause", {&ref_pauses, &gen_pauses}},
                 {"gap", {&ref_gaps, &gen_gaps}},
                 {"overlap", {&ref_overlaps, &gen_overlaps}}};
    for (const auto& [name, sides] : kinds) {
        std::array<std::vector<long>, 2> bins = {histogram(*sides[0]), histogram(*sides[1])};
        for (int b = 0; b < kHistogramBins; ++b) {
            hist << name << ',' << b * kHistogramStep << ',' << (b + 1) * kHistogramStep << ','
                 << bins[0][b] << ',' << bins[1][b] << '\n';
        }
        panels.emplace_back(name, std::move(bins));
    }
    write_histogram_svg(out_dir + "/events.svg", panels);
    return sum;
}

// ---------------------------------------------------------------------------
// plot

void cmd_plot(const std::string& csv_path, const std::string& out_svg) {
    std::ifstream in(csv_path);
    if (!in) throw InputError("cannot open " + csv_path);
    std::string header;
    if (!std::getline(in, header)) throw InputError(csv_path + ": empty file");

    if (header.rfind("step,", 0) == 0) {
        // Loss curve: plot the loss column against step.
        std::vector<double> steps, losses;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (cells.size() < 3) throw InputError(csv_path + ": malformed row: " + line);
            steps.push_back(parse_double("step", cells[0]));
            losses.push_back(parse_double("loss", cells[2]));
        }
        if (steps.empty()) throw InputError(csv_path + ": no data rows");
        const double max_step = std::max(1.0, steps.back());
        double max_loss = 0.0;
        for (double l : losses) max_loss = std::max(max_loss, l);
        if (max_loss <= 0.0) max_loss = 1.0;
        const int w = 800, h = 400, m = 50;
        auto out = open_out(out_svg);
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
            << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        out << "<polyline fill=\"none\" stroke=\"#4878a8\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < steps.size(); ++i) {
            const double x = m + steps[i] / max_step * (w - 2 * m);
            const double y = h - m - losses[i] / max_loss * (h - 2 * m);
            out << x << ',' << y << ' ';
        }
        out << "\"/>\n";
        out << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\""
            << h - m << "\" stroke=\"black\"/>\n";
        out << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m
            << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << m << "\" y=\"" << h - m + 16
            << "\" font-family=\"sans-serif\" font-size=\"11\">step 0</text>\n";
        out << "<text x=\"" << w - m - 60 << "\" y=\"" << h - m + 16
            << "\" font-family=\"sans-serif\" font-size=\"11\">step " << max_step
            << "</text>\n";
        out << "<text x=\"" << m << "\" y=\"" << m - 8
            << "\" font-family=\"sans-serif\" font-size=\"11\">loss " << max_loss
            << "</text>\n</svg>\n";
        return;
    }
    if (header.rfind("kind,", 0) == 0) {
        std::map<std::string, std::array<std::vector<long>, 2>> by_kind;
        std::vector<std::string> order;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (cells.size() != 5) throw InputError(csv_path + ": malformed row: " + line);
            if (!by_kind.count(cells[0])) order.push_back(cells[0]);
            by_kind[cells[0]][0].push_back(parse_long("reference", cells[3]));
            by_kind[cells[0]][1].push_back(parse_long("generated", cells[4]));
        }
        std::vector<std::pair<std::string, std::array<std::vector<long>, 2>>> panels;
        for (const auto& k : order) {
            auto& bins = by_kind[k];
            bins[0].resize(kHistogramBins, 0);
            bins[1].resize(kHistogramBins, 0);
            panels.emplace_back(k, bins);
        }
        write_histogram_svg(out_svg, panels);
        return;
    }
    throw InputError(csv_path + ": unrecognized CSV header for plotting");
}

}  // namespace duovox
