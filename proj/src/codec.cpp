#include "duovox/codec.hpp"

#include <algorithm>

#include "duovox/binio.hpp"

namespace duovox {

namespace {

int phoneme_or_unk(const Vocabulary& vocab, const std::string& symbol) {
    if (symbol == "LAU" || symbol == "<LAU>") return vocab.lau();
    if (auto tok = vocab.phoneme_token(symbol)) return *tok;
    log_warn("unknown phoneme '" + symbol + "' replaced with UNK");
    return vocab.unk();
}

void append_phoneme_section(const Vocabulary& vocab, const std::vector<std::string>& phonemes,
                            bool uttering, std::vector<int>& out) {
    for (const auto& p : phonemes) out.push_back(uttering ? phoneme_or_unk(vocab, p) : vocab.lis());
}

}  // namespace

std::array<PrefixSequence, 2> build_prefix(const Vocabulary& vocab, const PrefixSpec& spec,
                                           int context_capacity) {
    if (spec.context[0].content.size() != spec.context[1].content.size() ||
        spec.context[0].pitch.size() != spec.context[1].pitch.size())
        throw PreconditionError("context length differs between channels");
    for (const auto& ctx : spec.context) {
        if (ctx.content.size() != ctx.pitch.size())
            throw PreconditionError("context content/pitch length mismatch");
        if (static_cast<int>(ctx.content.size()) > context_capacity)
            throw InputError("context longer than C=" + std::to_string(context_capacity));
    }

    std::array<PrefixSequence, 2> out;
    for (int ch = 1; ch <= 2; ++ch) {
        auto spk = vocab.speaker_token(spec.speaker_pair[ch - 1]);
        if (!spk) throw InputError("unknown speaker id: " + spec.speaker_pair[ch - 1]);
        std::vector<int> shared;
        shared.push_back(vocab.bos());
        shared.push_back(*spk);
        append_phoneme_section(vocab, spec.phonemes_n, spec.utterance_channel == ch, shared);
        shared.push_back(vocab.nxt());
        if (spec.next_channel != 0)
            append_phoneme_section(vocab, spec.phonemes_next, spec.next_channel == ch, shared);
        shared.push_back(vocab.ctx());

        PrefixSequence& prefix = out[ch - 1];
        prefix.content = shared;
        prefix.pitch = shared;
        const StreamPair& ctx = spec.context[ch - 1];
        prefix.content.insert(prefix.content.end(), ctx.content.begin(), ctx.content.end());
        prefix.pitch.insert(prefix.pitch.end(), ctx.pitch.begin(), ctx.pitch.end());
        prefix.content.push_back(vocab.sep());
        prefix.pitch.push_back(vocab.sep());
    }
    if (out[0].content.size() != out[1].content.size())
        throw PreconditionError("prefix length differs between channels");
    return out;
}

PrefixSequence build_pretrain_prefix(const Vocabulary& vocab, const std::string& speaker_id,
                                     const std::vector<std::string>& phonemes) {
    auto spk = vocab.speaker_token(speaker_id);
    if (!spk) throw InputError("unknown speaker id: " + speaker_id);
    PrefixSequence prefix;
    prefix.content.push_back(vocab.bos());
    prefix.content.push_back(*spk);
    append_phoneme_section(vocab, phonemes, true, prefix.content);
    prefix.content.push_back(vocab.sep());
    prefix.pitch = prefix.content;
    return prefix;
}

StreamPair delay_pitch(const StreamPair& pair, const Vocabulary& vocab) {
    if (pair.content.size() != pair.pitch.size())
        throw InputError("delay_pitch requires equal stream lengths");
    if (pair.content.empty()) return {};
    StreamPair out;
    out.content = pair.content;
    out.content.push_back(vocab.pad());
    out.pitch.reserve(pair.pitch.size() + 1);
    out.pitch.push_back(vocab.pad());
    out.pitch.insert(out.pitch.end(), pair.pitch.begin(), pair.pitch.end());
    return out;
}

StreamPair align_pitch(const StreamPair& delayed, const Vocabulary& vocab) {
    if (delayed.content.size() != delayed.pitch.size())
        throw InputError("align_pitch requires equal stream lengths");
    if (delayed.content.empty()) return {};
    if (delayed.content.back() != vocab.pad() || delayed.pitch.front() != vocab.pad())
        throw InputError("align_pitch input is not a delayed stream pair");
    StreamPair out;
    out.content.assign(delayed.content.begin(), delayed.content.end() - 1);
    out.pitch.assign(delayed.pitch.begin() + 1, delayed.pitch.end());
    return out;
}

std::vector<EdgeRun> edge_encode(const std::vector<int>& frames) {
    if (frames.empty()) throw InputError("edge_encode requires a non-empty sequence");
    std::vector<EdgeRun> runs;
    for (int f : frames) {
        if (!runs.empty() && runs.back().unit == f)
            ++runs.back().duration;
        else
            runs.push_back({f, 1});
    }
    return runs;
}

std::vector<int> edge_decode(const std::vector<EdgeRun>& runs) {
    std::vector<int> out;
    for (const auto& r : runs) {
        if (r.duration <= 0) throw InputError("edge run with non-positive duration");
        out.insert(out.end(), static_cast<size_t>(r.duration), r.unit);
    }
    return out;
}

namespace {

// Marks edges over the unit region of a target stream and attaches the length
// of the run starting at each edge.
void fill_edges(const std::vector<int>& target, int prefix_len, int max_duration,
                std::vector<uint8_t>& edges, std::vector<int>& durations) {
    const int n = static_cast<int>(target.size());
    edges.assign(n, 0);
    durations.assign(n, 0);
    // target[i] is the token at input position i + 1, so the first unit-region
    // target sits at i = prefix_len - 1.
    const int first = prefix_len - 1;
    for (int i = first; i < n; ++i) {
        if (i == first || target[i] != target[i - 1]) {
            edges[i] = 1;
            int run = 1;
            while (i + run < n && target[i + run] == target[i]) ++run;
            durations[i] = std::min(run, max_duration);
        }
    }
}

ChannelExample assemble_channel(const PrefixSequence& prefix, const StreamPair& delayed,
                                const Vocabulary& vocab, int max_duration) {
    ChannelExample ex;
    ex.prefix_len = static_cast<int>(prefix.content.size());
    ex.input_content = prefix.content;
    ex.input_content.insert(ex.input_content.end(), delayed.content.begin(),
                            delayed.content.end());
    ex.input_pitch = prefix.pitch;
    ex.input_pitch.insert(ex.input_pitch.end(), delayed.pitch.begin(), delayed.pitch.end());

    // Target = input shifted left by one, EOS appended on content, PAD on pitch.
    ex.target_content.assign(ex.input_content.begin() + 1, ex.input_content.end());
    ex.target_content.push_back(vocab.eos());
    ex.target_pitch.assign(ex.input_pitch.begin() + 1, ex.input_pitch.end());
    ex.target_pitch.push_back(vocab.pad());

    fill_edges(ex.target_content, ex.prefix_len, max_duration, ex.edge_content, ex.dur_content);
    fill_edges(ex.target_pitch, ex.prefix_len, max_duration, ex.edge_pitch, ex.dur_pitch);
    return ex;
}

}  // namespace

TrainingExample assemble_example(const std::array<PrefixSequence, 2>& prefixes,
                                 const std::array<StreamPair, 2>& targets,
                                 const Vocabulary& vocab, int max_duration) {
    if (prefixes[0].content.size() != prefixes[1].content.size())
        throw PreconditionError("prefix length differs between channels");
    if (targets[0].content.size() != targets[1].content.size())
        throw PreconditionError("target length differs between channels");
    TrainingExample ex;
    for (int c = 0; c < 2; ++c)
        ex.channels[c] =
            assemble_channel(prefixes[c], delay_pitch(targets[c], vocab), vocab, max_duration);
    return ex;
}

TrainingExample assemble_pretrain_example(const PrefixSequence& prefix, const StreamPair& target,
                                          const Vocabulary& vocab, int max_duration) {
    TrainingExample ex;
    ex.single_channel = true;
    ex.channels[0] = assemble_channel(prefix, delay_pitch(target, vocab), vocab, max_duration);
    return ex;
}

namespace {

constexpr char kDatasetMagic[5] = "DVDS";
constexpr uint32_t kDatasetVersion = 1;

void write_channel(BinWriter& w, const ChannelExample& ch) {
    w.i32(ch.prefix_len);
    w.vec_i32(ch.input_content);
    w.vec_i32(ch.input_pitch);
    w.vec_i32(ch.target_content);
    w.vec_i32(ch.target_pitch);
    std::vector<int32_t> ec(ch.edge_content.begin(), ch.edge_content.end());
    std::vector<int32_t> ep(ch.edge_pitch.begin(), ch.edge_pitch.end());
    w.vec_i32(ec);
    w.vec_i32(ep);
    w.vec_i32(ch.dur_content);
    w.vec_i32(ch.dur_pitch);
}

ChannelExample read_channel(BinReader& r) {
    ChannelExample ch;
    ch.prefix_len = r.i32();
    ch.input_content = r.vec_i32();
    ch.input_pitch = r.vec_i32();
    ch.target_content = r.vec_i32();
    ch.target_pitch = r.vec_i32();
    auto ec = r.vec_i32();
    auto ep = r.vec_i32();
    ch.edge_content.assign(ec.begin(), ec.end());
    ch.edge_pitch.assign(ep.begin(), ep.end());
    ch.dur_content = r.vec_i32();
    ch.dur_pitch = r.vec_i32();
    return ch;
}

}  // namespace

void save_dataset(const std::string& path, const std::vector<TrainingExample>& examples) {
    BinWriter w(path);
    w.magic(kDatasetMagic, kDatasetVersion);
    w.u64(examples.size());
    for (const auto& ex : examples) {
        w.u8(ex.single_channel ? 1 : 0);
        write_channel(w, ex.channels[0]);
        if (!ex.single_channel) write_channel(w, ex.channels[1]);
    }
    if (!w.good()) throw InputError("failed writing dataset: " + path);
}

std::vector<TrainingExample> load_dataset(const std::string& path) {
    BinReader r(path);
    uint32_t version = r.magic(kDatasetMagic);
    if (version != kDatasetVersion)
        throw InputError("unsupported dataset version " + std::to_string(version));
    size_t n = r.u64();
    std::vector<TrainingExample> examples;
    examples.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        TrainingExample ex;
        ex.single_channel = r.u8() != 0;
        ex.channels[0] = read_channel(r);
        if (!ex.single_channel) ex.channels[1] = read_channel(r);
        examples.push_back(std::move(ex));
    }
    return examples;
}

}  // namespace duovox
