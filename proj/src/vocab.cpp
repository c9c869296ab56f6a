#include "duovox/vocab.hpp"

#include <fstream>

namespace duovox {

namespace {
const char* kSpecialNames[Vocabulary::kNumSpecials] = {
    "<BOS>", "<EOS>", "<PAD>", "<NXT>", "<CTX>", "<SEP>", "<LIS>", "<UNK>", "<LAU>"};
}

Vocabulary::Vocabulary(int n_content_units, int n_pitch_bins,
                       std::vector<std::string> phoneme_symbols,
                       std::vector<std::string> speaker_ids)
    : n_units_(n_content_units),
      n_pitch_(n_pitch_bins),
      phonemes_(std::move(phoneme_symbols)),
      speakers_(std::move(speaker_ids)) {
    if (n_units_ < 1) throw InputError("vocabulary needs at least one content unit");
    if (n_pitch_ < 2 || n_pitch_ > n_units_)
        throw InputError("pitch bin count must be in [2, n_content_units]");
    phoneme_base_ = n_units_;
    special_base_ = phoneme_base_ + static_cast<int>(phonemes_.size());
    speaker_base_ = special_base_ + kNumSpecials;
    total_ = speaker_base_ + static_cast<int>(speakers_.size());
    for (int i = 0; i < static_cast<int>(phonemes_.size()); ++i) {
        if (!phoneme_index_.emplace(phonemes_[i], phoneme_base_ + i).second)
            throw InputError("duplicate phoneme symbol: " + phonemes_[i]);
    }
    for (int i = 0; i < static_cast<int>(speakers_.size()); ++i) {
        if (!speaker_index_.emplace(speakers_[i], speaker_base_ + i).second)
            throw InputError("duplicate speaker id: " + speakers_[i]);
    }
}

int Vocabulary::unit_token(int unit_id) const {
    if (unit_id < 0 || unit_id >= n_units_)
        throw InputError("content unit id out of range: " + std::to_string(unit_id));
    return unit_id;
}

int Vocabulary::pitch_token(int bin) const {
    if (bin < 0 || bin >= n_pitch_)
        throw InputError("pitch bin out of range: " + std::to_string(bin));
    return bin;
}

std::optional<int> Vocabulary::phoneme_token(const std::string& symbol) const {
    auto it = phoneme_index_.find(symbol);
    if (it == phoneme_index_.end()) return std::nullopt;
    return it->second;
}

std::optional<int> Vocabulary::speaker_token(const std::string& speaker_id) const {
    auto it = speaker_index_.find(speaker_id);
    if (it == speaker_index_.end()) return std::nullopt;
    return it->second;
}

std::string Vocabulary::token_surface(int token) const {
    if (token < 0 || token >= total_) throw InputError("token out of range");
    if (token < n_units_) return "<u" + std::to_string(token) + ">";
    if (token < special_base_) return phonemes_[token - phoneme_base_];
    if (token < speaker_base_) return kSpecialNames[token - special_base_];
    return "spk:" + speakers_[token - speaker_base_];
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot open for writing: " + path);
    out << "# duovox-vocab v1 units=" << n_units_ << " pitch=" << n_pitch_
        << " phonemes=" << phonemes_.size() << " speakers=" << speakers_.size() << "\n";
    for (int t = 0; t < total_; ++t) out << token_surface(t) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open for reading: " + path);
    std::string header;
    std::getline(in, header);
    int n_units = 0, n_pitch = 0;
    size_t n_ph = 0, n_spk = 0;
    if (std::sscanf(header.c_str(), "# duovox-vocab v1 units=%d pitch=%d phonemes=%zu speakers=%zu",
                    &n_units, &n_pitch, &n_ph, &n_spk) != 4)
        throw InputError("unrecognized vocabulary header in " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    size_t expected = static_cast<size_t>(n_units) + n_ph + kNumSpecials + n_spk;
    if (lines.size() != expected)
        throw InputError("vocabulary line count mismatch in " + path);
    std::vector<std::string> phonemes(lines.begin() + n_units, lines.begin() + n_units + n_ph);
    std::vector<std::string> speakers;
    for (size_t i = n_units + n_ph + kNumSpecials; i < lines.size(); ++i) {
        const std::string& s = lines[i];
        if (s.rfind("spk:", 0) != 0) throw InputError("malformed speaker line: " + s);
        speakers.push_back(s.substr(4));
    }
    return Vocabulary(n_units, n_pitch, std::move(phonemes), std::move(speakers));
}

}  // namespace duovox
