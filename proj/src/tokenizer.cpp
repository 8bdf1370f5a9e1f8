#include "rprobe/tokenizer.hpp"

#include <cctype>
#include <fstream>

#include "rprobe/error.hpp"
#include "rprobe/rng.hpp"

namespace rprobe {

namespace {

bool is_ascii_punct(unsigned char c) {
    return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

}  // namespace

std::vector<std::string> basic_split(std::string_view text, bool lowercase) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 0x80 && std::isspace(c)) {
            flush();
        } else if (c < 0x80 && std::iscntrl(c)) {
            continue;
        } else if (is_ascii_punct(c)) {
            flush();
            words.emplace_back(1, ch);
        } else {
            current += (lowercase && c < 0x80) ? static_cast<char>(std::tolower(c)) : ch;
        }
    }
    flush();
    return words;
}

HashTokenizer::HashTokenizer(std::size_t vocab_size, TokenizerConfig config)
    : vocab_size_(vocab_size), config_(std::move(config)) {
    first_free_id_ = std::max({config_.pad_id, config_.unk_id, config_.cls_id, config_.sep_id}) + 1;
    if (static_cast<std::size_t>(first_free_id_) >= vocab_size_) {
        throw ArgumentError("vocabulary too small for the hash tokenizer");
    }
}

std::vector<int> HashTokenizer::tokenize(std::string_view text) const {
    std::vector<int> ids;
    const auto buckets = vocab_size_ - static_cast<std::size_t>(first_free_id_);
    for (const auto& w : basic_split(text, config_.lowercase)) {
        ids.push_back(first_free_id_ + static_cast<int>(fnv1a64(w) % buckets));
    }
    return ids;
}

WordPieceTokenizer::WordPieceTokenizer(const std::filesystem::path& vocab_file, TokenizerConfig config)
    : config_(std::move(config)) {
    std::ifstream in(vocab_file);
    if (!in) throw EnvironmentError("cannot open vocabulary " + vocab_file.string());
    std::string line;
    int id = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        vocab_.emplace(line, id++);
    }
    auto lookup = [&](const char* tok, int fallback) {
        auto it = vocab_.find(tok);
        return it == vocab_.end() ? fallback : it->second;
    };
    config_.unk_id = lookup("[UNK]", config_.unk_id);
}

std::vector<int> WordPieceTokenizer::tokenize(std::string_view text) const {
    constexpr std::size_t kMaxCharsPerWord = 100;
    std::vector<int> ids;
    for (const auto& word : basic_split(text, config_.lowercase)) {
        if (word.size() > kMaxCharsPerWord) {
            ids.push_back(config_.unk_id);
            continue;
        }
        std::vector<int> pieces;
        std::size_t start = 0;
        bool bad = false;
        while (start < word.size()) {
            std::size_t end = word.size();
            int found = -1;
            while (start < end) {
                std::string sub = word.substr(start, end - start);
                if (start > 0) sub = "##" + sub;
                auto it = vocab_.find(sub);
                if (it != vocab_.end()) {
                    found = it->second;
                    break;
                }
                --end;
            }
            if (found < 0) {
                bad = true;
                break;
            }
            pieces.push_back(found);
            start = end;
        }
        if (bad) {
            ids.push_back(config_.unk_id);
        } else {
            ids.insert(ids.end(), pieces.begin(), pieces.end());
        }
    }
    return ids;
}

std::unique_ptr<Tokenizer> make_tokenizer(const TransformerConfig& config,
                                          const std::filesystem::path& model_dir) {
    if (config.tokenizer.kind == "wordpiece") {
        return std::make_unique<WordPieceTokenizer>(model_dir / "vocab.txt", config.tokenizer);
    }
    if (config.tokenizer.kind == "hash") {
        return std::make_unique<HashTokenizer>(config.vocab_size, config.tokenizer);
    }
    throw EnvironmentError("unknown tokenizer kind '" + config.tokenizer.kind + "'");
}

}  // namespace rprobe
