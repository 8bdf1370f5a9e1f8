#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rprobe/model.hpp"

namespace rprobe {

// Lowercases ASCII (when asked) and splits on whitespace and ASCII
// punctuation, keeping each punctuation character as its own word.
std::vector<std::string> basic_split(std::string_view text, bool lowercase);

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    // Content token ids, without special tokens.
    virtual std::vector<int> tokenize(std::string_view text) const = 0;
};

// Maps each word to a bucket by 64-bit FNV-1a; used by toy models that have
// no vocabulary file.
class HashTokenizer : public Tokenizer {
public:
    HashTokenizer(std::size_t vocab_size, TokenizerConfig config);
    std::vector<int> tokenize(std::string_view text) const override;

private:
    std::size_t vocab_size_;
    TokenizerConfig config_;
    int first_free_id_;
};

// Greedy longest-match-first WordPiece over a vocab.txt (one token per line,
// line number = id), with "##" continuation pieces.
class WordPieceTokenizer : public Tokenizer {
public:
    WordPieceTokenizer(const std::filesystem::path& vocab_file, TokenizerConfig config);
    std::vector<int> tokenize(std::string_view text) const override;

    std::size_t vocab_size() const { return vocab_.size(); }

private:
    std::unordered_map<std::string, int> vocab_;
    TokenizerConfig config_;
};

std::unique_ptr<Tokenizer> make_tokenizer(const TransformerConfig& config,
                                          const std::filesystem::path& model_dir);

}  // namespace rprobe
