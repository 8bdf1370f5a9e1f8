#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rprobe/matrix.hpp"
#include "rprobe/model.hpp"
#include "rprobe/tokenizer.hpp"

namespace rprobe {

enum class Pooling { first_token, mean, last_token };

std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& s);

// A loaded model plus the metadata the pipeline needs about it.
class EncoderHandle {
public:
    EncoderHandle(std::shared_ptr<const Transformer> model, std::unique_ptr<Tokenizer> tokenizer);

    static EncoderHandle load(const std::filesystem::path& model_dir);

    const std::string& model_id() const { return model_->config().model_id; }
    Architecture architecture() const { return model_->config().architecture; }
    std::size_t num_layers() const { return model_->num_layers(); }
    std::size_t hidden_dim() const { return model_->hidden_dim(); }
    std::size_t max_sequence_length() const { return model_->config().max_sequence_length; }

    const Transformer& model() const { return *model_; }
    std::shared_ptr<const Transformer> model_ptr() const { return model_; }

    // Special-token wrapped, truncated token ids: [CLS] .. [SEP] for
    // encoder_only, BOS .. EOS for decoder_only. Truncation keeps the
    // leading content tokens and always retains the closing marker.
    std::vector<int> encode(std::string_view text) const;

    std::size_t truncation_count() const { return truncations_->load(); }

private:
    std::shared_ptr<const Transformer> model_;
    std::unique_ptr<Tokenizer> tokenizer_;
    std::unique_ptr<std::atomic<std::size_t>> truncations_;
};

struct LayerHiddenStates {
    std::vector<Matrix> layers;  // each token_count x d
    std::size_t first_layer = 1;  // index of layers[0] (0 = embedding output)
    std::size_t token_count = 0;
    std::vector<std::uint8_t> attention_mask;
    Architecture architecture = Architecture::encoder_only;
};

// Post-block hidden states of every layer; layer 0 (embeddings) is included
// only when asked.
LayerHiddenStates extract_hidden_states(const EncoderHandle& handle, std::string_view text,
                                        bool include_embedding_layer = false);

using PerLayerVectors = std::vector<std::vector<double>>;

PerLayerVectors pool_first_token(const LayerHiddenStates& h);
PerLayerVectors pool_mean(const LayerHiddenStates& h);
PerLayerVectors pool_last_token(const LayerHiddenStates& h);
PerLayerVectors pool(const LayerHiddenStates& h, Pooling pooling);

// Pooling of a single T x d matrix; the building block of the above.
std::vector<double> pool_matrix(const Matrix& h, std::span<const std::uint8_t> mask, Pooling pooling);

// d(pooled)/d(h) applied to an upstream gradient g: returns a T x d matrix.
Matrix pool_backward(std::span<const double> g, std::size_t token_count,
                     std::span<const std::uint8_t> mask, Pooling pooling);

std::string text_hash(std::string_view text);

struct PrecomputeOptions {
    bool include_embedding_layer = false;
    std::vector<std::size_t> layers;  // empty = all
};

struct PrecomputeReport {
    std::size_t requested = 0;
    std::size_t already_cached = 0;
    std::size_t model_invocations = 0;
    std::size_t truncated = 0;
};

PrecomputeReport precompute_embeddings(const EncoderHandle& handle, const std::vector<std::string>& texts,
                                       Pooling pooling, const std::filesystem::path& cache_dir,
                                       const PrecomputeOptions& options = {});

}  // namespace rprobe
