#pragma once

// A compact transformer text model with hand-written backward passes.
//
// encoder_only blocks are post-norm (BERT layout):
//     x1 = LN1(x + Attn(x));  y = LN2(x1 + W_out gelu(W_in x1 + b_in) + b_out)
// decoder_only blocks are pre-norm with causal attention and a final norm on
// the last hidden state:
//     x1 = x + Attn(LN1(x));  y = x1 + W_out gelu(W_in LN2(x1) + b_in) + b_out
//
// Weight matrices are stored [out x in]. Row i of W_in is the incoming weight
// vector of intermediate neuron i; row i of W_out that of output neuron i.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rprobe/matrix.hpp"
#include "rprobe/nn_ops.hpp"

namespace rprobe {

enum class Architecture { encoder_only, decoder_only };

std::string to_string(Architecture a);
Architecture parse_architecture(const std::string& s);

struct TokenizerConfig {
    std::string kind = "hash";  // "hash" or "wordpiece"
    bool lowercase = true;
    int pad_id = 0;
    int unk_id = 1;
    int cls_id = 2;  // BOS for decoder_only
    int sep_id = 3;  // EOS for decoder_only
};

struct TransformerConfig {
    std::string model_id;
    Architecture architecture = Architecture::encoder_only;
    std::size_t vocab_size = 0;
    std::size_t hidden_dim = 0;
    std::size_t num_layers = 0;
    std::size_t num_heads = 1;
    std::size_t intermediate_dim = 0;
    std::size_t max_position = 512;
    std::size_t type_vocab_size = 2;  // encoder_only only
    std::size_t max_sequence_length = 512;
    double layer_norm_eps = 1e-12;
    TokenizerConfig tokenizer;

    void validate() const;
};

nlohmann::json to_json(const TransformerConfig& c);
TransformerConfig config_from_json(const nlohmann::json& j);

struct TransformerBlock {
    nn::AttentionParams attention;
    nn::LayerNormParams ln1;
    nn::Linear ffn_in;   // intermediate dense sub-layer, [F x d]
    nn::Linear ffn_out;  // output dense sub-layer, [d x F]
    nn::LayerNormParams ln2;
};

struct BlockCache {
    Matrix input;
    nn::LayerNormCache ln1;  // post-attention norm (encoder) or input norm (decoder)
    nn::AttentionCache attention;
    Matrix residual;   // x1
    nn::LayerNormCache ln2_pre;  // decoder: norm feeding the FFN
    Matrix ffn_input;  // x1 (encoder) or LN2(x1) (decoder)
    Matrix pre;        // W_in ffn_input + b_in
    Matrix act;        // gelu(pre)
    Matrix ffn_out;    // W_out act + b_out
    nn::LayerNormCache ln2_post;  // encoder: output norm
    Matrix output;
};

struct BlockGradients {
    Matrix d_input;
    Matrix d_pre;      // gradient w.r.t. the intermediate pre-activation
    Matrix d_ffn_out;  // gradient w.r.t. the output dense sub-layer result
};

struct ForwardState {
    std::size_t seq_len = 0;
    std::vector<Matrix> hidden;  // num_layers + 1 entries; [0] is the embedding output
    std::vector<BlockCache> blocks;
    nn::LayerNormCache final_norm;
    Matrix pre_final_norm;  // decoder_only: last block output before the final norm
};

class Transformer {
public:
    Transformer() = default;
    explicit Transformer(TransformerConfig config);

    const TransformerConfig& config() const { return config_; }
    std::size_t num_layers() const { return config_.num_layers; }
    std::size_t hidden_dim() const { return config_.hidden_dim; }
    std::size_t intermediate_dim() const { return config_.intermediate_dim; }
    bool causal() const { return config_.architecture == Architecture::decoder_only; }

    TransformerBlock& block(std::size_t layer) { return blocks_.at(layer); }
    const TransformerBlock& block(std::size_t layer) const { return blocks_.at(layer); }

    // Layer-0 states for one token sequence.
    Matrix embed(std::span<const int> tokens) const;

    // Runs every block; keeps per-block caches when requested. hidden[L] has
    // the final norm applied for decoder_only models.
    ForwardState forward(std::span<const int> tokens, bool keep_caches,
                         std::span<const std::uint8_t> key_mask = {}) const;

    // Zero-based block index. x holds B sequences of seq_len rows.
    Matrix block_forward(std::size_t layer, const Matrix& x, std::size_t seq_len,
                         std::span<const std::uint8_t> key_mask, BlockCache* cache) const;
    BlockGradients block_backward(std::size_t layer, const Matrix& dy, std::size_t seq_len,
                                  const BlockCache& cache) const;

    // Completes block `layer` from its residual x1 and FFN result:
    // LN2(x1 + f) for encoder_only, x1 + f for decoder_only.
    Matrix block_finish(std::size_t layer, const Matrix& residual, const Matrix& ffn_out,
                        nn::LayerNormCache* cache) const;
    // Returns d(ffn_out); the residual receives the same gradient.
    Matrix block_finish_backward(std::size_t layer, const Matrix& dy,
                                 const nn::LayerNormCache& cache) const;

    Matrix apply_final_norm(const Matrix& x, nn::LayerNormCache* cache) const;
    Matrix final_norm_backward(const Matrix& dy, const nn::LayerNormCache& cache) const;
    bool has_final_norm() const { return causal(); }

    // Random initialization for toy models. Like perturbed(), values are
    // rounded to float32 so the in-memory model equals its saved copy.
    static Transformer random(TransformerConfig config, std::uint64_t seed);

    // Adds Gaussian noise with standard deviation `scale * rms(tensor)` to
    // every tensor; a stand-in for a fine-tuned copy.
    Transformer perturbed(double scale, std::uint64_t seed, std::string new_model_id) const;

    void save(const std::filesystem::path& dir) const;
    static Transformer load(const std::filesystem::path& dir);

    // Visits every parameter tensor with a stable name and its shape.
    using TensorVisitor =
        std::function<void(const std::string& name, const std::vector<std::size_t>& shape,
                           std::span<double> values)>;
    void visit_tensors(const TensorVisitor& fn);

private:
    TransformerConfig config_;
    Matrix token_embeddings_;
    Matrix position_embeddings_;
    Matrix type_embeddings_;
    nn::LayerNormParams embedding_norm_;
    std::vector<TransformerBlock> blocks_;
    nn::LayerNormParams final_norm_;
};

}  // namespace rprobe
