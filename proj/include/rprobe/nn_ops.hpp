#pragma once

// Forward and input-gradient primitives for the transformer blocks. All ops
// act on row-stacked matrices: B sequences of T tokens occupy B*T rows, and
// attention mixes rows only within each T-row block.

#include <cstdint>
#include <span>
#include <vector>

#include "rprobe/matrix.hpp"

namespace rprobe::nn {

// y = W x + b with W stored [out x in].
struct Linear {
    Matrix weight;
    std::vector<double> bias;

    std::size_t in_features() const { return weight.cols(); }
    std::size_t out_features() const { return weight.rows(); }
};

struct LayerNormParams {
    std::vector<double> gamma;
    std::vector<double> beta;
    double eps = 1e-12;
};

struct AttentionParams {
    Linear query;
    Linear key;
    Linear value;
    Linear output;
    std::size_t num_heads = 1;
};

Matrix linear(const Matrix& x, const Linear& layer);

// dx = dy W
Matrix linear_backward_input(const Matrix& dy, const Linear& layer);

struct LayerNormCache {
    Matrix xhat;
    std::vector<double> inv_std;
};

Matrix layer_norm(const Matrix& x, const LayerNormParams& p, LayerNormCache* cache = nullptr);
Matrix layer_norm_backward(const Matrix& dy, const LayerNormParams& p, const LayerNormCache& cache);

double gelu(double x);
double gelu_grad(double x);

struct AttentionCache {
    Matrix q, k, v;
    std::vector<Matrix> probs;  // one T x T matrix per (sequence, head)
    Matrix context;
};

// key_mask has one entry per token position (length T) and applies to every
// sequence in the batch; empty means all keys valid.
Matrix attention(const Matrix& x, const AttentionParams& p, std::size_t seq_len, bool causal,
                 std::span<const std::uint8_t> key_mask, AttentionCache* cache = nullptr);

Matrix attention_backward(const Matrix& dout, const AttentionParams& p, std::size_t seq_len,
                          const AttentionCache& cache);

void add_inplace(Matrix& a, const Matrix& b);

}  // namespace rprobe::nn
