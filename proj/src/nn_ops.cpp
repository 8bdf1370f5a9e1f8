#include "rprobe/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "rprobe/simd.hpp"

namespace rprobe::nn {

Matrix linear(const Matrix& x, const Linear& layer) {
    const auto& k = simd::kernels();
    const std::size_t in = layer.in_features();
    const std::size_t out = layer.out_features();
    assert(x.cols() == in);
    Matrix y(x.rows(), out);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double* xr = x.row(r).data();
        double* yr = y.row(r).data();
        for (std::size_t o = 0; o < out; ++o) {
            yr[o] = k.dot_f64(xr, layer.weight.row(o).data(), in) + layer.bias[o];
        }
    }
    return y;
}

Matrix linear_backward_input(const Matrix& dy, const Linear& layer) {
    const auto& k = simd::kernels();
    const std::size_t in = layer.in_features();
    const std::size_t out = layer.out_features();
    Matrix dx(dy.rows(), in);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
        double* dxr = dx.row(r).data();
        const double* dyr = dy.row(r).data();
        for (std::size_t o = 0; o < out; ++o) {
            if (dyr[o] != 0.0) k.axpy_f64(dyr[o], layer.weight.row(o).data(), dxr, in);
        }
    }
    return dx;
}

Matrix layer_norm(const Matrix& x, const LayerNormParams& p, LayerNormCache* cache) {
    const std::size_t d = x.cols();
    Matrix y(x.rows(), d);
    if (cache) {
        cache->xhat = Matrix(x.rows(), d);
        cache->inv_std.assign(x.rows(), 0.0);
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        double mean = 0.0;
        for (double v : xr) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : xr) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + p.eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (xr[j] - mean) * inv;
            y(r, j) = p.gamma[j] * xh + p.beta[j];
            if (cache) cache->xhat(r, j) = xh;
        }
        if (cache) cache->inv_std[r] = inv;
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormParams& p, const LayerNormCache& cache) {
    const std::size_t d = dy.cols();
    Matrix dx(dy.rows(), d);
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
        double mean_dxhat = 0.0;
        double mean_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = dy(r, j) * p.gamma[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * cache.xhat(r, j);
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        const double inv = cache.inv_std[r];
        for (std::size_t j = 0; j < d; ++j) {
            dx(r, j) = inv * (dxhat[j] - mean_dxhat - cache.xhat(r, j) * mean_dxhat_xhat);
        }
    }
    return dx;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

}  // namespace

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    return cdf + x * pdf;
}

void add_inplace(Matrix& a, const Matrix& b) {
    assert(a.size() == b.size());
    double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
}

Matrix attention(const Matrix& x, const AttentionParams& p, std::size_t seq_len, bool causal,
                 std::span<const std::uint8_t> key_mask, AttentionCache* cache) {
    const auto& k = simd::kernels();
    const std::size_t d = p.query.out_features();
    const std::size_t heads = p.num_heads;
    const std::size_t dh = d / heads;
    const std::size_t batch = x.rows() / seq_len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix q = linear(x, p.query);
    Matrix kk = linear(x, p.key);
    Matrix v = linear(x, p.value);
    Matrix context(x.rows(), d);
    std::vector<Matrix> probs;
    if (cache) probs.reserve(batch * heads);

    std::vector<double> scores(seq_len);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * seq_len;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            Matrix a(seq_len, seq_len);
            for (std::size_t i = 0; i < seq_len; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < seq_len; ++j) {
                    const bool masked = (causal && j > i) || (!key_mask.empty() && key_mask[j] == 0);
                    if (masked) {
                        scores[j] = -std::numeric_limits<double>::infinity();
                        continue;
                    }
                    scores[j] = scale * k.dot_f64(q.row(base + i).data() + off,
                                                  kk.row(base + j).data() + off, dh);
                    mx = std::max(mx, scores[j]);
                }
                if (mx == -std::numeric_limits<double>::infinity()) continue;
                double total = 0.0;
                for (std::size_t j = 0; j < seq_len; ++j) {
                    const double e = std::isinf(scores[j]) ? 0.0 : std::exp(scores[j] - mx);
                    a(i, j) = e;
                    total += e;
                }
                double* ctx = context.row(base + i).data() + off;
                for (std::size_t j = 0; j < seq_len; ++j) {
                    a(i, j) /= total;
                    if (a(i, j) != 0.0) k.axpy_f64(a(i, j), v.row(base + j).data() + off, ctx, dh);
                }
            }
            if (cache) probs.push_back(std::move(a));
        }
    }

    Matrix out = linear(context, p.output);
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(kk);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->context = std::move(context);
    }
    return out;
}

Matrix attention_backward(const Matrix& dout, const AttentionParams& p, std::size_t seq_len,
                          const AttentionCache& cache) {
    const auto& k = simd::kernels();
    const std::size_t d = p.query.out_features();
    const std::size_t heads = p.num_heads;
    const std::size_t dh = d / heads;
    const std::size_t batch = dout.rows() / seq_len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix dcontext = linear_backward_input(dout, p.output);
    Matrix dq(dout.rows(), d);
    Matrix dk(dout.rows(), d);
    Matrix dv(dout.rows(), d);
    std::vector<double> da(seq_len);

    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * seq_len;
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * dh;
            const Matrix& a = cache.probs[b * heads + h];
            for (std::size_t i = 0; i < seq_len; ++i) {
                const double* dctx = dcontext.row(base + i).data() + off;
                double row_dot = 0.0;
                for (std::size_t j = 0; j < seq_len; ++j) {
                    if (a(i, j) == 0.0) {
                        da[j] = 0.0;
                        continue;
                    }
                    da[j] = k.dot_f64(dctx, cache.v.row(base + j).data() + off, dh);
                    row_dot += da[j] * a(i, j);
                    k.axpy_f64(a(i, j), dctx, dv.row(base + j).data() + off, dh);
                }
                for (std::size_t j = 0; j < seq_len; ++j) {
                    if (a(i, j) == 0.0) continue;
                    const double ds = a(i, j) * (da[j] - row_dot) * scale;
                    k.axpy_f64(ds, cache.k.row(base + j).data() + off, dq.row(base + i).data() + off, dh);
                    k.axpy_f64(ds, cache.q.row(base + i).data() + off, dk.row(base + j).data() + off, dh);
                }
            }
        }
    }

    Matrix dx = linear_backward_input(dq, p.query);
    add_inplace(dx, linear_backward_input(dk, p.key));
    add_inplace(dx, linear_backward_input(dv, p.value));
    return dx;
}

}  // namespace rprobe::nn
