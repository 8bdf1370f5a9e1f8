#include "oracles.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rprobe/io.hpp"
#include "rprobe/rng.hpp"

namespace rprobe::testing {

namespace fs = std::filesystem;

TransformerConfig toy_config(std::size_t hidden, std::size_t layers, std::size_t heads, std::size_t intermediate,
                             Architecture arch) {
    TransformerConfig c;
    c.model_id = arch == Architecture::encoder_only ? "toy-enc" : "toy-dec";
    c.architecture = arch;
    c.vocab_size = 64;
    c.hidden_dim = hidden;
    c.num_layers = layers;
    c.num_heads = heads;
    c.intermediate_dim = intermediate;
    c.max_position = 32;
    c.max_sequence_length = 32;
    return c;
}

std::vector<int> toy_tokens(const TransformerConfig& c, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> t{c.tokenizer.cls_id};
    for (std::size_t i = 0; i < count; ++i) {
        t.push_back(4 + static_cast<int>(uniform_index(rng, c.vocab_size - 4)));
    }
    t.push_back(c.tokenizer.sep_id);
    return t;
}

Transformer with_neuron_weights(const Transformer& model, const NeuronAddress& a, std::span<const double> v) {
    Transformer m = model;
    TransformerBlock& b = m.block(a.layer - 1);
    Matrix& w = a.sublayer == Sublayer::intermediate ? b.ffn_in.weight : b.ffn_out.weight;
    if (v.size() != w.cols()) throw std::invalid_argument("weight length mismatch");
    std::copy(v.begin(), v.end(), w.row(a.index).begin());
    return m;
}

std::vector<double> pooled_output(const Transformer& model, std::span<const int> tokens, Pooling pooling) {
    const ForwardState st = model.forward(tokens, false);
    return pool_matrix(st.hidden.back(), {}, pooling);
}

namespace {

double target_of(const std::vector<double>& e, const std::vector<double>& frozen, ScalarTarget target) {
    double s = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) s += e[j] * (target == ScalarTarget::frozen_dot ? frozen[j] : e[j]);
    return s;
}

}  // namespace

double surgery_scalar(const Transformer& model, std::span<const int> tokens, Pooling pooling, ScalarTarget target,
                      const NeuronAddress& a, std::span<const double> v) {
    const std::vector<double> frozen = pooled_output(model, tokens, pooling);
    const std::vector<double> e = pooled_output(with_neuron_weights(model, a, v), tokens, pooling);
    return target_of(e, frozen, target);
}

std::vector<double> surgery_gradient(const Transformer& model, std::span<const int> tokens, Pooling pooling,
                                     ScalarTarget target, const NeuronAddress& a, std::span<const double> v) {
    const std::vector<double> frozen = pooled_output(model, tokens, pooling);
    const Transformer m = with_neuron_weights(model, a, v);
    const ForwardState st = m.forward(tokens, true);
    const std::size_t T = tokens.size();
    const std::vector<double> e = pool_matrix(st.hidden.back(), {}, pooling);
    std::vector<double> de = frozen;
    if (target == ScalarTarget::embedding_norm) {
        for (std::size_t j = 0; j < e.size(); ++j) de[j] = 2.0 * e[j];
    }
    Matrix dh = pool_backward(de, T, {}, pooling);
    if (m.has_final_norm()) dh = m.final_norm_backward(dh, st.final_norm);
    const std::size_t lb = a.layer - 1;
    for (std::size_t l = m.num_layers(); l-- > lb + 1;) dh = m.block_backward(l, dh, T, st.blocks[l]).d_input;
    const BlockGradients g = m.block_backward(lb, dh, T, st.blocks[lb]);
    const BlockCache& c = st.blocks[lb];

    std::vector<double> grad;
    if (a.sublayer == Sublayer::intermediate) {
        grad.assign(c.ffn_input.cols(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g.d_pre(t, a.index) * c.ffn_input(t, j);
        }
    } else {
        grad.assign(c.act.cols(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += g.d_ffn_out(t, a.index) * c.act(t, j);
        }
    }
    return grad;
}

std::vector<double> finite_difference_gradient(const Transformer& model, std::span<const int> tokens,
                                               Pooling pooling, ScalarTarget target, const NeuronAddress& a,
                                               std::span<const double> v, double h) {
    std::vector<double> grad(v.size());
    std::vector<double> x(v.begin(), v.end());
    for (std::size_t j = 0; j < v.size(); ++j) {
        x[j] = v[j] + h;
        const double up = surgery_scalar(model, tokens, pooling, target, a, x);
        x[j] = v[j] - h;
        const double down = surgery_scalar(model, tokens, pooling, target, a, x);
        x[j] = v[j];
        grad[j] = (up - down) / (2.0 * h);
    }
    return grad;
}

double sequential_attribution(const Transformer& model, std::span<const int> tokens, Pooling pooling,
                              const NeuronAddress& a, const AttributionOptions& options) {
    const TransformerBlock& b = model.block(a.layer - 1);
    const Matrix& wm = a.sublayer == Sublayer::intermediate ? b.ffn_in.weight : b.ffn_out.weight;
    const std::vector<double> w(wm.row(a.index).begin(), wm.row(a.index).end());
    const QuadratureGrid grid = make_grid(options.n_steps, options.scheme);
    std::vector<double> avg(w.size(), 0.0);
    std::vector<double> v(w.size());
    for (std::size_t k = 0; k < grid.alphas.size(); ++k) {
        for (std::size_t j = 0; j < w.size(); ++j) v[j] = grid.alphas[k] * w[j];
        const auto g = surgery_gradient(model, tokens, pooling, options.scalar_target, a, v);
        for (std::size_t j = 0; j < w.size(); ++j) avg[j] += grid.weights[k] * g[j];
    }
    double total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        total += options.reduction == IgReduction::weighted ? w[j] * avg[j] : avg[j];
    }
    return total;
}

std::vector<NeuronAddress> brute_force_threshold(const AttributionRecord& record, double tau) {
    double max_score = -std::numeric_limits<double>::infinity();
    std::vector<std::pair<NeuronAddress, double>> all;
    for (std::size_t l = 1; l <= record.topology.num_layers; ++l) {
        for (std::size_t i = 0; i < record.topology.intermediate_width; ++i) {
            all.push_back({{l, Sublayer::intermediate, i}, record.intermediate[l - 1][i]});
        }
        for (std::size_t i = 0; i < record.topology.output_width; ++i) {
            all.push_back({{l, Sublayer::output, i}, record.output[l - 1][i]});
        }
    }
    for (const auto& [addr, s] : all) max_score = std::max(max_score, s);
    std::vector<NeuronAddress> active;
    if (max_score <= 0.0) return active;
    for (const auto& [addr, s] : all) {
        if (s >= tau * max_score) active.push_back(addr);
    }
    return active;
}

std::vector<std::vector<double>> counting_frequency(const std::vector<std::vector<NeuronAddress>>& sets,
                                                    const Topology& topo, Sublayer sublayer) {
    std::vector<std::vector<double>> f(topo.num_layers, std::vector<double>(topo.width(sublayer), 0.0));
    for (std::size_t l = 1; l <= topo.num_layers; ++l) {
        for (std::size_t i = 0; i < topo.width(sublayer); ++i) {
            std::size_t hits = 0;
            for (const auto& s : sets) {
                const NeuronAddress a{l, sublayer, i};
                if (std::find(s.begin(), s.end(), a) != s.end()) ++hits;
            }
            f[l - 1][i] = static_cast<double>(hits) / static_cast<double>(sets.size());
        }
    }
    return f;
}

AttributionRecord random_record(const Topology& topo, std::uint64_t seed) {
    Rng rng(seed);
    AttributionRecord r = make_empty_record(topo);
    r.example_id = "ex" + std::to_string(seed);
    r.n_steps = 20;
    const int mode = static_cast<int>(uniform_index(rng, 10));
    for (auto* table : {&r.intermediate, &r.output}) {
        for (auto& row : *table) {
            for (double& v : row) {
                if (mode == 0) {
                    v = 0.0;  // all-zero record
                } else if (mode == 1) {
                    v = -std::fabs(standard_normal(rng));  // all negative
                } else {
                    v = static_cast<double>(static_cast<float>(standard_normal(rng) * std::exp(standard_normal(rng))));
                }
            }
        }
    }
    return r;
}

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    auto cf = [](double a, double b, double x) {
        const double tiny = 1e-300;
        double qab = a + b, qap = a + 1.0, qam = a - 1.0;
        double c = 1.0, d = 1.0 - qab * x / qap;
        if (std::fabs(d) < tiny) d = tiny;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= 100000; ++m) {
            const int m2 = 2 * m;
            double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if (std::fabs(d) < tiny) d = tiny;
            c = 1.0 + aa / c;
            if (std::fabs(c) < tiny) c = tiny;
            d = 1.0 / d;
            h *= d * c;
            aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if (std::fabs(d) < tiny) d = tiny;
            c = 1.0 + aa / c;
            if (std::fabs(c) < tiny) c = tiny;
            d = 1.0 / d;
            const double del = d * c;
            h *= del;
            if (std::fabs(del - 1.0) < 1e-16) break;
        }
        return h;
    };
    const double front =
        std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * cf(a, b, x) / a;
    return 1.0 - front * cf(b, a, 1.0 - x) / b;
}

double student_t_two_tailed(double t, double df) { return incomplete_beta(df / 2.0, 0.5, df / (df + t * t)); }

double reference_paired_p(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = (a[i] ? 1.0 : 0.0) - (b[i] ? 1.0 : 0.0);
    double mean = 0.0;
    for (double x : d) mean += x;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0.0) return mean == 0.0 ? 1.0 : 0.0;
    const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
    return student_t_two_tailed(t, static_cast<double>(n - 1));
}

std::size_t write_synthetic_corpus(const fs::path& path, std::size_t records, std::uint64_t seed, int min_neg,
                                   int max_neg, const std::string& id_prefix) {
    Rng rng(seed);
    auto word = [&] { return "w" + std::to_string(uniform_index(rng, 400)); };
    auto sentence = [&](std::size_t n) {
        std::string s;
        for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + word();
        return s;
    };
    nlohmann::json arr = nlohmann::json::array();
    std::size_t zero = 0;
    for (std::size_t r = 0; r < records; ++r) {
        std::vector<std::string> topic;
        for (int i = 0; i < 6; ++i) topic.push_back(word());
        std::string q = topic[0] + " " + topic[1] + " " + topic[2] + "?";
        std::string pos;
        for (const auto& t : topic) pos += t + " ";
        pos += sentence(6);
        const int n_neg = min_neg + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_neg - min_neg + 1)));
        if (n_neg == 0) ++zero;
        nlohmann::json negs = nlohmann::json::array();
        for (int k = 0; k < n_neg; ++k) negs.push_back({{"title", "t"}, {"text", sentence(12)}});
        arr.push_back({{"id", id_prefix + std::to_string(r)},
                       {"question", q},
                       {"positive_ctxs", {{{"title", "t"}, {"text", pos}}}},
                       {"hard_negative_ctxs", negs}});
    }
    io::write_file_atomic(path, arr.dump());
    return zero;
}

namespace {

std::vector<float> gaussian(Rng& rng, std::size_t d, double scale) {
    std::vector<float> v(d);
    for (auto& x : v) x = static_cast<float>(scale * standard_normal(rng));
    return v;
}

}  // namespace

FeatureSet separable_features(int n, std::size_t dim, std::size_t count, std::uint64_t seed) {
    // The direction depends only on dim so that train and test sets share it.
    Rng direction_rng(derive_seed(0x5e9a7ab1e, "separable-direction", dim));
    std::vector<float> u = gaussian(direction_rng, dim, 1.0);
    Rng rng(seed);
    double norm = 0.0;
    for (float x : u) norm += x * x;
    for (auto& x : u) x = static_cast<float>(x / std::sqrt(norm));
    const double noise = 1.0 / std::sqrt(static_cast<double>(dim));

    FeatureSet fs(n, dim, 1);
    for (std::size_t e = 0; e < count; ++e) {
        std::vector<float> q = gaussian(rng, dim, 0.2 * noise);
        for (std::size_t j = 0; j < dim; ++j) q[j] += u[j];
        std::vector<float> pos = gaussian(rng, dim, 0.05 * noise);
        for (std::size_t j = 0; j < dim; ++j) pos[j] += q[j];
        double qq = 0.0;
        for (float x : q) qq += x * x;
        std::vector<std::vector<float>> passages;
        const int label = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n)));
        for (int k = 0; k < n; ++k) {
            if (k == label) {
                passages.push_back(pos);
                continue;
            }
            std::vector<float> neg = gaussian(rng, dim, noise);
            double dot = 0.0;
            for (std::size_t j = 0; j < dim; ++j) dot += neg[j] * q[j];
            for (std::size_t j = 0; j < dim; ++j) neg[j] = static_cast<float>(neg[j] - dot / qq * q[j]);
            passages.push_back(std::move(neg));
        }
        std::vector<std::span<const float>> spans(passages.begin(), passages.end());
        fs.add(q, spans, label);
    }
    return fs;
}

FeatureSet random_features(int n, std::size_t dim, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    FeatureSet fs(n, dim, 1);
    for (std::size_t e = 0; e < count; ++e) {
        const std::vector<float> q = gaussian(rng, dim, 1.0);
        std::vector<std::vector<float>> passages;
        for (int k = 0; k < n; ++k) passages.push_back(gaussian(rng, dim, 1.0));
        std::vector<std::span<const float>> spans(passages.begin(), passages.end());
        fs.add(q, spans, static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n))));
    }
    return fs;
}

TempDir::TempDir() {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("rprobe-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

}  // namespace rprobe::testing
