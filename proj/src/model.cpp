#include "rprobe/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/rng.hpp"

namespace rprobe {

using nlohmann::json;

namespace {

constexpr std::string_view kWeightsMagic = "RPMW1";

nn::Linear make_linear(std::size_t out, std::size_t in) {
    return nn::Linear{Matrix(out, in), std::vector<double>(out, 0.0)};
}

nn::LayerNormParams make_norm(std::size_t d, double eps) {
    return nn::LayerNormParams{std::vector<double>(d, 1.0), std::vector<double>(d, 0.0), eps};
}

}  // namespace

std::string to_string(Architecture a) {
    return a == Architecture::encoder_only ? "encoder_only" : "decoder_only";
}

Architecture parse_architecture(const std::string& s) {
    if (s == "encoder_only") return Architecture::encoder_only;
    if (s == "decoder_only") return Architecture::decoder_only;
    throw ArgumentError("unknown architecture '" + s + "'");
}

void TransformerConfig::validate() const {
    if (num_layers < 1) throw ArgumentError("model must have at least one layer");
    if (hidden_dim < 1) throw ArgumentError("hidden_dim must be positive");
    if (num_heads < 1 || hidden_dim % num_heads != 0) {
        throw ArgumentError("hidden_dim must be divisible by num_heads");
    }
    if (intermediate_dim < 1) throw ArgumentError("intermediate_dim must be positive");
    if (vocab_size < 4) throw ArgumentError("vocab_size must cover the special tokens");
    if (max_sequence_length < 2 || max_sequence_length > max_position) {
        throw ArgumentError("max_sequence_length must be in [2, max_position]");
    }
}

json to_json(const TransformerConfig& c) {
    return json{{"model_id", c.model_id},
                {"architecture", to_string(c.architecture)},
                {"vocab_size", c.vocab_size},
                {"hidden_dim", c.hidden_dim},
                {"num_layers", c.num_layers},
                {"num_heads", c.num_heads},
                {"intermediate_dim", c.intermediate_dim},
                {"max_position", c.max_position},
                {"type_vocab_size", c.type_vocab_size},
                {"max_sequence_length", c.max_sequence_length},
                {"layer_norm_eps", c.layer_norm_eps},
                {"tokenizer",
                 {{"kind", c.tokenizer.kind},
                  {"lowercase", c.tokenizer.lowercase},
                  {"pad_id", c.tokenizer.pad_id},
                  {"unk_id", c.tokenizer.unk_id},
                  {"cls_id", c.tokenizer.cls_id},
                  {"sep_id", c.tokenizer.sep_id}}}};
}

TransformerConfig config_from_json(const json& j) {
    TransformerConfig c;
    try {
        c.model_id = j.at("model_id").get<std::string>();
        c.architecture = parse_architecture(j.at("architecture").get<std::string>());
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        c.num_layers = j.at("num_layers").get<std::size_t>();
        c.num_heads = j.at("num_heads").get<std::size_t>();
        c.intermediate_dim = j.at("intermediate_dim").get<std::size_t>();
        c.max_position = j.value("max_position", std::size_t{512});
        c.type_vocab_size = j.value("type_vocab_size", std::size_t{2});
        c.max_sequence_length = j.value("max_sequence_length", c.max_position);
        c.layer_norm_eps = j.value("layer_norm_eps", 1e-12);
        if (j.contains("tokenizer")) {
            const auto& t = j["tokenizer"];
            c.tokenizer.kind = t.value("kind", std::string("hash"));
            c.tokenizer.lowercase = t.value("lowercase", true);
            c.tokenizer.pad_id = t.value("pad_id", 0);
            c.tokenizer.unk_id = t.value("unk_id", 1);
            c.tokenizer.cls_id = t.value("cls_id", 2);
            c.tokenizer.sep_id = t.value("sep_id", 3);
        }
    } catch (const json::exception& e) {
        throw EnvironmentError(std::string("invalid model config: ") + e.what());
    }
    c.validate();
    return c;
}

Transformer::Transformer(TransformerConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::size_t d = config_.hidden_dim;
    const std::size_t f = config_.intermediate_dim;
    const double eps = config_.layer_norm_eps;
    token_embeddings_ = Matrix(config_.vocab_size, d);
    position_embeddings_ = Matrix(config_.max_position, d);
    if (config_.architecture == Architecture::encoder_only) {
        type_embeddings_ = Matrix(std::max<std::size_t>(config_.type_vocab_size, 1), d);
        embedding_norm_ = make_norm(d, eps);
    } else {
        final_norm_ = make_norm(d, eps);
    }
    blocks_.resize(config_.num_layers);
    for (auto& b : blocks_) {
        b.attention.query = make_linear(d, d);
        b.attention.key = make_linear(d, d);
        b.attention.value = make_linear(d, d);
        b.attention.output = make_linear(d, d);
        b.attention.num_heads = config_.num_heads;
        b.ln1 = make_norm(d, eps);
        b.ffn_in = make_linear(f, d);
        b.ffn_out = make_linear(d, f);
        b.ln2 = make_norm(d, eps);
    }
}

Matrix Transformer::embed(std::span<const int> tokens) const {
    const std::size_t d = config_.hidden_dim;
    if (tokens.size() > config_.max_position) {
        throw ArgumentError("token sequence longer than the position table");
    }
    Matrix x(tokens.size(), d);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const int id = tokens[t];
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size) {
            throw ArgumentError("token id " + std::to_string(id) + " outside the vocabulary");
        }
        for (std::size_t j = 0; j < d; ++j) {
            double v = token_embeddings_(static_cast<std::size_t>(id), j) + position_embeddings_(t, j);
            if (config_.architecture == Architecture::encoder_only) v += type_embeddings_(0, j);
            x(t, j) = v;
        }
    }
    if (config_.architecture == Architecture::encoder_only) return nn::layer_norm(x, embedding_norm_);
    return x;
}

Matrix Transformer::block_forward(std::size_t layer, const Matrix& x, std::size_t seq_len,
                                  std::span<const std::uint8_t> key_mask, BlockCache* cache) const {
    const TransformerBlock& b = blocks_.at(layer);
    BlockCache local;
    BlockCache& c = cache ? *cache : local;
    const bool keep = cache != nullptr;

    Matrix residual;
    Matrix ffn_input;
    if (config_.architecture == Architecture::encoder_only) {
        Matrix a = nn::attention(x, b.attention, seq_len, false, key_mask, keep ? &c.attention : nullptr);
        nn::add_inplace(a, x);
        residual = nn::layer_norm(a, b.ln1, keep ? &c.ln1 : nullptr);
        ffn_input = residual;
    } else {
        Matrix xn = nn::layer_norm(x, b.ln1, keep ? &c.ln1 : nullptr);
        residual = nn::attention(xn, b.attention, seq_len, true, key_mask, keep ? &c.attention : nullptr);
        nn::add_inplace(residual, x);
        ffn_input = nn::layer_norm(residual, b.ln2, keep ? &c.ln2_pre : nullptr);
    }

    Matrix pre = nn::linear(ffn_input, b.ffn_in);
    Matrix act(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) act.data()[i] = nn::gelu(pre.data()[i]);
    Matrix ffn_out = nn::linear(act, b.ffn_out);
    Matrix y = block_finish(layer, residual, ffn_out, keep ? &c.ln2_post : nullptr);

    if (keep) {
        c.input = x;
        c.residual = std::move(residual);
        c.ffn_input = std::move(ffn_input);
        c.pre = std::move(pre);
        c.act = std::move(act);
        c.ffn_out = std::move(ffn_out);
        c.output = y;
    }
    return y;
}

Matrix Transformer::block_finish(std::size_t layer, const Matrix& residual, const Matrix& ffn_out,
                                 nn::LayerNormCache* cache) const {
    Matrix sum = residual;
    nn::add_inplace(sum, ffn_out);
    if (config_.architecture == Architecture::encoder_only) {
        return nn::layer_norm(sum, blocks_.at(layer).ln2, cache);
    }
    return sum;
}

Matrix Transformer::block_finish_backward(std::size_t layer, const Matrix& dy,
                                          const nn::LayerNormCache& cache) const {
    if (config_.architecture == Architecture::encoder_only) {
        return nn::layer_norm_backward(dy, blocks_.at(layer).ln2, cache);
    }
    return dy;
}

BlockGradients Transformer::block_backward(std::size_t layer, const Matrix& dy, std::size_t seq_len,
                                           const BlockCache& c) const {
    const TransformerBlock& b = blocks_.at(layer);
    BlockGradients g;
    g.d_ffn_out = block_finish_backward(layer, dy, c.ln2_post);
    Matrix d_residual = g.d_ffn_out;

    Matrix d_act = nn::linear_backward_input(g.d_ffn_out, b.ffn_out);
    g.d_pre = Matrix(d_act.rows(), d_act.cols());
    for (std::size_t i = 0; i < d_act.size(); ++i) {
        g.d_pre.data()[i] = d_act.data()[i] * nn::gelu_grad(c.pre.data()[i]);
    }
    Matrix d_ffn_input = nn::linear_backward_input(g.d_pre, b.ffn_in);

    if (config_.architecture == Architecture::encoder_only) {
        nn::add_inplace(d_residual, d_ffn_input);
        Matrix d_sum = nn::layer_norm_backward(d_residual, b.ln1, c.ln1);
        g.d_input = nn::attention_backward(d_sum, b.attention, seq_len, c.attention);
        nn::add_inplace(g.d_input, d_sum);
    } else {
        nn::add_inplace(d_residual, nn::layer_norm_backward(d_ffn_input, b.ln2, c.ln2_pre));
        Matrix d_xn = nn::attention_backward(d_residual, b.attention, seq_len, c.attention);
        g.d_input = nn::layer_norm_backward(d_xn, b.ln1, c.ln1);
        nn::add_inplace(g.d_input, d_residual);
    }
    return g;
}

Matrix Transformer::apply_final_norm(const Matrix& x, nn::LayerNormCache* cache) const {
    if (!has_final_norm()) return x;
    return nn::layer_norm(x, final_norm_, cache);
}

Matrix Transformer::final_norm_backward(const Matrix& dy, const nn::LayerNormCache& cache) const {
    if (!has_final_norm()) return dy;
    return nn::layer_norm_backward(dy, final_norm_, cache);
}

ForwardState Transformer::forward(std::span<const int> tokens, bool keep_caches,
                                  std::span<const std::uint8_t> key_mask) const {
    ForwardState st;
    st.seq_len = tokens.size();
    st.hidden.reserve(config_.num_layers + 1);
    st.hidden.push_back(embed(tokens));
    if (keep_caches) st.blocks.resize(config_.num_layers);
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
        st.hidden.push_back(block_forward(l, st.hidden.back(), st.seq_len, key_mask,
                                          keep_caches ? &st.blocks[l] : nullptr));
    }
    if (has_final_norm()) {
        st.pre_final_norm = st.hidden.back();
        st.hidden.back() = apply_final_norm(st.pre_final_norm, keep_caches ? &st.final_norm : nullptr);
    }
    return st;
}

void Transformer::visit_tensors(const TensorVisitor& fn) {
    auto mat = [&](const std::string& name, Matrix& m) {
        fn(name, {m.rows(), m.cols()}, std::span<double>(m.storage()));
    };
    auto vec = [&](const std::string& name, std::vector<double>& v) {
        fn(name, {v.size()}, std::span<double>(v));
    };
    auto lin = [&](const std::string& name, nn::Linear& l) {
        mat(name + ".weight", l.weight);
        vec(name + ".bias", l.bias);
    };
    auto norm = [&](const std::string& name, nn::LayerNormParams& n) {
        vec(name + ".gamma", n.gamma);
        vec(name + ".beta", n.beta);
    };
    mat("embeddings.token", token_embeddings_);
    mat("embeddings.position", position_embeddings_);
    if (config_.architecture == Architecture::encoder_only) {
        mat("embeddings.type", type_embeddings_);
        norm("embeddings.norm", embedding_norm_);
    }
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        auto& b = blocks_[l];
        lin(p + "attention.query", b.attention.query);
        lin(p + "attention.key", b.attention.key);
        lin(p + "attention.value", b.attention.value);
        lin(p + "attention.output", b.attention.output);
        norm(p + "ln1", b.ln1);
        lin(p + "ffn.intermediate", b.ffn_in);
        lin(p + "ffn.output", b.ffn_out);
        norm(p + "ln2", b.ln2);
    }
    if (config_.architecture == Architecture::decoder_only) norm("final_norm", final_norm_);
}

Transformer Transformer::random(TransformerConfig config, std::uint64_t seed) {
    Transformer m(std::move(config));
    Rng rng(derive_seed(seed, "transformer-init"));
    m.visit_tensors([&](const std::string& name, const std::vector<std::size_t>& shape,
                        std::span<double> values) {
        const bool is_gamma = name.ends_with(".gamma");
        const bool is_vector = shape.size() == 1;
        double stddev = 0.02;
        if (name.starts_with("embeddings.")) {
            stddev = 1.0;
        } else if (!is_vector) {
            stddev = 1.0 / std::sqrt(static_cast<double>(shape[1]));
        }
        for (double& v : values) {
            v = static_cast<float>((is_gamma ? 1.0 : 0.0) + stddev * standard_normal(rng));
        }
    });
    return m;
}

Transformer Transformer::perturbed(double scale, std::uint64_t seed, std::string new_model_id) const {
    Transformer copy = *this;
    copy.config_.model_id = std::move(new_model_id);
    Rng rng(derive_seed(seed, "transformer-perturb"));
    copy.visit_tensors([&](const std::string&, const std::vector<std::size_t>&, std::span<double> values) {
        double sq = 0.0;
        for (double v : values) sq += v * v;
        const double rms = values.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(values.size()));
        for (double& v : values) v = static_cast<float>(v + scale * rms * standard_normal(rng));
    });
    return copy;
}

void Transformer::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    io::write_file_atomic(dir / "config.json", to_json(config_).dump(2) + "\n");

    std::ostringstream out(std::ios::binary);
    out.write(kWeightsMagic.data(), kWeightsMagic.size());
    auto& self = const_cast<Transformer&>(*this);
    std::uint32_t count = 0;
    self.visit_tensors([&](const std::string&, const std::vector<std::size_t>&, std::span<double>) { ++count; });
    io::put_u32(out, count);
    std::vector<float> buf;
    self.visit_tensors([&](const std::string& name, const std::vector<std::size_t>& shape,
                           std::span<double> values) {
        io::put_string(out, name);
        io::put_u32(out, static_cast<std::uint32_t>(shape.size()));
        for (auto s : shape) io::put_u64(out, s);
        buf.assign(values.begin(), values.end());
        io::put_f32s(out, buf.data(), buf.size());
    });
    io::write_file_atomic(dir / "weights.bin", out.str());
}

Transformer Transformer::load(const std::filesystem::path& dir) {
    json cfg;
    try {
        cfg = json::parse(io::read_file(dir / "config.json"));
    } catch (const ArgumentError&) {
        throw EnvironmentError("cannot load model: missing " + (dir / "config.json").string());
    } catch (const json::exception& e) {
        throw EnvironmentError("cannot load model config " + (dir / "config.json").string() + ": " + e.what());
    }
    Transformer m(config_from_json(cfg));

    std::ifstream in(dir / "weights.bin", std::ios::binary);
    if (!in) throw EnvironmentError("cannot load model: missing " + (dir / "weights.bin").string());
    std::string magic(kWeightsMagic.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    std::uint32_t count = 0;
    if (magic != kWeightsMagic || !io::get_u32(in, count)) {
        throw EnvironmentError("weights file " + (dir / "weights.bin").string() + " has a bad header");
    }
    std::map<std::string, std::pair<std::vector<std::size_t>, std::vector<float>>> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name;
        std::uint32_t ndim = 0;
        if (!io::get_string(in, name) || !io::get_u32(in, ndim) || ndim > 4) {
            throw EnvironmentError("truncated weights file " + (dir / "weights.bin").string());
        }
        std::vector<std::size_t> shape(ndim);
        std::size_t total = 1;
        for (auto& s : shape) {
            std::uint64_t v = 0;
            if (!io::get_u64(in, v)) throw EnvironmentError("truncated weights file");
            s = static_cast<std::size_t>(v);
            total *= s;
        }
        std::vector<float> data(total);
        if (!io::get_f32s(in, data.data(), total)) throw EnvironmentError("truncated weights file");
        tensors.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    m.visit_tensors([&](const std::string& name, const std::vector<std::size_t>& shape,
                        std::span<double> values) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw EnvironmentError("weights file lacks tensor " + name);
        if (it->second.first != shape) throw EnvironmentError("tensor " + name + " has the wrong shape");
        std::copy(it->second.second.begin(), it->second.second.end(), values.begin());
    });
    return m;
}

}  // namespace rprobe
