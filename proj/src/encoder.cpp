#include "rprobe/encoder.hpp"

#include <cmath>
#include <iostream>

#include "rprobe/dataset.hpp"
#include "rprobe/embedding_cache.hpp"
#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/rng.hpp"

namespace rprobe {

std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::first_token:
            return "first_token";
        case Pooling::mean:
            return "mean";
        case Pooling::last_token:
            return "last_token";
    }
    return "unknown";
}

Pooling parse_pooling(const std::string& s) {
    if (s == "first_token" || s == "cls") return Pooling::first_token;
    if (s == "mean") return Pooling::mean;
    if (s == "last_token" || s == "eos") return Pooling::last_token;
    throw ArgumentError("unknown pooling '" + s + "' (expected first_token, mean or last_token)");
}

EncoderHandle::EncoderHandle(std::shared_ptr<const Transformer> model, std::unique_ptr<Tokenizer> tokenizer)
    : model_(std::move(model)),
      tokenizer_(std::move(tokenizer)),
      truncations_(std::make_unique<std::atomic<std::size_t>>(0)) {}

EncoderHandle EncoderHandle::load(const std::filesystem::path& model_dir) {
    auto model = std::make_shared<const Transformer>(Transformer::load(model_dir));
    auto tok = make_tokenizer(model->config(), model_dir);
    return EncoderHandle(std::move(model), std::move(tok));
}

std::vector<int> EncoderHandle::encode(std::string_view text) const {
    const auto& cfg = model_->config().tokenizer;
    std::vector<int> content = tokenizer_->tokenize(text);
    const std::size_t budget = max_sequence_length() - 2;
    if (content.size() > budget) {
        content.resize(budget);
        truncations_->fetch_add(1);
    }
    std::vector<int> ids;
    ids.reserve(content.size() + 2);
    ids.push_back(cfg.cls_id);
    ids.insert(ids.end(), content.begin(), content.end());
    ids.push_back(cfg.sep_id);
    return ids;
}

LayerHiddenStates extract_hidden_states(const EncoderHandle& handle, std::string_view text,
                                        bool include_embedding_layer) {
    if (trim(std::string(text)).empty()) throw ArgumentError("cannot encode empty text");
    const std::vector<int> ids = handle.encode(text);
    ForwardState st = handle.model().forward(ids, false);
    LayerHiddenStates h;
    h.first_layer = include_embedding_layer ? 0 : 1;
    h.token_count = ids.size();
    h.attention_mask.assign(ids.size(), 1);
    h.architecture = handle.architecture();
    for (std::size_t l = h.first_layer; l < st.hidden.size(); ++l) h.layers.push_back(std::move(st.hidden[l]));
    return h;
}

namespace {

std::size_t valid_count(std::span<const std::uint8_t> mask, std::size_t t) {
    if (mask.empty()) return t;
    std::size_t n = 0;
    for (auto m : mask) n += m != 0;
    return n;
}

std::size_t last_valid(std::span<const std::uint8_t> mask, std::size_t t) {
    if (mask.empty()) return t - 1;
    for (std::size_t i = mask.size(); i > 0; --i) {
        if (mask[i - 1]) return i - 1;
    }
    return static_cast<std::size_t>(-1);
}

void check_mask(std::span<const std::uint8_t> mask, std::size_t t) {
    if (t == 0) throw ArgumentError("hidden states have no tokens");
    if (!mask.empty() && mask.size() != t) throw ArgumentError("attention mask length differs from token count");
    if (valid_count(mask, t) == 0) throw ArgumentError("attention mask has no valid positions");
}

}  // namespace

std::vector<double> pool_matrix(const Matrix& h, std::span<const std::uint8_t> mask, Pooling pooling) {
    check_mask(mask, h.rows());
    const std::size_t d = h.cols();
    switch (pooling) {
        case Pooling::first_token: {
            auto r = h.row(0);
            return {r.begin(), r.end()};
        }
        case Pooling::last_token: {
            auto r = h.row(last_valid(mask, h.rows()));
            return {r.begin(), r.end()};
        }
        case Pooling::mean: {
            std::vector<double> e(d, 0.0);
            for (std::size_t t = 0; t < h.rows(); ++t) {
                if (!mask.empty() && !mask[t]) continue;
                for (std::size_t j = 0; j < d; ++j) e[j] += h(t, j);
            }
            const double inv = 1.0 / static_cast<double>(valid_count(mask, h.rows()));
            for (double& v : e) v *= inv;
            return e;
        }
    }
    return {};
}

Matrix pool_backward(std::span<const double> g, std::size_t token_count, std::span<const std::uint8_t> mask,
                     Pooling pooling) {
    check_mask(mask, token_count);
    Matrix dh(token_count, g.size());
    auto put = [&](std::size_t t, double w) {
        for (std::size_t j = 0; j < g.size(); ++j) dh(t, j) += w * g[j];
    };
    switch (pooling) {
        case Pooling::first_token:
            put(0, 1.0);
            break;
        case Pooling::last_token:
            put(last_valid(mask, token_count), 1.0);
            break;
        case Pooling::mean: {
            const double w = 1.0 / static_cast<double>(valid_count(mask, token_count));
            for (std::size_t t = 0; t < token_count; ++t) {
                if (mask.empty() || mask[t]) put(t, w);
            }
            break;
        }
    }
    return dh;
}

namespace {

PerLayerVectors pool_all(const LayerHiddenStates& h, Pooling pooling) {
    PerLayerVectors out;
    out.reserve(h.layers.size());
    for (const auto& m : h.layers) {
        if (m.rows() != h.token_count) throw ArgumentError("layer matrices disagree on token count");
        out.push_back(pool_matrix(m, h.attention_mask, pooling));
    }
    return out;
}

}  // namespace

PerLayerVectors pool_first_token(const LayerHiddenStates& h) {
    if (h.architecture != Architecture::encoder_only) {
        throw PoolingMismatchError("first_token pooling requires an encoder_only model (leading [CLS] token)");
    }
    return pool_all(h, Pooling::first_token);
}

PerLayerVectors pool_mean(const LayerHiddenStates& h) { return pool_all(h, Pooling::mean); }

PerLayerVectors pool_last_token(const LayerHiddenStates& h) { return pool_all(h, Pooling::last_token); }

PerLayerVectors pool(const LayerHiddenStates& h, Pooling pooling) {
    switch (pooling) {
        case Pooling::first_token:
            return pool_first_token(h);
        case Pooling::mean:
            return pool_mean(h);
        case Pooling::last_token:
            return pool_last_token(h);
    }
    return {};
}

std::string text_hash(std::string_view text) { return io::hex64(fnv1a64(text)); }

PrecomputeReport precompute_embeddings(const EncoderHandle& handle, const std::vector<std::string>& texts,
                                       Pooling pooling, const std::filesystem::path& cache_dir,
                                       const PrecomputeOptions& options) {
    if (pooling == Pooling::first_token && handle.architecture() != Architecture::encoder_only) {
        throw PoolingMismatchError("first_token pooling requires an encoder_only model");
    }
    const std::size_t first = options.include_embedding_layer ? 0 : 1;
    std::vector<std::uint32_t> layer_ids;
    if (options.layers.empty()) {
        for (std::size_t l = first; l <= handle.num_layers(); ++l) layer_ids.push_back(static_cast<std::uint32_t>(l));
    } else {
        for (auto l : options.layers) {
            if (l > handle.num_layers() || (l == 0 && !options.include_embedding_layer)) {
                throw ArgumentError("layer " + std::to_string(l) + " is not available for this model");
            }
            layer_ids.push_back(static_cast<std::uint32_t>(l));
        }
    }

    EmbeddingCacheHeader header{handle.model_id(), to_string(pooling), layer_ids,
                                static_cast<std::uint32_t>(handle.hidden_dim())};
    EmbeddingCache cache = EmbeddingCache::open_for_write(cache_dir, header);

    PrecomputeReport report;
    report.requested = texts.size();
    const std::size_t before = handle.truncation_count();
    const std::size_t d = handle.hidden_dim();
    std::vector<float> buf(layer_ids.size() * d);

    auto manifest_extra = [&](bool complete) {
        return nlohmann::json{{"complete", complete},
                              {"truncated_texts", handle.truncation_count() - before},
                              {"max_sequence_length", handle.max_sequence_length()}};
    };

    try {
        for (const auto& text : texts) {
            const std::string hash = text_hash(text);
            if (cache.contains(hash)) {
                ++report.already_cached;
                continue;
            }
            LayerHiddenStates h = extract_hidden_states(handle, text, options.include_embedding_layer);
            ++report.model_invocations;
            PerLayerVectors vecs = pool(h, pooling);
            for (std::size_t s = 0; s < layer_ids.size(); ++s) {
                const auto& v = vecs[layer_ids[s] - h.first_layer];
                for (std::size_t j = 0; j < d; ++j) {
                    const auto f = static_cast<float>(v[j]);
                    if (!std::isfinite(f)) throw ArgumentError("non-finite embedding for text hash " + hash);
                    buf[s * d + j] = f;
                }
            }
            cache.append(hash, buf);
            if (report.model_invocations % 256 == 0) cache.write_manifest(manifest_extra(false));
        }
    } catch (const StorageError&) {
        try {
            cache.write_manifest(manifest_extra(false));
        } catch (...) {
        }
        throw;
    }
    report.truncated = handle.truncation_count() - before;
    cache.write_manifest(manifest_extra(true));
    if (report.truncated > 0) {
        std::cerr << "embed: truncated " << report.truncated << " text(s) to " << handle.max_sequence_length()
                  << " tokens\n";
    }
    return report;
}

}  // namespace rprobe
