#pragma once

// N-way linear relevance probe over z = [q; p_1; ...; p_N].
//
// logits u = W z + b with W in R^{N x (N+1)d}; trained with mean softmax
// cross-entropy by mini-batch Adam, validated after every epoch, and the
// parameters of the best validation epoch (earliest on ties) are kept.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rprobe/dataset.hpp"

namespace rprobe {

class EmbeddingCache;

struct ProbeFeatures {
    std::vector<float> z;
    int label = 0;
    int layer = 0;
    int n = 0;
};

ProbeFeatures assemble_features(std::span<const float> query, const std::vector<std::span<const float>>& passages,
                                int label, int layer = 0);

// Row-stacked features sharing N, d and layer.
class FeatureSet {
public:
    FeatureSet() = default;
    FeatureSet(int n, std::size_t dim, int layer) : n_(n), dim_(dim), layer_(layer) {}

    void add(const ProbeFeatures& f);
    // Appends without building an intermediate vector.
    void add(std::span<const float> query, const std::vector<std::span<const float>>& passages, int label);

    int n() const { return n_; }
    std::size_t dim() const { return dim_; }
    std::size_t feature_width() const { return static_cast<std::size_t>(n_ + 1) * dim_; }
    int layer() const { return layer_; }
    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }

    std::span<const float> row(std::size_t i) const {
        return {z_.data() + i * feature_width(), feature_width()};
    }
    int label(std::size_t i) const { return labels_[i]; }
    const std::vector<int>& labels() const { return labels_; }

    void set_label(std::size_t i, int label) { labels_[i] = label; }

private:
    int n_ = 0;
    std::size_t dim_ = 0;
    int layer_ = 0;
    std::vector<float> z_;
    std::vector<int> labels_;
};

struct Hyperparameters {
    double learning_rate = 1e-4;
    std::size_t batch_size = 32768;
    int max_epochs = 30;
    std::uint64_t seed = 42;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainingMeta {
    std::uint64_t seed = 0;
    double learning_rate = 0.0;
    std::size_t batch_size = 0;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
    bool validation_fallback = false;  // no validation data: final epoch kept
    std::vector<EpochRecord> history;
};

struct LinearProbe {
    int n = 0;
    std::size_t dim = 0;
    int layer = 0;
    std::vector<float> weight;  // n rows of (n+1)*dim
    std::vector<float> bias;
    TrainingMeta meta;

    std::size_t feature_width() const { return static_cast<std::size_t>(n + 1) * dim; }
    std::span<const float> weight_row(int j) const {
        return {weight.data() + static_cast<std::size_t>(j) * feature_width(), feature_width()};
    }
};

// Logits for one feature row.
std::vector<float> probe_logits(const LinearProbe& probe, std::span<const float> z);

// Argmax of the logits, lowest index on ties.
int probe_predict(const LinearProbe& probe, std::span<const float> z);

LinearProbe train_probe(const FeatureSet& train, const FeatureSet& validation, const Hyperparameters& hp);

double probe_accuracy(const LinearProbe& probe, const FeatureSet& data);

struct ProbeResult {
    std::string model_id;
    std::string pooling;
    int n = 0;
    int layer = 0;
    double accuracy = 0.0;
    std::vector<std::uint8_t> correct;
};

ProbeResult evaluate_probe(const LinearProbe& probe, const FeatureSet& test);

void save_probe(const LinearProbe& probe, const std::filesystem::path& path);
LinearProbe load_probe(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sweeps over (N, layer) cells.

struct VariantSplits {
    std::vector<ProbeVariant> train;
    std::vector<ProbeVariant> validation;
    std::vector<ProbeVariant> test;
};

struct SweepOptions {
    std::vector<int> n_values{2, 3, 4, 5};
    std::vector<std::uint32_t> layers;  // empty = every layer in both caches
    Hyperparameters hp;
    std::string model_label;  // empty = derived from the cache model ids
    std::string dataset = "dataset";
    unsigned threads = 1;
};

struct SweepCell {
    std::string model_id;
    std::string pooling;
    std::string dataset;
    int n = 0;
    int layer = 0;
    int best_epoch = 0;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::size_t n_test = 0;
    std::uint64_t test_fingerprint = 0;
    std::vector<std::uint8_t> correct;
    LinearProbe probe;
};

// Gathers features for one split from the caches (query texts from
// query_cache, passages from passage_cache).
FeatureSet gather_features(const EmbeddingCache& query_cache, const EmbeddingCache& passage_cache,
                           const std::vector<ProbeVariant>& variants, int n, std::uint32_t layer);

std::uint64_t test_fingerprint(const std::vector<ProbeVariant>& test);

std::vector<SweepCell> run_probe_sweep(const EmbeddingCache& query_cache, const EmbeddingCache& passage_cache,
                                       const std::map<int, VariantSplits>& variants, const SweepOptions& options);

inline constexpr const char* kResultsColumns[] = {"model_id",     "pooling",       "dataset",
                                                  "N",            "layer",         "best_epoch",
                                                  "val_accuracy", "test_accuracy", "n_test"};

// Writes results.csv, history.csv, flags/N{n}_L{layer}.rpfl and
// probes/N{n}_L{layer}.rplp under out_dir.
void write_sweep(const std::filesystem::path& out_dir, const std::vector<SweepCell>& cells);

// Per-example correctness sidecar ("RPFL1"): u32 N | u32 layer |
// u64 test fingerprint | u64 count | bit-packed flags (LSB first).
struct FlagSidecar {
    int n = 0;
    int layer = 0;
    std::uint64_t fingerprint = 0;
    std::vector<std::uint8_t> correct;
};

void write_flags(const std::filesystem::path& path, const FlagSidecar& flags);
FlagSidecar read_flags(const std::filesystem::path& path);

}  // namespace rprobe
