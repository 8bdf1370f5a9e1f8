#pragma once

// Integrated-gradient attribution for the neurons of the two dense
// sub-layers of every transformer block.
//
// Neuron i of the intermediate sub-layer owns row i of W_in (length d);
// neuron i of the output sub-layer owns row i of W_out (length F). Scaling
// that row by alpha while every other parameter stays fixed defines the
// path; the scalar output is read from the final-layer pooled embedding.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rprobe/encoder.hpp"
#include "rprobe/integrated_gradients.hpp"
#include "rprobe/model.hpp"

namespace rprobe {

enum class Sublayer { intermediate, output };

std::string to_string(Sublayer s);
Sublayer parse_sublayer(const std::string& s);

struct NeuronAddress {
    std::size_t layer = 1;  // 1-based block index
    Sublayer sublayer = Sublayer::intermediate;
    std::size_t index = 0;

    auto operator<=>(const NeuronAddress&) const = default;
};

// frozen_dot: P = <e_alpha, e_hat> with e_hat the unperturbed embedding.
// embedding_norm: P = ||e_alpha||^2.
enum class ScalarTarget { frozen_dot, embedding_norm };

std::string to_string(ScalarTarget t);
ScalarTarget parse_scalar_target(const std::string& s);

struct Topology {
    std::size_t num_layers = 0;
    std::size_t intermediate_width = 0;
    std::size_t output_width = 0;

    std::size_t width(Sublayer s) const { return s == Sublayer::intermediate ? intermediate_width : output_width; }
    std::size_t neuron_count() const { return num_layers * (intermediate_width + output_width); }
    bool operator==(const Topology&) const = default;
};

Topology topology_of(const Transformer& model);

struct AttributionRecord {
    std::string example_id;
    int n_steps = 0;
    ScalarTarget scalar_target = ScalarTarget::frozen_dot;
    Topology topology;
    // [layer-1][index]; values are held at float32 precision.
    std::vector<std::vector<double>> intermediate;
    std::vector<std::vector<double>> output;

    double score(const NeuronAddress& a) const;
    double& score(const NeuronAddress& a);
    std::size_t size() const { return topology.neuron_count(); }
};

AttributionRecord make_empty_record(const Topology& topology);

struct AttributionOptions {
    int n_steps = 20;
    RiemannScheme scheme = RiemannScheme::right_endpoint;
    IgReduction reduction = IgReduction::weighted;
    ScalarTarget scalar_target = ScalarTarget::frozen_dot;
    // Upper bound on perturbed sequences evaluated together; 0 derives it
    // from memory_budget_mb.
    std::size_t max_batch_sequences = 0;
    std::size_t memory_budget_mb = 1024;
    unsigned threads = 1;
};

// Unperturbed state of one input, shared by every neuron's path.
struct ExampleContext {
    std::vector<int> tokens;
    ForwardState base;
    std::vector<double> frozen_embedding;
};

class AttributionEngine {
public:
    AttributionEngine(std::shared_ptr<const Transformer> model, Pooling pooling, AttributionOptions options = {});

    const Transformer& model() const { return *model_; }
    Pooling pooling() const { return pooling_; }
    const AttributionOptions& options() const { return options_; }
    Topology topology() const { return topology_of(*model_); }

    ExampleContext prepare(std::vector<int> tokens) const;

    // P_x with the addressed neuron's weight vector scaled by alpha.
    double scalar_output(const ExampleContext& ctx, const NeuronAddress& address, double alpha) const;

    // dP/dv at v = alpha * w for the addressed neuron's weight vector w.
    std::vector<double> neuron_gradient(const ExampleContext& ctx, const NeuronAddress& address,
                                        double alpha) const;

    double integrated_gradient_attribution(const ExampleContext& ctx, const NeuronAddress& address) const;

    // Attributions for several neurons of one sub-layer, evaluated as
    // batches of perturbed sequences.
    std::vector<double> attribute_neurons(const ExampleContext& ctx, std::size_t layer, Sublayer sublayer,
                                          const std::vector<std::size_t>& indices) const;

    AttributionRecord attribute_example(const std::string& example_id, const ExampleContext& ctx) const;

    // Weight vector of a neuron (row of W_in or W_out).
    std::vector<double> neuron_weights(const NeuronAddress& address) const;

    void validate(const NeuronAddress& address) const;

private:
    struct PathJob {
        std::size_t neuron_slot;
        std::size_t index;
        double alpha;
        double weight;
    };

    // Runs the perturbed forward/backward for a batch of (neuron, alpha)
    // jobs of one sub-layer; returns P per job and accumulates c_k * grad
    // into gradient_sums[neuron_slot].
    void run_batch(const ExampleContext& ctx, std::size_t layer0, Sublayer sublayer,
                   const std::vector<PathJob>& jobs, std::vector<double>* outputs,
                   std::vector<std::vector<double>>* gradient_sums) const;

    std::size_t batch_limit(const ExampleContext& ctx, std::size_t layer0) const;
    double target_value(std::span<const double> e, std::span<const double> frozen) const;

    std::shared_ptr<const Transformer> model_;
    Pooling pooling_;
    AttributionOptions options_;
};

// Addresses whose raw score reaches tau * (maximum raw score of the record).
// A record whose maximum is not positive yields the empty set.
std::vector<NeuronAddress> normalize_and_threshold(const AttributionRecord& record, double tau);

struct ActivationSummary {
    Topology topology;
    double threshold = 0.0;
    std::size_t example_count = 0;
    // [layer-1][index] fraction of examples in which the neuron was active
    std::vector<std::vector<double>> intermediate_frequency;
    std::vector<std::vector<double>> output_frequency;
    // [layer-1] active (neuron, example) pairs per sub-layer
    std::vector<std::size_t> intermediate_active_total;
    std::vector<std::size_t> output_active_total;

    double frequency(const NeuronAddress& a) const;
    // Mean neuron activation frequency of one sub-layer, as a percentage.
    double layer_percentage(std::size_t layer, Sublayer s) const;
};

ActivationSummary aggregate_activation_frequency(const std::vector<std::vector<NeuronAddress>>& active_sets,
                                                 const Topology& topology, double threshold = 0.0);

// Per-example binary records ("RPAT1") and their manifest.
void write_attribution_record(const std::filesystem::path& path, const AttributionRecord& record);
AttributionRecord read_attribution_record(const std::filesystem::path& path);

inline constexpr const char* kSummaryColumns[] = {"layer", "sublayer", "neuron_index", "activation_frequency"};
inline constexpr const char* kRollupColumns[] = {"model_id",      "layer",        "sublayer",
                                                 "neuron_count",  "example_count", "active_total",
                                                 "activation_percentage"};

void write_activation_summary(const std::filesystem::path& summary_csv, const std::filesystem::path& rollup_csv,
                              const ActivationSummary& summary, const std::string& model_id);

}  // namespace rprobe
