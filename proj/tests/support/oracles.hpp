#pragma once

// Reference implementations used only by the tests. They deliberately take
// the slow, obvious route so the library's fast paths can be checked
// against them.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rprobe/attribution.hpp"
#include "rprobe/encoder.hpp"
#include "rprobe/model.hpp"
#include "rprobe/probe.hpp"

namespace rprobe::testing {

TransformerConfig toy_config(std::size_t hidden = 16, std::size_t layers = 2, std::size_t heads = 2,
                             std::size_t intermediate = 32, Architecture arch = Architecture::encoder_only);

std::vector<int> toy_tokens(const TransformerConfig& c, std::size_t count, std::uint64_t seed);

// Copy of the model with the neuron's weight vector replaced by v.
Transformer with_neuron_weights(const Transformer& model, const NeuronAddress& a, std::span<const double> v);

// Pooled final-layer embedding from a full forward pass.
std::vector<double> pooled_output(const Transformer& model, std::span<const int> tokens, Pooling pooling);

// Scalar target evaluated by a full forward pass of a weight-edited copy.
double surgery_scalar(const Transformer& model, std::span<const int> tokens, Pooling pooling, ScalarTarget target,
                      const NeuronAddress& a, std::span<const double> v);

// Gradient w.r.t. the neuron's weight vector at v, from a full forward and
// the per-block backward of a weight-edited copy.
std::vector<double> surgery_gradient(const Transformer& model, std::span<const int> tokens, Pooling pooling,
                                     ScalarTarget target, const NeuronAddress& a, std::span<const double> v);

// Central finite differences of surgery_scalar.
std::vector<double> finite_difference_gradient(const Transformer& model, std::span<const int> tokens,
                                               Pooling pooling, ScalarTarget target, const NeuronAddress& a,
                                               std::span<const double> v, double h);

// Neuron-by-neuron integrated gradient built from surgery_gradient.
double sequential_attribution(const Transformer& model, std::span<const int> tokens, Pooling pooling,
                              const NeuronAddress& a, const AttributionOptions& options);

// Two-pass thresholding: find the maximum, then scan again.
std::vector<NeuronAddress> brute_force_threshold(const AttributionRecord& record, double tau);

// Per-neuron counts by direct scan over every example's active list.
std::vector<std::vector<double>> counting_frequency(const std::vector<std::vector<NeuronAddress>>& sets,
                                                    const Topology& topo, Sublayer sublayer);

AttributionRecord random_record(const Topology& topo, std::uint64_t seed);

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);

// Two-tailed Student-t p-value for statistic t with df degrees of freedom.
double student_t_two_tailed(double t, double df);

// Paired t-test recomputed from scratch (independent of Boost).
double reference_paired_p(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

// Synthetic DPR-style corpus with `records` queries whose negative counts
// are drawn from [min_neg, max_neg]. Returns the number of records with no
// usable negatives.
std::size_t write_synthetic_corpus(const std::filesystem::path& path, std::size_t records, std::uint64_t seed,
                                   int min_neg = 0, int max_neg = 10, const std::string& id_prefix = "q");

// N-way features whose positive passage is recoverable by a linear map.
FeatureSet separable_features(int n, std::size_t dim, std::size_t count, std::uint64_t seed);

// Features and labels drawn independently.
FeatureSet random_features(int n, std::size_t dim, std::size_t count, std::uint64_t seed);

struct TempDir {
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

}  // namespace rprobe::testing
