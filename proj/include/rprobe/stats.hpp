#pragma once

// Paired significance tests between a fine-tuned model's probe results and
// its backbone's, with Bonferroni correction.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rprobe {

struct SignificanceCell {
    std::string model_id;
    std::string baseline_id;
    std::string dataset;
    int n = 0;
    int layer = 0;
    double p_value = 1.0;
    double corrected_alpha = 0.05;
    bool significant = false;
};

inline constexpr double kFamilyAlpha = 0.05;

double bonferroni_alpha(std::size_t num_comparisons, double family_alpha = kFamilyAlpha);

// Two-tailed paired t-test on a_i - b_i. A zero-variance difference vector
// gives p = 1 when its mean is zero and p = 0 otherwise.
double paired_t_test_p_value(std::span<const std::uint8_t> flags_a, std::span<const std::uint8_t> flags_b);

SignificanceCell compare_models(std::span<const std::uint8_t> flags_a, std::span<const std::uint8_t> flags_b,
                                std::size_t num_comparisons);

enum class CorrectionScope { layers, layers_x_n };

std::string to_string(CorrectionScope s);
CorrectionScope parse_correction_scope(const std::string& s);

// Per-example correctness of one probe cell.
struct CellFlags {
    std::string model_id;
    std::string dataset;
    int n = 0;
    int layer = 0;
    std::uint64_t fingerprint = 0;
    std::vector<std::uint8_t> correct;
};

// Reads results.csv plus the flag sidecars of one train-probe output
// directory.
std::vector<CellFlags> load_cell_flags(const std::filesystem::path& results_dir);

// One cell per non-baseline (model, dataset, N, layer). The family size is
// the number of layers of that (model, dataset, N) sweep, or of all its
// (N, layer) cells under layers_x_n.
std::vector<SignificanceCell> significance_table(const std::vector<CellFlags>& results,
                                                 const std::string& baseline_id,
                                                 CorrectionScope scope = CorrectionScope::layers);

inline constexpr const char* kSignificanceColumns[] = {"model",  "baseline", "dataset",         "N",
                                                       "layer",  "p_value",  "corrected_alpha", "significant"};

void write_significance_csv(const std::filesystem::path& path, const std::vector<SignificanceCell>& cells);
std::vector<SignificanceCell> read_significance_csv(const std::filesystem::path& path);

}  // namespace rprobe
