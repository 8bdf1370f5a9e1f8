#pragma once

// Figures from the results tables. Every figure is written as SVG next to
// a sidecar CSV that holds exactly the plotted numbers.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rprobe {

struct Style {
    double panel_width = 300.0;
    double panel_height = 220.0;
    double font_size = 11.0;
    double line_width = 1.6;
    double marker_size = 3.0;
    bool monochrome = false;
    std::vector<std::string> palette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::vector<std::string> dashes{"", "6 3", "2 2", "8 3 2 3"};
    std::string background = "#ffffff";

    // Colour and dash pattern for the k-th series.
    std::string color(std::size_t k) const;
    std::string dash(std::size_t k) const;
};

Style style_from_json(const nlohmann::json& j);
Style load_style(const std::filesystem::path& path);

enum class FigureKind { probe_accuracy, activation_profile };

struct SeriesSpec {
    std::string label;
    std::string model_id;
};

struct FigureSpec {
    FigureKind kind = FigureKind::probe_accuracy;
    std::vector<std::filesystem::path> inputs;
    std::vector<std::filesystem::path> significance;  // probe_accuracy only
    std::vector<SeriesSpec> series;                   // empty = every model in the inputs
    std::filesystem::path out_dir;
};

struct FigureOutput {
    std::filesystem::path figure;
    std::filesystem::path sidecar;
    std::vector<std::string> warnings;  // also written to <stem>_warnings.json when non-empty
};

inline constexpr const char* kProbeSidecarColumns[] = {"dataset", "N",        "series",     "model_id",
                                                       "layer",   "accuracy", "significant"};
inline constexpr const char* kActivationSidecarColumns[] = {"panel", "series", "model_id", "layer",
                                                            "activation_percentage"};

// One figure per dataset, one sub-plot per N; writes
// probe_accuracy_<dataset>.{svg,csv}.
std::vector<FigureOutput> render_probe_accuracy(const FigureSpec& spec, const Style& style = {});

// Paired intermediate/output panels; writes activation_profile.{svg,csv}.
FigureOutput render_activation_profile(const FigureSpec& spec, const Style& style = {});

enum class FigureSelection { probe, activation, all };
FigureSelection parse_figure_selection(const std::string& s);

// Finds results.csv, significance.csv and activation_rollup.csv files under
// results_dir and renders the selected figures into out_dir.
std::vector<FigureOutput> render_report(const std::filesystem::path& results_dir, FigureSelection which,
                                        const std::filesystem::path& out_dir, const Style& style = {});

}  // namespace rprobe
