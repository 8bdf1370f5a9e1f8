#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "../support/oracles.hpp"
#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/probe.hpp"
#include "rprobe/report.hpp"
#include "rprobe/stats.hpp"

using namespace rprobe;
using rprobe::testing::TempDir;

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count(const std::string& haystack, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
    return n;
}

double accuracy_of(const std::string& model, int n, int layer) {
    return 0.3 + 0.01 * layer + 0.02 * n + (model == "ft" ? 0.05 : 0.0);
}

// results.csv with the probe sweep columns for models x N x layers.
fs::path write_results(const TempDir& dir, const std::string& name, const std::vector<std::string>& models,
                       int layers, int skip_layer = -1) {
    std::string csv = io::csv_line({std::begin(kResultsColumns), std::end(kResultsColumns)});
    for (const auto& m : models) {
        for (int n = 2; n <= 5; ++n) {
            for (int l = 1; l <= layers; ++l) {
                if (m == "ft" && l == skip_layer) continue;
                csv += io::csv_line({m, "mean", "toy set", std::to_string(n), std::to_string(l), "3", "0.5",
                                     io::format_double(accuracy_of(m, n, l)), "40"});
            }
        }
    }
    const fs::path p = dir / name;
    io::write_file_atomic(p, csv);
    return p;
}

fs::path write_rollup(const TempDir& dir, const std::string& name, const std::string& model, int layers,
                      int width = 64) {
    std::string csv = io::csv_line({std::begin(kRollupColumns), std::end(kRollupColumns)});
    for (int l = 1; l <= layers; ++l) {
        for (const std::string sub : {"intermediate", "output"}) {
            csv += io::csv_line({model, std::to_string(l), sub, std::to_string(sub == "output" ? 16 : width), "10",
                                 "5", io::format_double(1.5 * l)});
        }
    }
    const fs::path p = dir / name;
    io::write_file_atomic(p, csv);
    return p;
}

}  // namespace

TEST(ProbeFigure, FourSubplotsTwelveLayersAndSidecar) {
    TempDir dir;
    FigureSpec spec;
    spec.inputs = {write_results(dir, "r.csv", {"base", "ft"}, 12)};
    spec.out_dir = dir / "fig";
    const auto outs = render_probe_accuracy(spec);
    ASSERT_EQ(outs.size(), 1u);
    EXPECT_EQ(outs[0].figure.filename(), "probe_accuracy_toy_set.svg");
    const std::string svg = slurp(outs[0].figure);
    for (int n = 2; n <= 5; ++n) EXPECT_EQ(count(svg, ">N = " + std::to_string(n) + "</text>"), 1u);
    EXPECT_EQ(count(svg, ">12</text>"), 4u);
    EXPECT_EQ(count(svg, "<polyline"), 8u);
    EXPECT_EQ(count(svg, ">*</text>"), 0u);
    EXPECT_TRUE(outs[0].warnings.empty());

    const auto side = io::read_csv(outs[0].sidecar);
    EXPECT_EQ(side.header, std::vector<std::string>(std::begin(kProbeSidecarColumns), std::end(kProbeSidecarColumns)));
    ASSERT_EQ(side.rows.size(), 2u * 4 * 12);
    for (const auto& row : side.rows) {
        EXPECT_EQ(std::stod(row[5]), accuracy_of(row[3], std::stoi(row[1]), std::stoi(row[4])));
        EXPECT_EQ(row[6], "false");
    }
}

TEST(ProbeFigure, SignificantCellsGetStars) {
    TempDir dir;
    std::vector<SignificanceCell> cells;
    for (int l : {2, 7, 11}) cells.push_back({"ft", "base", "toy set", 3, l, 1e-5, 0.05 / 12, true});
    cells.push_back({"ft", "base", "toy set", 4, 1, 0.5, 0.05 / 12, false});
    write_significance_csv(dir / "s.csv", cells);
    FigureSpec spec;
    spec.inputs = {write_results(dir, "r.csv", {"base", "ft"}, 12)};
    spec.significance = {dir / "s.csv"};
    spec.out_dir = dir / "fig";
    const auto outs = render_probe_accuracy(spec);
    EXPECT_EQ(count(slurp(outs[0].figure), ">*</text>"), 3u);
    std::size_t flagged = 0;
    for (const auto& row : io::read_csv(outs[0].sidecar).rows) flagged += row[6] == "true";
    EXPECT_EQ(flagged, 3u);
}

TEST(ProbeFigure, MissingCellsLeaveGapsAndWarnings) {
    TempDir dir;
    FigureSpec spec;
    spec.inputs = {write_results(dir, "r.csv", {"base", "ft"}, 6, 4)};
    spec.out_dir = dir / "fig";
    const auto outs = render_probe_accuracy(spec);
    EXPECT_EQ(outs[0].warnings.size(), 4u);
    EXPECT_TRUE(fs::exists(dir / "fig" / "probe_accuracy_toy_set_warnings.json"));
    EXPECT_EQ(io::read_csv(outs[0].sidecar).rows.size(), 4u * 6 + 4u * 5);
    EXPECT_EQ(count(slurp(outs[0].figure), "<polyline"), 4u + 8u);
}

TEST(ProbeFigure, DeclaredSeriesWithoutRowsRejected) {
    TempDir dir;
    FigureSpec spec;
    spec.inputs = {write_results(dir, "r.csv", {"base"}, 3)};
    spec.series = {{"Fine-tuned", "ft"}};
    spec.out_dir = dir / "fig";
    EXPECT_THROW(render_probe_accuracy(spec), ArgumentError);
}

TEST(ProbeFigure, BytesAreDeterministic) {
    TempDir dir;
    FigureSpec spec;
    spec.inputs = {write_results(dir, "r.csv", {"base", "ft"}, 4)};
    spec.out_dir = dir / "a";
    const std::string a = slurp(render_probe_accuracy(spec)[0].figure);
    spec.out_dir = dir / "b";
    EXPECT_EQ(a, slurp(render_probe_accuracy(spec)[0].figure));
}

TEST(ProbeFigure, MonochromeUsesBlackAndDashes) {
    TempDir dir;
    Style style;
    style.monochrome = true;
    FigureSpec spec;
    spec.inputs = {write_results(dir, "r.csv", {"base", "ft"}, 4)};
    spec.out_dir = dir / "fig";
    const std::string svg = slurp(render_probe_accuracy(spec, style)[0].figure);
    for (const auto& c : Style{}.palette) EXPECT_EQ(svg.find(c), std::string::npos) << c;
    EXPECT_NE(svg.find("stroke-dasharray"), std::string::npos);
}

TEST(ActivationFigure, TwoPanelsAndSidecar) {
    TempDir dir;
    FigureSpec spec;
    spec.kind = FigureKind::activation_profile;
    spec.inputs = {write_rollup(dir, "a.csv", "base", 12), write_rollup(dir, "b.csv", "ft", 12)};
    spec.out_dir = dir / "fig";
    const FigureOutput out = render_activation_profile(spec);
    const std::string svg = slurp(out.figure);
    EXPECT_EQ(count(svg, ">intermediate dense layer</text>"), 1u);
    EXPECT_EQ(count(svg, ">output dense layer</text>"), 1u);
    EXPECT_EQ(count(svg, ">12</text>"), 2u);
    const auto side = io::read_csv(out.sidecar);
    ASSERT_EQ(side.rows.size(), 2u * 2 * 12);
    for (const auto& row : side.rows) EXPECT_EQ(std::stod(row[4]), 1.5 * std::stoi(row[3]));
}

TEST(ActivationFigure, TopologyMismatchRejected) {
    TempDir dir;
    FigureSpec spec;
    spec.kind = FigureKind::activation_profile;
    spec.inputs = {write_rollup(dir, "a.csv", "base", 4), write_rollup(dir, "b.csv", "ft", 4, 32)};
    spec.out_dir = dir / "fig";
    EXPECT_THROW(render_activation_profile(spec), ComparisonError);
    spec.inputs = {write_rollup(dir, "a.csv", "base", 4), write_rollup(dir, "c.csv", "ft", 3)};
    EXPECT_THROW(render_activation_profile(spec), ComparisonError);
}

TEST(Style, JsonOverridesAndValidation) {
    const Style s = style_from_json({{"monochrome", true}, {"panel_width", 400}});
    EXPECT_TRUE(s.monochrome);
    EXPECT_EQ(s.panel_width, 400.0);
    EXPECT_EQ(s.color(3), "#000000");
    EXPECT_THROW(style_from_json({{"panel_width", 10}}), ArgumentError);
    EXPECT_THROW(style_from_json(nlohmann::json::array()), ArgumentError);
}

TEST(Report, RendersEverythingFoundUnderResults) {
    TempDir dir;
    fs::create_directories(dir / "res" / "probe");
    fs::create_directories(dir / "res" / "attr");
    io::write_file_atomic(dir / "res" / "probe" / "results.csv", slurp(write_results(dir, "r.csv", {"base", "ft"}, 3)));
    io::write_file_atomic(dir / "res" / "attr" / "activation_rollup.csv", slurp(write_rollup(dir, "a.csv", "base", 3)));
    const auto outs = render_report(dir / "res", FigureSelection::all, dir / "fig");
    EXPECT_EQ(outs.size(), 2u);
    for (const auto& o : outs) EXPECT_TRUE(fs::exists(o.figure));
    EXPECT_THROW(render_report(dir / "nope", FigureSelection::all, dir / "fig"), ArgumentError);
}
