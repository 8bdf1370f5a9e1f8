#include "rprobe/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <tuple>

#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/stats.hpp"
#include "rprobe/svg.hpp"

namespace rprobe {

namespace fs = std::filesystem;

std::string Style::color(std::size_t k) const {
    if (monochrome || palette.empty()) return "#000000";
    return palette[k % palette.size()];
}

std::string Style::dash(std::size_t k) const {
    if (!monochrome || dashes.empty()) return "";
    return dashes[k % dashes.size()];
}

Style style_from_json(const nlohmann::json& j) {
    Style s;
    if (!j.is_object()) throw ArgumentError("style must be a JSON object");
    try {
        s.panel_width = j.value("panel_width", s.panel_width);
        s.panel_height = j.value("panel_height", s.panel_height);
        s.font_size = j.value("font_size", s.font_size);
        s.line_width = j.value("line_width", s.line_width);
        s.marker_size = j.value("marker_size", s.marker_size);
        s.monochrome = j.value("monochrome", s.monochrome);
        s.palette = j.value("palette", s.palette);
        s.dashes = j.value("dashes", s.dashes);
        s.background = j.value("background", s.background);
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("invalid style field: ") + e.what());
    }
    if (s.panel_width < 80 || s.panel_height < 60) throw ArgumentError("style panels are too small to draw");
    return s;
}

Style load_style(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(0, "style", "cannot parse style file " + path.string() + ": " + e.what());
    }
    return style_from_json(j);
}

namespace {

struct Series {
    std::string label;
    std::string model_id;
    std::vector<std::optional<double>> values;  // aligned with Panel::x
    std::vector<bool> stars;
};

struct Panel {
    std::string title;
    std::vector<int> x;
    std::vector<Series> series;
};

constexpr double kMarginLeft = 52.0;
constexpr double kMarginRight = 12.0;
constexpr double kMarginTop = 26.0;
constexpr double kMarginBottom = 38.0;
constexpr double kLegendHeight = 26.0;

std::string tick_label(double v, double step) {
    char buf[32];
    const int digits = step >= 1.0 ? 0 : step >= 0.1 ? 1 : step >= 0.01 ? 2 : 3;
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::pair<double, double> data_range(const Panel& p, std::optional<double> floor) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& s : p.series) {
        for (const auto& v : s.values) {
            if (!v) continue;
            lo = std::min(lo, *v);
            hi = std::max(hi, *v);
        }
    }
    if (!std::isfinite(lo)) return {0.0, 1.0};
    double span = hi - lo;
    if (span <= 0.0) span = std::max(std::fabs(hi) * 0.1, 0.05);
    lo -= 0.08 * span;
    hi += 0.15 * span;  // room for the stars
    if (floor) lo = std::max(lo, *floor);
    return {lo, hi};
}

void draw_panel(svg::Document& doc, double x0, double y0, const Panel& p, const Style& st, const std::string& y_label,
                std::optional<double> y_floor) {
    const double w = st.panel_width, h = st.panel_height;
    const double px = x0 + kMarginLeft, py = y0 + kMarginTop;
    const double pw = w - kMarginLeft - kMarginRight, ph = h - kMarginTop - kMarginBottom;
    const svg::Stroke axis{"#000000", 1.0, ""};
    const svg::Stroke grid{"#dddddd", 0.6, ""};

    doc.text(x0 + w / 2, y0 + 16, p.title, st.font_size + 1, "middle");
    const auto [lo, hi] = data_range(p, y_floor);
    auto ymap = [&](double v) { return py + ph - (v - lo) / (hi - lo) * ph; };
    const std::size_t nx = p.x.size();
    auto xmap = [&](std::size_t i) { return nx <= 1 ? px + pw / 2 : px + pw * static_cast<double>(i) / (nx - 1); };

    const double raw_step = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw_step)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (m * mag >= raw_step) {
            step = m * mag;
            break;
        }
    }
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-12; v += step) {
        doc.line(px, ymap(v), px + pw, ymap(v), grid);
        doc.text(px - 4, ymap(v) + st.font_size / 3, tick_label(v, step), st.font_size - 1, "end");
    }
    for (std::size_t i = 0; i < nx; ++i) {
        doc.line(xmap(i), py + ph, xmap(i), py + ph + 4, axis);
        doc.text(xmap(i), py + ph + 6 + st.font_size, std::to_string(p.x[i]), st.font_size - 1, "middle");
    }
    doc.line(px, py + ph, px + pw, py + ph, axis);
    doc.line(px, py, px, py + ph, axis);
    doc.text(px + pw / 2, y0 + h - 6, "layer", st.font_size, "middle");
    doc.text(x0 + 12, py + ph / 2, y_label, st.font_size, "middle", -90.0);

    for (std::size_t k = 0; k < p.series.size(); ++k) {
        const Series& s = p.series[k];
        const svg::Stroke stroke{st.color(k), st.line_width, st.dash(k)};
        std::vector<std::pair<double, double>> run;
        auto flush = [&] {
            doc.polyline(run, stroke);
            run.clear();
        };
        for (std::size_t i = 0; i < nx; ++i) {
            if (!s.values[i]) {
                flush();
                continue;
            }
            run.emplace_back(xmap(i), ymap(*s.values[i]));
        }
        flush();
        for (std::size_t i = 0; i < nx; ++i) {
            if (!s.values[i]) continue;
            const double cx = xmap(i), cy = ymap(*s.values[i]);
            if (k % 2 == 0) {
                doc.circle(cx, cy, st.marker_size, st.color(k));
            } else {
                doc.square(cx, cy, st.marker_size, st.color(k));
            }
            if (s.stars[i]) doc.text(cx, cy - st.marker_size - 3, "*", st.font_size + 3, "middle", 0.0, st.color(k));
        }
    }
}

void draw_legend(svg::Document& doc, double y, const std::vector<std::string>& labels, const Style& st) {
    double x = kMarginLeft;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        const svg::Stroke stroke{st.color(k), st.line_width, st.dash(k)};
        doc.line(x, y, x + 24, y, stroke);
        if (k % 2 == 0) {
            doc.circle(x + 12, y, st.marker_size, st.color(k));
        } else {
            doc.square(x + 12, y, st.marker_size, st.color(k));
        }
        doc.text(x + 30, y + st.font_size / 3, labels[k], st.font_size);
        x += 40 + 7.0 * static_cast<double>(labels[k].size());
    }
}

std::string slug(const std::string& s) {
    std::string out;
    for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
    return out.empty() ? "dataset" : out;
}

void write_warnings(const fs::path& path, const std::vector<std::string>& warnings) {
    if (warnings.empty()) {
        std::error_code ec;
        fs::remove(path, ec);
        return;
    }
    io::write_file_atomic(path, nlohmann::json{{"warnings", warnings}}.dump(2) + "\n");
}

// Orders series as declared in the spec, or by first appearance.
std::vector<SeriesSpec> resolve_series(const FigureSpec& spec, const std::vector<std::string>& seen) {
    if (spec.series.empty()) {
        std::vector<SeriesSpec> out;
        for (const auto& m : seen) out.push_back({m, m});
        return out;
    }
    for (const auto& s : spec.series) {
        if (std::find(seen.begin(), seen.end(), s.model_id) == seen.end()) {
            throw ArgumentError("series '" + s.label + "' (model " + s.model_id + ") has no rows in the inputs");
        }
    }
    return spec.series;
}

}  // namespace

std::vector<FigureOutput> render_probe_accuracy(const FigureSpec& spec, const Style& style) {
    // dataset -> N -> layer -> model -> accuracy
    std::map<std::string, std::map<int, std::map<int, std::map<std::string, double>>>> data;
    std::vector<std::string> seen;
    std::vector<std::string> dataset_order;
    for (const auto& path : spec.inputs) {
        const io::CsvTable t = io::read_csv(path);
        const std::size_t cm = t.column("model_id"), cd = t.column("dataset"), cn = t.column("N"),
                          cl = t.column("layer"), ca = t.column("test_accuracy");
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto& row = t.rows[r];
            try {
                const std::string& ds = row.at(cd);
                if (std::find(dataset_order.begin(), dataset_order.end(), ds) == dataset_order.end()) {
                    dataset_order.push_back(ds);
                }
                if (std::find(seen.begin(), seen.end(), row.at(cm)) == seen.end()) seen.push_back(row.at(cm));
                data[ds][std::stoi(row.at(cn))][std::stoi(row.at(cl))][row.at(cm)] = std::stod(row.at(ca));
            } catch (const std::logic_error&) {
                throw ParseError(r, "row", "malformed results row in " + path.string());
            }
        }
    }
    if (data.empty()) throw ArgumentError("no probe results to plot");
    const std::vector<SeriesSpec> series = resolve_series(spec, seen);

    std::set<std::tuple<std::string, std::string, int, int>> stars;  // model, dataset, N, layer
    for (const auto& path : spec.significance) {
        for (const auto& c : read_significance_csv(path)) {
            if (c.significant) stars.insert({c.model_id, c.dataset, c.n, c.layer});
        }
    }

    fs::create_directories(spec.out_dir);
    std::vector<FigureOutput> outputs;
    for (const auto& ds : dataset_order) {
        const auto& per_n = data.at(ds);
        FigureOutput out;
        const std::string stem = "probe_accuracy_" + slug(ds);
        out.figure = spec.out_dir / (stem + ".svg");
        out.sidecar = spec.out_dir / (stem + ".csv");
        std::string sidecar = io::csv_line({std::begin(kProbeSidecarColumns), std::end(kProbeSidecarColumns)});

        const std::size_t cols = std::min<std::size_t>(4, per_n.size());
        const std::size_t rows = (per_n.size() + cols - 1) / cols;
        svg::Document doc(style.panel_width * cols, kLegendHeight + style.panel_height * rows);
        doc.rect(0, 0, style.panel_width * cols, kLegendHeight + style.panel_height * rows, style.background);
        std::vector<std::string> labels;
        for (const auto& s : series) labels.push_back(s.label);
        draw_legend(doc, kLegendHeight / 2, labels, style);

        std::size_t p_index = 0;
        for (const auto& [n, per_layer] : per_n) {
            Panel panel;
            panel.title = "N = " + std::to_string(n);
            for (const auto& [layer, unused] : per_layer) panel.x.push_back(layer);
            for (const auto& s : series) {
                Series line{s.label, s.model_id, {}, {}};
                for (int layer : panel.x) {
                    const auto& models = per_layer.at(layer);
                    const auto it = models.find(s.model_id);
                    if (it == models.end()) {
                        out.warnings.push_back("missing result: model " + s.model_id + " dataset " + ds +
                                               " N=" + std::to_string(n) + " layer " + std::to_string(layer));
                        line.values.push_back(std::nullopt);
                        line.stars.push_back(false);
                        continue;
                    }
                    const bool star = stars.count({s.model_id, ds, n, layer}) > 0;
                    line.values.push_back(it->second);
                    line.stars.push_back(star);
                    sidecar += io::csv_line({ds, std::to_string(n), s.label, s.model_id, std::to_string(layer),
                                             io::format_double(it->second), star ? "true" : "false"});
                }
                panel.series.push_back(std::move(line));
            }
            const double x0 = style.panel_width * static_cast<double>(p_index % cols);
            const double y0 = kLegendHeight + style.panel_height * static_cast<double>(p_index / cols);
            draw_panel(doc, x0, y0, panel, style, "accuracy", std::nullopt);
            ++p_index;
        }
        io::write_file_atomic(out.figure, doc.str());
        io::write_file_atomic(out.sidecar, sidecar);
        write_warnings(spec.out_dir / (stem + "_warnings.json"), out.warnings);
        outputs.push_back(std::move(out));
    }
    return outputs;
}

FigureOutput render_activation_profile(const FigureSpec& spec, const Style& style) {
    // model -> (layer, sublayer) -> (neuron_count, percentage)
    std::map<std::string, std::map<std::pair<int, std::string>, std::pair<long, double>>> data;
    std::vector<std::string> seen;
    for (const auto& path : spec.inputs) {
        const io::CsvTable t = io::read_csv(path);
        const std::size_t cm = t.column("model_id"), cl = t.column("layer"), cs = t.column("sublayer"),
                          cc = t.column("neuron_count"), cp = t.column("activation_percentage");
        for (std::size_t r = 0; r < t.rows.size(); ++r) {
            const auto& row = t.rows[r];
            try {
                const std::string& sub = row.at(cs);
                if (sub != "intermediate" && sub != "output") throw std::invalid_argument(sub);
                if (std::find(seen.begin(), seen.end(), row.at(cm)) == seen.end()) seen.push_back(row.at(cm));
                data[row.at(cm)][{std::stoi(row.at(cl)), sub}] = {std::stol(row.at(cc)), std::stod(row.at(cp))};
            } catch (const std::logic_error&) {
                throw ParseError(r, "row", "malformed activation rollup row in " + path.string());
            }
        }
    }
    if (data.empty()) throw ArgumentError("no activation summaries to plot");
    const std::vector<SeriesSpec> series = resolve_series(spec, seen);

    // Every compared model must expose the same layers and sub-layer widths.
    const auto& reference = data.at(series.front().model_id);
    for (const auto& s : series) {
        const auto& cells = data.at(s.model_id);
        bool same = cells.size() == reference.size();
        for (auto a = cells.begin(), b = reference.begin(); same && a != cells.end(); ++a, ++b) {
            same = a->first == b->first && a->second.first == b->second.first;
        }
        if (!same) {
            throw ComparisonError("model " + s.model_id + " has a different layer/neuron topology than " +
                                  series.front().model_id);
        }
    }
    std::set<int> layers;
    std::set<std::string> kinds;
    for (const auto& [key, unused] : reference) {
        layers.insert(key.first);
        kinds.insert(key.second);
    }
    if (kinds.size() != 2) throw ArgumentError("activation summary must cover both intermediate and output sub-layers");

    fs::create_directories(spec.out_dir);
    FigureOutput out;
    out.figure = spec.out_dir / "activation_profile.svg";
    out.sidecar = spec.out_dir / "activation_profile.csv";
    std::string sidecar = io::csv_line({std::begin(kActivationSidecarColumns), std::end(kActivationSidecarColumns)});

    svg::Document doc(style.panel_width * 2, kLegendHeight + style.panel_height);
    doc.rect(0, 0, style.panel_width * 2, kLegendHeight + style.panel_height, style.background);
    std::vector<std::string> labels;
    for (const auto& s : series) labels.push_back(s.label);
    draw_legend(doc, kLegendHeight / 2, labels, style);

    std::size_t p_index = 0;
    for (const std::string sub : {"intermediate", "output"}) {
        Panel panel;
        panel.title = sub + " dense layer";
        panel.x.assign(layers.begin(), layers.end());
        for (const auto& s : series) {
            Series line{s.label, s.model_id, {}, {}};
            for (int layer : panel.x) {
                const double pct = data.at(s.model_id).at({layer, sub}).second;
                line.values.push_back(pct);
                line.stars.push_back(false);
                sidecar += io::csv_line({sub, s.label, s.model_id, std::to_string(layer), io::format_double(pct)});
            }
            panel.series.push_back(std::move(line));
        }
        draw_panel(doc, style.panel_width * static_cast<double>(p_index), kLegendHeight, panel, style,
                   "activated neurons (%)", 0.0);
        ++p_index;
    }
    io::write_file_atomic(out.figure, doc.str());
    io::write_file_atomic(out.sidecar, sidecar);
    return out;
}

FigureSelection parse_figure_selection(const std::string& s) {
    if (s == "probe") return FigureSelection::probe;
    if (s == "activation") return FigureSelection::activation;
    if (s == "all") return FigureSelection::all;
    throw ArgumentError("unknown figure selection '" + s + "' (expected probe, activation or all)");
}

std::vector<FigureOutput> render_report(const fs::path& results_dir, FigureSelection which, const fs::path& out_dir,
                                        const Style& style) {
    if (!fs::is_directory(results_dir)) throw ArgumentError("results directory not found: " + results_dir.string());
    std::vector<fs::path> results, significance, rollups;
    for (const auto& entry : fs::recursive_directory_iterator(results_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name == "results.csv") results.push_back(entry.path());
        if (name == "significance.csv") significance.push_back(entry.path());
        if (name == "activation_rollup.csv") rollups.push_back(entry.path());
    }
    std::sort(results.begin(), results.end());
    std::sort(significance.begin(), significance.end());
    std::sort(rollups.begin(), rollups.end());

    std::vector<FigureOutput> outputs;
    if (which != FigureSelection::activation) {
        if (results.empty()) throw ArgumentError("no results.csv under " + results_dir.string());
        FigureSpec spec{FigureKind::probe_accuracy, results, significance, {}, out_dir};
        for (auto& o : render_probe_accuracy(spec, style)) outputs.push_back(std::move(o));
    }
    if (which != FigureSelection::probe) {
        if (rollups.empty()) throw ArgumentError("no activation_rollup.csv under " + results_dir.string());
        FigureSpec spec{FigureKind::activation_profile, rollups, {}, {}, out_dir};
        outputs.push_back(render_activation_profile(spec, style));
    }
    return outputs;
}

}  // namespace rprobe
