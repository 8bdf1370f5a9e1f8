#include "rprobe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include <boost/math/distributions/students_t.hpp>

#include "rprobe/error.hpp"
#include "rprobe/io.hpp"
#include "rprobe/probe.hpp"

namespace rprobe {

namespace fs = std::filesystem;

double bonferroni_alpha(std::size_t num_comparisons, double family_alpha) {
    if (num_comparisons < 1) throw ArgumentError("num_comparisons must be at least 1");
    return family_alpha / static_cast<double>(num_comparisons);
}

double paired_t_test_p_value(std::span<const std::uint8_t> flags_a, std::span<const std::uint8_t> flags_b) {
    if (flags_a.size() != flags_b.size()) {
        throw ArgumentError("flag vectors differ in length (" + std::to_string(flags_a.size()) + " vs " +
                            std::to_string(flags_b.size()) + ")");
    }
    const std::size_t n = flags_a.size();
    if (n < 2) throw InsufficientDataError("paired t-test needs at least 2 examples");

    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += static_cast<double>(flags_a[i] != 0) - (flags_b[i] != 0);
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dev = static_cast<double>(flags_a[i] != 0) - (flags_b[i] != 0) - mean;
        ss += dev * dev;
    }
    const double var = ss / static_cast<double>(n - 1);
    if (var <= 0.0) return mean == 0.0 ? 1.0 : 0.0;

    const double t = mean / std::sqrt(var / static_cast<double>(n));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
    return std::clamp(p, 0.0, 1.0);
}

SignificanceCell compare_models(std::span<const std::uint8_t> flags_a, std::span<const std::uint8_t> flags_b,
                                std::size_t num_comparisons) {
    SignificanceCell c;
    c.corrected_alpha = bonferroni_alpha(num_comparisons);
    c.p_value = paired_t_test_p_value(flags_a, flags_b);
    c.significant = c.p_value < c.corrected_alpha;
    return c;
}

std::string to_string(CorrectionScope s) { return s == CorrectionScope::layers ? "layers" : "layers_x_n"; }

CorrectionScope parse_correction_scope(const std::string& s) {
    if (s == "layers") return CorrectionScope::layers;
    if (s == "layers_x_n") return CorrectionScope::layers_x_n;
    throw ArgumentError("unknown correction scope '" + s + "' (expected layers or layers_x_n)");
}

std::vector<CellFlags> load_cell_flags(const fs::path& results_dir) {
    const io::CsvTable t = io::read_csv(results_dir / "results.csv");
    const std::size_t c_model = t.column("model_id");
    const std::size_t c_dataset = t.column("dataset");
    const std::size_t c_n = t.column("N");
    const std::size_t c_layer = t.column("layer");
    std::vector<CellFlags> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        CellFlags c;
        c.model_id = row.at(c_model);
        c.dataset = row.at(c_dataset);
        try {
            c.n = std::stoi(row.at(c_n));
            c.layer = std::stoi(row.at(c_layer));
        } catch (const std::exception&) {
            throw ParseError(r, "N/layer", "bad N or layer in " + (results_dir / "results.csv").string());
        }
        const fs::path flags_path =
            results_dir / "flags" / ("N" + std::to_string(c.n) + "_L" + std::to_string(c.layer) + ".rpfl");
        const FlagSidecar f = read_flags(flags_path);
        if (f.n != c.n || f.layer != c.layer) {
            throw ParseError(r, "flags", "flag sidecar " + flags_path.string() + " does not match its results row");
        }
        c.fingerprint = f.fingerprint;
        c.correct = f.correct;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<SignificanceCell> significance_table(const std::vector<CellFlags>& results,
                                                 const std::string& baseline_id, CorrectionScope scope) {
    using Key = std::tuple<std::string, int, int>;  // dataset, N, layer
    std::map<Key, const CellFlags*> baseline;
    for (const auto& r : results) {
        if (r.model_id == baseline_id) baseline[{r.dataset, r.n, r.layer}] = &r;
    }

    // Family sizes per (model, dataset, N) and per (model, dataset).
    std::map<std::tuple<std::string, std::string, int>, std::set<int>> layers_per_n;
    std::map<std::pair<std::string, std::string>, std::size_t> cells_per_model;
    for (const auto& r : results) {
        if (r.model_id == baseline_id) continue;
        layers_per_n[{r.model_id, r.dataset, r.n}].insert(r.layer);
        ++cells_per_model[{r.model_id, r.dataset}];
    }

    std::vector<SignificanceCell> out;
    for (const auto& r : results) {
        if (r.model_id == baseline_id) continue;
        const auto it = baseline.find({r.dataset, r.n, r.layer});
        if (it == baseline.end()) {
            throw PairingError("no baseline '" + baseline_id + "' result for model " + r.model_id + " dataset " +
                               r.dataset + " N=" + std::to_string(r.n) + " layer " + std::to_string(r.layer));
        }
        const CellFlags& b = *it->second;
        if (b.fingerprint != r.fingerprint || b.correct.size() != r.correct.size()) {
            throw PairingError("model " + r.model_id + " and baseline " + baseline_id + " were tested on different examples (N=" +
                               std::to_string(r.n) + ", layer " + std::to_string(r.layer) + ")");
        }
        const std::size_t family = scope == CorrectionScope::layers ? layers_per_n[{r.model_id, r.dataset, r.n}].size()
                                                                     : cells_per_model[{r.model_id, r.dataset}];
        SignificanceCell c = compare_models(r.correct, b.correct, family);
        c.model_id = r.model_id;
        c.baseline_id = baseline_id;
        c.dataset = r.dataset;
        c.n = r.n;
        c.layer = r.layer;
        out.push_back(std::move(c));
    }
    std::sort(out.begin(), out.end(), [](const SignificanceCell& x, const SignificanceCell& y) {
        return std::tie(x.model_id, x.dataset, x.n, x.layer) < std::tie(y.model_id, y.dataset, y.n, y.layer);
    });
    return out;
}

void write_significance_csv(const fs::path& path, const std::vector<SignificanceCell>& cells) {
    std::string s = io::csv_line({std::begin(kSignificanceColumns), std::end(kSignificanceColumns)});
    for (const auto& c : cells) {
        s += io::csv_line({c.model_id, c.baseline_id, c.dataset, std::to_string(c.n), std::to_string(c.layer),
                           io::format_double(c.p_value), io::format_double(c.corrected_alpha),
                           c.significant ? "true" : "false"});
    }
    io::write_file_atomic(path, s);
}

std::vector<SignificanceCell> read_significance_csv(const fs::path& path) {
    const io::CsvTable t = io::read_csv(path);
    std::vector<std::size_t> idx;
    for (const char* name : kSignificanceColumns) idx.push_back(t.column(name));
    std::vector<SignificanceCell> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        SignificanceCell c;
        try {
            c.model_id = row.at(idx[0]);
            c.baseline_id = row.at(idx[1]);
            c.dataset = row.at(idx[2]);
            c.n = std::stoi(row.at(idx[3]));
            c.layer = std::stoi(row.at(idx[4]));
            c.p_value = std::stod(row.at(idx[5]));
            c.corrected_alpha = std::stod(row.at(idx[6]));
            c.significant = row.at(idx[7]) == "true" || row.at(idx[7]) == "1";
        } catch (const std::exception&) {
            throw ParseError(r, "row", "malformed significance row in " + path.string());
        }
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace rprobe
