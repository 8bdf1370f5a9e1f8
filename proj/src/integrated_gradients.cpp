#include "rprobe/integrated_gradients.hpp"

#include <cmath>

#include "rprobe/error.hpp"

namespace rprobe {

std::string to_string(RiemannScheme s) { return s == RiemannScheme::right_endpoint ? "right" : "trapezoid"; }

std::string to_string(IgReduction r) { return r == IgReduction::weighted ? "weighted" : "raw_integral"; }

RiemannScheme parse_riemann_scheme(const std::string& s) {
    if (s == "right" || s == "right_endpoint") return RiemannScheme::right_endpoint;
    if (s == "trapezoid") return RiemannScheme::trapezoid;
    throw ArgumentError("unknown Riemann scheme '" + s + "' (expected right or trapezoid)");
}

IgReduction parse_ig_reduction(const std::string& s) {
    if (s == "weighted") return IgReduction::weighted;
    if (s == "raw_integral" || s == "raw") return IgReduction::raw_integral;
    throw ArgumentError("unknown attribution reduction '" + s + "' (expected weighted or raw_integral)");
}

QuadratureGrid make_grid(int n_steps, RiemannScheme scheme) {
    if (n_steps < 1) throw ArgumentError("n_steps must be at least 1");
    QuadratureGrid g;
    const double m = static_cast<double>(n_steps);
    if (scheme == RiemannScheme::right_endpoint) {
        for (int k = 1; k <= n_steps; ++k) {
            g.alphas.push_back(k / m);
            g.weights.push_back(1.0 / m);
        }
    } else {
        for (int k = 0; k <= n_steps; ++k) {
            g.alphas.push_back(k / m);
            g.weights.push_back((k == 0 || k == n_steps) ? 0.5 / m : 1.0 / m);
        }
    }
    return g;
}

double reduce_attribution(std::span<const double> w, std::span<const double> averaged_gradient,
                          IgReduction reduction) {
    if (w.size() != averaged_gradient.size()) throw ArgumentError("gradient length differs from weight length");
    double total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        total += reduction == IgReduction::weighted ? w[j] * averaged_gradient[j] : averaged_gradient[j];
    }
    return total;
}

double integrated_gradient(std::span<const double> w, const PathGradient& gradient_at, int n_steps,
                           RiemannScheme scheme, IgReduction reduction) {
    const QuadratureGrid grid = make_grid(n_steps, scheme);
    std::vector<double> avg(w.size(), 0.0);
    for (std::size_t k = 0; k < grid.alphas.size(); ++k) {
        const std::vector<double> g = gradient_at(grid.alphas[k]);
        if (g.size() != w.size()) throw ArgumentError("gradient callback returned the wrong length");
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (!std::isfinite(g[j])) {
                throw AttributionError("non-finite gradient at alpha=" + std::to_string(grid.alphas[k]));
            }
            avg[j] += grid.weights[k] * g[j];
        }
    }
    return reduce_attribution(w, avg, reduction);
}

}  // namespace rprobe
