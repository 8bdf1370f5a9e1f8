#pragma once

// Integrated gradients along the straight path from 0 to a weight vector w.
//
// With a quadrature grid {(alpha_k, c_k)} approximating the integral over
// alpha in [0, 1], the path-averaged gradient is
//     g_bar = sum_k c_k * grad P(alpha_k w)
// where grad P(v) is the gradient of the scalar output w.r.t. the weight
// vector, evaluated at v. The attribution is w . g_bar (weighted, the
// knowledge-neuron convention) or sum_j g_bar_j (raw_integral).

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rprobe {

enum class RiemannScheme { right_endpoint, trapezoid };
enum class IgReduction { weighted, raw_integral };

std::string to_string(RiemannScheme s);
std::string to_string(IgReduction r);
RiemannScheme parse_riemann_scheme(const std::string& s);
IgReduction parse_ig_reduction(const std::string& s);

struct QuadratureGrid {
    std::vector<double> alphas;
    std::vector<double> weights;
};

// right_endpoint: alpha_k = k/m, c_k = 1/m for k = 1..m.
// trapezoid: alpha_k = k/m for k = 0..m with halved endpoint weights.
QuadratureGrid make_grid(int n_steps, RiemannScheme scheme);

double reduce_attribution(std::span<const double> w, std::span<const double> averaged_gradient,
                          IgReduction reduction);

using PathGradient = std::function<std::vector<double>(double alpha)>;

double integrated_gradient(std::span<const double> w, const PathGradient& gradient_at, int n_steps,
                           RiemannScheme scheme = RiemannScheme::right_endpoint,
                           IgReduction reduction = IgReduction::weighted);

}  // namespace rprobe
