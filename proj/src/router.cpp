#include "rode/router.hpp"

#include <cmath>
#include <string>

#include "rode/errors.hpp"

namespace rode {

const char* strategy_name(RouteStrategy s) {
    switch (s) {
    case RouteStrategy::kLinearRectified: return "lr";
    case RouteStrategy::kSoftmax: return "softmax";
    case RouteStrategy::kTopOne: return "top1";
    }
    return "unknown";
}

RouteStrategy strategy_from_name(const std::string& name) {
    if (name == "lr") return RouteStrategy::kLinearRectified;
    if (name == "softmax") return RouteStrategy::kSoftmax;
    if (name == "top1") return RouteStrategy::kTopOne;
    throw ConfigError("unknown routing strategy '" + name + "' (expected lr, softmax or top1)");
}

Router make_router(std::size_t n_experts, std::size_t d_in, RouteStrategy strategy, Rng& rng) {
    Router r;
    r.strategy = strategy;
    r.weight = make_leaf(Matrix::gaussian(n_experts, d_in, 0.0, 0.02, rng), true);
    r.bias = make_leaf(Matrix::zeros(n_experts, 1), true);
    return r;
}

NodePtr route_logits(const Router& r, const NodePtr& x) {
    return add_bias(matmul(r.weight, x), r.bias);
}

NodePtr route(const Router& r, const NodePtr& x) {
    NodePtr logits = route_logits(r, x);
    switch (r.strategy) {
    case RouteStrategy::kLinearRectified: return relu(logits);
    case RouteStrategy::kSoftmax: return softmax_columns(logits);
    case RouteStrategy::kTopOne: return top1_columns(logits);
    }
    throw ConfigError("route: invalid strategy");
}

double gate_sparsity(const std::vector<double>& gates, double threshold) {
    if (gates.empty()) return 0.0;
    std::size_t zeros = 0;
    for (double g : gates)
        if (g <= threshold) ++zeros;
    return static_cast<double>(zeros) / static_cast<double>(gates.size());
}

} // namespace rode
