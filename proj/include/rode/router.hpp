#pragma once

#include <vector>

#include "rode/autograd.hpp"

namespace rode {

// How router logits become gates.
//   kLinearRectified: max(Wx + b, 0)           -- exact zeros, unnormalized
//   kSoftmax:         softmax(Wx + b)          -- dense, sums to 1
//   kTopOne:          softmax prob at argmax, 0 elsewhere; gradient flows
//                     only through the selected entry
enum class RouteStrategy { kLinearRectified, kSoftmax, kTopOne };

const char* strategy_name(RouteStrategy s);
RouteStrategy strategy_from_name(const std::string& name);

struct Router {
    NodePtr weight; // n_experts x d_in
    NodePtr bias;   // n_experts x 1
    RouteStrategy strategy = RouteStrategy::kLinearRectified;

    std::size_t n_experts() const { return weight->value.rows; }
    std::size_t d_in() const { return weight->value.cols; }
    std::size_t parameter_count() const { return weight->value.size() + bias->value.size(); }
};

// Weight ~ Gaussian(0, 0.02) (variance), bias zero: with LR routing roughly
// half the gates start active.
Router make_router(std::size_t n_experts, std::size_t d_in, RouteStrategy strategy, Rng& rng);

// Gate matrix, one column per input column of x (n_experts x n_tokens).
NodePtr route(const Router& r, const NodePtr& x);

// Pre-activation logits Wx + b; exposed for kink-aware gradient checking.
NodePtr route_logits(const Router& r, const NodePtr& x);

// Fraction of gate entries with value <= threshold.
double gate_sparsity(const std::vector<double>& gates, double threshold = 0.0);

} // namespace rode
