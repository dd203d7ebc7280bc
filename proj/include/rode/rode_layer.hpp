#pragma once

#include <functional>
#include <vector>

#include "rode/lora.hpp"
#include "rode/router.hpp"

namespace rode {

// Receives each forward pass's gate matrix (n_experts x n_tokens); used to
// fill router traces without coupling this layer to the metrics module.
using GateSink = std::function<void(const Matrix&)>;

struct ForwardStats {
    std::size_t experts_evaluated = 0;
    std::size_t experts_skipped = 0; // gate exactly zero for every token
};

// Frozen base projection plus a gated bank of low-rank experts:
//   y = W0 x + sum_i gate_i * (alpha/r_i) B_i (A_i x~)
// Gates come from the router under its strategy; gradient reaches experts
// and router only, never W0.
struct RodeLayer {
    NodePtr w0; // d_out x d_in, requires_grad must be false
    std::vector<LoraExpert> experts;
    Router router;

    std::size_t d_in() const { return w0->value.cols; }
    std::size_t d_out() const { return w0->value.rows; }
};

// Builds the expert bank (one expert per entry of rank_list) and the router
// on top of an already-frozen base weight.
RodeLayer make_rode_layer(NodePtr w0, const std::vector<int>& rank_list, double alpha,
                          double dropout_rate, RouteStrategy strategy, Rng& rng);

NodePtr rode_forward(const RodeLayer& layer, const NodePtr& x, bool train_mode, Rng& rng,
                     const GateSink& sink = nullptr, ForwardStats* stats = nullptr);

// Expert mixture under externally supplied gates; rode_forward routes and
// then delegates here, so swapping the strategy never touches the expert
// computation path. Experts whose gate row is exactly zero are skipped.
NodePtr combine_with_gates(const RodeLayer& layer, const NodePtr& x, const NodePtr& gates,
                           bool train_mode, Rng& rng, ForwardStats* stats = nullptr);

// sum_i r_i * (d_in + d_out) + router parameters
std::size_t trainable_parameter_count(const RodeLayer& layer);

} // namespace rode
