#include "rode/rode_layer.hpp"

#include <string>

#include "rode/errors.hpp"

namespace rode {

RodeLayer make_rode_layer(NodePtr w0, const std::vector<int>& rank_list, double alpha,
                          double dropout_rate, RouteStrategy strategy, Rng& rng) {
    if (w0->requires_grad)
        throw ConfigError("rode layer base weight must be frozen before experts attach");
    RodeLayer layer;
    layer.w0 = std::move(w0);
    const std::size_t d_in = layer.d_in(), d_out = layer.d_out();
    Rng expert_rng = rng.split("experts");
    for (std::size_t i = 0; i < rank_list.size(); ++i) {
        Rng er = expert_rng.split(i);
        layer.experts.push_back(make_expert(d_in, d_out, rank_list[i], alpha, dropout_rate, er));
    }
    Rng router_rng = rng.split("router");
    layer.router = make_router(rank_list.size(), d_in, strategy, router_rng);
    return layer;
}

NodePtr combine_with_gates(const RodeLayer& layer, const NodePtr& x, const NodePtr& gates,
                           bool train_mode, Rng& rng, ForwardStats* stats) {
    if (x->value.rows != layer.d_in())
        throw DimensionError("rode layer: input has " + std::to_string(x->value.rows) +
                             " rows, layer expects " + std::to_string(layer.d_in()));
    if (gates->value.rows != layer.experts.size() || gates->value.cols != x->value.cols)
        throw DimensionError("rode layer: gate matrix must be " +
                             std::to_string(layer.experts.size()) + "x" +
                             std::to_string(x->value.cols));
    NodePtr out = matmul(layer.w0, x);
    for (std::size_t i = 0; i < layer.experts.size(); ++i) {
        bool all_zero = true;
        for (std::size_t t = 0; t < gates->value.cols; ++t)
            if (gates->value.at(i, t) != 0.0) {
                all_zero = false;
                break;
            }
        if (all_zero) {
            // Exact-zero gates carry no gradient under LR/Top-1, so the
            // expert never needs to run.
            if (stats) ++stats->experts_skipped;
            continue;
        }
        if (stats) ++stats->experts_evaluated;
        NodePtr contribution = expert_forward(layer.experts[i], x, train_mode, rng);
        out = add(out, scale_columns(contribution, row(gates, i)));
    }
    return out;
}

NodePtr rode_forward(const RodeLayer& layer, const NodePtr& x, bool train_mode, Rng& rng,
                     const GateSink& sink, ForwardStats* stats) {
    NodePtr gates = route(layer.router, x);
    if (sink) sink(gates->value);
    return combine_with_gates(layer, x, gates, train_mode, rng, stats);
}

std::size_t trainable_parameter_count(const RodeLayer& layer) {
    std::size_t n = layer.router.parameter_count();
    for (const auto& e : layer.experts) n += expert_parameter_count(e);
    return n;
}

} // namespace rode
