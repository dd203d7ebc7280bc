#include "rode/lora.hpp"

#include <cmath>
#include <string>

#include "rode/errors.hpp"

namespace rode {

LoraExpert make_expert(std::size_t d_in, std::size_t d_out, int rank, double alpha,
                       double dropout_rate, Rng& rng) {
    if (rank < 1)
        throw ConfigError("expert rank must be >= 1, got " + std::to_string(rank));
    if (static_cast<std::size_t>(rank) > std::min(d_in, d_out))
        throw ConfigError("expert rank " + std::to_string(rank) + " exceeds min(d_in, d_out) = " +
                          std::to_string(std::min(d_in, d_out)));
    if (alpha <= 0.0)
        throw ConfigError("expert alpha must be positive, got " + std::to_string(alpha));
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("expert dropout rate must be in [0, 1), got " +
                          std::to_string(dropout_rate));
    LoraExpert e;
    e.rank = rank;
    e.alpha = alpha;
    e.dropout_rate = dropout_rate;
    const double stddev = 1.0 / std::sqrt(static_cast<double>(rank));
    e.a_down = make_leaf(Matrix::gaussian(static_cast<std::size_t>(rank), d_in, 0.0, stddev, rng),
                         true);
    e.b_up = make_leaf(Matrix::zeros(d_out, static_cast<std::size_t>(rank)), true);
    return e;
}

NodePtr expert_forward(const LoraExpert& e, const NodePtr& x, bool train_mode, Rng& rng) {
    if (x->value.rows != e.d_in())
        throw DimensionError("expert_forward: input has " + std::to_string(x->value.rows) +
                             " rows, expert expects " + std::to_string(e.d_in()));
    NodePtr xin = dropout(x, e.dropout_rate, rng, train_mode);
    return scale_by_constant(matmul(e.b_up, matmul(e.a_down, xin)), e.scale());
}

std::size_t expert_parameter_count(const LoraExpert& e) {
    return static_cast<std::size_t>(e.rank) * (e.d_in() + e.d_out());
}

} // namespace rode
