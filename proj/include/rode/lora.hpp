#pragma once

#include "rode/autograd.hpp"

namespace rode {

// One low-rank adapter expert: down-projection A (rank x d_in), up-projection
// B (d_out x rank), output scaled by alpha / rank. B starts at zero so a
// fresh expert contributes nothing and the adapted layer equals the frozen
// layer at step 0.
struct LoraExpert {
    NodePtr a_down;
    NodePtr b_up;
    int rank = 0;
    double alpha = 0.0;
    double dropout_rate = 0.0;

    std::size_t d_in() const { return a_down->value.cols; }
    std::size_t d_out() const { return b_up->value.rows; }
    double scale() const { return alpha / static_cast<double>(rank); }
};

// A ~ Gaussian(0, 1/rank) (variance), B = 0.
LoraExpert make_expert(std::size_t d_in, std::size_t d_out, int rank, double alpha,
                       double dropout_rate, Rng& rng);

// (alpha/rank) * B (A x~), where x~ is x after inverted dropout in train mode.
NodePtr expert_forward(const LoraExpert& e, const NodePtr& x, bool train_mode, Rng& rng);

// rank * (d_in + d_out)
std::size_t expert_parameter_count(const LoraExpert& e);

} // namespace rode
