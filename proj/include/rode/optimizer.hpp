#pragma once

#include <cstdint>
#include <vector>

#include "rode/matrix.hpp"
#include "rode/transformer.hpp"

namespace rode {

struct TrainConfig {
    double lr = 3e-4;
    int warmup_iters = 100;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 4;
    int grad_accum = 10;
    int epochs = 1;
    std::uint64_t seed = 1;
    int total_iters = 500;

    void validate() const; // throws ConfigError
};

// Linear warmup 0 -> lr over warmup_iters, then linear decay to 0 at
// total_iters. Continuous, peak exactly lr.
double lr_at(const TrainConfig& cfg, int step);

// Decoupled weight decay, bias-corrected moments. Holds state only for the
// parameters it was given (the trainable set).
class AdamW {
public:
    AdamW(std::vector<NamedParam> params, const TrainConfig& cfg);

    // Applies one update from the accumulated grads; throws TrainingError
    // (naming the parameter) on a non-finite gradient.
    void step(double lr);

    int step_count() const { return t_; }

private:
    struct Slot {
        NamedParam param;
        Matrix m, v;
    };
    std::vector<Slot> slots_;
    double beta1_, beta2_, eps_, weight_decay_;
    int t_ = 0;
};

} // namespace rode
