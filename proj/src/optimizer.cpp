#include "rode/optimizer.hpp"

#include <cmath>
#include <string>

#include "rode/errors.hpp"

namespace rode {

void TrainConfig::validate() const {
    if (lr < 0.0) throw ConfigError("lr must be >= 0, got " + std::to_string(lr));
    if (warmup_iters < 0 || total_iters < 1)
        throw ConfigError("warmup_iters must be >= 0 and total_iters >= 1");
    if (warmup_iters > total_iters)
        throw ConfigError("warmup_iters " + std::to_string(warmup_iters) +
                          " exceeds total_iters " + std::to_string(total_iters));
    if (batch_size < 1 || grad_accum < 1)
        throw ConfigError("batch_size and grad_accum must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("betas must lie in [0, 1)");
    if (eps <= 0.0) throw ConfigError("eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
}

double lr_at(const TrainConfig& cfg, int step) {
    if (step < 0 || step > cfg.total_iters)
        throw ConfigError("lr_at: step " + std::to_string(step) + " outside [0, " +
                          std::to_string(cfg.total_iters) + "]");
    if (step <= cfg.warmup_iters) {
        if (cfg.warmup_iters == 0) return cfg.lr;
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_iters);
    }
    const double span = static_cast<double>(cfg.total_iters - cfg.warmup_iters);
    return cfg.lr * static_cast<double>(cfg.total_iters - step) / span;
}

AdamW::AdamW(std::vector<NamedParam> params, const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps), weight_decay_(cfg.weight_decay) {
    for (auto& p : params) {
        if (!p.node->requires_grad) continue; // no state for frozen parameters
        Slot s;
        s.m = Matrix::zeros(p.node->value.rows, p.node->value.cols);
        s.v = Matrix::zeros(p.node->value.rows, p.node->value.cols);
        s.param = std::move(p);
        slots_.push_back(std::move(s));
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& s : slots_) {
        Node& node = *s.param.node;
        const bool has_grad = !node.grad.data.empty();
        for (std::size_t i = 0; i < node.value.data.size(); ++i) {
            const double g = has_grad ? node.grad.data[i] : 0.0;
            if (!std::isfinite(g))
                throw TrainingError("non-finite gradient in parameter '" + s.param.name + "'");
            s.m.data[i] = beta1_ * s.m.data[i] + (1.0 - beta1_) * g;
            s.v.data[i] = beta2_ * s.v.data[i] + (1.0 - beta2_) * g * g;
            const double mhat = s.m.data[i] / bc1;
            const double vhat = s.v.data[i] / bc2;
            node.value.data[i] -=
                lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * node.value.data[i]);
        }
    }
}

} // namespace rode
