#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rode/optimizer.hpp"
#include "rode/tasks.hpp"
#include "rode/transformer.hpp"

namespace rode {

struct StepRecord {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
    std::array<double, kNumTasks> task_loss{}; // mean NLL per task, 0 when absent
};

struct TrainResult {
    std::vector<StepRecord> log;
    bool aborted = false;
    std::string abort_reason;
};

// Loss for one micro-batch: per-sample mean NLL pooled over all target
// tokens of the micro-batch (token-weighted), so accumulation over
// micro-batches equals one step over their concatenation.
struct MicroLoss {
    NodePtr loss;
    std::array<double, kNumTasks> task_nll_sum{};
    std::array<int, kNumTasks> task_tokens{};
    int total_tokens = 0;
};

MicroLoss build_micro_loss(ToyTransformer& model, const std::vector<TaskSample>& batch,
                           bool train_mode, Rng& dropout_rng);

// Trains whatever is currently trainable in the model: the full base before
// freezing, adapters and routers after. Aborts on non-finite loss or
// gradient with the parameters restored to the last completed step.
TrainResult train(ToyTransformer& model, const SyntheticWorld& world, const TrainConfig& cfg,
                  const std::array<double, kNumTasks>& task_mix, Rng& rng);

// --- gradient checking -------------------------------------------------------

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0; // kink-masked entries
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double tolerance = 0.0;
    bool frozen_grads_zero = true;
    bool pass = true;

    std::string summary() const;
};

// Central finite differences (eps = 1e-5) against analytic gradients for
// every trainable parameter entry, grouped by parameter. An entry is skipped
// when the perturbation flips a relu input sign or switches a top-1
// selection (crossing the kink), or when a router pre-activation at the
// base point is within kink_threshold of zero. Runs in eval mode.
GradCheckReport grad_check(ToyTransformer& model, const TaskSample& sample,
                           double tolerance = 1e-3, double kink_threshold = 1e-3);

// Same check against an arbitrary scalar loss builder over explicit
// parameters; the model overload wraps this. `extra_skip` marks entries to
// exclude up front (counted as skipped).
using EntrySkip = std::function<bool(const NamedParam&, std::size_t)>;
GradCheckReport grad_check_custom(const std::vector<NamedParam>& params,
                                  const std::function<NodePtr()>& loss_builder, double tolerance,
                                  double kink_threshold, const EntrySkip& extra_skip = nullptr);

} // namespace rode
