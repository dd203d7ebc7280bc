#include "rode/trainer.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "rode/errors.hpp"

namespace rode {

MicroLoss build_micro_loss(ToyTransformer& model, const std::vector<TaskSample>& batch,
                           bool train_mode, Rng& dropout_rng) {
    if (batch.empty()) throw DataError("build_micro_loss: empty batch");
    MicroLoss ml;
    std::vector<NodePtr> sample_losses;
    std::vector<int> sample_tokens;
    for (const auto& s : batch) {
        NodePtr ce = model.autoregressive_loss(s.prompt, s.target, train_mode, dropout_rng);
        const int n = static_cast<int>(s.target.size());
        sample_losses.push_back(ce);
        sample_tokens.push_back(n);
        ml.total_tokens += n;
        const int t = static_cast<int>(s.task_id);
        ml.task_nll_sum[t] += ce->value.at(0, 0) * n;
        ml.task_tokens[t] += n;
    }
    // token-weighted pooling: mean NLL over every target token in the batch
    NodePtr loss;
    for (std::size_t i = 0; i < sample_losses.size(); ++i) {
        NodePtr weighted = scale_by_constant(
            sample_losses[i], static_cast<double>(sample_tokens[i]) / ml.total_tokens);
        loss = loss ? add(loss, weighted) : weighted;
    }
    ml.loss = loss;
    return ml;
}

TrainResult train(ToyTransformer& model, const SyntheticWorld& world, const TrainConfig& cfg,
                  const std::array<double, kNumTasks>& task_mix, Rng& rng) {
    cfg.validate();
    TrainResult res;
    AdamW opt(model.trainable_parameters(), cfg);
    Rng data_rng = rng.split("data");
    Rng drop_rng = rng.split("dropout");

    auto trainable = model.trainable_parameters();
    auto snapshot = [&] {
        std::vector<Matrix> s;
        s.reserve(trainable.size());
        for (auto& p : trainable) s.push_back(p.node->value);
        return s;
    };
    auto restore = [&](const std::vector<Matrix>& s) {
        for (std::size_t i = 0; i < trainable.size(); ++i) trainable[i].node->value = s[i];
    };
    std::vector<Matrix> last_good = snapshot();

    const Matrix seed(1, 1, 1.0 / cfg.grad_accum);
    for (int step = 1; step <= cfg.total_iters; ++step) {
        model.zero_grads();
        StepRecord rec;
        rec.step = step;
        double loss_sum = 0.0;
        std::array<double, kNumTasks> task_nll{};
        std::array<int, kNumTasks> task_tok{};
        try {
            for (int m = 0; m < cfg.grad_accum; ++m) {
                auto batch = sample_batch(world, task_mix, cfg.batch_size, data_rng);
                MicroLoss ml = build_micro_loss(model, batch, true, drop_rng);
                if (!std::isfinite(ml.loss->value.at(0, 0)))
                    throw TrainingError("non-finite loss at step " + std::to_string(step));
                backward(ml.loss, seed);
                loss_sum += ml.loss->value.at(0, 0);
                for (int t = 0; t < kNumTasks; ++t) {
                    task_nll[t] += ml.task_nll_sum[t];
                    task_tok[t] += ml.task_tokens[t];
                }
            }
            rec.lr = lr_at(cfg, step);
            opt.step(rec.lr);
        } catch (const std::runtime_error& e) {
            restore(last_good);
            res.aborted = true;
            res.abort_reason = e.what();
            return res;
        }
        rec.loss = loss_sum / cfg.grad_accum;
        for (int t = 0; t < kNumTasks; ++t)
            rec.task_loss[t] = task_tok[t] ? task_nll[t] / task_tok[t] : 0.0;
        res.log.push_back(rec);
        last_good = snapshot();
    }
    return res;
}

namespace {

// Discrete choices made during a forward pass: relu input signs and top-1
// selections. Finite differencing is valid only while these stay fixed.
std::vector<std::int32_t> decision_signature(const NodePtr& root) {
    std::vector<std::int32_t> sig;
    for (Node* node : reverse_topological_order(root)) {
        if (std::strcmp(node->op, "relu") == 0) {
            const Matrix& in = node->parents[0]->value;
            for (double v : in.data) sig.push_back(v > 0.0 ? 1 : (v < 0.0 ? -1 : 0));
        } else if (std::strcmp(node->op, "top1_columns") == 0) {
            const Matrix& in = node->parents[0]->value;
            for (std::size_t j = 0; j < in.cols; ++j) {
                std::size_t am = 0;
                for (std::size_t i = 1; i < in.rows; ++i)
                    if (in.at(i, j) > in.at(am, j)) am = i;
                sig.push_back(static_cast<std::int32_t>(am));
            }
        }
    }
    return sig;
}

} // namespace

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    for (const auto& g : groups) {
        os << (g.pass ? "  ok   " : "  FAIL ") << g.name << "  max_rel_err=" << g.max_rel_err
           << "  checked=" << g.checked << " skipped=" << g.skipped << "\n";
    }
    os << "frozen gradients zero: " << (frozen_grads_zero ? "yes" : "NO") << "\n";
    os << (pass ? "PASS" : "FAIL") << " at tolerance " << tolerance << "\n";
    return os.str();
}

GradCheckReport grad_check_custom(const std::vector<NamedParam>& params,
                                  const std::function<NodePtr()>& loss_builder, double tolerance,
                                  double kink_threshold,
                                  const EntrySkip& extra_skip) {
    (void)kink_threshold;
    GradCheckReport report;
    report.tolerance = tolerance;

    for (auto& p : params) p.node->zero_grad();
    NodePtr base = loss_builder();
    if (base->value.size() != 1) throw DimensionError("grad_check: loss must be scalar");
    backward(base);
    const std::vector<std::int32_t> base_sig = decision_signature(base);

    std::map<Node*, Matrix> analytic;
    for (auto& p : params) analytic[p.node.get()] = p.node->ensure_grad();

    const double eps = 1e-5;
    for (auto& p : params) {
        GradCheckGroup group;
        group.name = p.name;
        Matrix& value = p.node->value;
        const Matrix& grad = analytic[p.node.get()];
        for (std::size_t i = 0; i < value.data.size(); ++i) {
            if (extra_skip && extra_skip(p, i)) {
                ++group.skipped;
                continue;
            }
            const double orig = value.data[i];
            value.data[i] = orig + eps;
            NodePtr lp = loss_builder();
            const auto sig_p = decision_signature(lp);
            value.data[i] = orig - eps;
            NodePtr lm = loss_builder();
            const auto sig_m = decision_signature(lm);
            value.data[i] = orig;
            if (sig_p != base_sig || sig_m != base_sig) {
                ++group.skipped;
                continue;
            }
            const double numeric = (lp->value.at(0, 0) - lm->value.at(0, 0)) / (2.0 * eps);
            const double a = grad.data[i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            group.max_rel_err = std::max(group.max_rel_err, rel);
            ++group.checked;
        }
        group.pass = group.max_rel_err <= tolerance;
        report.pass = report.pass && group.pass;
        report.groups.push_back(std::move(group));
    }
    return report;
}

GradCheckReport grad_check(ToyTransformer& model, const TaskSample& sample, double tolerance,
                           double kink_threshold) {
    Rng dummy(0);
    auto builder = [&]() {
        return model.autoregressive_loss(sample.prompt, sample.target, false, dummy);
    };

    // Router rows whose pre-activation sits within kink_threshold of zero are
    // skipped wholesale. Under LR a gate in (0, threshold) equals its
    // pre-activation; the negative side is caught by the sign-flip test.
    RouterTrace trace;
    std::vector<int> input(sample.prompt);
    input.insert(input.end(), sample.target.begin(), sample.target.end() - 1);
    model.forward_logits(input, false, dummy, &trace);
    std::map<std::pair<int, std::string>, std::vector<bool>> near_kink_rows;
    for (const auto& e : trace.entries) {
        auto& rows = near_kink_rows[{e.block, e.projection}];
        if (rows.empty()) rows.assign(e.gates.size(), false);
        for (std::size_t i = 0; i < e.gates.size(); ++i)
            if (e.gates[i] > 0.0 && e.gates[i] < kink_threshold) rows[i] = true;
    }
    EntrySkip skip = [&](const NamedParam& p, std::size_t idx) {
        const auto pos = p.name.find(".router.");
        if (pos == std::string::npos) return false;
        // name is blockB.<projection>.router.{weight,bias}
        const auto dot = p.name.find('.');
        const int block = std::stoi(p.name.substr(5, dot - 5));
        const std::string proj = p.name.substr(dot + 1, pos - dot - 1);
        auto it = near_kink_rows.find({block, proj});
        if (it == near_kink_rows.end()) return false;
        const std::size_t cols = p.node->value.cols;
        return static_cast<bool>(it->second[idx / cols]);
    };

    GradCheckReport report =
        grad_check_custom(model.trainable_parameters(), builder, tolerance, kink_threshold, skip);

    // frozen parameters must stay at exactly zero gradient
    model.zero_grads();
    NodePtr base = builder();
    backward(base);
    for (auto& p : model.parameters()) {
        if (p.node->requires_grad) continue;
        if (!p.node->grad.data.empty())
            for (double g : p.node->grad.data)
                if (g != 0.0) report.frozen_grads_zero = false;
    }
    report.pass = report.pass && report.frozen_grads_zero;
    return report;
}

} // namespace rode
