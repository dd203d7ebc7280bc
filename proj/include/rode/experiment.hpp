#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rode/metrics.hpp"
#include "rode/optimizer.hpp"
#include "rode/tasks.hpp"
#include "rode/trainer.hpp"
#include "rode/transformer.hpp"

namespace rode {

struct TasksConfig {
    int n_ingredients = 16;
    int n_categories = 4;
    std::array<double, kNumTasks> task_mix = {1.0, 1.0, 1.0, 1.0};
};

struct EvalConfig {
    int n_samples = 200;
    int max_new_tokens = 40;
};

struct PretrainConfig {
    double lr = 1e-3;
    int warmup_iters = 30;
    int total_iters = 300;
    int grad_accum = 2;
};

// Everything one run needs; defaults reproduce the default experiment with
// no edits. Parsed from JSON with unknown keys rejected.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string strategy = "lr";
    std::vector<int> rank_list = {2, 4, 8, 16};
    double alpha = 16.0;
    double dropout_rate = 0.05;
    bool trace = false;
    std::string out_dir; // empty: <out root>/<config hash>

    struct ModelSection {
        int d_model = 32;
        int n_heads = 4;
        int n_blocks = 2;
        int max_seq_len = 48;
        std::vector<std::string> adapted_projections = {"query", "value"};
    } model;

    TasksConfig tasks;
    TrainConfig train;
    PretrainConfig pretrain;
    EvalConfig eval;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
    nlohmann::ordered_json to_json() const;
    void validate() const;
    std::string hash() const; // 16 hex chars over the canonical JSON echo

    TransformerConfig transformer_config(int vocab_size) const;
    TrainConfig pretrain_config() const;
};

// Output root: $RODE_OUT_ROOT if set, else "runs".
std::string default_out_root();
std::string resolve_out_dir(const ExperimentConfig& cfg);

struct RunArtifacts {
    std::string out_dir;
    std::string checkpoint_path;
    std::string metrics_path;
    EvalReport report;
    bool train_aborted = false;
};

// Full pipeline: world -> base pretrain -> freeze -> adapters -> fine-tune
// -> eval (+ traces/heatmaps when cfg.trace). Writes manifest, metric logs,
// checkpoint, eval report, and the per-sample dump under out_dir.
RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

// Builds a model from a config echo and restores checkpoint tensors into it.
struct LoadedModel {
    ExperimentConfig cfg;
    SyntheticWorld world;
    std::unique_ptr<ToyTransformer> model;
};
LoadedModel load_model_from_checkpoint(const std::string& checkpoint_path);

// --- ablation comparisons -----------------------------------------------------

struct VariantSpec {
    std::string name;
    std::string strategy;
    std::vector<int> rank_list;
};

struct VariantResult {
    VariantSpec spec;
    std::vector<double> seed_scores;
    std::vector<EvalReport> seed_reports;
    double mean_score = 0.0;
    std::size_t adapter_parameters = 0;
};

// Trains every (variant, seed) pair at the shared budget from `base`; the
// pretrained backbone is computed once per seed and shared across variants.
std::vector<VariantResult> compare_variants(const ExperimentConfig& base,
                                            const std::vector<VariantSpec>& variants,
                                            const std::vector<std::uint64_t>& seeds);

std::string comparison_table(const std::vector<VariantResult>& results);

} // namespace rode
