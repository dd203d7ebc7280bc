#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "rode/matrix.hpp"
#include "rode/tasks.hpp"

namespace rode {

// --- set and regression metrics ---------------------------------------------

// |a n b| / |a u b|; 1.0 when both sets are empty. Inputs are id sets
// (unordered, duplicates ignored).
double iou(const std::vector<int>& pred, const std::vector<int>& truth);

// 2|a n b| / (|a| + |b|); 1.0 when both sets are empty.
double f1(const std::vector<int>& pred, const std::vector<int>& truth);

// 100 * mean(|pred_i - truth_i|) / mean(truth_i); throws NumericError when
// the truth mean is zero, DimensionError on length mismatch or empty input.
double pmae(const std::vector<double>& preds, const std::vector<double>& truths);

// --- router traces -----------------------------------------------------------

// Gate vectors recorded during one traced forward pass, one entry per
// (block, adapted projection, token position).
struct TraceEntry {
    int block = 0;
    std::string projection;
    int token = 0;
    std::vector<double> gates;
};

struct RouterTrace {
    TaskId task_id = TaskId::kIngredient;
    std::vector<TraceEntry> entries;
};

// Fraction of exactly-zero gate values across all entries of all traces.
double trace_zero_fraction(const std::vector<RouterTrace>& traces);

// Mean gate per (block, projection, expert), reduced over tokens and traces.
// Rows are blocks ascending; columns are projection-major, expert-minor in
// first-appearance order.
struct HeatmapMatrix {
    std::vector<int> blocks;
    std::vector<std::string> projections;
    std::size_t n_experts = 0;
    Matrix values; // blocks x (projections * n_experts)
};

HeatmapMatrix build_heatmap(const std::vector<RouterTrace>& traces);

// Writes the delimited-text matrix and a binary P5 graymap (linear value to
// intensity, matrix max mapping to 255). Byte-identical for equal inputs.
void export_heatmap(const std::vector<RouterTrace>& traces, const std::string& csv_path,
                    const std::string& pgm_path);

// --- evaluation ----------------------------------------------------------------

using Predictor = std::function<std::vector<int>(const TaskSample&)>;

struct PerSampleRecord {
    TaskId task_id = TaskId::kIngredient;
    bool valid = false;
    double iou = 0.0, f1 = 0.0;        // ingredient
    bool exact = false;                 // recipe / category
    double token_acc = 0.0;             // recipe
    std::array<double, 5> pred_fields{}; // nutrition
    std::array<double, 5> truth_fields{};
};

struct EvalReport {
    std::array<int, kNumTasks> sample_count{};
    std::array<double, kNumTasks> valid_rate{};
    double ingredient_iou = 0.0;
    double ingredient_f1 = 0.0;
    std::array<double, 5> nutrition_pmae{};
    double nutrition_pmae_avg = 0.0;
    double recipe_exact = 0.0;
    double recipe_token_acc = 0.0;
    double category_acc = 0.0;
    bool has_sparsity = false;
    double zero_gate_fraction = 0.0;

    // multi-task score: mean of ingredient IoU and (100 - pMAE)/100
    double score() const { return 0.5 * (ingredient_iou + (100.0 - nutrition_pmae_avg) / 100.0); }
};

// Runs the predictor on every sample, decodes, and applies the task metric.
// Malformed decodes score as empty-set (ingredient) or worst-representable
// field values (nutrition); validity is tracked separately per task.
EvalReport evaluate(const Predictor& predict, const std::vector<TaskSample>& eval_set,
                    const TokenLayout& layout, std::vector<PerSampleRecord>* dump = nullptr);

std::string eval_report_to_json(const EvalReport& report);
void write_eval_report(const EvalReport& report, const std::string& path);
void write_per_sample_dump(const std::vector<PerSampleRecord>& records, const std::string& path);

} // namespace rode
