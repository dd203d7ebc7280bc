#include "rode/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "rode/errors.hpp"

namespace rode {

using json = nlohmann::ordered_json;

double iou(const std::vector<int>& pred, const std::vector<int>& truth) {
    const std::set<int> p(pred.begin(), pred.end());
    const std::set<int> t(truth.begin(), truth.end());
    if (p.empty() && t.empty()) return 1.0;
    std::size_t inter = 0;
    for (int x : p) inter += t.count(x);
    const std::size_t uni = p.size() + t.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double f1(const std::vector<int>& pred, const std::vector<int>& truth) {
    const std::set<int> p(pred.begin(), pred.end());
    const std::set<int> t(truth.begin(), truth.end());
    if (p.empty() && t.empty()) return 1.0;
    std::size_t inter = 0;
    for (int x : p) inter += t.count(x);
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p.size() + t.size());
}

double pmae(const std::vector<double>& preds, const std::vector<double>& truths) {
    if (preds.size() != truths.size() || preds.empty())
        throw DimensionError("pmae: need equal-length nonempty sequences");
    double abs_err = 0.0, truth_sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        abs_err += std::abs(preds[i] - truths[i]);
        truth_sum += truths[i];
    }
    if (truth_sum == 0.0) throw NumericError("pmae: undefined, truth mean is zero");
    return 100.0 * abs_err / truth_sum;
}

double trace_zero_fraction(const std::vector<RouterTrace>& traces) {
    std::size_t zeros = 0, total = 0;
    for (const auto& tr : traces)
        for (const auto& e : tr.entries)
            for (double g : e.gates) {
                ++total;
                if (g == 0.0) ++zeros;
            }
    return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

HeatmapMatrix build_heatmap(const std::vector<RouterTrace>& traces) {
    if (traces.empty() || traces[0].entries.empty())
        throw DataError("build_heatmap: no trace entries");
    HeatmapMatrix hm;
    hm.n_experts = traces[0].entries[0].gates.size();

    std::set<int> block_set;
    for (const auto& e : traces[0].entries) {
        block_set.insert(e.block);
        if (std::find(hm.projections.begin(), hm.projections.end(), e.projection) ==
            hm.projections.end())
            hm.projections.push_back(e.projection);
    }
    hm.blocks.assign(block_set.begin(), block_set.end());

    std::map<std::pair<int, std::string>, std::pair<std::vector<double>, std::size_t>> acc;
    for (const auto& tr : traces)
        for (const auto& e : tr.entries) {
            if (e.gates.size() != hm.n_experts)
                throw DataError("build_heatmap: traces are not layout-homogeneous");
            auto& slot = acc[{e.block, e.projection}];
            if (slot.first.empty()) slot.first.assign(hm.n_experts, 0.0);
            for (std::size_t i = 0; i < hm.n_experts; ++i) slot.first[i] += e.gates[i];
            ++slot.second;
        }

    hm.values = Matrix(hm.blocks.size(), hm.projections.size() * hm.n_experts);
    for (std::size_t b = 0; b < hm.blocks.size(); ++b)
        for (std::size_t p = 0; p < hm.projections.size(); ++p) {
            auto it = acc.find({hm.blocks[b], hm.projections[p]});
            if (it == acc.end())
                throw DataError("build_heatmap: traces are not layout-homogeneous");
            for (std::size_t i = 0; i < hm.n_experts; ++i)
                hm.values.at(b, p * hm.n_experts + i) =
                    it->second.first[i] / static_cast<double>(it->second.second);
        }
    return hm;
}

void export_heatmap(const std::vector<RouterTrace>& traces, const std::string& csv_path,
                    const std::string& pgm_path) {
    const HeatmapMatrix hm = build_heatmap(traces);

    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw IoError("export_heatmap: cannot open " + csv_path);
    csv << "block";
    for (const auto& p : hm.projections)
        for (std::size_t i = 0; i < hm.n_experts; ++i) csv << "," << p << ".e" << i;
    csv << "\n";
    char buf[64];
    for (std::size_t b = 0; b < hm.blocks.size(); ++b) {
        csv << hm.blocks[b];
        for (std::size_t j = 0; j < hm.values.cols; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", hm.values.at(b, j));
            csv << "," << buf;
        }
        csv << "\n";
    }
    if (!csv) throw IoError("export_heatmap: write failed for " + csv_path);

    double mx = 0.0;
    for (double v : hm.values.data) mx = std::max(mx, v);
    std::ofstream pgm(pgm_path, std::ios::binary);
    if (!pgm) throw IoError("export_heatmap: cannot open " + pgm_path);
    pgm << "P5\n" << hm.values.cols << " " << hm.values.rows << "\n255\n";
    for (double v : hm.values.data) {
        const int level = mx > 0.0 ? static_cast<int>(std::lround(v / mx * 255.0)) : 0;
        pgm.put(static_cast<char>(std::clamp(level, 0, 255)));
    }
    if (!pgm) throw IoError("export_heatmap: write failed for " + pgm_path);
}

EvalReport evaluate(const Predictor& predict, const std::vector<TaskSample>& eval_set,
                    const TokenLayout& layout, std::vector<PerSampleRecord>* dump) {
    if (eval_set.empty()) throw DataError("evaluate: empty eval set");
    EvalReport rep;

    double iou_sum = 0.0, f1_sum = 0.0;
    std::array<std::vector<double>, 5> nut_preds, nut_truths;
    int recipe_exact = 0;
    double token_acc_sum = 0.0;
    int category_hits = 0;
    std::array<int, kNumTasks> valid_counts{};

    for (const auto& sample : eval_set) {
        const int t = static_cast<int>(sample.task_id);
        ++rep.sample_count[t];
        const std::vector<int> output = predict(sample);
        const DecodeResult dec = decode_output(layout, sample.task_id, output);
        if (dec.valid) ++valid_counts[t];

        PerSampleRecord rec;
        rec.task_id = sample.task_id;
        rec.valid = dec.valid;

        switch (sample.task_id) {
        case TaskId::kIngredient: {
            // malformed output scores as the empty set
            const std::vector<int> pred = dec.valid ? dec.payload.ingredient_ids
                                                    : std::vector<int>{};
            rec.iou = iou(pred, sample.truth.ingredient_ids);
            rec.f1 = f1(pred, sample.truth.ingredient_ids);
            iou_sum += rec.iou;
            f1_sum += rec.f1;
            break;
        }
        case TaskId::kRecipe: {
            rec.exact = dec.valid && dec.payload.recipe_tokens == sample.truth.recipe_tokens;
            const auto& p = dec.payload.recipe_tokens;
            const auto& q = sample.truth.recipe_tokens;
            const std::size_t longest = std::max(p.size(), q.size());
            std::size_t hits = 0;
            for (std::size_t i = 0; i < std::min(p.size(), q.size()); ++i)
                if (p[i] == q[i]) ++hits;
            rec.token_acc = longest ? static_cast<double>(hits) / static_cast<double>(longest)
                                    : 1.0;
            recipe_exact += rec.exact ? 1 : 0;
            token_acc_sum += rec.token_acc;
            break;
        }
        case TaskId::kNutrition: {
            const auto truth_fields = sample.truth.nutrition.fields();
            const auto pred_fields = dec.payload.nutrition.fields();
            for (std::size_t f = 0; f < 5; ++f) {
                // malformed output earns zero credit: the all-zero record is
                // a full truth-sized error on every field
                double pv = dec.valid ? pred_fields[f] : 0.0;
                rec.pred_fields[f] = pv;
                rec.truth_fields[f] = truth_fields[f];
                nut_preds[f].push_back(pv);
                nut_truths[f].push_back(truth_fields[f]);
            }
            break;
        }
        case TaskId::kCategory: {
            rec.exact = dec.valid && dec.payload.category == sample.truth.category;
            category_hits += rec.exact ? 1 : 0;
            break;
        }
        }
        if (dump) dump->push_back(rec);
    }

    for (int t = 0; t < kNumTasks; ++t)
        rep.valid_rate[t] = rep.sample_count[t]
                                ? static_cast<double>(valid_counts[t]) / rep.sample_count[t]
                                : 0.0;
    const int n_ing = rep.sample_count[static_cast<int>(TaskId::kIngredient)];
    if (n_ing) {
        rep.ingredient_iou = iou_sum / n_ing;
        rep.ingredient_f1 = f1_sum / n_ing;
    }
    const int n_rec = rep.sample_count[static_cast<int>(TaskId::kRecipe)];
    if (n_rec) {
        rep.recipe_exact = static_cast<double>(recipe_exact) / n_rec;
        rep.recipe_token_acc = token_acc_sum / n_rec;
    }
    const int n_nut = rep.sample_count[static_cast<int>(TaskId::kNutrition)];
    if (n_nut) {
        double avg = 0.0;
        for (std::size_t f = 0; f < 5; ++f) {
            rep.nutrition_pmae[f] = pmae(nut_preds[f], nut_truths[f]);
            avg += rep.nutrition_pmae[f];
        }
        rep.nutrition_pmae_avg = avg / 5.0;
    }
    const int n_cat = rep.sample_count[static_cast<int>(TaskId::kCategory)];
    if (n_cat) rep.category_acc = static_cast<double>(category_hits) / n_cat;
    return rep;
}

std::string eval_report_to_json(const EvalReport& rep) {
    json j;
    for (int t = 0; t < kNumTasks; ++t) {
        json tj;
        tj["samples"] = rep.sample_count[t];
        tj["valid_rate"] = rep.valid_rate[t];
        switch (static_cast<TaskId>(t)) {
        case TaskId::kIngredient:
            tj["iou"] = rep.ingredient_iou;
            tj["f1"] = rep.ingredient_f1;
            break;
        case TaskId::kRecipe:
            tj["exact_match"] = rep.recipe_exact;
            tj["token_accuracy"] = rep.recipe_token_acc;
            break;
        case TaskId::kNutrition: {
            json fields;
            const auto& names = NutritionRecord::field_names();
            for (std::size_t f = 0; f < 5; ++f) fields[names[f]] = rep.nutrition_pmae[f];
            tj["pmae"] = fields;
            tj["pmae_avg"] = rep.nutrition_pmae_avg;
            break;
        }
        case TaskId::kCategory:
            tj["accuracy"] = rep.category_acc;
            break;
        }
        j[task_name(static_cast<TaskId>(t))] = tj;
    }
    j["score"] = rep.score();
    if (rep.has_sparsity) j["zero_gate_fraction"] = rep.zero_gate_fraction;
    return j.dump(2);
}

void write_eval_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_eval_report: cannot open " + path);
    out << eval_report_to_json(report) << "\n";
}

void write_per_sample_dump(const std::vector<PerSampleRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_per_sample_dump: cannot open " + path);
    for (const auto& r : records) {
        json j;
        j["task"] = task_name(r.task_id);
        j["valid"] = r.valid;
        switch (r.task_id) {
        case TaskId::kIngredient:
            j["iou"] = r.iou;
            j["f1"] = r.f1;
            break;
        case TaskId::kRecipe:
            j["exact"] = r.exact;
            j["token_accuracy"] = r.token_acc;
            break;
        case TaskId::kNutrition:
            j["pred"] = r.pred_fields;
            j["truth"] = r.truth_fields;
            break;
        case TaskId::kCategory:
            j["exact"] = r.exact;
            break;
        }
        out << j.dump() << "\n";
    }
}

} // namespace rode
