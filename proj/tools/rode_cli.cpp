#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rode/errors.hpp"
#include "rode/experiment.hpp"
#include "rode/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitThreshold = 3;

struct CommonOpts {
    std::string config_path;
    std::string out;
    std::int64_t seed_override = -1;
    bool trace = false;
};

rode::ExperimentConfig load_cfg(const CommonOpts& o) {
    rode::ExperimentConfig cfg = o.config_path.empty()
                                     ? rode::ExperimentConfig{}
                                     : rode::ExperimentConfig::from_file(o.config_path);
    if (o.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed_override);
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (o.trace) cfg.trace = true;
    cfg.validate();
    return cfg;
}

int run_train(const CommonOpts& o) {
    rode::ExperimentConfig cfg = load_cfg(o);
    const std::string out_dir = rode::resolve_out_dir(cfg);
    rode::RunArtifacts art = rode::run_experiment(cfg, out_dir);
    std::cout << "run directory: " << art.out_dir << "\n";
    std::cout << "checkpoint:    " << art.checkpoint_path << "\n";
    std::cout << "eval score:    " << art.report.score() << "\n";
    if (art.train_aborted) {
        std::cerr << "training aborted; last good checkpoint retained\n";
        return kExitRuntime;
    }
    return kExitOk;
}

int run_eval(const std::string& checkpoint, const CommonOpts& o) {
    rode::LoadedModel lm = rode::load_model_from_checkpoint(checkpoint);
    if (!o.config_path.empty()) {
        // optional override of the eval section only
        std::ifstream in(o.config_path);
        if (!in) throw rode::IoError("cannot open config file " + o.config_path);
        json j;
        in >> j;
        if (j.contains("eval")) {
            if (j.at("eval").contains("n_samples"))
                lm.cfg.eval.n_samples = j.at("eval").at("n_samples").get<int>();
            if (j.at("eval").contains("max_new_tokens"))
                lm.cfg.eval.max_new_tokens = j.at("eval").at("max_new_tokens").get<int>();
        }
    }
    rode::Rng root(lm.cfg.seed);
    rode::Rng eval_rng = root.split("evalset");
    const auto eval_set = rode::sample_batch(lm.world, lm.cfg.tasks.task_mix,
                                             lm.cfg.eval.n_samples, eval_rng);
    std::vector<rode::PerSampleRecord> dump;
    rode::EvalReport rep = rode::evaluate(
        rode::greedy_predictor(*lm.model, lm.cfg.eval.max_new_tokens), eval_set,
        lm.world.layout, &dump);
    const std::string out_dir = o.out.empty() ? fs::path(checkpoint).parent_path().string()
                                              : o.out;
    fs::create_directories(out_dir.empty() ? "." : out_dir);
    const fs::path base = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
    rode::write_eval_report(rep, (base / "eval.json").string());
    rode::write_per_sample_dump(dump, (base / "per_sample.jsonl").string());
    std::cout << rode::eval_report_to_json(rep) << "\n";
    return kExitOk;
}

int run_heatmap(const std::string& checkpoint, const std::string& task, const std::string& out) {
    rode::LoadedModel lm = rode::load_model_from_checkpoint(checkpoint);
    rode::Rng root(lm.cfg.seed);
    rode::Rng eval_rng = root.split("evalset");
    const auto eval_set = rode::sample_batch(lm.world, lm.cfg.tasks.task_mix,
                                             lm.cfg.eval.n_samples, eval_rng);
    const auto traces = rode::collect_traces(*lm.model, eval_set);
    fs::create_directories(out);
    int written = 0;
    for (int t = 0; t < rode::kNumTasks; ++t) {
        const char* name = rode::task_name(static_cast<rode::TaskId>(t));
        if (task != "all" && task != name) continue;
        std::vector<rode::RouterTrace> task_traces;
        for (const auto& tr : traces)
            if (tr.task_id == static_cast<rode::TaskId>(t)) task_traces.push_back(tr);
        if (task_traces.empty()) continue;
        const std::string base = (fs::path(out) / ("heatmap_" + std::string(name))).string();
        rode::export_heatmap(task_traces, base + ".csv", base + ".pgm");
        std::cout << "wrote " << base << ".csv and .pgm\n";
        ++written;
    }
    if (written == 0) {
        std::cerr << "no traces written (unknown task '" << task << "'?)\n";
        return kExitValidation;
    }
    return kExitOk;
}

int run_gradcheck(const CommonOpts& o) {
    rode::ExperimentConfig cfg;
    if (o.config_path.empty()) {
        // small default: fast and still covers every trainable group
        cfg.model.d_model = 16;
        cfg.tasks.n_ingredients = 8;
        cfg.tasks.n_categories = 2;
    } else {
        cfg = rode::ExperimentConfig::from_file(o.config_path);
    }
    if (o.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed_override);

    rode::SyntheticWorld world =
        rode::generate_world(cfg.seed, cfg.tasks.n_ingredients, cfg.tasks.n_categories);
    rode::Rng root(cfg.seed);
    rode::Rng model_rng = root.split("model");
    rode::ToyTransformer model(cfg.transformer_config(world.layout.vocab_size()), model_rng);
    model.freeze_base();
    rode::Rng attach_rng = root.split("attach");
    model.attach_adapters(attach_rng);

    rode::Rng sample_rng = root.split("gradcheck_sample");
    const auto batch = rode::sample_batch(world, {0.0, 0.0, 1.0, 0.0}, 1, sample_rng);
    rode::GradCheckReport report = rode::grad_check(model, batch[0]);
    std::cout << report.summary();
    return report.pass ? kExitOk : kExitThreshold;
}

int run_bench(const CommonOpts& o, const std::string& out_path, int count) {
    rode::ExperimentConfig cfg = load_cfg(o);
    rode::SyntheticWorld world =
        rode::generate_world(cfg.seed, cfg.tasks.n_ingredients, cfg.tasks.n_categories);
    rode::Rng root(cfg.seed);
    rode::Rng rng = root.split("benchset");
    const auto samples = rode::sample_batch(world, cfg.tasks.task_mix, count, rng);
    rode::export_benchmark(out_path, samples);
    std::cout << "wrote " << samples.size() << " samples to " << out_path << "\n";
    return kExitOk;
}

int run_compare(const CommonOpts& o) {
    rode::ExperimentConfig base = load_cfg(o);
    std::vector<rode::VariantSpec> variants;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> expect_order;
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        json j;
        in >> j;
        if (j.contains("compare")) {
            const json& c = j.at("compare");
            for (const auto& [key, _] : c.items())
                if (key != "variants" && key != "seeds" && key != "expect_order")
                    throw rode::ConfigError("unknown config key 'compare." + key + "'");
            for (const auto& v : c.at("variants")) {
                for (const auto& [key, _] : v.items())
                    if (key != "name" && key != "strategy" && key != "rank_list")
                        throw rode::ConfigError("unknown config key 'compare.variants." + key +
                                                "'");
                rode::VariantSpec spec;
                spec.name = v.at("name").get<std::string>();
                spec.strategy = v.value("strategy", base.strategy);
                spec.rank_list = v.value("rank_list", base.rank_list);
                variants.push_back(spec);
            }
            if (c.contains("seeds")) seeds = c.at("seeds").get<std::vector<std::uint64_t>>();
            if (c.contains("expect_order"))
                expect_order = c.at("expect_order").get<std::vector<std::string>>();
        }
    }
    if (variants.empty()) {
        // default: the three routing strategies at equal ranks
        variants = {{"top1", "top1", {8, 8, 8, 8}},
                    {"softmax", "softmax", {8, 8, 8, 8}},
                    {"lr", "lr", {8, 8, 8, 8}}};
    }
    if (seeds.empty()) seeds = {1, 2, 3, 4, 5};

    const auto results = rode::compare_variants(base, variants, seeds);
    const std::string table = rode::comparison_table(results);
    std::cout << table;

    const std::string out_dir = o.out.empty() ? rode::resolve_out_dir(base) : o.out;
    fs::create_directories(out_dir);
    std::ofstream tf(fs::path(out_dir) / "comparison.txt", std::ios::binary);
    tf << table;
    nlohmann::ordered_json cj = nlohmann::ordered_json::array();
    for (const auto& r : results) {
        nlohmann::ordered_json v;
        v["name"] = r.spec.name;
        v["strategy"] = r.spec.strategy;
        v["rank_list"] = r.spec.rank_list;
        v["adapter_parameters"] = r.adapter_parameters;
        v["seed_scores"] = r.seed_scores;
        v["mean_score"] = r.mean_score;
        cj.push_back(v);
    }
    std::ofstream jf(fs::path(out_dir) / "comparison.json", std::ios::binary);
    jf << cj.dump(2) << "\n";

    if (!expect_order.empty()) {
        double prev = 1e300;
        for (const auto& name : expect_order) {
            const auto it = std::find_if(results.begin(), results.end(),
                                         [&](const auto& r) { return r.spec.name == name; });
            if (it == results.end())
                throw rode::ConfigError("expect_order names unknown variant '" + name + "'");
            if (it->mean_score > prev) {
                std::cerr << "expected ordering violated at '" << name << "'\n";
                return kExitThreshold;
            }
            prev = it->mean_score;
        }
        std::cout << "expected ordering holds\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linear-rectified mixture of diverse low-rank experts: toy training bench"};
    app.require_subcommand(1);

    CommonOpts train_opts, eval_opts, grad_opts, compare_opts;
    std::string eval_checkpoint, heat_checkpoint, heat_task = "all", heat_out = ".";

    auto add_common = [](CLI::App* cmd, CommonOpts& o, bool with_trace = true) {
        cmd->add_option("--config", o.config_path, "JSON experiment config");
        cmd->add_option("--out", o.out, "output directory override");
        cmd->add_option("--seed-override", o.seed_override, "replace the config seed");
        if (with_trace) cmd->add_flag("--trace", o.trace, "record router traces and heatmaps");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a model per config");
    add_common(train_cmd, train_opts);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
    add_common(eval_cmd, eval_opts, false);

    CLI::App* heat_cmd = app.add_subcommand("heatmap", "export router allocation heatmaps");
    heat_cmd->add_option("--checkpoint", heat_checkpoint, "checkpoint file")->required();
    heat_cmd->add_option("--task", heat_task, "task name or 'all'");
    heat_cmd->add_option("--out", heat_out, "output directory")->required();

    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_common(grad_cmd, grad_opts, false);

    CLI::App* compare_cmd = app.add_subcommand("compare", "train and score variants");
    add_common(compare_cmd, compare_opts, false);

    CommonOpts bench_opts;
    std::string bench_out = "benchmark.jsonl";
    int bench_count = 400;
    CLI::App* bench_cmd =
        app.add_subcommand("bench", "export benchmark samples as JSON lines");
    bench_cmd->add_option("--config", bench_opts.config_path, "JSON experiment config");
    bench_cmd->add_option("--out", bench_out, "output file");
    bench_cmd->add_option("--count", bench_count, "number of samples");
    bench_cmd->add_option("--seed-override", bench_opts.seed_override, "replace the config seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return run_train(train_opts);
        if (eval_cmd->parsed()) return run_eval(eval_checkpoint, eval_opts);
        if (heat_cmd->parsed()) return run_heatmap(heat_checkpoint, heat_task, heat_out);
        if (grad_cmd->parsed()) return run_gradcheck(grad_opts);
        if (compare_cmd->parsed()) return run_compare(compare_opts);
        if (bench_cmd->parsed()) return run_bench(bench_opts, bench_out, bench_count);
    } catch (const rode::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const rode::DataError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const rode::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}
