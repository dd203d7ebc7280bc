#include "rode/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "rode/checkpoint.hpp"
#include "rode/errors.hpp"

namespace rode {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

void check_keys(const json& j, const std::string& scope,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config section '" + scope + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError("unknown config key '" + scope + "." + key + "'");
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

std::string iso8601_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    // "compare" carries the variant/seed protocol and is consumed by the CLI
    check_keys(j, "", {"seed", "strategy", "rank_list", "alpha", "dropout_rate", "trace",
                       "out_dir", "model", "tasks", "train", "pretrain", "eval", "compare"});
    ExperimentConfig c;
    get_if(j, "seed", c.seed);
    get_if(j, "strategy", c.strategy);
    get_if(j, "rank_list", c.rank_list);
    get_if(j, "alpha", c.alpha);
    get_if(j, "dropout_rate", c.dropout_rate);
    get_if(j, "trace", c.trace);
    get_if(j, "out_dir", c.out_dir);
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m, "model",
                   {"d_model", "n_heads", "n_blocks", "max_seq_len", "adapted_projections"});
        get_if(m, "d_model", c.model.d_model);
        get_if(m, "n_heads", c.model.n_heads);
        get_if(m, "n_blocks", c.model.n_blocks);
        get_if(m, "max_seq_len", c.model.max_seq_len);
        get_if(m, "adapted_projections", c.model.adapted_projections);
    }
    if (j.contains("tasks")) {
        const json& t = j.at("tasks");
        check_keys(t, "tasks", {"n_ingredients", "n_categories", "task_mix"});
        get_if(t, "n_ingredients", c.tasks.n_ingredients);
        get_if(t, "n_categories", c.tasks.n_categories);
        get_if(t, "task_mix", c.tasks.task_mix);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, "train",
                   {"lr", "warmup_iters", "weight_decay", "beta1", "beta2", "eps", "batch_size",
                    "grad_accum", "epochs", "total_iters"});
        get_if(t, "lr", c.train.lr);
        get_if(t, "warmup_iters", c.train.warmup_iters);
        get_if(t, "weight_decay", c.train.weight_decay);
        get_if(t, "beta1", c.train.beta1);
        get_if(t, "beta2", c.train.beta2);
        get_if(t, "eps", c.train.eps);
        get_if(t, "batch_size", c.train.batch_size);
        get_if(t, "grad_accum", c.train.grad_accum);
        get_if(t, "epochs", c.train.epochs);
        get_if(t, "total_iters", c.train.total_iters);
    }
    if (j.contains("pretrain")) {
        const json& p = j.at("pretrain");
        check_keys(p, "pretrain", {"lr", "warmup_iters", "total_iters", "grad_accum"});
        get_if(p, "lr", c.pretrain.lr);
        get_if(p, "warmup_iters", c.pretrain.warmup_iters);
        get_if(p, "total_iters", c.pretrain.total_iters);
        get_if(p, "grad_accum", c.pretrain.grad_accum);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, "eval", {"n_samples", "max_new_tokens"});
        get_if(e, "n_samples", c.eval.n_samples);
        get_if(e, "max_new_tokens", c.eval.max_new_tokens);
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return from_json(j);
}

// out_dir is deliberately not echoed: it names where results land, not what
// the experiment is, so it must not perturb the config hash or checkpoints.
ojson ExperimentConfig::to_json() const {
    ojson j;
    j["seed"] = seed;
    j["strategy"] = strategy;
    j["rank_list"] = rank_list;
    j["alpha"] = alpha;
    j["dropout_rate"] = dropout_rate;
    j["trace"] = trace;
    j["model"] = {{"d_model", model.d_model},
                  {"n_heads", model.n_heads},
                  {"n_blocks", model.n_blocks},
                  {"max_seq_len", model.max_seq_len},
                  {"adapted_projections", model.adapted_projections}};
    j["tasks"] = {{"n_ingredients", tasks.n_ingredients},
                  {"n_categories", tasks.n_categories},
                  {"task_mix", tasks.task_mix}};
    j["train"] = {{"lr", train.lr},
                  {"warmup_iters", train.warmup_iters},
                  {"weight_decay", train.weight_decay},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"eps", train.eps},
                  {"batch_size", train.batch_size},
                  {"grad_accum", train.grad_accum},
                  {"epochs", train.epochs},
                  {"total_iters", train.total_iters}};
    j["pretrain"] = {{"lr", pretrain.lr},
                     {"warmup_iters", pretrain.warmup_iters},
                     {"total_iters", pretrain.total_iters},
                     {"grad_accum", pretrain.grad_accum}};
    j["eval"] = {{"n_samples", eval.n_samples}, {"max_new_tokens", eval.max_new_tokens}};
    return j;
}

void ExperimentConfig::validate() const {
    strategy_from_name(strategy); // throws on unknown
    if (tasks.n_ingredients < 4 || tasks.n_categories < 2 ||
        tasks.n_categories > tasks.n_ingredients)
        throw ConfigError("tasks: need n_ingredients >= 4 and 2 <= n_categories <= n_ingredients");
    for (double w : tasks.task_mix)
        if (w < 0.0) throw ConfigError("tasks.task_mix entries must be >= 0");
    if (eval.n_samples < 1 || eval.max_new_tokens < 1)
        throw ConfigError("eval section entries must be positive");
    if (pretrain.total_iters < 0 || pretrain.grad_accum < 1)
        throw ConfigError("pretrain section entries out of range");
    train.validate();
    const TokenLayout probe{tasks.n_ingredients, tasks.n_categories};
    transformer_config(probe.vocab_size()).validate();
}

std::string ExperimentConfig::hash() const {
    const std::string dump = to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

TransformerConfig ExperimentConfig::transformer_config(int vocab_size) const {
    TransformerConfig tc;
    tc.vocab_size = vocab_size;
    tc.d_model = model.d_model;
    tc.n_heads = model.n_heads;
    tc.n_blocks = model.n_blocks;
    tc.max_seq_len = model.max_seq_len;
    tc.adapted_projections = model.adapted_projections;
    tc.rank_list = rank_list;
    tc.alpha = alpha;
    tc.dropout_rate = dropout_rate;
    tc.strategy = strategy_from_name(strategy);
    return tc;
}

TrainConfig ExperimentConfig::pretrain_config() const {
    TrainConfig pc = train;
    pc.lr = pretrain.lr;
    pc.warmup_iters = pretrain.warmup_iters;
    pc.total_iters = pretrain.total_iters;
    pc.grad_accum = pretrain.grad_accum;
    pc.seed = seed;
    return pc;
}

std::string default_out_root() {
    if (const char* env = std::getenv("RODE_OUT_ROOT"); env && *env) return env;
    return "runs";
}

std::string resolve_out_dir(const ExperimentConfig& cfg) {
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    return (fs::path(default_out_root()) / cfg.hash()).string();
}

namespace {

void write_metrics_log(const std::string& path, const std::vector<StepRecord>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open metrics log " + path);
    for (const auto& r : log) {
        ojson j;
        j["step"] = r.step;
        j["lr"] = r.lr;
        j["loss"] = r.loss;
        ojson tl;
        for (int t = 0; t < kNumTasks; ++t) tl[task_name(static_cast<TaskId>(t))] = r.task_loss[t];
        j["task_loss"] = tl;
        out << j.dump() << "\n";
    }
}

} // namespace

RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    fs::create_directories(out_dir);

    SyntheticWorld world = generate_world(cfg.seed, cfg.tasks.n_ingredients,
                                          cfg.tasks.n_categories);
    Rng root(cfg.seed);
    Rng model_rng = root.split("model");
    ToyTransformer model(cfg.transformer_config(world.layout.vocab_size()), model_rng);

    RunArtifacts art;
    art.out_dir = out_dir;

    // pretrain surrogate: the base memorizes the world, then freezes
    if (cfg.pretrain.total_iters > 0) {
        Rng pre_rng = root.split("pretrain");
        TrainResult pre = train(model, world, cfg.pretrain_config(), cfg.tasks.task_mix, pre_rng);
        write_metrics_log((fs::path(out_dir) / "pretrain_metrics.jsonl").string(), pre.log);
        art.train_aborted = art.train_aborted || pre.aborted;
    }
    model.freeze_base();
    Rng attach_rng = root.split("attach");
    model.attach_adapters(attach_rng);

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    Rng ft_rng = root.split("finetune");
    TrainResult ft = train(model, world, tc, cfg.tasks.task_mix, ft_rng);
    art.train_aborted = art.train_aborted || ft.aborted;
    art.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    write_metrics_log(art.metrics_path, ft.log);

    art.checkpoint_path = (fs::path(out_dir) / "checkpoint.bin").string();
    save_checkpoint(art.checkpoint_path, cfg.to_json().dump(), model.parameters());

    Rng eval_rng = root.split("evalset");
    const auto eval_set =
        sample_batch(world, cfg.tasks.task_mix, cfg.eval.n_samples, eval_rng);
    std::vector<PerSampleRecord> dump;
    art.report = evaluate(greedy_predictor(model, cfg.eval.max_new_tokens), eval_set,
                          world.layout, &dump);

    if (cfg.trace) {
        const auto traces = collect_traces(model, eval_set);
        art.report.has_sparsity = true;
        art.report.zero_gate_fraction = trace_zero_fraction(traces);
        for (int t = 0; t < kNumTasks; ++t) {
            std::vector<RouterTrace> task_traces;
            for (const auto& tr : traces)
                if (tr.task_id == static_cast<TaskId>(t)) task_traces.push_back(tr);
            if (task_traces.empty()) continue;
            const std::string base =
                (fs::path(out_dir) / ("heatmap_" + std::string(task_name(static_cast<TaskId>(t)))))
                    .string();
            export_heatmap(task_traces, base + ".csv", base + ".pgm");
        }
    }
    write_eval_report(art.report, (fs::path(out_dir) / "eval.json").string());
    write_per_sample_dump(dump, (fs::path(out_dir) / "per_sample.jsonl").string());

    const double wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    ojson manifest;
    manifest["artifact_version"] = kArtifactVersion;
    manifest["created_utc"] = iso8601_utc_now();
    manifest["wall_seconds"] = wall_seconds;
    manifest["seed"] = cfg.seed;
    manifest["config_hash"] = cfg.hash();
    manifest["config"] = cfg.to_json();
    std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::binary);
    if (!mf) throw IoError("cannot write manifest under " + out_dir);
    mf << manifest.dump(2) << "\n";
    return art;
}

LoadedModel load_model_from_checkpoint(const std::string& checkpoint_path) {
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    LoadedModel lm;
    lm.cfg = ExperimentConfig::from_json(json::parse(ckpt.config_json));
    lm.world = generate_world(lm.cfg.seed, lm.cfg.tasks.n_ingredients, lm.cfg.tasks.n_categories);
    Rng root(lm.cfg.seed);
    Rng model_rng = root.split("model");
    lm.model = std::make_unique<ToyTransformer>(
        lm.cfg.transformer_config(lm.world.layout.vocab_size()), model_rng);
    lm.model->freeze_base();
    Rng attach_rng = root.split("attach");
    lm.model->attach_adapters(attach_rng);
    restore_parameters(*lm.model, ckpt);
    return lm;
}

std::vector<VariantResult> compare_variants(const ExperimentConfig& base,
                                            const std::vector<VariantSpec>& variants,
                                            const std::vector<std::uint64_t>& seeds) {
    if (variants.empty() || seeds.empty())
        throw ConfigError("compare_variants: need at least one variant and one seed");
    std::vector<VariantResult> results(variants.size());
    for (std::size_t v = 0; v < variants.size(); ++v) results[v].spec = variants[v];

    for (std::uint64_t seed : seeds) {
        ExperimentConfig seed_cfg = base;
        seed_cfg.seed = seed;
        SyntheticWorld world =
            generate_world(seed, seed_cfg.tasks.n_ingredients, seed_cfg.tasks.n_categories);
        Rng root(seed);

        // shared pretrained backbone for this seed
        std::map<std::string, Matrix> base_weights;
        {
            Rng model_rng = root.split("model");
            ToyTransformer pre_model(seed_cfg.transformer_config(world.layout.vocab_size()),
                                     model_rng);
            if (seed_cfg.pretrain.total_iters > 0) {
                Rng pre_rng = root.split("pretrain");
                train(pre_model, world, seed_cfg.pretrain_config(), seed_cfg.tasks.task_mix,
                      pre_rng);
            }
            for (const auto& p : pre_model.base_parameters())
                base_weights[p.name] = p.node->value;
        }

        for (std::size_t v = 0; v < variants.size(); ++v) {
            ExperimentConfig vc = seed_cfg;
            vc.strategy = variants[v].strategy;
            vc.rank_list = variants[v].rank_list;
            vc.validate();

            Rng model_rng = root.split("model");
            ToyTransformer model(vc.transformer_config(world.layout.vocab_size()), model_rng);
            for (auto& p : model.base_parameters()) p.node->value = base_weights.at(p.name);
            model.freeze_base();
            Rng attach_rng = root.split("attach");
            model.attach_adapters(attach_rng);

            TrainConfig tc = vc.train;
            tc.seed = seed;
            Rng ft_rng = root.split("finetune");
            train(model, world, tc, vc.tasks.task_mix, ft_rng);

            Rng eval_rng = root.split("evalset");
            const auto eval_set =
                sample_batch(world, vc.tasks.task_mix, vc.eval.n_samples, eval_rng);
            EvalReport rep = evaluate(greedy_predictor(model, vc.eval.max_new_tokens), eval_set,
                                      world.layout);
            results[v].seed_reports.push_back(rep);
            results[v].seed_scores.push_back(rep.score());
            results[v].adapter_parameters = model.adapter_parameter_count();
        }
    }

    for (auto& r : results) {
        double sum = 0.0;
        for (double s : r.seed_scores) sum += s;
        r.mean_score = sum / static_cast<double>(r.seed_scores.size());
    }
    return results;
}

std::string comparison_table(const std::vector<VariantResult>& results) {
    std::ostringstream os;
    os << "variant        strategy  ranks          params   mean_score  iou     pmae    seeds\n";
    for (const auto& r : results) {
        std::ostringstream ranks;
        ranks << "[";
        for (std::size_t i = 0; i < r.spec.rank_list.size(); ++i)
            ranks << (i ? "," : "") << r.spec.rank_list[i];
        ranks << "]";
        double iou_mean = 0.0, pmae_mean = 0.0;
        for (const auto& rep : r.seed_reports) {
            iou_mean += rep.ingredient_iou;
            pmae_mean += rep.nutrition_pmae_avg;
        }
        iou_mean /= static_cast<double>(r.seed_reports.size());
        pmae_mean /= static_cast<double>(r.seed_reports.size());
        char line[160];
        std::snprintf(line, sizeof line, "%-14s %-9s %-14s %-8zu %-11.4f %-7.4f %-7.2f ",
                      r.spec.name.c_str(), r.spec.strategy.c_str(), ranks.str().c_str(),
                      r.adapter_parameters, r.mean_score, iou_mean, pmae_mean);
        os << line;
        for (std::size_t i = 0; i < r.seed_scores.size(); ++i) {
            char sc[24];
            std::snprintf(sc, sizeof sc, "%s%.4f", i ? " " : "", r.seed_scores[i]);
            os << sc;
        }
        os << "\n";
    }
    return os.str();
}

} // namespace rode
