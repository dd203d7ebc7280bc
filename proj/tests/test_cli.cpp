#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const char* kCli = RODE_CLI_PATH;

struct CmdResult {
    int exit_code;
    std::string output; // stdout + stderr
};

CmdResult run(const std::string& args) {
    const std::string out_file = "/tmp/rode_cli_out.txt";
    const std::string cmd = std::string(kCli) + " " + args + " > " + out_file + " 2>&1";
    const int rc = std::system(cmd.c_str());
    std::ifstream f(out_file);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return {WEXITSTATUS(rc), text};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_config(const fs::path& path, const std::string& body) {
    std::ofstream f(path);
    f << body;
}

const char* kTinyConfig = R"({
  "seed": 5,
  "model": {"d_model": 16},
  "tasks": {"n_ingredients": 8, "n_categories": 2},
  "train": {"total_iters": 6, "grad_accum": 1, "warmup_iters": 2},
  "pretrain": {"total_iters": 4, "grad_accum": 1, "warmup_iters": 2},
  "eval": {"n_samples": 12}
})";

} // namespace

TEST_CASE("train: minimal config produces the run artifacts") {
    const fs::path dir = "/tmp/rode_cli_train";
    fs::remove_all(dir);
    write_config("/tmp/rode_cli_cfg.json", kTinyConfig);
    auto r = run("train --config /tmp/rode_cli_cfg.json --out " + dir.string());
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    for (const char* f : {"checkpoint.bin", "metrics.jsonl", "pretrain_metrics.jsonl",
                          "eval.json", "per_sample.jsonl", "manifest.json"})
        CHECK(fs::exists(dir / f));
}

TEST_CASE("train: invalid configs exit 1 with a field-level message") {
    write_config("/tmp/rode_cli_bad1.json",
                 R"({"model": {"d_model": 8}, "rank_list": [16]})");
    auto r1 = run("train --config /tmp/rode_cli_bad1.json");
    CHECK(r1.exit_code == 1);
    CHECK(r1.output.find("rank") != std::string::npos);

    write_config("/tmp/rode_cli_bad2.json", R"({"modle": {}})");
    auto r2 = run("train --config /tmp/rode_cli_bad2.json");
    CHECK(r2.exit_code == 1);
    CHECK(r2.output.find("modle") != std::string::npos);

    auto r3 = run("train --config /tmp/rode_cli_missing.json");
    CHECK(r3.exit_code != 0);
}

TEST_CASE("train: rerun with identical config and seed is byte-identical") {
    write_config("/tmp/rode_cli_cfg.json", kTinyConfig);
    fs::remove_all("/tmp/rode_cli_a");
    fs::remove_all("/tmp/rode_cli_b");
    CHECK(run("train --config /tmp/rode_cli_cfg.json --out /tmp/rode_cli_a").exit_code == 0);
    CHECK(run("train --config /tmp/rode_cli_cfg.json --out /tmp/rode_cli_b").exit_code == 0);
    CHECK(slurp("/tmp/rode_cli_a/metrics.jsonl") == slurp("/tmp/rode_cli_b/metrics.jsonl"));
    CHECK(slurp("/tmp/rode_cli_a/checkpoint.bin") == slurp("/tmp/rode_cli_b/checkpoint.bin"));
    CHECK(slurp("/tmp/rode_cli_a/eval.json") == slurp("/tmp/rode_cli_b/eval.json"));
}

TEST_CASE("seed override changes the outputs") {
    write_config("/tmp/rode_cli_cfg.json", kTinyConfig);
    fs::remove_all("/tmp/rode_cli_s9");
    CHECK(run("train --config /tmp/rode_cli_cfg.json --out /tmp/rode_cli_s9 --seed-override 9")
              .exit_code == 0);
    CHECK(slurp("/tmp/rode_cli_s9/metrics.jsonl") != slurp("/tmp/rode_cli_a/metrics.jsonl"));
}

TEST_CASE("eval and heatmap run against a produced checkpoint") {
    auto r = run("eval --checkpoint /tmp/rode_cli_a/checkpoint.bin --out /tmp/rode_cli_eval");
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    CHECK(fs::exists("/tmp/rode_cli_eval/eval.json"));

    auto h = run("heatmap --checkpoint /tmp/rode_cli_a/checkpoint.bin --task all --out "
                 "/tmp/rode_cli_heat");
    CAPTURE(h.output);
    CHECK(h.exit_code == 0);
    CHECK(fs::exists("/tmp/rode_cli_heat/heatmap_ingredient.csv"));
    CHECK(fs::exists("/tmp/rode_cli_heat/heatmap_ingredient.pgm"));

    auto m = run("eval --checkpoint /tmp/rode_cli_nothing.bin");
    CHECK(m.exit_code != 0);
}

TEST_CASE("commands do not mutate their input files") {
    write_config("/tmp/rode_cli_cfg.json", kTinyConfig);
    const std::string before_cfg = slurp("/tmp/rode_cli_cfg.json");
    const std::string before_ckpt = slurp("/tmp/rode_cli_a/checkpoint.bin");
    (void)run("eval --checkpoint /tmp/rode_cli_a/checkpoint.bin --out /tmp/rode_cli_eval2");
    CHECK(slurp("/tmp/rode_cli_cfg.json") == before_cfg);
    CHECK(slurp("/tmp/rode_cli_a/checkpoint.bin") == before_ckpt);
}

TEST_CASE("gradcheck: default toy config passes") {
    auto r = run("gradcheck");
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("PASS") != std::string::npos);
}

TEST_CASE("bench: exports line-delimited samples") {
    write_config("/tmp/rode_cli_cfg.json", kTinyConfig);
    auto r = run("bench --config /tmp/rode_cli_cfg.json --out /tmp/rode_cli_bench.jsonl "
                 "--count 25");
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    std::ifstream f("/tmp/rode_cli_bench.jsonl");
    int lines = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++lines;
    CHECK(lines == 25);
}

TEST_CASE("compare: two tiny variants emit an ordered table") {
    write_config("/tmp/rode_cli_cmp.json", R"({
      "seed": 3,
      "model": {"d_model": 16},
      "tasks": {"n_ingredients": 8, "n_categories": 2},
      "train": {"total_iters": 5, "grad_accum": 1, "warmup_iters": 1},
      "pretrain": {"total_iters": 3, "grad_accum": 1, "warmup_iters": 1},
      "eval": {"n_samples": 8},
      "compare": {
        "variants": [
          {"name": "lr", "strategy": "lr", "rank_list": [2, 4]},
          {"name": "softmax", "strategy": "softmax", "rank_list": [2, 4]}
        ],
        "seeds": [3, 4]
      }
    })");
    fs::remove_all("/tmp/rode_cli_cmp");
    auto r = run("compare --config /tmp/rode_cli_cmp.json --out /tmp/rode_cli_cmp");
    CAPTURE(r.output);
    CHECK(r.exit_code == 0);
    CHECK(fs::exists("/tmp/rode_cli_cmp/comparison.txt"));
    CHECK(fs::exists("/tmp/rode_cli_cmp/comparison.json"));
    CHECK(r.output.find("lr") != std::string::npos);
    CHECK(r.output.find("softmax") != std::string::npos);
}
