#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>

#include "rode/errors.hpp"
#include "rode/tasks.hpp"

using namespace rode;

TEST_CASE("world generation: deterministic, seeded, validated") {
    SyntheticWorld a = generate_world(11, 20, 5);
    SyntheticWorld b = generate_world(11, 20, 5);
    CHECK(a.nutrition_table.size() == 20);
    CHECK(a.preferred_category == b.preferred_category);
    CHECK(a.verb == b.verb);
    for (std::size_t i = 0; i < 20; ++i)
        CHECK(a.nutrition_table[i].fields() == b.nutrition_table[i].fields());

    SyntheticWorld c = generate_world(12, 20, 5);
    bool differs = false;
    for (std::size_t i = 0; i < 20; ++i)
        differs = differs || a.nutrition_table[i].fields() != c.nutrition_table[i].fields();
    CHECK(differs);

    // each category owns a distinct nonempty preferred subset
    std::set<int> cats(a.preferred_category.begin(), a.preferred_category.end());
    CHECK(cats.size() == 5);

    CHECK_THROWS_AS(generate_world(1, 3, 2), ConfigError);
    CHECK_THROWS_AS(generate_world(1, 8, 1), ConfigError);
    CHECK_THROWS_AS(generate_world(1, 4, 5), ConfigError);
}

TEST_CASE("sample_batch: mix weights control the task draw") {
    SyntheticWorld w = generate_world(3, 16, 4);
    Rng rng(5);
    for (const auto& s : sample_batch(w, {1.0, 0.0, 0.0, 0.0}, 50, rng))
        CHECK(s.task_id == TaskId::kIngredient);

    Rng rng2(6);
    auto batch = sample_batch(w, {1.0, 1.0, 1.0, 1.0}, 400, rng2);
    std::array<int, kNumTasks> counts{};
    for (const auto& s : batch) ++counts[static_cast<int>(s.task_id)];
    for (int c : counts) {
        // binomial(400, 1/4) 99% interval around 100
        CHECK(c >= 78);
        CHECK(c <= 122);
    }

    Rng rng3(7);
    CHECK_THROWS_AS(sample_batch(w, {0.0, 0.0, 0.0, 0.0}, 4, rng3), ConfigError);
    CHECK_THROWS_AS(sample_batch(w, {-1.0, 1.0, 1.0, 1.0}, 4, rng3), ConfigError);
}

TEST_CASE("samples are well-formed and targets round-trip to ground truth") {
    SyntheticWorld w = generate_world(9, 16, 4);
    Rng rng(1);
    auto batch = sample_batch(w, {1.0, 1.0, 1.0, 1.0}, 200, rng);
    for (const auto& s : batch) {
        CHECK(s.prompt.front() == w.layout.tag_token(s.task_id));
        CHECK(!s.target.empty());
        CHECK(s.target.back() == TokenLayout::kEnd);

        const DecodeResult dec = decode_output(w.layout, s.task_id, s.target);
        CHECK(dec.valid);
        switch (s.task_id) {
        case TaskId::kIngredient:
            CHECK(dec.payload.ingredient_ids == s.truth.ingredient_ids);
            break;
        case TaskId::kRecipe:
            CHECK(dec.payload.recipe_tokens == s.truth.recipe_tokens);
            break;
        case TaskId::kNutrition:
            CHECK(dec.payload.nutrition.fields() == s.truth.nutrition.fields());
            break;
        case TaskId::kCategory:
            CHECK(dec.payload.category == s.truth.category);
            break;
        }
        // every task answer is a pure function of the ingredient set
        const GroundTruth again = make_ground_truth(w, s.truth.ingredient_ids);
        CHECK(again.category == s.truth.category);
        CHECK(again.recipe_tokens == s.truth.recipe_tokens);
        CHECK(again.nutrition.fields() == s.truth.nutrition.fields());
    }
}

TEST_CASE("aggregate_nutrition: identities and properties") {
    CHECK(aggregate_nutrition({}).fields() == NutritionRecord{}.fields());

    NutritionRecord a{100.0, 50.0, 3.0, 4.0, 5.0};
    CHECK(aggregate_nutrition({a}).fields() == a.fields());

    NutritionRecord b{20.0, 30.0, 1.0, 2.0, 3.0};
    NutritionRecord s = aggregate_nutrition({a, b});
    CHECK(s.mass == 120.0);
    CHECK(s.energy == 80.0);
    CHECK(s.fat == 4.0);
    CHECK(s.protein == 6.0);
    CHECK(s.carb == 8.0);

    // commutative and associative on exact-tenth values
    Rng rng(3);
    std::vector<NutritionRecord> rs;
    for (int i = 0; i < 5; ++i)
        rs.push_back({double(rng.uniform_int(0, 999)) / 10, double(rng.uniform_int(0, 999)) / 10,
                      double(rng.uniform_int(0, 99)) / 10, double(rng.uniform_int(0, 99)) / 10,
                      double(rng.uniform_int(0, 99)) / 10});
    NutritionRecord fwd = aggregate_nutrition(rs);
    std::vector<NutritionRecord> rev(rs.rbegin(), rs.rend());
    NutritionRecord bwd = aggregate_nutrition(rev);
    for (std::size_t f = 0; f < 5; ++f)
        CHECK(bwd.fields()[f] == doctest::Approx(fwd.fields()[f]).epsilon(1e-12));
    NutritionRecord nested =
        aggregate_nutrition({aggregate_nutrition({rs[0], rs[1]}),
                             aggregate_nutrition({rs[2], rs[3], rs[4]})});
    for (std::size_t f = 0; f < 5; ++f)
        CHECK(nested.fields()[f] == doctest::Approx(fwd.fields()[f]).epsilon(1e-12));

    NutritionRecord neg{-1.0, 0.0, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(aggregate_nutrition({neg}), DataError);
}

TEST_CASE("codec: ingredient set and fixed-point nutrition round-trips") {
    SyntheticWorld w = generate_world(2, 12, 3);

    GroundTruth t;
    t.ingredient_ids = {3, 7};
    auto toks = encode_target(w.layout, TaskId::kIngredient, t);
    auto dec = decode_output(w.layout, TaskId::kIngredient, toks);
    CHECK(dec.valid);
    CHECK(dec.payload.ingredient_ids == std::vector<int>{3, 7});

    GroundTruth n;
    n.nutrition = {120.5, 33.0, 0.4, 999.9, 0.0};
    auto ntoks = encode_target(w.layout, TaskId::kNutrition, n);
    auto ndec = decode_output(w.layout, TaskId::kNutrition, ntoks);
    CHECK(ndec.valid);
    CHECK(ndec.payload.nutrition.mass == 120.5);
    CHECK(ndec.payload.nutrition.energy == 33.0);
    CHECK(ndec.payload.nutrition.fat == 0.4);
    CHECK(ndec.payload.nutrition.protein == 999.9);
    CHECK(ndec.payload.nutrition.carb == 0.0);
}

TEST_CASE("codec: malformed output is flagged, never throws") {
    SyntheticWorld w = generate_world(2, 12, 3);

    GroundTruth n;
    n.nutrition = {120.5, 33.0, 0.4, 12.0, 7.7};
    auto ntoks = encode_target(w.layout, TaskId::kNutrition, n);
    std::vector<int> truncated(ntoks.begin(), ntoks.begin() + 7); // cut inside field 2
    auto tdec = decode_output(w.layout, TaskId::kNutrition, truncated);
    CHECK(!tdec.valid);
    CHECK(tdec.payload.nutrition.mass == 120.5); // parsed prefix survives

    // arbitrary junk for every task
    std::vector<int> junk = {w.layout.serve_token(), TokenLayout::kDot, 0, 1,
                             w.layout.ingredient_token(2)};
    for (int t = 0; t < kNumTasks; ++t) {
        auto d = decode_output(w.layout, static_cast<TaskId>(t), junk);
        CHECK(!d.valid);
    }

    // unsorted / duplicated ingredient output is salvaged but invalid
    std::vector<int> unsorted = {w.layout.ingredient_token(7), w.layout.ingredient_token(3),
                                 w.layout.ingredient_token(7), TokenLayout::kEnd};
    auto ud = decode_output(w.layout, TaskId::kIngredient, unsorted);
    CHECK(!ud.valid);
    CHECK(ud.payload.ingredient_ids == std::vector<int>{3, 7});

    CHECK(!decode_output(w.layout, TaskId::kCategory, {}).valid);
}

TEST_CASE("solvability: ground truth through codecs is exact for every task") {
    SyntheticWorld w = generate_world(21, 16, 4);
    Rng rng(2);
    auto batch = sample_batch(w, {1.0, 1.0, 1.0, 1.0}, 100, rng);
    for (const auto& s : batch) {
        const auto predicted = encode_target(w.layout, s.task_id, s.truth);
        CHECK(predicted == s.target);
    }
}

TEST_CASE("benchmark export/import round-trip") {
    SyntheticWorld w = generate_world(5, 16, 4);
    Rng rng(8);
    auto batch = sample_batch(w, {1.0, 1.0, 1.0, 1.0}, 40, rng);
    const std::string path = "/tmp/rode_test_bench.jsonl";
    export_benchmark(path, batch);
    auto loaded = import_benchmark(path);
    REQUIRE(loaded.size() == batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        CHECK(loaded[i].task_id == batch[i].task_id);
        CHECK(loaded[i].prompt == batch[i].prompt);
        CHECK(loaded[i].target == batch[i].target);
        CHECK(loaded[i].truth.ingredient_ids == batch[i].truth.ingredient_ids);
        CHECK(loaded[i].truth.nutrition.fields() == batch[i].truth.nutrition.fields());
    }
    std::remove(path.c_str());
}

TEST_CASE("quantize_tenths matches the tenths/10 representation") {
    CHECK(quantize_tenths(0.1 + 0.2) == 3.0 / 10.0);
    CHECK(quantize_tenths(120.449) == 120.4);
    CHECK(quantize_tenths(0.0) == 0.0);
}
