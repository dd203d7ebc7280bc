#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rode/rng.hpp"

namespace rode {

enum class TaskId { kIngredient = 0, kRecipe = 1, kNutrition = 2, kCategory = 3 };
inline constexpr int kNumTasks = 4;

const char* task_name(TaskId t);
TaskId task_from_name(const std::string& name);

// Per-dish nutrition totals. Energy in kilocalories, everything else grams.
struct NutritionRecord {
    double mass = 0.0;
    double energy = 0.0;
    double fat = 0.0;
    double protein = 0.0;
    double carb = 0.0;

    std::array<double, 5> fields() const { return {mass, energy, fat, protein, carb}; }
    static const std::array<const char*, 5>& field_names();
};

// Elementwise sum; throws DataError on a negative input field.
NutritionRecord aggregate_nutrition(const std::vector<NutritionRecord>& ingredients);

// Nearest multiple of 0.1, represented as tenths/10.0 so codec round-trips
// are bitwise.
double quantize_tenths(double v);

// Fixed token id assignment for a world of given size. Layout:
//   [4 task tags][END][SEP]['.'][digits 0-9][ingredients][categories][verbs][SERVE]
struct TokenLayout {
    int n_ingredients = 0;
    int n_categories = 0;
    int n_verbs = 4;

    static constexpr int kTagBase = 0; // one tag per TaskId, in enum order
    static constexpr int kEnd = 4;
    static constexpr int kSep = 5;
    static constexpr int kDot = 6;
    static constexpr int kDigit0 = 7;

    int tag_token(TaskId t) const { return kTagBase + static_cast<int>(t); }
    int digit_token(int d) const { return kDigit0 + d; }
    int ingredient_token(int i) const { return kDigit0 + 10 + i; }
    int category_token(int c) const { return kDigit0 + 10 + n_ingredients + c; }
    int verb_token(int v) const { return kDigit0 + 10 + n_ingredients + n_categories + v; }
    int serve_token() const { return kDigit0 + 10 + n_ingredients + n_categories + n_verbs; }
    int vocab_size() const { return serve_token() + 1; }

    bool is_digit(int tok) const { return tok >= kDigit0 && tok < kDigit0 + 10; }
    bool is_ingredient(int tok) const {
        return tok >= ingredient_token(0) && tok < ingredient_token(n_ingredients);
    }
    bool is_category(int tok) const {
        return tok >= category_token(0) && tok < category_token(n_categories);
    }
    int ingredient_index(int tok) const { return tok - ingredient_token(0); }
    int category_index(int tok) const { return tok - category_token(0); }
};

// Task-specific answer payload. Only the field matching the task id is
// meaningful; decode keeps whatever could be salvaged from malformed output.
struct GroundTruth {
    std::vector<int> ingredient_ids; // ascending, unique
    std::vector<int> recipe_tokens;  // verb/ingredient token sequence ending in SERVE
    NutritionRecord nutrition;
    int category = 0;
};

struct TaskSample {
    TaskId task_id = TaskId::kIngredient;
    std::vector<int> prompt; // tag token + sorted ingredient tokens
    std::vector<int> target; // canonical serialization of `truth`
    GroundTruth truth;
};

// Deterministic toy universe: a fixed nutrition row per ingredient, disjoint
// category-preferred ingredient subsets, and a recipe grammar keyed by the
// ingredient set. Every task answer is a pure function of a dish's
// ingredient set, so the four tasks share latent structure.
struct SyntheticWorld {
    std::uint64_t seed = 0;
    int n_ingredients = 0;
    int n_categories = 0;
    int min_dish_size = 2;
    int max_dish_size = 3;
    TokenLayout layout;
    std::vector<NutritionRecord> nutrition_table; // one row per ingredient
    std::vector<int> preferred_category;          // ingredient -> category
    std::vector<int> verb;                        // ingredient -> verb index

    // Majority-preferred category of the set, ties to the lowest id.
    int category_of(const std::vector<int>& ingredient_ids) const;
    NutritionRecord dish_nutrition(const std::vector<int>& ingredient_ids) const;
    std::vector<int> recipe_of(const std::vector<int>& ingredient_ids) const;
};

SyntheticWorld generate_world(std::uint64_t seed, int n_ingredients, int n_categories);

GroundTruth make_ground_truth(const SyntheticWorld& world, const std::vector<int>& ingredient_ids);

std::vector<TaskSample> sample_batch(const SyntheticWorld& world,
                                     const std::array<double, kNumTasks>& task_mix,
                                     int batch_size, Rng& rng);

// --- codecs ----------------------------------------------------------------

std::vector<int> encode_target(const TokenLayout& layout, TaskId task, const GroundTruth& truth);

struct DecodeResult {
    GroundTruth payload;
    bool valid = false;
};

// Never throws on malformed input; returns best effort + validity flag.
DecodeResult decode_output(const TokenLayout& layout, TaskId task, const std::vector<int>& tokens);

// --- benchmark export/import (JSON lines) -----------------------------------

void export_benchmark(const std::string& path, const std::vector<TaskSample>& samples);
std::vector<TaskSample> import_benchmark(const std::string& path);

} // namespace rode
