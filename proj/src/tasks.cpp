#include "rode/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rode/errors.hpp"

namespace rode {

using json = nlohmann::ordered_json;

const char* task_name(TaskId t) {
    switch (t) {
    case TaskId::kIngredient: return "ingredient";
    case TaskId::kRecipe: return "recipe";
    case TaskId::kNutrition: return "nutrition";
    case TaskId::kCategory: return "category";
    }
    return "unknown";
}

TaskId task_from_name(const std::string& name) {
    for (int t = 0; t < kNumTasks; ++t)
        if (name == task_name(static_cast<TaskId>(t))) return static_cast<TaskId>(t);
    throw ConfigError("unknown task '" + name + "'");
}

const std::array<const char*, 5>& NutritionRecord::field_names() {
    static const std::array<const char*, 5> names = {"mass", "energy", "fat", "protein", "carb"};
    return names;
}

NutritionRecord aggregate_nutrition(const std::vector<NutritionRecord>& ingredients) {
    NutritionRecord total;
    for (const auto& r : ingredients) {
        for (double f : r.fields())
            if (f < 0.0) throw DataError("aggregate_nutrition: negative nutrition field");
        total.mass += r.mass;
        total.energy += r.energy;
        total.fat += r.fat;
        total.protein += r.protein;
        total.carb += r.carb;
    }
    return total;
}

double quantize_tenths(double v) {
    return static_cast<double>(std::llround(v * 10.0)) / 10.0;
}

int SyntheticWorld::category_of(const std::vector<int>& ingredient_ids) const {
    std::vector<int> counts(n_categories, 0);
    for (int i : ingredient_ids) ++counts[preferred_category[i]];
    int best = 0;
    for (int c = 1; c < n_categories; ++c)
        if (counts[c] > counts[best]) best = c;
    return best;
}

NutritionRecord SyntheticWorld::dish_nutrition(const std::vector<int>& ingredient_ids) const {
    std::vector<NutritionRecord> rows;
    rows.reserve(ingredient_ids.size());
    for (int i : ingredient_ids) rows.push_back(nutrition_table[i]);
    NutritionRecord total = aggregate_nutrition(rows);
    total.mass = quantize_tenths(total.mass);
    total.energy = quantize_tenths(total.energy);
    total.fat = quantize_tenths(total.fat);
    total.protein = quantize_tenths(total.protein);
    total.carb = quantize_tenths(total.carb);
    return total;
}

std::vector<int> SyntheticWorld::recipe_of(const std::vector<int>& ingredient_ids) const {
    std::vector<int> tokens;
    for (int i : ingredient_ids) {
        tokens.push_back(layout.verb_token(verb[i]));
        tokens.push_back(layout.ingredient_token(i));
    }
    tokens.push_back(layout.serve_token());
    return tokens;
}

SyntheticWorld generate_world(std::uint64_t seed, int n_ingredients, int n_categories) {
    if (n_ingredients < 4)
        throw ConfigError("generate_world: need at least 4 ingredients, got " +
                          std::to_string(n_ingredients));
    if (n_categories < 2)
        throw ConfigError("generate_world: need at least 2 categories, got " +
                          std::to_string(n_categories));
    if (n_categories > n_ingredients)
        throw ConfigError("generate_world: more categories than ingredients");

    SyntheticWorld w;
    w.seed = seed;
    w.n_ingredients = n_ingredients;
    w.n_categories = n_categories;
    w.layout.n_ingredients = n_ingredients;
    w.layout.n_categories = n_categories;

    Rng root(seed);
    Rng nut = root.split("nutrition");
    w.nutrition_table.resize(n_ingredients);
    for (auto& r : w.nutrition_table) {
        // tenths kept small enough that a max-size dish stays at two integer
        // digits per field
        r.mass = static_cast<double>(nut.uniform_int(50, 300)) / 10.0;
        r.energy = static_cast<double>(nut.uniform_int(50, 300)) / 10.0;
        r.fat = static_cast<double>(nut.uniform_int(10, 150)) / 10.0;
        r.protein = static_cast<double>(nut.uniform_int(10, 150)) / 10.0;
        r.carb = static_cast<double>(nut.uniform_int(10, 150)) / 10.0;
    }

    Rng assign = root.split("assign");
    std::vector<int> shuffled(n_ingredients);
    for (int i = 0; i < n_ingredients; ++i) shuffled[i] = i;
    for (int i = n_ingredients - 1; i > 0; --i) {
        const int j = static_cast<int>(assign.uniform_int(0, i));
        std::swap(shuffled[i], shuffled[j]);
    }
    w.preferred_category.resize(n_ingredients);
    for (int i = 0; i < n_ingredients; ++i)
        w.preferred_category[shuffled[i]] = i % n_categories;

    Rng verbs = root.split("verbs");
    w.verb.resize(n_ingredients);
    for (auto& v : w.verb) v = static_cast<int>(verbs.uniform_int(0, w.layout.n_verbs - 1));

    w.max_dish_size = std::min(w.max_dish_size, n_ingredients);
    w.min_dish_size = std::min(w.min_dish_size, w.max_dish_size);
    return w;
}

GroundTruth make_ground_truth(const SyntheticWorld& world,
                              const std::vector<int>& ingredient_ids) {
    GroundTruth t;
    t.ingredient_ids = ingredient_ids;
    std::sort(t.ingredient_ids.begin(), t.ingredient_ids.end());
    t.ingredient_ids.erase(std::unique(t.ingredient_ids.begin(), t.ingredient_ids.end()),
                           t.ingredient_ids.end());
    t.recipe_tokens = world.recipe_of(t.ingredient_ids);
    t.nutrition = world.dish_nutrition(t.ingredient_ids);
    t.category = world.category_of(t.ingredient_ids);
    return t;
}

namespace {

std::vector<int> sample_dish_ingredients(const SyntheticWorld& w, Rng& rng) {
    const int k = static_cast<int>(rng.uniform_int(w.min_dish_size, w.max_dish_size));
    const int c = static_cast<int>(rng.uniform_int(0, w.n_categories - 1));
    std::vector<int> preferred;
    for (int i = 0; i < w.n_ingredients; ++i)
        if (w.preferred_category[i] == c) preferred.push_back(i);

    std::vector<int> chosen;
    auto contains = [&](int id) {
        return std::find(chosen.begin(), chosen.end(), id) != chosen.end();
    };
    // bias toward the category's preferred subset so the set carries the label
    const int n_pref = std::min<int>(static_cast<int>(preferred.size()), std::max(1, k - 1));
    while (static_cast<int>(chosen.size()) < n_pref) {
        const int id = preferred[rng.uniform_int(0, static_cast<std::int64_t>(preferred.size()) - 1)];
        if (!contains(id)) chosen.push_back(id);
    }
    while (static_cast<int>(chosen.size()) < k) {
        const int id = static_cast<int>(rng.uniform_int(0, w.n_ingredients - 1));
        if (!contains(id)) chosen.push_back(id);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

void append_fixed_point(const TokenLayout& layout, double v, std::vector<int>& out) {
    long long tenths = std::llround(v * 10.0);
    if (tenths < 0) tenths = 0;
    const long long whole = tenths / 10;
    const long long frac = tenths % 10;
    std::string digits = std::to_string(whole);
    for (char c : digits) out.push_back(layout.digit_token(c - '0'));
    out.push_back(TokenLayout::kDot);
    out.push_back(layout.digit_token(static_cast<int>(frac)));
}

// Tokens -> value; reports whether the span was a well-formed fixed-point
// number. Best effort otherwise, clamped to [0, 999.9].
bool parse_fixed_point(const TokenLayout& layout, const std::vector<int>& tokens,
                       std::size_t begin, std::size_t end, double& out) {
    long long whole = 0, frac = 0;
    std::size_t i = begin;
    bool ok = end > begin;
    std::size_t n_whole = 0;
    for (; i < end && layout.is_digit(tokens[i]); ++i) {
        whole = std::min<long long>(whole * 10 + (tokens[i] - TokenLayout::kDigit0), 9999);
        ++n_whole;
    }
    ok = ok && n_whole >= 1 && n_whole <= 3;
    if (i < end && tokens[i] == TokenLayout::kDot) {
        ++i;
        if (i < end && layout.is_digit(tokens[i])) {
            frac = tokens[i] - TokenLayout::kDigit0;
            ++i;
        } else {
            ok = false;
        }
    } else {
        ok = false;
    }
    ok = ok && i == end;
    out = std::min(static_cast<double>(whole * 10 + frac) / 10.0, 999.9);
    return ok;
}

} // namespace

std::vector<int> encode_target(const TokenLayout& layout, TaskId task, const GroundTruth& truth) {
    std::vector<int> out;
    switch (task) {
    case TaskId::kIngredient:
        for (int i : truth.ingredient_ids) out.push_back(layout.ingredient_token(i));
        break;
    case TaskId::kRecipe:
        out = truth.recipe_tokens;
        break;
    case TaskId::kNutrition: {
        const auto fields = truth.nutrition.fields();
        for (std::size_t f = 0; f < fields.size(); ++f) {
            if (f) out.push_back(TokenLayout::kSep);
            append_fixed_point(layout, fields[f], out);
        }
        break;
    }
    case TaskId::kCategory:
        out.push_back(layout.category_token(truth.category));
        break;
    }
    out.push_back(TokenLayout::kEnd);
    return out;
}

DecodeResult decode_output(const TokenLayout& layout, TaskId task,
                           const std::vector<int>& tokens) {
    DecodeResult res;
    // everything up to the first END counts as the answer
    std::size_t end = tokens.size();
    bool saw_end = false;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] == TokenLayout::kEnd) {
            end = i;
            saw_end = true;
            break;
        }

    switch (task) {
    case TaskId::kIngredient: {
        bool well_formed = saw_end && end > 0;
        std::vector<int>& ids = res.payload.ingredient_ids;
        for (std::size_t i = 0; i < end; ++i) {
            if (!layout.is_ingredient(tokens[i])) {
                well_formed = false;
                continue;
            }
            ids.push_back(layout.ingredient_index(tokens[i]));
        }
        std::vector<int> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        well_formed = well_formed && sorted == ids &&
                      std::adjacent_find(ids.begin(), ids.end()) == ids.end();
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        res.valid = well_formed;
        break;
    }
    case TaskId::kRecipe: {
        res.payload.recipe_tokens.assign(tokens.begin(), tokens.begin() + end);
        res.valid = saw_end && end > 0;
        break;
    }
    case TaskId::kNutrition: {
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= end; ++i) {
            if (i == end || tokens[i] == TokenLayout::kSep) {
                spans.emplace_back(start, i);
                start = i + 1;
            }
        }
        bool well_formed = saw_end && spans.size() == 5;
        double fields[5] = {0, 0, 0, 0, 0};
        for (std::size_t f = 0; f < spans.size() && f < 5; ++f)
            well_formed &= parse_fixed_point(layout, tokens, spans[f].first, spans[f].second,
                                             fields[f]);
        if (spans.size() < 5) well_formed = false;
        res.payload.nutrition = {fields[0], fields[1], fields[2], fields[3], fields[4]};
        res.valid = well_formed;
        break;
    }
    case TaskId::kCategory: {
        res.valid = saw_end && end == 1 && layout.is_category(tokens[0]);
        res.payload.category =
            (end >= 1 && layout.is_category(tokens[0])) ? layout.category_index(tokens[0]) : 0;
        break;
    }
    }
    return res;
}

std::vector<TaskSample> sample_batch(const SyntheticWorld& world,
                                     const std::array<double, kNumTasks>& task_mix,
                                     int batch_size, Rng& rng) {
    double total = 0.0;
    for (double wgt : task_mix) {
        if (wgt < 0.0) throw ConfigError("sample_batch: negative task weight");
        total += wgt;
    }
    if (total <= 0.0) throw ConfigError("sample_batch: task mix sums to zero");

    std::vector<TaskSample> batch;
    batch.reserve(batch_size);
    for (int b = 0; b < batch_size; ++b) {
        const double u = rng.uniform() * total;
        double acc = 0.0;
        int task = kNumTasks - 1;
        for (int t = 0; t < kNumTasks; ++t) {
            acc += task_mix[t];
            if (u < acc) {
                task = t;
                break;
            }
        }
        TaskSample s;
        s.task_id = static_cast<TaskId>(task);
        const std::vector<int> ingredients = sample_dish_ingredients(world, rng);
        s.truth = make_ground_truth(world, ingredients);
        s.prompt.push_back(world.layout.tag_token(s.task_id));
        for (int i : s.truth.ingredient_ids) s.prompt.push_back(world.layout.ingredient_token(i));
        s.target = encode_target(world.layout, s.task_id, s.truth);
        batch.push_back(std::move(s));
    }
    return batch;
}

void export_benchmark(const std::string& path, const std::vector<TaskSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("export_benchmark: cannot open " + path);
    for (const auto& s : samples) {
        json rec;
        rec["task"] = task_name(s.task_id);
        rec["prompt"] = s.prompt;
        rec["target"] = s.target;
        json truth;
        truth["ingredients"] = s.truth.ingredient_ids;
        truth["recipe"] = s.truth.recipe_tokens;
        truth["nutrition"] = {{"mass", s.truth.nutrition.mass},
                              {"energy", s.truth.nutrition.energy},
                              {"fat", s.truth.nutrition.fat},
                              {"protein", s.truth.nutrition.protein},
                              {"carb", s.truth.nutrition.carb}};
        truth["category"] = s.truth.category;
        rec["truth"] = truth;
        out << rec.dump() << "\n";
    }
}

std::vector<TaskSample> import_benchmark(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("import_benchmark: cannot open " + path);
    std::vector<TaskSample> samples;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line);
        TaskSample s;
        s.task_id = task_from_name(rec.at("task").get<std::string>());
        s.prompt = rec.at("prompt").get<std::vector<int>>();
        s.target = rec.at("target").get<std::vector<int>>();
        const json& truth = rec.at("truth");
        s.truth.ingredient_ids = truth.at("ingredients").get<std::vector<int>>();
        s.truth.recipe_tokens = truth.at("recipe").get<std::vector<int>>();
        s.truth.nutrition.mass = truth.at("nutrition").at("mass").get<double>();
        s.truth.nutrition.energy = truth.at("nutrition").at("energy").get<double>();
        s.truth.nutrition.fat = truth.at("nutrition").at("fat").get<double>();
        s.truth.nutrition.protein = truth.at("nutrition").at("protein").get<double>();
        s.truth.nutrition.carb = truth.at("nutrition").at("carb").get<double>();
        s.truth.category = truth.at("category").get<int>();
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace rode
