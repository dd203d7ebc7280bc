#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rode/errors.hpp"
#include "rode/router.hpp"

using namespace rode;

namespace {

// Router that reproduces given logits for the all-ones input: W = 0, b = logits.
Router fixed_logit_router(const std::vector<double>& logits, RouteStrategy strategy) {
    Router r;
    r.strategy = strategy;
    r.weight = make_leaf(Matrix::zeros(logits.size(), 2), true);
    Matrix b(logits.size(), 1);
    for (std::size_t i = 0; i < logits.size(); ++i) b.at(i, 0) = logits[i];
    r.bias = make_leaf(b, true);
    return r;
}

NodePtr ones_input(std::size_t rows, std::size_t cols = 1) {
    return make_leaf(Matrix(rows, cols, 1.0), false);
}

std::vector<double> gate_column(const NodePtr& gates, std::size_t j = 0) {
    std::vector<double> out;
    for (std::size_t i = 0; i < gates->value.rows; ++i) out.push_back(gates->value.at(i, j));
    return out;
}

} // namespace

TEST_CASE("strategy names round-trip") {
    for (auto s : {RouteStrategy::kLinearRectified, RouteStrategy::kSoftmax,
                   RouteStrategy::kTopOne})
        CHECK(strategy_from_name(strategy_name(s)) == s);
    CHECK_THROWS_AS(strategy_from_name("dense"), ConfigError);
}

TEST_CASE("LR gates: rectified logits with exact zeros") {
    Router r = fixed_logit_router({-0.5, 0.2, 0.0, 1.3}, RouteStrategy::kLinearRectified);
    auto g = route(r, ones_input(2));
    CHECK(gate_column(g) == std::vector<double>{0.0, 0.2, 0.0, 1.3});
    CHECK(gate_sparsity(gate_column(g)) == 0.5);
}

TEST_CASE("softmax gates: symmetric case, strictly positive, sum to one") {
    Router r = fixed_logit_router({0.0, 0.0, 0.0, 0.0}, RouteStrategy::kSoftmax);
    auto g = route(r, ones_input(2));
    for (double v : gate_column(g)) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(gate_sparsity(gate_column(g)) == 0.0);
}

TEST_CASE("top-1 gates: softmax mass at the argmax only") {
    Router r = fixed_logit_router({1.0, 3.0, 2.0, 0.0}, RouteStrategy::kTopOne);
    auto g = route(r, ones_input(2));
    const auto gates = gate_column(g);
    for (std::size_t i = 0; i < 4; ++i) {
        if (i == 1)
            CHECK(gates[i] > 0.0);
        else
            CHECK(gates[i] == 0.0);
    }
    // gate value is the argmax softmax probability
    double denom = 0.0;
    for (double z : {1.0, 3.0, 2.0, 0.0}) denom += std::exp(z - 3.0);
    CHECK(gates[1] == doctest::Approx(1.0 / denom).epsilon(1e-12));
    CHECK(gate_sparsity(gates) == 0.75);
}

TEST_CASE("gate_sparsity threshold semantics") {
    CHECK(gate_sparsity({0.0, 0.2, 0.0, 1.3}) == 0.5);
    CHECK(gate_sparsity({0.1, 0.2}, 0.15) == 0.5);
    CHECK(gate_sparsity({}) == 0.0);
}

TEST_CASE("argmax invariance under positive scaling and monotone transforms") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> logits(5);
        for (auto& v : logits) v = rng.normal(0.0, 1.5);
        const double c = 0.1 + 3.0 * rng.uniform();

        for (auto strategy : {RouteStrategy::kLinearRectified, RouteStrategy::kSoftmax}) {
            auto g1 = gate_column(route(fixed_logit_router(logits, strategy), ones_input(2)));
            std::vector<double> scaled(logits);
            for (auto& v : scaled) v *= c;
            auto g2 = gate_column(route(fixed_logit_router(scaled, strategy), ones_input(2)));
            // the value ordering of the gates is unchanged
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t j = 0; j < 5; ++j)
                    if (g1[i] < g1[j]) CHECK(g2[i] <= g2[j]);
        }

        auto top_index = [&](const std::vector<double>& ls) {
            auto g = gate_column(route(fixed_logit_router(ls, RouteStrategy::kTopOne),
                                       ones_input(2)));
            return std::distance(g.begin(), std::max_element(g.begin(), g.end()));
        };
        const auto base_idx = top_index(logits);
        std::vector<double> affine(logits), expd(logits), cubed(logits);
        for (auto& v : affine) v = 2.5 * v + 7.0;
        for (auto& v : expd) v = std::exp(v);
        for (auto& v : cubed) v = v * v * v + v;
        CHECK(top_index(affine) == base_idx);
        CHECK(top_index(expd) == base_idx);
        CHECK(top_index(cubed) == base_idx);
    }
}

TEST_CASE("route is differentiable: finite differences on router parameters") {
    Rng rng(23);
    for (auto strategy : {RouteStrategy::kLinearRectified, RouteStrategy::kSoftmax}) {
        Rng init = rng.split(strategy_name(strategy));
        Router r = make_router(4, 6, strategy, init);
        // push pre-activations away from the kink
        for (std::size_t i = 0; i < 4; ++i) r.bias->value.at(i, 0) = (i % 2 ? 0.8 : -0.7);
        auto x = make_leaf(Matrix::gaussian(6, 3, 0.0, 1.0, init), false);

        auto rebuild = [&] { return route(r, x); };
        NodePtr out = rebuild();
        Matrix probe = Matrix::gaussian(out->value.rows, out->value.cols, 0.0, 1.0, init);
        r.weight->zero_grad();
        r.bias->zero_grad();
        backward(out, probe);

        auto loss = [&] {
            NodePtr o = rebuild();
            double s = 0.0;
            for (std::size_t i = 0; i < o->value.data.size(); ++i)
                s += o->value.data[i] * probe.data[i];
            return s;
        };
        const double eps = 1e-5;
        for (NodePtr param : {r.weight, r.bias}) {
            for (std::size_t i = 0; i < param->value.data.size(); ++i) {
                const double orig = param->value.data[i];
                param->value.data[i] = orig + eps;
                const double lp = loss();
                param->value.data[i] = orig - eps;
                const double lm = loss();
                param->value.data[i] = orig;
                const double numeric = (lp - lm) / (2.0 * eps);
                const double a = param->grad.data[i];
                const double rel =
                    std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
                CHECK(rel < 1e-4);
            }
        }
    }
}

TEST_CASE("router initialization: zero bias, expert count, per-token gates") {
    Rng rng(3);
    Router r = make_router(4, 16, RouteStrategy::kLinearRectified, rng);
    CHECK(r.n_experts() == 4);
    CHECK(r.d_in() == 16);
    CHECK(r.parameter_count() == 4u * 16 + 4);
    for (double b : r.bias->value.data) CHECK(b == 0.0);

    auto x = make_leaf(Matrix::gaussian(16, 5, 0.0, 1.0, rng), false);
    auto g = route(r, x);
    CHECK(g->value.rows == 4);
    CHECK(g->value.cols == 5); // one gate vector per token column
}
