#include <doctest.h>

#include <cmath>

#include "nacforge/compress.hpp"
#include "nacforge/cost_model.hpp"
#include "nacforge/errors.hpp"
#include "test_util.hpp"

using namespace nac;

namespace {

ParamStore single_tensor(std::vector<double> values) {
    ParamStore s;
    LayerState layer;
    const auto n = static_cast<int>(values.size());
    layer.params.push_back({"weight", Tensor({n}, std::move(values)), {}, true});
    layer.params.push_back({"bias", Tensor({1}, {0.001}), {}, false});
    s.layers.push_back(std::move(layer));
    return s;
}

ParamStore random_pool(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return single_tensor(std::move(v));
}

SparsityPoint point(int bits, int it, double sparsity, double metric) {
    SparsityPoint p;
    p.bit_width = bits;
    p.iteration = it;
    p.sparsity = sparsity;
    p.metric = metric;
    return p;
}

SparsityCurve curve(int bits, std::vector<std::pair<double, double>> sm) {
    SparsityCurve c;
    c.bit_width = bits;
    for (std::size_t i = 0; i < sm.size(); ++i) c.points.push_back(point(bits, static_cast<int>(i), sm[i].first, sm[i].second));
    return c;
}

// Exhaustive lexicographic scan over all qualifying points.
std::pair<int, int> scan_oracle(const std::vector<SparsityCurve>& curves, double tol, MetricSense sense) {
    const bool hib = sense == MetricSense::HigherIsBetter;
    double ref = hib ? -1e300 : 1e300;
    for (const auto& c : curves) ref = hib ? std::max(ref, c.points[0].metric) : std::min(ref, c.points[0].metric);
    std::tuple<int, double, double> best{1 << 30, 0, 0};
    std::pair<int, int> where{-1, -1};
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            const bool ok = hib ? p.metric >= ref - tol * std::abs(ref) : p.metric <= ref + tol * std::abs(ref);
            if (!ok) continue;
            const std::tuple<int, double, double> key{p.bit_width, -p.sparsity, hib ? -p.metric : p.metric};
            if (key < best) {
                best = key;
                where = {p.bit_width, p.iteration};
            }
        }
    }
    return where;
}

}  // namespace

TEST_CASE("smallest magnitude is pruned first") {
    auto s = single_tensor({1, -2, 3, -4, 5});
    CHECK(prune_step(s, 0.2) == 1);
    const auto& w = s.layers[0].params[0];
    CHECK(w.mask == std::vector<std::uint8_t>{0, 1, 1, 1, 1});
    CHECK(w.value.data == std::vector<double>{0, -2, 3, -4, 5});
    CHECK(s.layers[0].params[1].mask.empty());
    prune_step(s, 0.2);
    CHECK(w.mask == std::vector<std::uint8_t>{0, 0, 1, 1, 1});
}

TEST_CASE("magnitude ties break by position") {
    auto s = single_tensor({2, -1, 1, -1, 3, 4, 5, 6, 7, 8});
    CHECK(prune_step(s, 0.2) == 2);
    CHECK(s.layers[0].params[0].mask == std::vector<std::uint8_t>{1, 0, 0, 1, 1, 1, 1, 1, 1, 1});
}

TEST_CASE("repeated pruning follows the geometric schedule") {
    auto s = random_pool(100'000, 1);
    for (int k = 1; k <= 20; ++k) {
        const auto before = s.layers[0].params[0].mask.empty() ? std::vector<std::uint8_t>(100'000, 1)
                                                                : s.layers[0].params[0].mask;
        prune_step(s, 0.2);
        CHECK(std::abs(global_sparsity(s) - (1.0 - std::pow(0.8, k))) <= 1e-4);
        const auto& after = s.layers[0].params[0].mask;
        for (std::size_t i = 0; i < after.size(); ++i) {
            if (!before[i]) CHECK_FALSE(after[i]);
        }
    }
}

TEST_CASE("schedule on a real model reaches the published sparsities") {
    const auto arch = builtin_model("bragg_tiny");
    auto params = init_params(arch, 3);
    REQUIRE(weight_pool_size(params) >= 10'000);
    for (int k = 1; k <= 20; ++k) {
        prune_step(params, 0.2);
        if (k == 8) CHECK(std::abs(global_sparsity(params) - 0.8322) <= 1e-3);
    }
    CHECK(std::abs(global_sparsity(params) - 0.9885) <= 1e-3);
}

TEST_CASE("per-layer scope prunes each tensor") {
    const auto arch = builtin_model("deepsets_tiny");
    auto params = init_params(arch, 3);
    prune_step(params, 0.2, PruneScope::PerLayer);
    for (const auto& layer : params.layers) {
        for (const auto& p : layer.params) {
            if (!p.is_weight) continue;
            std::size_t masked = 0;
            for (auto m : p.mask) masked += m ? 0 : 1;
            CHECK(masked == static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(p.value.size()))));
        }
    }
    CHECK(prune_scope_from_string("per_layer") == PruneScope::PerLayer);
    CHECK(to_string(PruneScope::Global) == "global");
    CHECK_THROWS_AS(prune_scope_from_string("layerwise"), SchemaError);
}

TEST_CASE("tiny pools still make progress and then run out") {
    auto s = single_tensor({1, 2, 3});
    std::size_t total = 0;
    for (int i = 0; i < 3; ++i) total += prune_step(s, 0.2);
    CHECK(total == 3);
    CHECK(global_sparsity(s) == 1.0);
    CHECK_THROWS_AS(prune_step(s, 0.2), NothingLeftToPrune);
    CHECK_THROWS_AS(prune_step(s, 0.0), DomainError);
    CHECK_THROWS_AS(prune_step(s, 1.0), DomainError);
}

TEST_CASE("select_compressed examples") {
    const auto hib = MetricSense::HigherIsBetter;
    SUBCASE("single curve within tolerance picks the last iteration") {
        const auto c = select_compressed({curve(8, {{0, 90}, {0.2, 89}, {0.36, 88}})}, 0.1, hib);
        CHECK(c.iteration == 2);
        CHECK_FALSE(c.fallback);
    }
    SUBCASE("ties on sparsity and metric go to the lower width") {
        const auto c = select_compressed({curve(8, {{0, 90}, {0.2, 90}}), curve(4, {{0, 90}, {0.2, 90}})}, 0.1, hib);
        CHECK(c.bit_width == 4);
        CHECK(c.iteration == 1);
    }
    SUBCASE("the best dense point qualifies when nothing else does") {
        const auto c = select_compressed({curve(4, {{0, 50}, {0.2, 40}}), curve(32, {{0, 90}, {0.2, 10}})}, 0.01, hib);
        CHECK(c.fallback == false);
        CHECK(c.bit_width == 32);
        CHECK(c.iteration == 0);
    }
    SUBCASE("lower-is-better metrics") {
        const auto c = select_compressed({curve(16, {{0, 1.0}, {0.2, 1.05}, {0.36, 1.2}})}, 0.1, MetricSense::LowerIsBetter);
        CHECK(c.iteration == 1);
    }
    SUBCASE("non-finite metrics never qualify") {
        const auto c = select_compressed({curve(8, {{0, 90}, {0.2, std::nan("")}})}, 0.5, hib);
        CHECK(c.iteration == 0);
    }
    CHECK_THROWS_AS(select_compressed({}, 0.1, hib), DomainError);
}

TEST_CASE("tolerance is relative to the reference") {
    CHECK_THROWS_AS(select_compressed({curve(8, {{0, std::nan("")}})}, 0.1, MetricSense::HigherIsBetter), DomainError);
    CHECK(within_tolerance(81, 90, 0.1, MetricSense::HigherIsBetter));
    CHECK_FALSE(within_tolerance(80.9, 90, 0.1, MetricSense::HigherIsBetter));
    CHECK(within_tolerance(1.1, 1.0, 0.1, MetricSense::LowerIsBetter));
    CHECK_FALSE(within_tolerance(1.11, 1.0, 0.1, MetricSense::LowerIsBetter));
}

TEST_CASE("select_compressed matches an exhaustive scan on random curves") {
    Rng rng(77);
    for (int rep = 0; rep < 300; ++rep) {
        std::vector<SparsityCurve> curves;
        for (int bits : {4, 8, 16, 32}) {
            if (rng.bernoulli(0.3)) continue;
            std::vector<std::pair<double, double>> sm;
            const int n = 1 + static_cast<int>(rng.index(6));
            for (int i = 0; i < n; ++i) {
                sm.push_back({1.0 - std::pow(0.8, i), std::floor(rng.uniform(60, 100))});
            }
            curves.push_back(curve(bits, sm));
        }
        if (curves.empty()) continue;
        const auto sense = rep % 2 ? MetricSense::HigherIsBetter : MetricSense::LowerIsBetter;
        const double tol = rng.uniform(0, 0.3);
        const auto c = select_compressed(curves, tol, sense);
        const auto expect = scan_oracle(curves, tol, sense);
        CHECK(c.bit_width == expect.first);
        CHECK(c.iteration == expect.second);
    }
}

TEST_CASE("compression loop produces monotone curves") {
    const auto arch = builtin_model("deepsets_tiny");
    const Dataset train_set = make_dataset(gen_jets(200, 1, 3.0));
    const Dataset val_set = make_dataset(gen_jets(100, 2, 3.0));
    TrainConfig base;
    base.batch_size = 32;
    base.learning_rate = 0.05;
    const auto dense = train(arch, init_params(arch, 4), train_set, base).params;
    CompressionPlan plan;
    plan.bit_widths = {4, 32};
    plan.iterations = 5;
    plan.epochs_per_iter = 1;
    const auto curves = run_compression(arch, dense, train_set, val_set, plan, base, 11);
    REQUIRE(curves.size() == 2);
    for (const auto& c : curves) {
        REQUIRE(c.points.size() == 6);
        for (std::size_t k = 1; k < c.points.size(); ++k) {
            CHECK(c.points[k].sparsity > c.points[k - 1].sparsity);
            CHECK(c.points[k].bops < c.points[k - 1].bops);
            CHECK(std::abs(c.points[k].sparsity - (1.0 - std::pow(0.8, static_cast<double>(k)))) < 0.02);
            // Masks are monotone along the curve.
            const auto& prev = c.points[k - 1].params;
            const auto& cur = c.points[k].params;
            for (std::size_t l = 0; l < cur.layers.size(); ++l) {
                for (std::size_t t = 0; t < cur.layers[l].params.size(); ++t) {
                    const auto& pm = prev.layers[l].params[t].mask;
                    const auto& cm = cur.layers[l].params[t].mask;
                    for (std::size_t i = 0; i < pm.size(); ++i) {
                        if (!pm[i]) CHECK_FALSE(cm[i]);
                    }
                    for (std::size_t i = 0; i < cm.size(); ++i) {
                        if (!cm[i]) CHECK(cur.layers[l].params[t].value[i] == 0.0);
                    }
                }
            }
        }
    }
    CHECK(curves[1].points[0].metric == evaluate(arch, dense, val_set));
    CHECK(curves[1].points[0].sparsity == 0.0);
    CHECK(curves[0].points[0].params.quant == BitConfig{4, 4});

    plan.workers = 2;
    const auto parallel = run_compression(arch, dense, train_set, val_set, plan, base, 11);
    CHECK(curves_csv(parallel) == curves_csv(curves));
    const auto csv = curves_csv(curves);
    CHECK(csv.rfind("bit_width,iteration,sparsity,metric,bops,diverged\n", 0) == 0);
}

TEST_CASE("divergent fine-tuning is flagged and the loop continues") {
    const auto arch = builtin_model("deepsets_tiny");
    const Dataset d = make_dataset(gen_jets(64, 1, 3.0));
    const auto dense = init_params(arch, 1);
    CompressionPlan plan;
    plan.bit_widths = {8};
    plan.iterations = 3;
    plan.epochs_per_iter = 1;
    TrainConfig bad;
    bad.learning_rate = 1e8;
    bad.batch_size = 16;
    const auto curves = run_compression(arch, dense, d, d, plan, bad, 1);
    REQUIRE(curves[0].points.size() == 4);
    for (std::size_t k = 1; k < 4; ++k) {
        CHECK(curves[0].points[k].diverged);
        CHECK(curves[0].points[k].sparsity > curves[0].points[k - 1].sparsity);
    }
}

TEST_CASE("plan validation") {
    CompressionPlan p;
    p.bit_widths = {3};
    CHECK_THROWS_AS(p.validate(), DomainError);
    p = {};
    p.prune_fraction = 1.0;
    CHECK_THROWS_AS(p.validate(), DomainError);
    p = {};
    p.iterations = 0;
    CHECK_THROWS_AS(p.validate(), DomainError);
    CHECK_NOTHROW(CompressionPlan{}.validate());
}
