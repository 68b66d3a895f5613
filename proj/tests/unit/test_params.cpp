#include <doctest.h>

#include <cmath>

#include "nacforge/errors.hpp"
#include "nacforge/params.hpp"
#include "test_util.hpp"

using namespace nac;
using nac::testing::random_tensor;

TEST_CASE("quantizer examples") {
    const Tensor zero({4}, 0.0);
    CHECK(fake_quantize(zero, 4) == zero);
    CHECK(quantization_scale(zero, 4) == 1.0);

    const Tensor pm({2}, std::vector<double>{-1.0, 1.0});
    CHECK(quantization_scale(pm, 4) == doctest::Approx(1.0 / 7.0));
    const Tensor q = fake_quantize(pm, 4);
    CHECK(q[0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(q[1] == doctest::Approx(1.0).epsilon(1e-15));

    Rng rng(1);
    const Tensor t = random_tensor({50}, rng);
    CHECK(fake_quantize(t, 32) == t);
    CHECK_THROWS_AS(fake_quantize(t, 5), DomainError);
}

TEST_CASE("quantizer is idempotent and bounded") {
    Rng rng(2);
    for (int bits : {4, 8, 16}) {
        for (int trial = 0; trial < 200; ++trial) {
            const Tensor t = random_tensor({37}, rng, std::exp(rng.uniform(-5, 5)));
            const double s = quantization_scale(t, bits);
            const Tensor q = fake_quantize(t, bits);
            const Tensor qq = fake_quantize(q, bits);
            for (std::size_t i = 0; i < t.size(); ++i) {
                CHECK(std::abs(q[i] - t[i]) <= s / 2 * (1 + 1e-12));
                CHECK(qq[i] == doctest::Approx(q[i]).epsilon(1e-12));
            }
            const int levels = (1 << (bits - 1)) - 1;
            for (double v : q.data) CHECK(std::abs(std::round(v / s)) <= levels);
        }
    }
}

TEST_CASE("init layout matches the architecture") {
    for (const auto& name : builtin_model_names()) {
        const auto a = builtin_model(name);
        const auto p = init_params(a, 3);
        CHECK_NOTHROW(check_params(a, p));
        std::int64_t total = 0;
        for (const auto& l : p.layers) {
            for (const auto& t : l.params) total += static_cast<std::int64_t>(t.value.size());
        }
        CHECK(total == count_params(a));
    }
    CHECK(init_params(builtin_model("bragg_tiny"), 4) == init_params(builtin_model("bragg_tiny"), 4));
    CHECK_FALSE(init_params(builtin_model("bragg_tiny"), 4) == init_params(builtin_model("bragg_tiny"), 5));
}

TEST_CASE("initial weights lie within the fan-in bound") {
    const auto a = builtin_model("deepsets_medium");
    const auto p = init_params(a, 7);
    const auto& w = p.layers[0].params[0];
    CHECK(w.is_weight);
    for (double v : w.value.data) CHECK(std::abs(v) <= 1.0 / std::sqrt(3.0));
}

TEST_CASE("effective value applies quantizer then mask to weights only") {
    ParamTensor w{"weight", Tensor({3}, std::vector<double>{0.5, -1.0, 0.26}), {1, 0, 1}, true};
    const Tensor e = effective_value(w, BitConfig{4, 4});
    CHECK(e[1] == 0.0);
    CHECK(e[0] == doctest::Approx(fake_quantize(w.value, 4)[0]));
    ParamTensor b{"bias", Tensor({2}, std::vector<double>{0.123, 0.456}), {}, false};
    CHECK(effective_value(b, BitConfig{4, 4}) == b.value);
}

TEST_CASE("sparsity accounting") {
    const auto a = builtin_model("deepsets_tiny");
    ParamStore p = init_params(a, 1);
    CHECK(global_sparsity(p) == 0.0);
    const std::size_t pool = weight_pool_size(p);
    CHECK(pool == 3 * 8 + 8 * 8 + 8 * 32 + 32 * 5);
    auto& w = p.layers[0].params[0];
    ensure_mask(w);
    for (std::size_t i = 0; i < 12; ++i) w.mask[i] = 0;
    apply_masks(p);
    CHECK(masked_weight_count(p) == 12);
    CHECK(global_sparsity(p) == doctest::Approx(12.0 / static_cast<double>(pool)));
    CHECK(density_profile(p).at(0) == doctest::Approx(0.5));
    CHECK(density_profile(p).at(3) == 1.0);
    for (std::size_t i = 0; i < 12; ++i) CHECK(w.value[i] == 0.0);
}

TEST_CASE("check_params catches layout errors") {
    const auto a = builtin_model("deepsets_tiny");
    ParamStore p = init_params(a, 1);
    p.layers[0].params[0].value = Tensor({2, 2});
    CHECK_THROWS_AS(check_params(a, p), ShapeMismatch);
}
