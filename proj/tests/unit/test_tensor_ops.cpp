#include <doctest.h>

#include <limits>

#include "nacforge/errors.hpp"
#include "nacforge/ops.hpp"
#include "test_util.hpp"

using namespace nac;
using nac::testing::grad_check;
using nac::testing::random_tensor;

namespace {

// Reduces a non-scalar node to a scalar with a fixed random target.
Tape::Id scalarize(Tape& t, Tape::Id x, std::uint64_t seed = 99) {
    Rng rng(seed);
    return ops::mse_loss(t, x, random_tensor(t.value(x).dims, rng));
}

void expect_ok(const nac::testing::GradCheckResult& r) {
    INFO(r.detail);
    CHECK(r.ok);
}

}  // namespace

TEST_CASE("linear gradient") {
    Rng rng(1);
    expect_ok(grad_check([](Tape& t, const auto& v) { return scalarize(t, ops::linear(t, v[0], v[1], v[2])); },
                         {random_tensor({4, 5}, rng), random_tensor({3, 5}, rng), random_tensor({3}, rng)}, rng));
}

TEST_CASE("conv2d gradient") {
    Rng rng(2);
    for (int k : {1, 3}) {
        expect_ok(grad_check([](Tape& t, const auto& v) { return scalarize(t, ops::conv2d(t, v[0], v[1], v[2])); },
                             {random_tensor({2, 3, 6, 5}, rng), random_tensor({4, 3, k, k}, rng), random_tensor({4}, rng)},
                             rng, 30));
    }
}

TEST_CASE("batch norm gradients") {
    Rng rng(3);
    expect_ok(grad_check(
        [](Tape& t, const auto& v) { return scalarize(t, ops::batch_norm_train(t, v[0], v[1], v[2], 1e-5, nullptr)); },
        {random_tensor({6, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)}, rng, 30));
    expect_ok(grad_check(
        [](Tape& t, const auto& v) { return scalarize(t, ops::batch_norm_train(t, v[0], v[1], v[2], 1e-5, nullptr)); },
        {random_tensor({3, 2, 4, 4}, rng), random_tensor({2}, rng), random_tensor({2}, rng)}, rng, 30));
    Tensor rm({4}, 0.3), rv({4}, 1.7);
    expect_ok(grad_check(
        [&](Tape& t, const auto& v) { return scalarize(t, ops::batch_norm_eval(t, v[0], v[1], v[2], rm, rv, 1e-5)); },
        {random_tensor({5, 4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)}, rng));
}

TEST_CASE("batch norm statistics") {
    Tape t(false);
    Tensor x({4, 1}, std::vector<double>{1, 2, 3, 4});
    ops::BatchStats stats;
    const auto y = ops::batch_norm_train(t, t.constant(x), t.constant(Tensor({1}, 1.0)), t.constant(Tensor({1}, 0.0)),
                                         0.0, &stats);
    CHECK(stats.mean[0] == doctest::Approx(2.5));
    CHECK(stats.var[0] == doctest::Approx(1.25));
    CHECK(stats.count == 4);
    CHECK(t.value(y)[0] == doctest::Approx(-1.5 / std::sqrt(1.25)));
}

TEST_CASE("activation gradients") {
    Rng rng(4);
    for (const auto act : {Activation::relu(), Activation::leaky_relu(), Activation::none()}) {
        expect_ok(grad_check([act](Tape& t, const auto& v) { return scalarize(t, ops::activation(t, v[0], act)); },
                             {random_tensor({5, 7}, rng)}, rng, 35));
    }
    Tape t(false);
    const auto y = ops::activation(t, t.constant(Tensor({2}, std::vector<double>{-128.0, 3.0})), Activation::leaky_relu());
    CHECK(t.value(y)[0] == -1.0);
    CHECK(t.value(y)[1] == 3.0);
}

TEST_CASE("reshape, add, transpose gradients") {
    Rng rng(5);
    expect_ok(grad_check(
        [](Tape& t, const auto& v) { return scalarize(t, ops::reshape(t, ops::add(t, v[0], v[1]), {3, 8})); },
        {random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 4}, rng)}, rng));
    expect_ok(grad_check([](Tape& t, const auto& v) { return scalarize(t, ops::transpose_last2(t, v[0])); },
                         {random_tensor({2, 3, 5}, rng)}, rng, 30));
}

TEST_CASE("set pool gradients") {
    Rng rng(6);
    for (const auto kind : {PoolKind::Mean, PoolKind::Max, PoolKind::Sum}) {
        expect_ok(grad_check([kind](Tape& t, const auto& v) { return scalarize(t, ops::set_pool(t, v[0], kind)); },
                             {random_tensor({3, 8, 4}, rng)}, rng, 96));
    }
}

TEST_CASE("bmm and softmax gradients") {
    Rng rng(7);
    expect_ok(grad_check([](Tape& t, const auto& v) { return scalarize(t, ops::bmm(t, v[0], v[1])); },
                         {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)}, rng, 40));
    expect_ok(grad_check([](Tape& t, const auto& v) { return scalarize(t, ops::softmax_last(t, v[0])); },
                         {random_tensor({2, 3, 6}, rng)}, rng, 36));
}

TEST_CASE("loss gradients") {
    Rng rng(8);
    const Tensor target = random_tensor({4, 2}, rng);
    expect_ok(grad_check([&](Tape& t, const auto& v) { return ops::mse_loss(t, v[0], target); },
                         {random_tensor({4, 2}, rng)}, rng));
    const std::vector<int> labels{0, 4, 2, 1};
    expect_ok(grad_check([&](Tape& t, const auto& v) { return ops::softmax_cross_entropy(t, v[0], labels); },
                         {random_tensor({4, 5}, rng)}, rng));
}

TEST_CASE("mse of a node against itself has zero gradient") {
    Tape t;
    const auto x = t.parameter(Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
    const auto loss = ops::mse_loss(t, x, t.value(x));
    t.backward(loss);
    for (double g : t.grad(x).data) CHECK(g == 0.0);
}

TEST_CASE("cross entropy of uniform logits") {
    Tape t(false);
    const auto l = ops::softmax_cross_entropy(t, t.constant(Tensor({1, 5}, 0.0)), {3});
    CHECK(t.value(l)[0] == doctest::Approx(std::log(5.0)));
}

TEST_CASE("tape errors") {
    Tape idle(false);
    const auto c = idle.constant(Tensor({1}, 1.0));
    CHECK_THROWS_AS(idle.backward(c), GraphNotRecorded);

    Tape consts;
    const auto k = consts.constant(Tensor({1}, 1.0));
    CHECK_THROWS_AS(consts.backward(k), GraphNotRecorded);

    Tape t;
    const auto x = t.parameter(Tensor({2}, 1.0));
    CHECK_THROWS_AS(t.backward(x), ShapeMismatch);

    Tape big;
    const auto h = big.parameter(Tensor({1, 1}, 1e200));
    const auto w = big.parameter(Tensor({1, 1}, 1e200));
    const auto b = big.parameter(Tensor({1}, 0.0));
    CHECK_THROWS_AS(ops::linear(big, h, w, b), NumericOverflow);
}

TEST_CASE("shape checks in ops") {
    Tape t;
    const auto x = t.parameter(Tensor({2, 3}, 1.0));
    const auto w = t.parameter(Tensor({4, 5}, 1.0));
    const auto b = t.parameter(Tensor({4}, 1.0));
    CHECK_THROWS_AS(ops::linear(t, x, w, b), ShapeMismatch);
    CHECK_THROWS_AS(ops::add(t, x, b), ShapeMismatch);
    CHECK_THROWS_AS(ops::reshape(t, x, {5}), ShapeMismatch);
}
