#include <doctest.h>

#include <cmath>

#include "nacforge/data_forge.hpp"
#include "nacforge/errors.hpp"
#include "nacforge/train.hpp"
#include "test_util.hpp"

using namespace nac;

namespace {

Dataset small_jets(std::size_t n, std::uint64_t seed, double separation = 3.0) {
    return make_dataset(gen_jets(n, seed, separation));
}

}  // namespace

TEST_CASE("training is deterministic for a fixed seed") {
    const auto a = builtin_model("deepsets_tiny");
    const Dataset d = small_jets(256, 1);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 32;
    cfg.seed = 77;
    const auto r1 = train(a, init_params(a, 2), d, cfg);
    const auto r2 = train(a, init_params(a, 2), d, cfg);
    CHECK(r1.params == r2.params);
    CHECK(r1.loss_history == r2.loss_history);
    CHECK(evaluate(a, r1.params, d) == evaluate(a, r2.params, d));
    cfg.seed = 78;
    const auto r3 = train(a, init_params(a, 2), d, cfg);
    CHECK_FALSE(r3.params == r1.params);
}

TEST_CASE("bragg_tiny overfits one repeated sample") {
    const auto a = builtin_model("bragg_tiny");
    const auto one = gen_bragg(1, 5, 0.0);
    const std::vector<PatchSample> copies(16, one.front());
    const Dataset d = make_dataset(copies);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.01;
    cfg.lr_schedule = LrSchedule::Constant;
    const auto r = train(a, init_params(a, 3), d, cfg);
    CHECK(r.loss_history.back() < 1e-3);
    CHECK(r.loss_history.back() < r.loss_history.front());
}

TEST_CASE("jet classifier learns separable classes") {
    const auto a = builtin_model("deepsets_tiny");
    const Dataset d = small_jets(1000, 8, 4.0);
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch_size = 32;
    cfg.learning_rate = 0.05;
    const auto r = train(a, init_params(a, 9), d, cfg);
    CHECK(evaluate(a, r.params, d) > 80.0);
}

TEST_CASE("masked weights stay zero through training") {
    const auto a = builtin_model("deepsets_tiny");
    ParamStore p = init_params(a, 4);
    auto& w = p.layers[3].params[0];
    ensure_mask(w);
    for (std::size_t i = 0; i < w.mask.size(); i += 3) w.mask[i] = 0;
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.weight_decay = 1e-3;
    const auto r = train(a, p, small_jets(200, 2), cfg);
    const auto& out = r.params.layers[3].params[0];
    for (std::size_t i = 0; i < out.mask.size(); ++i) {
        if (!out.mask[i]) CHECK(out.value[i] == 0.0);
    }
}

TEST_CASE("weight decay leaves biases and batch norm untouched") {
    // With a zero learning signal (all-zero inputs and a zero-initialised
    // network) the only parameter movement comes from weight decay.
    ArchDescriptor a{Task::SetClassification, {8, 3}, {Linear{3, 4}, BatchNorm{4}, SetPool{PoolKind::Mean}, Linear{4, 5}}, 2};
    ParamStore p = init_params(a, 1);
    p.layers[0].params[1].value = Tensor({4}, 0.25);
    p.layers[3].params[1].value = Tensor({5}, 0.0);
    Dataset d = small_jets(64, 3);
    std::fill(d.features.begin(), d.features.end(), 0.0);
    std::fill(d.labels.begin(), d.labels.end(), 0);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.weight_decay = 0.1;
    cfg.learning_rate = 0.01;
    cfg.lr_schedule = LrSchedule::Constant;
    p.layers[3].params[0].value = Tensor({5, 4}, 0.0);
    const auto r = train(a, p, d, cfg);
    // First-layer bias feeds batch norm of a constant, so it gets no gradient.
    CHECK(r.params.layers[0].params[1].value == p.layers[0].params[1].value);
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(std::abs(r.params.layers[0].params[0].value[i]) < std::abs(p.layers[0].params[0].value[i]));
    }
}

TEST_CASE("divergence is reported") {
    const auto a = builtin_model("bragg_tiny");
    const Dataset d = make_dataset(gen_bragg(64, 1, 0.1));
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.learning_rate = 1e8;
    cfg.lr_schedule = LrSchedule::Constant;
    CHECK_THROWS_AS(train(a, init_params(a, 1), d, cfg), NumericDivergence);
}

TEST_CASE("config and data validation") {
    const auto a = builtin_model("deepsets_tiny");
    TrainConfig bad;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(train(a, init_params(a, 1), small_jets(10, 1), bad), DomainError);
    bad = TrainConfig{};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    Dataset empty;
    empty.task = Task::SetClassification;
    CHECK_THROWS_AS(train(a, init_params(a, 1), empty, TrainConfig{}), EmptyDataset);
    CHECK_THROWS_AS(evaluate(a, init_params(a, 1), empty), EmptyDataset);
    CHECK(lr_schedule_from_string(to_string(LrSchedule::Constant)) == LrSchedule::Constant);
    CHECK_THROWS_AS(lr_schedule_from_string("Linear"), SchemaError);
}

TEST_CASE("metric definitions") {
    const std::vector<double> xy{1.0, 2.0, 3.0, 4.0};
    CHECK(mean_distance(xy, xy) == 0.0);
    CHECK(mean_distance(std::vector<double>{0, 0}, std::vector<double>{3, 4}) == 5.0);

    Rng rng(5);
    std::vector<int> pred(10000), labels(10000);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        pred[i] = static_cast<int>(rng.index(5));
        labels[i] = static_cast<int>(rng.index(5));
    }
    CHECK(std::abs(accuracy_percent(pred, labels) - 20.0) < 2.0);
    CHECK(task_error(Task::SetClassification, 87.5) == 12.5);
    CHECK(metric_sense(Task::PatchRegression) == MetricSense::LowerIsBetter);
}

TEST_CASE("constant-centre predictor distance matches a Monte-Carlo oracle") {
    const auto samples = gen_bragg(10000, 9, 0.0);
    std::vector<double> pred, truth;
    for (const auto& s : samples) {
        pred.push_back(5.5);
        pred.push_back(5.5);
        truth.push_back(s.cx);
        truth.push_back(s.cy);
    }
    Rng rng(1234);
    double acc = 0;
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i) acc += std::hypot(rng.uniform(3, 8) - 5.5, rng.uniform(3, 8) - 5.5);
    CHECK(mean_distance(pred, truth) == doctest::Approx(acc / draws).epsilon(0.02));
}
