#include "nacforge/train.hpp"

#include <cmath>
#include <numbers>

#include "nacforge/errors.hpp"
#include "nacforge/rng.hpp"

namespace nac {

namespace {

constexpr std::size_t kEvalBatch = 512;

double lr_at(const TrainConfig& cfg, int epoch) {
    if (cfg.lr_schedule == LrSchedule::Constant || cfg.epochs <= 1) return cfg.learning_rate;
    return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
}

}  // namespace

std::string_view to_string(LrSchedule s) { return s == LrSchedule::Constant ? "Constant" : "CosineDecay"; }

LrSchedule lr_schedule_from_string(std::string_view s) {
    if (s == "Constant") return LrSchedule::Constant;
    if (s == "CosineDecay") return LrSchedule::CosineDecay;
    throw SchemaError("unknown lr schedule '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DomainError("learning_rate must be > 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw DomainError("weight_decay must be >= 0");
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (epochs < 1) throw DomainError("epochs must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("momentum must lie in [0, 1)");
}

Tensor batch_features(const Dataset& d, std::span<const std::size_t> rows) {
    const std::size_t f = d.feature_size();
    Shape dims{static_cast<int>(rows.size())};
    const Shape sample = d.sample_shape();
    dims.insert(dims.end(), sample.begin(), sample.end());
    Tensor t(std::move(dims));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(d.features.begin() + static_cast<std::ptrdiff_t>(rows[r] * f), f,
                    t.data.begin() + static_cast<std::ptrdiff_t>(r * f));
    }
    return t;
}

Tape::Id task_loss(Tape& tape, const Dataset& d, std::span<const std::size_t> rows, Tape::Id output) {
    if (d.task == Task::PatchRegression) {
        Tensor target({static_cast<int>(rows.size()), 2});
        for (std::size_t r = 0; r < rows.size(); ++r) {
            target[2 * r] = d.targets[2 * rows[r]] / kPatchTargetScale;
            target[2 * r + 1] = d.targets[2 * rows[r] + 1] / kPatchTargetScale;
        }
        return ops::mse_loss(tape, output, target);
    }
    std::vector<int> labels(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) labels[r] = d.labels[rows[r]];
    return ops::softmax_cross_entropy(tape, output, labels);
}

TrainResult train(const ArchDescriptor& arch, ParamStore params, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.n == 0) throw EmptyDataset("training set is empty");
    if (data.task != arch.task) throw SchemaError("dataset task does not match architecture task");
    check_params(arch, params);
    apply_masks(params);

    std::vector<std::vector<Tensor>> velocity(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        for (const auto& p : params.layers[i].params) velocity[i].emplace_back(p.value.dims, 0.0);
    }

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(data.n);
    for (std::size_t i = 0; i < data.n; ++i) order[i] = i;

    TrainResult result;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        const double lr = lr_at(cfg, epoch);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < data.n; start += bs) {
            const std::span<const std::size_t> rows(order.data() + start, std::min(bs, data.n - start));
            Tape tape;
            double loss = 0.0;
            BoundParams bound;
            try {
                bound = bind_params(tape, params);
                const auto input = tape.constant(batch_features(data, rows));
                const auto out = build_forward(tape, arch, params, bound, input, Mode::Train, &params);
                const auto loss_id = task_loss(tape, data, rows, out);
                loss = tape.value(loss_id)[0];
                tape.backward(loss_id);
            } catch (const NumericOverflow& e) {
                throw NumericDivergence(std::string("epoch ") + std::to_string(epoch) + ": " + e.what());
            }
            if (!std::isfinite(loss)) {
                throw NumericDivergence("epoch " + std::to_string(epoch) + ": loss became non-finite");
            }
            const auto grads = parameter_grads(tape, bound, params);
            for (std::size_t i = 0; i < params.layers.size(); ++i) {
                for (std::size_t j = 0; j < params.layers[i].params.size(); ++j) {
                    ParamTensor& p = params.layers[i].params[j];
                    Tensor& v = velocity[i][j];
                    const Tensor& g = grads[i][j];
                    const double wd = p.is_weight ? cfg.weight_decay : 0.0;
                    for (std::size_t k = 0; k < p.value.size(); ++k) {
                        v[k] = cfg.momentum * v[k] + g[k] + wd * p.value[k];
                        p.value[k] -= lr * v[k];
                    }
                    if (!p.mask.empty()) {
                        for (std::size_t k = 0; k < p.value.size(); ++k) {
                            if (!p.mask[k]) {
                                p.value[k] = 0.0;
                                v[k] = 0.0;
                            }
                        }
                    }
                    if (!all_finite(p.value)) {
                        throw NumericDivergence("epoch " + std::to_string(epoch) + ": parameters became non-finite");
                    }
                }
            }
            loss_sum += loss * static_cast<double>(rows.size());
            seen += rows.size();
        }
        result.loss_history.push_back(loss_sum / static_cast<double>(seen));
    }
    result.params = std::move(params);
    return result;
}

double mean_distance(std::span<const double> predicted_xy, std::span<const double> true_xy) {
    if (predicted_xy.size() != true_xy.size() || predicted_xy.size() % 2 != 0) {
        throw ShapeMismatch("mean_distance needs matching (x, y) pairs");
    }
    if (predicted_xy.empty()) throw EmptyDataset("no points to compare");
    double acc = 0.0;
    const std::size_t n = predicted_xy.size() / 2;
    for (std::size_t i = 0; i < n; ++i) {
        acc += std::hypot(predicted_xy[2 * i] - true_xy[2 * i], predicted_xy[2 * i + 1] - true_xy[2 * i + 1]);
    }
    return acc / static_cast<double>(n);
}

double accuracy_percent(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size()) throw ShapeMismatch("prediction and label counts differ");
    if (labels.empty()) throw EmptyDataset("no labels to compare");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i] ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate(const ArchDescriptor& arch, const ParamStore& params, const Dataset& data) {
    if (data.n == 0) throw EmptyDataset("evaluation set is empty");
    if (data.task != arch.task) throw SchemaError("dataset task does not match architecture task");
    std::vector<double> pred_xy;
    std::vector<int> pred_cls;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < data.n; start += kEvalBatch) {
        rows.clear();
        for (std::size_t i = start; i < std::min(data.n, start + kEvalBatch); ++i) rows.push_back(i);
        const Tensor out = forward(arch, params, batch_features(data, rows));
        const std::size_t width = static_cast<std::size_t>(out.dims.back());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const double* row = out.ptr() + r * width;
            if (data.task == Task::PatchRegression) {
                pred_xy.push_back(row[0] * kPatchTargetScale);
                pred_xy.push_back(row[1] * kPatchTargetScale);
            } else {
                pred_cls.push_back(static_cast<int>(std::max_element(row, row + width) - row));
            }
        }
    }
    if (data.task == Task::PatchRegression) return mean_distance(pred_xy, data.targets);
    return accuracy_percent(pred_cls, data.labels);
}

MetricSense metric_sense(Task task) {
    return task == Task::PatchRegression ? MetricSense::LowerIsBetter : MetricSense::HigherIsBetter;
}

double task_error(Task task, double metric) { return task == Task::PatchRegression ? metric : 100.0 - metric; }

}  // namespace nac
