#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "nacforge/arch_ir.hpp"
#include "nacforge/data_forge.hpp"
#include "nacforge/model.hpp"
#include "nacforge/params.hpp"

namespace nac {

enum class LrSchedule { Constant, CosineDecay };

std::string_view to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(std::string_view s);

struct TrainConfig {
    double learning_rate = 0.01;
    double weight_decay = 0.0;
    int batch_size = 64;
    int epochs = 10;
    LrSchedule lr_schedule = LrSchedule::CosineDecay;
    std::uint64_t seed = 0;
    double momentum = 0.9;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct TrainResult {
    ParamStore params;
    std::vector<double> loss_history;  // mean training loss per epoch
};

// Patch targets are regressed in units of the patch size.
inline constexpr double kPatchTargetScale = kPatchSize;

// Input batch [B, ...sample_shape] for the given rows.
Tensor batch_features(const Dataset& d, std::span<const std::size_t> rows);

// Scalar training loss node for a batch (MSE for patches, cross-entropy for sets).
Tape::Id task_loss(Tape& tape, const Dataset& d, std::span<const std::size_t> rows, Tape::Id output);

// SGD with momentum; weight decay applies to Conv/Linear weights only.
// Masks are re-applied after every step. Throws NumericDivergence when the
// loss or an activation becomes non-finite.
TrainResult train(const ArchDescriptor& arch, ParamStore params, const Dataset& data, const TrainConfig& cfg);

// Mean Euclidean distance in pixels (patches) or top-1 accuracy in percent (sets).
double evaluate(const ArchDescriptor& arch, const ParamStore& params, const Dataset& data);

double mean_distance(std::span<const double> predicted_xy, std::span<const double> true_xy);
double accuracy_percent(std::span<const int> predicted, std::span<const int> labels);

enum class MetricSense { LowerIsBetter, HigherIsBetter };
MetricSense metric_sense(Task task);

// Quantity minimized by the searches: distance, or 100 - accuracy.
double task_error(Task task, double metric);

}  // namespace nac
