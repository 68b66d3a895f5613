#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nacforge/arch_ir.hpp"
#include "nacforge/data_forge.hpp"
#include "nacforge/params.hpp"
#include "nacforge/train.hpp"

namespace nac {

enum class PruneScope { Global, PerLayer };

std::string_view to_string(PruneScope s);
PruneScope prune_scope_from_string(std::string_view s);

struct CompressionPlan {
    std::vector<int> bit_widths{4, 8, 16, 32};
    double prune_fraction = 0.2;
    int iterations = 20;
    int epochs_per_iter = 20;
    PruneScope scope = PruneScope::Global;
    std::size_t workers = 1;

    void validate() const;
};

// Masks the floor(fraction * remaining) smallest-magnitude unmasked weights
// (at least one), ranking by (|w|, layer, tensor, flat index). Pruned values
// are set to zero. Returns the number of weights newly masked.
std::size_t prune_step(ParamStore& params, double fraction, PruneScope scope = PruneScope::Global);

struct SparsityPoint {
    int bit_width = 32;
    int iteration = 0;
    double sparsity = 0.0;
    double metric = 0.0;
    double bops = 0.0;
    // Fine-tuning diverged; the point holds the pruned weights before fine-tuning.
    bool diverged = false;
    ParamStore params;
};

struct SparsityCurve {
    int bit_width = 32;
    std::vector<SparsityPoint> points;  // iterations 0..n
};

// For every bit width: iteration 0 is the dense model under that quantizer,
// then `iterations` rounds of prune_step + QAT fine-tuning. Metrics are
// measured on `val_set`; BOPs use the width for weights and activations.
std::vector<SparsityCurve> run_compression(const ArchDescriptor& arch, const ParamStore& dense, const Dataset& train_set,
                                           const Dataset& val_set, const CompressionPlan& plan,
                                           const TrainConfig& base_cfg, std::uint64_t seed);

struct CompressedChoice {
    int bit_width = 32;
    int iteration = 0;
    double sparsity = 0.0;
    double metric = 0.0;
    double bops = 0.0;
    // Nothing met the tolerance; the best dense point was returned instead.
    bool fallback = false;
};

// Among points within `tolerance` (relative) of the best iteration-0 metric,
// the lowest bit width, then highest sparsity, then best metric.
CompressedChoice select_compressed(const std::vector<SparsityCurve>& curves, double tolerance, MetricSense sense);

bool within_tolerance(double metric, double reference, double tolerance, MetricSense sense);

// bit_width, iteration, sparsity, metric, bops, diverged
std::string curves_csv(const std::vector<SparsityCurve>& curves);

}  // namespace nac
