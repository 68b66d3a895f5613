#pragma once

#include <vector>

#include "nacforge/arch_ir.hpp"
#include "nacforge/ops.hpp"
#include "nacforge/params.hpp"
#include "nacforge/tensor.hpp"

namespace nac {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Tape leaves holding the effective (quantized, masked) parameter values,
// laid out like ParamStore::layers[i].params.
struct BoundParams {
    std::vector<std::vector<Tape::Id>> ids;
};

BoundParams bind_params(Tape& tape, const ParamStore& params);

// Records the network on `tape`. `input` is [N, ...arch.input_shape]. In
// Train mode BatchNorm uses batch statistics and, when `stats_sink` is given,
// updates its running statistics.
Tape::Id build_forward(Tape& tape, const ArchDescriptor& arch, const ParamStore& params, const BoundParams& bound,
                       Tape::Id input, Mode mode, ParamStore* stats_sink = nullptr);

// Eval-mode inference: [N, ...input_shape] -> [N, head_dim].
Tensor forward(const ArchDescriptor& arch, const ParamStore& params, const Tensor& batch);

// Straight-through gradients for the raw parameters: d(loss)/d(effective)
// passed through the quantizer unchanged and multiplied by the mask.
std::vector<std::vector<Tensor>> parameter_grads(const Tape& tape, const BoundParams& bound, const ParamStore& params);

}  // namespace nac
