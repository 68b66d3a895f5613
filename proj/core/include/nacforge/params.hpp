#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nacforge/arch_ir.hpp"
#include "nacforge/cost_model.hpp"
#include "nacforge/tensor.hpp"

namespace nac {

struct ParamTensor {
    std::string name;
    Tensor value;
    // Empty means dense; otherwise one 0/1 entry per value.
    std::vector<std::uint8_t> mask;
    // Conv/Linear weights: pruned, fake-quantized and weight-decayed.
    bool is_weight = false;

    bool operator==(const ParamTensor&) const = default;
};

struct LayerState {
    std::vector<ParamTensor> params;
    // BatchNorm running statistics; empty for other layers.
    Tensor running_mean;
    Tensor running_var;

    bool operator==(const LayerState&) const = default;
};

struct ParamStore {
    std::vector<LayerState> layers;
    std::optional<BitConfig> quant;

    bool operator==(const ParamStore&) const = default;
};

ParamStore init_params(const ArchDescriptor& arch, std::uint64_t seed);

// Throws ShapeMismatch if the store does not match the architecture layout.
void check_params(const ArchDescriptor& arch, const ParamStore& params);

// Symmetric per-tensor uniform quantization; 32 bits is the identity.
Tensor fake_quantize(const Tensor& t, int bits);
double quantization_scale(const Tensor& t, int bits);

// quantize(weight) * mask for weights; the raw value otherwise.
Tensor effective_value(const ParamTensor& p, const std::optional<BitConfig>& quant);

void ensure_mask(ParamTensor& p);
void apply_masks(ParamStore& params);

std::size_t weight_pool_size(const ParamStore& params);
std::size_t masked_weight_count(const ParamStore& params);
double global_sparsity(const ParamStore& params);

// Per-layer density of the prunable weights, for BOPs accounting.
SparsityProfile density_profile(const ParamStore& params);

}  // namespace nac
