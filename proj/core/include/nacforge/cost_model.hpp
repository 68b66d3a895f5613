#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "nacforge/arch_ir.hpp"

namespace nac {

struct BitConfig {
    int weight_bits = 32;
    int act_bits = 32;
    bool operator==(const BitConfig&) const = default;
};

// True for the published precision set {4, 8, 16, 32}.
bool is_supported_bit_width(int bits);
void check_bit_config(const BitConfig& bits);

// Density p = 1 - sparsity, keyed by layer index. Layers without an entry are dense.
struct SparsityProfile {
    std::map<std::size_t, double> density;

    double at(std::size_t layer) const;
};

struct BopsOptions {
    BitConfig bits;
    std::map<std::size_t, BitConfig> per_layer_bits;
    SparsityProfile sparsity;

    BitConfig bits_for(std::size_t layer) const;
};

struct BopsReport {
    std::vector<double> per_layer;
    double total = 0.0;
};

// Bit-operation counts. m = output features, n = input features, p = density.
double bops_linear(double m, double n, double act_bits, double weight_bits, double p);
double bops_conv2d(double m, double n, double k, double act_bits, double weight_bits, double p);
double bops_softmax(double b, double h, double w, double weight_bits);
// out_p is the trailing dim of the second operand (a dimension, not a density).
double bops_matmul(double b, double m, double n, double out_p, double weight_bits);
double bops_conv_attention(double b, double c, double h, double w, double d, double k, const BitConfig& bits, double p);

// Per-layer and total BOPs. Phi layers of set architectures count once per
// set element. Normalization, activation, flatten and pooling layers are 0.
BopsReport bops_model(const ArchDescriptor& arch, const BopsOptions& options = {});

}  // namespace nac
