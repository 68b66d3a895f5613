#include "nacforge/cost_model.hpp"

#include <cmath>
#include <string>

#include "nacforge/errors.hpp"

namespace nac {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw DomainError(what);
}

void require_density(double p) { require(p >= 0.0 && p <= 1.0, "density p must lie in [0, 1]"); }

}  // namespace

bool is_supported_bit_width(int bits) { return bits == 4 || bits == 8 || bits == 16 || bits == 32; }

void check_bit_config(const BitConfig& bits) {
    if (!is_supported_bit_width(bits.weight_bits) || !is_supported_bit_width(bits.act_bits)) {
        throw DomainError("bit widths must be one of {4, 8, 16, 32}, got weight " + std::to_string(bits.weight_bits) +
                          " act " + std::to_string(bits.act_bits));
    }
}

double SparsityProfile::at(std::size_t layer) const {
    const auto it = density.find(layer);
    return it == density.end() ? 1.0 : it->second;
}

BitConfig BopsOptions::bits_for(std::size_t layer) const {
    const auto it = per_layer_bits.find(layer);
    return it == per_layer_bits.end() ? bits : it->second;
}

double bops_linear(double m, double n, double act_bits, double weight_bits, double p) {
    require(m >= 1 && n >= 1, "linear dims must be >= 1");
    require(act_bits >= 1 && weight_bits >= 1, "bit widths must be >= 1");
    require_density(p);
    return m * n * (p * act_bits * weight_bits + act_bits + weight_bits + std::log2(n));
}

double bops_conv2d(double m, double n, double k, double act_bits, double weight_bits, double p) {
    require(m >= 1 && n >= 1 && k >= 1, "conv dims must be >= 1");
    require(act_bits >= 1 && weight_bits >= 1, "bit widths must be >= 1");
    require_density(p);
    const double k2 = k * k;
    return m * n * k2 * (p * act_bits * weight_bits + act_bits + weight_bits + std::log2(n * k2));
}

double bops_softmax(double b, double h, double w, double weight_bits) {
    require(b >= 1 && h >= 1 && w >= 1 && weight_bits >= 1, "softmax arguments must be >= 1");
    const double hw = h * w;
    return 1.5 * b * hw * hw * (weight_bits - 1) + b * hw * (hw - 1) + b * hw * hw;
}

double bops_matmul(double b, double m, double n, double out_p, double weight_bits) {
    require(b >= 1 && m >= 1 && n >= 1 && out_p >= 1 && weight_bits >= 1, "matmul arguments must be >= 1");
    return b * m * n * (out_p * weight_bits * weight_bits + weight_bits * (std::log2(n) + 1));
}

double bops_conv_attention(double b, double c, double h, double w, double d, double k, const BitConfig& bits,
                           double p) {
    require(b >= 1 && c >= 1 && h >= 1 && w >= 1 && d >= 1 && k >= 1, "attention dims must be >= 1");
    const double ba = bits.act_bits;
    const double bw = bits.weight_bits;
    const double hw = h * w;
    // W_q, W_k, W_v map c -> d; the projection maps d -> c.
    const double convs = 3.0 * bops_conv2d(d, c, k, ba, bw, p) + bops_conv2d(c, d, k, ba, bw, p);
    const double qk = bops_matmul(b, hw, d, hw, bw);
    const double sv = bops_matmul(b, hw, hw, d, bw);
    return convs + bops_softmax(b, h, w, bw) + qk + sv;
}

BopsReport bops_model(const ArchDescriptor& arch, const BopsOptions& options) {
    const auto shapes = infer_shapes(arch);
    const double set_size = arch.task == Task::SetClassification ? arch.input_shape.at(0) : 1.0;

    BopsReport report;
    report.per_layer.assign(arch.layers.size(), 0.0);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const BitConfig bits = options.bits_for(i);
        const double p = options.sparsity.at(i);
        const double ba = bits.act_bits;
        const double bw = bits.weight_bits;
        double v = 0.0;
        if (const auto* c = std::get_if<Conv2d>(&arch.layers[i])) {
            v = bops_conv2d(c->out_ch, c->in_ch, c->kernel, ba, bw, p);
        } else if (const auto* l = std::get_if<Linear>(&arch.layers[i])) {
            v = bops_linear(l->out_dim, l->in_dim, ba, bw, p);
        } else if (const auto* a = std::get_if<ConvAttention>(&arch.layers[i])) {
            const Shape& in = shapes[i];
            v = bops_conv_attention(1, a->channels, in[1], in[2], a->qkv_dim, 1, bits, p);
        }
        if (arch.task == Task::SetClassification && i < arch.phi_len) v *= set_size;
        report.per_layer[i] = v;
        report.total += v;
    }
    return report;
}

}  // namespace nac
