#include "nacforge/params.hpp"

#include <cmath>

#include "nacforge/errors.hpp"
#include "nacforge/rng.hpp"

namespace nac {

namespace {

ParamTensor uniform_tensor(std::string name, Shape dims, double bound, bool is_weight, Rng& rng) {
    Tensor t(std::move(dims));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return {std::move(name), std::move(t), {}, is_weight};
}

// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void add_affine(LayerState& st, const std::string& prefix, Shape weight_dims, int fan_in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    st.params.push_back(uniform_tensor(prefix + "weight", std::move(weight_dims), bound, true, rng));
    st.params.push_back(uniform_tensor(prefix + "bias", {out}, bound, false, rng));
}

std::vector<Shape> expected_shapes(const LayerSpec& layer) {
    if (const auto* c = std::get_if<Conv2d>(&layer)) {
        return {{c->out_ch, c->in_ch, c->kernel, c->kernel}, {c->out_ch}};
    }
    if (const auto* l = std::get_if<Linear>(&layer)) return {{l->out_dim, l->in_dim}, {l->out_dim}};
    if (const auto* b = std::get_if<BatchNorm>(&layer)) return {{b->channels}, {b->channels}};
    if (const auto* a = std::get_if<ConvAttention>(&layer)) {
        const Shape in_w{a->qkv_dim, a->channels, 1, 1};
        return {in_w, {a->qkv_dim}, in_w, {a->qkv_dim}, in_w, {a->qkv_dim}, {a->channels, a->qkv_dim, 1, 1}, {a->channels}};
    }
    return {};
}

}  // namespace

ParamStore init_params(const ArchDescriptor& arch, std::uint64_t seed) {
    Rng rng(seed);
    ParamStore store;
    store.layers.resize(arch.layers.size());
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        LayerState& st = store.layers[i];
        const LayerSpec& layer = arch.layers[i];
        if (const auto* c = std::get_if<Conv2d>(&layer)) {
            add_affine(st, "", {c->out_ch, c->in_ch, c->kernel, c->kernel}, c->in_ch * c->kernel * c->kernel, c->out_ch,
                       rng);
        } else if (const auto* l = std::get_if<Linear>(&layer)) {
            add_affine(st, "", {l->out_dim, l->in_dim}, l->in_dim, l->out_dim, rng);
        } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
            st.params.push_back({"gamma", Tensor({b->channels}, 1.0), {}, false});
            st.params.push_back({"beta", Tensor({b->channels}, 0.0), {}, false});
            st.running_mean = Tensor({b->channels}, 0.0);
            st.running_var = Tensor({b->channels}, 1.0);
        } else if (const auto* a = std::get_if<ConvAttention>(&layer)) {
            for (const char* prefix : {"q.", "k.", "v."}) {
                add_affine(st, prefix, {a->qkv_dim, a->channels, 1, 1}, a->channels, a->qkv_dim, rng);
            }
            add_affine(st, "proj.", {a->channels, a->qkv_dim, 1, 1}, a->qkv_dim, a->channels, rng);
        }
    }
    return store;
}

void check_params(const ArchDescriptor& arch, const ParamStore& params) {
    if (params.layers.size() != arch.layers.size()) {
        throw ShapeMismatch("parameter store has " + std::to_string(params.layers.size()) + " layers, architecture " +
                            std::to_string(arch.layers.size()));
    }
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto want = expected_shapes(arch.layers[i]);
        const auto& got = params.layers[i].params;
        if (got.size() != want.size()) {
            throw ShapeMismatch("layer " + std::to_string(i) + " has " + std::to_string(got.size()) +
                                " parameter tensors, expected " + std::to_string(want.size()));
        }
        for (std::size_t j = 0; j < want.size(); ++j) {
            if (got[j].value.dims != want[j] || got[j].value.size() != static_cast<std::size_t>(shape_numel(want[j]))) {
                throw ShapeMismatch("layer " + std::to_string(i) + " tensor '" + got[j].name + "' has shape " +
                                    shape_string(got[j].value.dims) + ", expected " + shape_string(want[j]));
            }
            if (!got[j].mask.empty() && got[j].mask.size() != got[j].value.size()) {
                throw ShapeMismatch("layer " + std::to_string(i) + " tensor '" + got[j].name + "' mask size mismatch");
            }
        }
        if (std::holds_alternative<BatchNorm>(arch.layers[i])) {
            const auto c = static_cast<std::size_t>(std::get<BatchNorm>(arch.layers[i]).channels);
            if (params.layers[i].running_mean.size() != c || params.layers[i].running_var.size() != c) {
                throw ShapeMismatch("layer " + std::to_string(i) + " running statistics size mismatch");
            }
        }
    }
}

double quantization_scale(const Tensor& t, int bits) {
    double max_abs = 0.0;
    for (double v : t.data) max_abs = std::max(max_abs, std::abs(v));
    if (max_abs == 0.0) return 1.0;
    const double levels = std::ldexp(1.0, bits - 1) - 1.0;
    return max_abs / levels;
}

Tensor fake_quantize(const Tensor& t, int bits) {
    if (!is_supported_bit_width(bits)) {
        throw DomainError("quantization bits must be one of {4, 8, 16, 32}, got " + std::to_string(bits));
    }
    if (bits == 32) return t;
    const double s = quantization_scale(t, bits);
    Tensor q(t.dims);
    for (std::size_t i = 0; i < t.size(); ++i) q[i] = std::nearbyint(t[i] / s) * s;
    return q;
}

Tensor effective_value(const ParamTensor& p, const std::optional<BitConfig>& quant) {
    if (!p.is_weight) return p.value;
    Tensor v = quant ? fake_quantize(p.value, quant->weight_bits) : p.value;
    if (!p.mask.empty()) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!p.mask[i]) v[i] = 0.0;
        }
    }
    return v;
}

void ensure_mask(ParamTensor& p) {
    if (p.mask.empty()) p.mask.assign(p.value.size(), 1);
}

void apply_masks(ParamStore& params) {
    for (auto& layer : params.layers) {
        for (auto& p : layer.params) {
            if (p.mask.empty()) continue;
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                if (!p.mask[i]) p.value[i] = 0.0;
            }
        }
    }
}

std::size_t weight_pool_size(const ParamStore& params) {
    std::size_t n = 0;
    for (const auto& layer : params.layers) {
        for (const auto& p : layer.params) {
            if (p.is_weight) n += p.value.size();
        }
    }
    return n;
}

std::size_t masked_weight_count(const ParamStore& params) {
    std::size_t n = 0;
    for (const auto& layer : params.layers) {
        for (const auto& p : layer.params) {
            if (!p.is_weight || p.mask.empty()) continue;
            for (auto m : p.mask) n += m ? 0 : 1;
        }
    }
    return n;
}

double global_sparsity(const ParamStore& params) {
    const std::size_t pool = weight_pool_size(params);
    return pool == 0 ? 0.0 : static_cast<double>(masked_weight_count(params)) / static_cast<double>(pool);
}

SparsityProfile density_profile(const ParamStore& params) {
    SparsityProfile profile;
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        std::size_t total = 0;
        std::size_t kept = 0;
        for (const auto& p : params.layers[i].params) {
            if (!p.is_weight) continue;
            total += p.value.size();
            if (p.mask.empty()) {
                kept += p.value.size();
            } else {
                for (auto m : p.mask) kept += m ? 1 : 0;
            }
        }
        if (total > 0) profile.density[i] = static_cast<double>(kept) / static_cast<double>(total);
    }
    return profile;
}

}  // namespace nac
