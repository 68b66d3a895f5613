#include "nacforge/model.hpp"

#include "nacforge/errors.hpp"

namespace nac {

namespace {

void update_running(LayerState& st, const ops::BatchStats& stats) {
    const double m = kBatchNormMomentum;
    const double unbias = stats.count > 1 ? static_cast<double>(stats.count) / static_cast<double>(stats.count - 1) : 1.0;
    for (std::size_t c = 0; c < stats.mean.size(); ++c) {
        st.running_mean[c] = (1.0 - m) * st.running_mean[c] + m * stats.mean[c];
        st.running_var[c] = (1.0 - m) * st.running_var[c] + m * stats.var[c] * unbias;
    }
}

Tape::Id attention_block(Tape& t, const ConvAttention& a, const std::vector<Tape::Id>& p, Tape::Id x) {
    const Shape in = t.value(x).dims;  // [N, C, H, W]
    const int n = in[0], h = in[2], w = in[3];
    const int hw = h * w;
    const int d = a.qkv_dim;
    const auto q = ops::reshape(t, ops::conv2d(t, x, p[0], p[1]), {n, d, hw});
    const auto k = ops::reshape(t, ops::conv2d(t, x, p[2], p[3]), {n, d, hw});
    const auto v = ops::reshape(t, ops::conv2d(t, x, p[4], p[5]), {n, d, hw});
    const auto scores = ops::bmm(t, ops::transpose_last2(t, q), k);            // [N, HW, HW]
    const auto attn = ops::softmax_last(t, scores);
    const auto mixed = ops::bmm(t, attn, ops::transpose_last2(t, v));          // [N, HW, d]
    const auto back = ops::reshape(t, ops::transpose_last2(t, mixed), {n, d, h, w});
    const auto proj = ops::conv2d(t, back, p[6], p[7]);
    return ops::activation(t, ops::add(t, x, proj), a.skip_act);
}

}  // namespace

BoundParams bind_params(Tape& tape, const ParamStore& params) {
    BoundParams bound;
    bound.ids.resize(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        for (const auto& p : params.layers[i].params) {
            bound.ids[i].push_back(tape.parameter(effective_value(p, params.quant)));
        }
    }
    return bound;
}

Tape::Id build_forward(Tape& t, const ArchDescriptor& arch, const ParamStore& params, const BoundParams& bound,
                       Tape::Id input, Mode mode, ParamStore* stats_sink) {
    const Tensor& x0 = t.value(input);
    if (x0.rank() != arch.input_shape.size() + 1 ||
        !std::equal(arch.input_shape.begin(), arch.input_shape.end(), x0.dims.begin() + 1)) {
        throw ShapeMismatch("batch shape " + shape_string(x0.dims) + " does not match input " +
                            shape_string(arch.input_shape));
    }
    check_params(arch, params);
    const int batch = x0.dim(0);
    const bool sets = arch.task == Task::SetClassification;

    Tape::Id x = input;
    if (sets) x = ops::reshape(t, x, {batch * arch.input_shape[0], arch.input_shape[1]});

    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& p = bound.ids[i];
        const LayerSpec& layer = arch.layers[i];
        if (std::holds_alternative<Conv2d>(layer)) {
            x = ops::conv2d(t, x, p[0], p[1]);
        } else if (std::holds_alternative<Linear>(layer)) {
            x = ops::linear(t, x, p[0], p[1]);
        } else if (std::holds_alternative<BatchNorm>(layer)) {
            const LayerState& st = params.layers[i];
            if (mode == Mode::Train) {
                ops::BatchStats stats;
                x = ops::batch_norm_train(t, x, p[0], p[1], kBatchNormEps, &stats);
                if (stats_sink) update_running(stats_sink->layers[i], stats);
            } else {
                x = ops::batch_norm_eval(t, x, p[0], p[1], st.running_mean, st.running_var, kBatchNormEps);
            }
        } else if (const auto* a = std::get_if<Activation>(&layer)) {
            x = ops::activation(t, x, *a);
        } else if (std::holds_alternative<Flatten>(layer)) {
            const Tensor& v = t.value(x);
            x = ops::reshape(t, x, {batch, static_cast<int>(v.size() / static_cast<std::size_t>(batch))});
        } else if (const auto* att = std::get_if<ConvAttention>(&layer)) {
            x = attention_block(t, *att, p, x);
        } else if (const auto* pool = std::get_if<SetPool>(&layer)) {
            const Tensor& v = t.value(x);
            x = ops::reshape(t, x, {batch, arch.input_shape[0], v.dims.back()});
            x = ops::set_pool(t, x, pool->kind);
        }
    }
    return x;
}

Tensor forward(const ArchDescriptor& arch, const ParamStore& params, const Tensor& batch) {
    Tape tape(false);
    const auto bound = bind_params(tape, params);
    const auto input = tape.constant(batch);
    const auto out = build_forward(tape, arch, params, bound, input, Mode::Eval);
    return tape.value(out);
}

std::vector<std::vector<Tensor>> parameter_grads(const Tape& tape, const BoundParams& bound, const ParamStore& params) {
    std::vector<std::vector<Tensor>> grads(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        for (std::size_t j = 0; j < params.layers[i].params.size(); ++j) {
            Tensor g = tape.grad(bound.ids[i][j]);
            const auto& mask = params.layers[i].params[j].mask;
            if (!mask.empty()) {
                for (std::size_t k = 0; k < g.size(); ++k) {
                    if (!mask[k]) g[k] = 0.0;
                }
            }
            grads[i].push_back(std::move(g));
        }
    }
    return grads;
}

}  // namespace nac
