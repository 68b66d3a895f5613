#include "nacforge/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "nacforge/errors.hpp"

namespace nac::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap cmat(const Tensor& t, Eigen::Index rows, Eigen::Index cols) { return {t.ptr(), rows, cols}; }
MatMap mmat(Tensor& t, Eigen::Index rows, Eigen::Index cols) { return {t.ptr(), rows, cols}; }

[[noreturn]] void bad_shape(const char* op, const std::string& what) {
    throw ShapeMismatch(std::string(op) + ": " + what);
}

void expect_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        bad_shape(op, "expected rank " + std::to_string(rank) + ", got " + shape_string(t.dims));
    }
}

// Unfolds one sample [C, H, W] into columns [C*k*k, Ho*Wo].
void im2col(const double* x, int c, int h, int w, int k, double* cols) {
    const int ho = h - k + 1;
    const int wo = w - k + 1;
    std::size_t row = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                double* dst = cols + row * static_cast<std::size_t>(ho * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    const double* src = x + (static_cast<std::size_t>(ch) * h + oy + ky) * w + kx;
                    std::copy(src, src + wo, dst + static_cast<std::size_t>(oy) * wo);
                }
            }
        }
    }
}

void col2im_add(const double* cols, int c, int h, int w, int k, double* dx) {
    const int ho = h - k + 1;
    const int wo = w - k + 1;
    std::size_t row = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                const double* src = cols + row * static_cast<std::size_t>(ho * wo);
                for (int oy = 0; oy < ho; ++oy) {
                    double* dst = dx + (static_cast<std::size_t>(ch) * h + oy + ky) * w + kx;
                    const double* s = src + static_cast<std::size_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) dst[ox] += s[ox];
                }
            }
        }
    }
}

// Channel layout for batch norm: `outer` blocks of `channels` x `inner`.
struct BnLayout {
    std::size_t outer = 0;
    std::size_t channels = 0;
    std::size_t inner = 0;
};

BnLayout bn_layout(const Tensor& x) {
    if (x.rank() == 2) return {static_cast<std::size_t>(x.dim(0)), static_cast<std::size_t>(x.dim(1)), 1};
    if (x.rank() == 4) {
        return {static_cast<std::size_t>(x.dim(0)), static_cast<std::size_t>(x.dim(1)),
                static_cast<std::size_t>(x.dim(2)) * static_cast<std::size_t>(x.dim(3))};
    }
    bad_shape("batch_norm", "expected [N, D] or [N, C, H, W], got " + shape_string(x.dims));
}

template <class F>
void for_each_bn(const BnLayout& l, F&& f) {
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t c = 0; c < l.channels; ++c) {
            const std::size_t base = (o * l.channels + c) * l.inner;
            for (std::size_t i = 0; i < l.inner; ++i) f(c, base + i);
        }
    }
}

}  // namespace

Id linear(Tape& t, Id x, Id w, Id b) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    expect_rank("linear", xv, 2);
    expect_rank("linear", wv, 2);
    const int n = xv.dim(0);
    const int in = xv.dim(1);
    const int out = wv.dim(0);
    if (wv.dim(1) != in || bv.size() != static_cast<std::size_t>(out)) {
        bad_shape("linear", "input " + shape_string(xv.dims) + " vs weight " + shape_string(wv.dims));
    }
    Tensor y({n, out});
    auto ym = mmat(y, n, out);
    ym.noalias() = cmat(xv, n, in) * cmat(wv, out, in).transpose();
    ym.rowwise() += ConstVecMap(bv.ptr(), out).transpose();

    return t.record(std::move(y), {x, w, b}, [x, w, b, n, in, out](Tape& tp, Id self) {
        const auto dy = cmat(tp.grad_buffer(self), n, out);
        if (tp.requires_grad(x)) {
            mmat(tp.grad_buffer(x), n, in).noalias() += dy * cmat(tp.value(w), out, in);
        }
        if (tp.requires_grad(w)) {
            mmat(tp.grad_buffer(w), out, in).noalias() += dy.transpose() * cmat(tp.value(x), n, in);
        }
        if (tp.requires_grad(b)) {
            VecMap(tp.grad_buffer(b).ptr(), out) += dy.colwise().sum().transpose();
        }
    });
}

Id conv2d(Tape& t, Id x, Id w, Id b) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    expect_rank("conv2d", xv, 4);
    expect_rank("conv2d", wv, 4);
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    const int o = wv.dim(0), k = wv.dim(2);
    if (wv.dim(1) != c || wv.dim(3) != k || bv.size() != static_cast<std::size_t>(o)) {
        bad_shape("conv2d", "input " + shape_string(xv.dims) + " vs weight " + shape_string(wv.dims));
    }
    const int ho = h - k + 1, wo = wd - k + 1;
    if (ho <= 0 || wo <= 0) throw NonPositiveDim("conv2d output would be empty");
    const int ckk = c * k * k;
    const int hw = ho * wo;
    const std::size_t in_stride = static_cast<std::size_t>(c) * h * wd;
    const std::size_t out_stride = static_cast<std::size_t>(o) * hw;

    Tensor y({n, o, ho, wo});
    std::vector<double> cols(static_cast<std::size_t>(ckk) * hw);
    const auto wm = cmat(wv, o, ckk);
    const ConstVecMap bias(bv.ptr(), o);
    for (int s = 0; s < n; ++s) {
        im2col(xv.ptr() + s * in_stride, c, h, wd, k, cols.data());
        MatMap ys(y.ptr() + s * out_stride, o, hw);
        ys.noalias() = wm * ConstMatMap(cols.data(), ckk, hw);
        ys.colwise() += bias;
    }

    return t.record(std::move(y), {x, w, b}, [=](Tape& tp, Id self) {
        const Tensor& dy = tp.grad_buffer(self);
        const Tensor& xin = tp.value(x);
        const auto wmat = cmat(tp.value(w), o, ckk);
        std::vector<double> col(static_cast<std::size_t>(ckk) * hw);
        std::vector<double> dcol(static_cast<std::size_t>(ckk) * hw);
        for (int s = 0; s < n; ++s) {
            const ConstMatMap dys(dy.ptr() + s * out_stride, o, hw);
            if (tp.requires_grad(w)) {
                im2col(xin.ptr() + s * in_stride, c, h, wd, k, col.data());
                mmat(tp.grad_buffer(w), o, ckk).noalias() += dys * ConstMatMap(col.data(), ckk, hw).transpose();
            }
            if (tp.requires_grad(b)) {
                VecMap(tp.grad_buffer(b).ptr(), o) += dys.rowwise().sum();
            }
            if (tp.requires_grad(x)) {
                MatMap(dcol.data(), ckk, hw).noalias() = wmat.transpose() * dys;
                col2im_add(dcol.data(), c, h, wd, k, tp.grad_buffer(x).ptr() + s * in_stride);
            }
        }
    });
}

Id batch_norm_train(Tape& t, Id x, Id gamma, Id beta, double eps, BatchStats* stats) {
    const Tensor& xv = t.value(x);
    const BnLayout l = bn_layout(xv);
    const Tensor& g = t.value(gamma);
    const Tensor& bt = t.value(beta);
    if (g.size() != l.channels || bt.size() != l.channels) {
        bad_shape("batch_norm", "affine size " + std::to_string(g.size()) + " vs channels " +
                                    std::to_string(l.channels));
    }
    const double count = static_cast<double>(l.outer * l.inner);
    std::vector<double> mean(l.channels, 0.0), var(l.channels, 0.0);
    for_each_bn(l, [&](std::size_t c, std::size_t i) { mean[c] += xv[i]; });
    for (auto& m : mean) m /= count;
    for_each_bn(l, [&](std::size_t c, std::size_t i) {
        const double d = xv[i] - mean[c];
        var[c] += d * d;
    });
    for (auto& v : var) v /= count;
    std::vector<double> inv_std(l.channels);
    for (std::size_t c = 0; c < l.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);

    Tensor xhat(xv.dims);
    Tensor y(xv.dims);
    for_each_bn(l, [&](std::size_t c, std::size_t i) {
        xhat[i] = (xv[i] - mean[c]) * inv_std[c];
        y[i] = g[c] * xhat[i] + bt[c];
    });
    if (stats) *stats = {mean, var, static_cast<std::size_t>(count)};

    return t.record(std::move(y), {x, gamma, beta},
                    [x, gamma, beta, l, count, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, Id self) {
                        const Tensor& dy = tp.grad_buffer(self);
                        const Tensor& gv = tp.value(gamma);
                        std::vector<double> sum_dy(l.channels, 0.0), sum_dy_xhat(l.channels, 0.0);
                        for_each_bn(l, [&](std::size_t c, std::size_t i) {
                            sum_dy[c] += dy[i];
                            sum_dy_xhat[c] += dy[i] * xhat[i];
                        });
                        if (tp.requires_grad(gamma)) {
                            Tensor& dg = tp.grad_buffer(gamma);
                            for (std::size_t c = 0; c < l.channels; ++c) dg[c] += sum_dy_xhat[c];
                        }
                        if (tp.requires_grad(beta)) {
                            Tensor& db = tp.grad_buffer(beta);
                            for (std::size_t c = 0; c < l.channels; ++c) db[c] += sum_dy[c];
                        }
                        if (tp.requires_grad(x)) {
                            Tensor& dx = tp.grad_buffer(x);
                            for_each_bn(l, [&](std::size_t c, std::size_t i) {
                                dx[i] += gv[c] * inv_std[c] / count *
                                         (count * dy[i] - sum_dy[c] - xhat[i] * sum_dy_xhat[c]);
                            });
                        }
                    });
}

Id batch_norm_eval(Tape& t, Id x, Id gamma, Id beta, const Tensor& running_mean, const Tensor& running_var,
                   double eps) {
    const Tensor& xv = t.value(x);
    const BnLayout l = bn_layout(xv);
    const Tensor& g = t.value(gamma);
    const Tensor& bt = t.value(beta);
    if (g.size() != l.channels || running_mean.size() != l.channels || running_var.size() != l.channels) {
        bad_shape("batch_norm", "statistics size does not match channels " + std::to_string(l.channels));
    }
    std::vector<double> inv_std(l.channels);
    for (std::size_t c = 0; c < l.channels; ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
    Tensor xhat(xv.dims);
    Tensor y(xv.dims);
    for_each_bn(l, [&](std::size_t c, std::size_t i) {
        xhat[i] = (xv[i] - running_mean[c]) * inv_std[c];
        y[i] = g[c] * xhat[i] + bt[c];
    });
    return t.record(std::move(y), {x, gamma, beta},
                    [x, gamma, beta, l, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, Id self) {
                        const Tensor& dy = tp.grad_buffer(self);
                        const Tensor& gv = tp.value(gamma);
                        if (tp.requires_grad(gamma)) {
                            Tensor& dg = tp.grad_buffer(gamma);
                            for_each_bn(l, [&](std::size_t c, std::size_t i) { dg[c] += dy[i] * xhat[i]; });
                        }
                        if (tp.requires_grad(beta)) {
                            Tensor& db = tp.grad_buffer(beta);
                            for_each_bn(l, [&](std::size_t c, std::size_t i) { db[c] += dy[i]; });
                        }
                        if (tp.requires_grad(x)) {
                            Tensor& dx = tp.grad_buffer(x);
                            for_each_bn(l, [&](std::size_t c, std::size_t i) { dx[i] += dy[i] * gv[c] * inv_std[c]; });
                        }
                    });
}

Id activation(Tape& t, Id x, const Activation& act) {
    if (act.kind == ActKind::None) return x;
    const Tensor& xv = t.value(x);
    const double slope = act.kind == ActKind::LeakyReLU ? act.slope() : 0.0;
    Tensor y(xv.dims);
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : slope * xv[i];
    return t.record(std::move(y), {x}, [x, slope](Tape& tp, Id self) {
        const Tensor& dy = tp.grad_buffer(self);
        const Tensor& xin = tp.value(x);
        Tensor& dx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += xin[i] > 0.0 ? dy[i] : slope * dy[i];
    });
}

Id reshape(Tape& t, Id x, Shape dims) {
    const Tensor& xv = t.value(x);
    if (shape_numel(dims) != static_cast<std::int64_t>(xv.size())) {
        bad_shape("reshape", shape_string(xv.dims) + " -> " + shape_string(dims));
    }
    Tensor y(std::move(dims), xv.data);
    return t.record(std::move(y), {x}, [x](Tape& tp, Id self) {
        const Tensor& dy = tp.grad_buffer(self);
        Tensor& dx = tp.grad_buffer(x);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
}

Id add(Tape& t, Id a, Id b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (av.dims != bv.dims) bad_shape("add", shape_string(av.dims) + " vs " + shape_string(bv.dims));
    Tensor y(av.dims);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    return t.record(std::move(y), {a, b}, [a, b](Tape& tp, Id self) {
        const Tensor& dy = tp.grad_buffer(self);
        for (Id p : {a, b}) {
            if (!tp.requires_grad(p)) continue;
            Tensor& dp = tp.grad_buffer(p);
            for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += dy[i];
        }
    });
}

Id set_pool(Tape& t, Id x, PoolKind kind) {
    const Tensor& xv = t.value(x);
    expect_rank("set_pool", xv, 3);
    const int n = xv.dim(0), s = xv.dim(1), d = xv.dim(2);
    Tensor y({n, d});
    std::vector<int> argmax;
    if (kind == PoolKind::Max) argmax.assign(static_cast<std::size_t>(n) * d, 0);
    for (int b = 0; b < n; ++b) {
        for (int j = 0; j < d; ++j) {
            const std::size_t out = static_cast<std::size_t>(b) * d + j;
            if (kind == PoolKind::Max) {
                double best = xv[static_cast<std::size_t>(b) * s * d + j];
                int best_e = 0;
                for (int e = 1; e < s; ++e) {
                    const double v = xv[(static_cast<std::size_t>(b) * s + e) * d + j];
                    if (v > best) {
                        best = v;
                        best_e = e;
                    }
                }
                y[out] = best;
                argmax[out] = best_e;
            } else {
                double acc = 0.0;
                for (int e = 0; e < s; ++e) acc += xv[(static_cast<std::size_t>(b) * s + e) * d + j];
                y[out] = kind == PoolKind::Mean ? acc / s : acc;
            }
        }
    }
    return t.record(std::move(y), {x}, [x, kind, n, s, d, argmax = std::move(argmax)](Tape& tp, Id self) {
        const Tensor& dy = tp.grad_buffer(self);
        Tensor& dx = tp.grad_buffer(x);
        const double scale = kind == PoolKind::Mean ? 1.0 / s : 1.0;
        for (int b = 0; b < n; ++b) {
            for (int j = 0; j < d; ++j) {
                const std::size_t out = static_cast<std::size_t>(b) * d + j;
                if (kind == PoolKind::Max) {
                    dx[(static_cast<std::size_t>(b) * s + argmax[out]) * d + j] += dy[out];
                } else {
                    for (int e = 0; e < s; ++e) dx[(static_cast<std::size_t>(b) * s + e) * d + j] += dy[out] * scale;
                }
            }
        }
    });
}

Id bmm(Tape& t, Id a, Id b) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    expect_rank("bmm", av, 3);
    expect_rank("bmm", bv, 3);
    const int batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    if (bv.dim(0) != batch || bv.dim(1) != k) bad_shape("bmm", shape_string(av.dims) + " x " + shape_string(bv.dims));
    const std::size_t sa = static_cast<std::size_t>(m) * k, sb = static_cast<std::size_t>(k) * n,
                      sy = static_cast<std::size_t>(m) * n;
    Tensor y({batch, m, n});
    for (int i = 0; i < batch; ++i) {
        MatMap(y.ptr() + i * sy, m, n).noalias() =
            ConstMatMap(av.ptr() + i * sa, m, k) * ConstMatMap(bv.ptr() + i * sb, k, n);
    }
    return t.record(std::move(y), {a, b}, [=](Tape& tp, Id self) {
        const Tensor& dy = tp.grad_buffer(self);
        for (int i = 0; i < batch; ++i) {
            const ConstMatMap dyi(dy.ptr() + i * sy, m, n);
            if (tp.requires_grad(a)) {
                MatMap(tp.grad_buffer(a).ptr() + i * sa, m, k).noalias() +=
                    dyi * ConstMatMap(tp.value(b).ptr() + i * sb, k, n).transpose();
            }
            if (tp.requires_grad(b)) {
                MatMap(tp.grad_buffer(b).ptr() + i * sb, k, n).noalias() +=
                    ConstMatMap(tp.value(a).ptr() + i * sa, m, k).transpose() * dyi;
            }
        }
    });
}

Id transpose_last2(Tape& t, Id x) {
    const Tensor& xv = t.value(x);
    expect_rank("transpose", xv, 3);
    const int batch = xv.dim(0), m = xv.dim(1), n = xv.dim(2);
    const std::size_t stride = static_cast<std::size_t>(m) * n;
    Tensor y({batch, n, m});
    for (int i = 0; i < batch; ++i) {
        MatMap(y.ptr() + i * stride, n, m) = ConstMatMap(xv.ptr() + i * stride, m, n).transpose();
    }
    return t.record(std::move(y), {x}, [=](Tape& tp, Id self) {
        const Tensor& dy = tp.grad_buffer(self);
        Tensor& dx = tp.grad_buffer(x);
        for (int i = 0; i < batch; ++i) {
            MatMap(dx.ptr() + i * stride, m, n) += ConstMatMap(dy.ptr() + i * stride, n, m).transpose();
        }
    });
}

Id softmax_last(Tape& t, Id x) {
    const Tensor& xv = t.value(x);
    if (xv.rank() == 0) bad_shape("softmax", "scalar input");
    const std::size_t len = static_cast<std::size_t>(xv.dims.back());
    const std::size_t rows = xv.size() / len;
    Tensor y(xv.dims);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = xv.ptr() + r * len;
        double* dst = y.ptr() + r * len;
        const double mx = *std::max_element(src, src + len);
        double sum = 0.0;
        for (std::size_t j = 0; j < len; ++j) sum += dst[j] = std::exp(src[j] - mx);
        for (std::size_t j = 0; j < len; ++j) dst[j] /= sum;
    }
    Tensor saved = y;
    return t.record(std::move(y), {x}, [x, len, rows, saved = std::move(saved)](Tape& tp, Id self) {
        const Tensor& dy = tp.grad_buffer(self);
        Tensor& dx = tp.grad_buffer(x);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = saved.ptr() + r * len;
            const double* dyr = dy.ptr() + r * len;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) dot += dyr[j] * yr[j];
            for (std::size_t j = 0; j < len; ++j) dx[r * len + j] += yr[j] * (dyr[j] - dot);
        }
    });
}

Id mse_loss(Tape& t, Id pred, const Tensor& target) {
    const Tensor& p = t.value(pred);
    if (p.size() != target.size()) bad_shape("mse_loss", shape_string(p.dims) + " vs " + shape_string(target.dims));
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - target[i];
        acc += d * d;
    }
    const double count = static_cast<double>(p.size());
    return t.record(Tensor({1}, {acc / count}), {pred}, [pred, target, count](Tape& tp, Id self) {
        const double g = tp.grad_buffer(self)[0];
        const Tensor& pv = tp.value(pred);
        Tensor& dp = tp.grad_buffer(pred);
        for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += g * 2.0 * (pv[i] - target[i]) / count;
    });
}

Id softmax_cross_entropy(Tape& t, Id logits, const std::vector<int>& labels) {
    const Tensor& z = t.value(logits);
    expect_rank("softmax_cross_entropy", z, 2);
    const int n = z.dim(0), c = z.dim(1);
    if (labels.size() != static_cast<std::size_t>(n)) bad_shape("softmax_cross_entropy", "label count mismatch");
    Tensor probs(z.dims);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = z.ptr() + static_cast<std::size_t>(i) * c;
        double* pr = probs.ptr() + static_cast<std::size_t>(i) * c;
        const double mx = *std::max_element(row, row + c);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += pr[j] = std::exp(row[j] - mx);
        for (int j = 0; j < c; ++j) pr[j] /= sum;
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) bad_shape("softmax_cross_entropy", "label " + std::to_string(y) + " out of range");
        loss -= row[y] - mx - std::log(sum);
    }
    return t.record(Tensor({1}, {loss / n}), {logits}, [logits, labels, n, c, probs = std::move(probs)](Tape& tp, Id self) {
        const double g = tp.grad_buffer(self)[0] / n;
        Tensor& dz = tp.grad_buffer(logits);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < c; ++j) {
                const std::size_t k = static_cast<std::size_t>(i) * c + j;
                dz[k] += g * (probs[k] - (labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace nac::ops
