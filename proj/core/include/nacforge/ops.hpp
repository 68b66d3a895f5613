#pragma once

#include <vector>

#include "nacforge/arch_ir.hpp"
#include "nacforge/tensor.hpp"

namespace nac::ops {

using Id = Tape::Id;

// x [N, in], w [out, in], b [out] -> [N, out]
Id linear(Tape& t, Id x, Id w, Id b);

// x [N, C, H, W], w [O, C, k, k], b [O] -> [N, O, H-k+1, W-k+1]; stride 1, no padding.
Id conv2d(Tape& t, Id x, Id w, Id b);

struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;  // biased
    std::size_t count = 0;
};

// Normalizes over every axis except 1 (channels for [N,C,H,W], features for [N,D]).
// Training mode uses batch statistics and reports them through `stats`;
// eval mode uses the supplied running statistics.
Id batch_norm_train(Tape& t, Id x, Id gamma, Id beta, double eps, BatchStats* stats);
Id batch_norm_eval(Tape& t, Id x, Id gamma, Id beta, const Tensor& running_mean, const Tensor& running_var,
                   double eps);

Id activation(Tape& t, Id x, const Activation& act);
Id reshape(Tape& t, Id x, Shape dims);
Id add(Tape& t, Id a, Id b);

// x [N, S, D] -> [N, D]
Id set_pool(Tape& t, Id x, PoolKind kind);

// a [B, M, K], b [B, K, N] -> [B, M, N]
Id bmm(Tape& t, Id a, Id b);
// [B, M, N] -> [B, N, M]
Id transpose_last2(Tape& t, Id x);
Id softmax_last(Tape& t, Id x);

// Scalar losses (means over the batch).
Id mse_loss(Tape& t, Id pred, const Tensor& target);
Id softmax_cross_entropy(Tape& t, Id logits, const std::vector<int>& labels);

}  // namespace nac::ops
