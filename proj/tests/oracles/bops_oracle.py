#!/usr/bin/env python3
"""Independent direct evaluation of the BOPs formulas, used to freeze test constants."""
from fractions import Fraction
import math


def linear(m, n, ba, bw, p):
    return m * n * (p * ba * bw + ba + bw + math.log2(n))


def conv2d(m, n, k, ba, bw, p):
    return m * n * k * k * (p * ba * bw + ba + bw + math.log2(n * k * k))


def softmax(b, h, w, bw):
    hw = h * w
    return 1.5 * b * hw * hw * (bw - 1) + b * hw * (hw - 1) + b * hw * hw


def matmul(b, m, n, outp, bw):
    return b * m * n * (outp * bw * bw + bw * (math.log2(n) + 1))


def conv_attn(b, c, h, w, d, k, ba, bw, p):
    convs = 3 * conv2d(d, c, k, ba, bw, p) + conv2d(c, d, k, ba, bw, p)
    return convs + softmax(b, h, w, bw) + matmul(b, h * w, d, h * w, bw) + matmul(b, h * w, h * w, d, bw)


if __name__ == "__main__":
    print("linear(32,648,8,8,1) =", repr(linear(32, 648, 8, 8, 1)))
    print("linear(1,2,4,4,0) =", repr(linear(1, 2, 4, 4, 0)))
    print("conv2d(8,1,3,8,8,1) =", repr(conv2d(8, 1, 3, 8, 8, 1)))
    print("softmax(1,3,3,8) =", repr(softmax(1, 3, 3, 8)))
    print("matmul(1,81,16,81,8) =", repr(matmul(1, 81, 16, 81, 8)))
    print("conv_attn(all 1) =", repr(conv_attn(1, 1, 1, 1, 1, 1, 1, 1, 1)))
    # bragg_tiny at 32/32 dense, layer by layer
    tiny = [conv2d(8, 1, 3, 32, 32, 1), linear(32, 648, 32, 32, 1), linear(32, 32, 32, 32, 1),
            linear(32, 32, 32, 32, 1), linear(2, 32, 32, 32, 1)]
    print("bragg_tiny layers =", [repr(v) for v in tiny])
    print("bragg_tiny total =", repr(sum(tiny)))
    # deepsets_tiny at 32/32 dense, phi x8
    phi = [linear(8, 3, 32, 32, 1), linear(8, 8, 32, 32, 1)]
    rho = [linear(32, 8, 32, 32, 1), linear(5, 32, 32, 32, 1)]
    print("deepsets_tiny total =", repr(8 * sum(phi) + sum(rho)))
