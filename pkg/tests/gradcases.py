"""Gradient-check cases for every differentiable primitive.

Each case builds, for a given seed, a list of (scalar function, point) pairs:
one per differentiable argument of the primitive.
"""
import numpy as np

from crgan import nn
from crgan.tensor import Tensor

from conftest import weighted_sum


def _r(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def _conv_checks(op, x, k, b):
    return [
        (lambda t: weighted_sum(op(t, k, b)), x),
        (lambda t: weighted_sum(op(x, t, b)), k),
        (lambda t: weighted_sum(op(x, k, t)), b),
    ]


def conv2d_case(seed):
    # 8x8 takes the im2col path, 2x2 (-> 1x1) the cropped-kernel path
    rng = np.random.default_rng(seed)
    k, b = Tensor(0.3 * rng.standard_normal((3, 2, 5, 5))), _r(rng, 3)
    return _conv_checks(nn.conv2d, _r(rng, 1, 2, 8, 8), k, b) + _conv_checks(nn.conv2d, _r(rng, 2, 2, 2, 2), k, b)


def transposed_conv2d_case(seed):
    rng = np.random.default_rng(seed)
    k, b = Tensor(0.3 * rng.standard_normal((3, 2, 5, 5))), _r(rng, 2)
    op = nn.transposed_conv2d
    return _conv_checks(op, _r(rng, 1, 3, 4, 4), k, b) + _conv_checks(op, _r(rng, 2, 3, 1, 1), k, b)


def dense_case(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _r(rng, 3, 4), _r(rng, 4, 5), _r(rng, 5)
    return [
        (lambda t: weighted_sum(nn.dense(t, w, b)), x),
        (lambda t: weighted_sum(nn.dense(x, t, b)), w),
        (lambda t: weighted_sum(nn.dense(x, w, t)), b),
    ]


def activation_case(kind):
    def case(seed):
        rng = np.random.default_rng(seed)
        x = _r(rng, 4, 5)
        if kind == "leaky_relu":
            # keep coordinates away from the kink at 0
            x.data += np.sign(x.data) * 0.05
        return [(lambda t: weighted_sum(nn.activation(t, kind)), x)]
    return case


def batch_norm_case(seed):
    rng = np.random.default_rng(seed)
    x = _r(rng, 3, 2, 3, 3)
    gamma, beta = Tensor(1.0 + 0.5 * rng.standard_normal(2)), _r(rng, 2)
    return [
        (lambda t: weighted_sum(nn.batch_norm(t, gamma, beta, "train")), x),
        (lambda t: weighted_sum(nn.batch_norm(x, t, beta, "train")), gamma),
        (lambda t: weighted_sum(nn.batch_norm(x, gamma, t, "train")), beta),
    ]


def lstm_chain_case(seed, steps=4):
    """Four-step unrolled LSTM; checks input sequence, initial state and all weights."""
    rng = np.random.default_rng(seed)
    d, u, n = 3, 4, 2
    xs = _r(rng, steps, n, d)
    h0, c0 = _r(rng, n, u), _r(rng, n, u)
    w_ih, w_hh, b = Tensor(0.5 * rng.standard_normal((d, 4 * u))), Tensor(0.5 * rng.standard_normal((u, 4 * u))), _r(rng, 4 * u)

    def run(xs_, h, c, w_ih_, w_hh_, b_):
        outs = []
        for t in range(steps):
            h, c = nn.lstm_cell(xs_[t], h, c, (w_ih_, w_hh_, b_))
            outs.append(h)
        return weighted_sum(h) + weighted_sum(c, seed=7) + weighted_sum(outs[1], seed=8)

    return [
        (lambda t: run(t, h0, c0, w_ih, w_hh, b), xs),
        (lambda t: run(xs, t, c0, w_ih, w_hh, b), h0),
        (lambda t: run(xs, h0, t, w_ih, w_hh, b), c0),
        (lambda t: run(xs, h0, c0, t, w_hh, b), w_ih),
        (lambda t: run(xs, h0, c0, w_ih, t, b), w_hh),
        (lambda t: run(xs, h0, c0, w_ih, w_hh, t), b),
    ]


def bce_case(seed):
    rng = np.random.default_rng(seed)
    p = Tensor(rng.uniform(0.05, 0.95, (6, 1)))
    y = rng.integers(0, 2, (6, 1)).astype(float)
    return [(lambda t: nn.bce(t, y), p)]


def l1_case(seed):
    rng = np.random.default_rng(seed)
    a, b = _r(rng, 3, 4), _r(rng, 3, 4)
    return [(lambda t: nn.l1(t, b), a)]


def cross_entropy_case(seed):
    rng = np.random.default_rng(seed)
    logits = _r(rng, 1, 3)
    label = [int(rng.integers(0, 3))]
    batch = _r(rng, 5, 3)
    labels = rng.integers(0, 3, 5)
    return [(lambda t: nn.cross_entropy(t, label), logits),
            (lambda t: nn.cross_entropy(t, labels), batch)]


def gan_value_case(seed):
    rng = np.random.default_rng(seed)
    real, fake = Tensor(rng.uniform(0.05, 0.95, (5, 1))), Tensor(rng.uniform(0.05, 0.95, (5, 1)))
    return [(lambda t: nn.gan_value(t, fake), real), (lambda t: nn.gan_value(real, t), fake)]


# name -> (case builder, relative-error tolerance)
CASES = {
    "conv2d": (conv2d_case, 1e-4),
    "transposed_conv2d": (transposed_conv2d_case, 1e-4),
    "dense": (dense_case, 1e-4),
    "leaky_relu": (activation_case("leaky_relu"), 1e-4),
    "tanh": (activation_case("tanh"), 1e-4),
    "sigmoid": (activation_case("sigmoid"), 1e-4),
    "batch_norm": (batch_norm_case, 1e-3),
    "lstm_cell_4step": (lstm_chain_case, 1e-4),
    "bce": (bce_case, 1e-4),
    "l1": (l1_case, 1e-4),
    "cross_entropy": (cross_entropy_case, 1e-4),
    "gan_value": (gan_value_case, 1e-4),
}
