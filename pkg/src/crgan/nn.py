"""Layer primitives and losses built on :mod:`crgan.tensor`.

Convolutions use NCHW layout. Every op here has a hand-written backward rule;
``tests/test_nn.py`` checks each one against central differences.
"""
from __future__ import annotations

import numpy as np

from crgan.errors import ContractError, DegenerateStatisticsError, DimensionError
from crgan.tensor import DTYPE, Tensor, _record, as_tensor, clip, log, mean, sub, tabs

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
PROB_EPS = 1e-7


# ---------------------------------------------------------------- convolution

def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(w, k, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    # (n, c, ho, wo, k, k) -> (n*ho*wo, c*k*k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(cols: np.ndarray, shape, ho: int, wo: int, k: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add (n*ho*wo, k*k*c) columns, ordered (tap row, tap column, channel), back to NCHW."""
    n, c, h, w = shape
    taps = cols.reshape(n, ho, wo, k, k, c)
    xp = np.zeros((n, h + 2 * pad + stride, w + 2 * pad + stride, c), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += taps[:, :, :, i, j]
    return xp[:, pad : pad + h, pad : pad + w].transpose(0, 3, 1, 2)


def _taps_last(kernels: np.ndarray) -> np.ndarray:
    """(A, B, k, k) -> (A, k*k*B), the column order :func:`_col2im` expects."""
    return kernels.transpose(0, 2, 3, 1).reshape(kernels.shape[0], -1)


def _check_conv(x: Tensor, kernels: Tensor, in_axis: int):
    if x.ndim != 4:
        raise DimensionError(f"expected NCHW input, got shape {x.shape}")
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError(f"expected square 4-D kernels, got shape {kernels.shape}")
    if x.shape[1] != kernels.shape[in_axis]:
        raise DimensionError(
            f"input channels {x.shape[1]} (input shape {x.shape}) do not match "
            f"kernel channels {kernels.shape[in_axis]} (kernel shape {kernels.shape})")


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 2, padding: int = 2) -> Tensor:
    """Zero-padded strided convolution; kernels are (F, C, k, k)."""
    _check_conv(x, kernels, 1)
    n = x.shape[0]
    f, _, k, _ = kernels.shape
    if conv_out_size(x.shape[2], k, stride, padding) == 1 and conv_out_size(x.shape[3], k, stride, padding) == 1:
        return _conv_to_1x1(x, kernels, bias, padding)
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = kernels.data.reshape(f, -1)
    y = cols @ wmat.T + bias.data
    out = Tensor(y.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gx = _col2im(g2 @ _taps_last(kernels.data), x.shape, ho, wo, k, stride, padding) if x.requires_grad else None
        gk = (g2.T @ cols).reshape(kernels.shape) if kernels.requires_grad else None
        return gx, gk, g2.sum(axis=0)

    _record((out,), (x, kernels, bias), backward)
    return out


def transposed_conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 2, padding: int = 2,
                      output_padding: int = 1) -> Tensor:
    """Adjoint of :func:`conv2d`; kernels are (C_in, F, k, k) and k=5/s=2/p=2/op=1 doubles H and W."""
    _check_conv(x, kernels, 0)
    n, c, h, w = x.shape
    _, f, k, _ = kernels.shape
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (w - 1) * stride - 2 * padding + k + output_padding
    if conv_out_size(ho, k, stride, padding) != h or conv_out_size(wo, k, stride, padding) != w:
        raise DimensionError(f"output_padding {output_padding} is inconsistent with input {x.shape}")
    if h == 1 and w == 1 and ho + padding <= k and wo + padding <= k:
        return _transposed_from_1x1(x, kernels, bias, padding, ho, wo)
    kmat = kernels.data.reshape(c, -1)
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    y = _col2im(x2 @ _taps_last(kernels.data), (n, f, ho, wo), h, w, k, stride, padding)
    out = Tensor(y + bias.data[None, :, None, None])

    def backward(g):
        cols, _, _ = _im2col(g, k, stride, padding)
        gx = (cols @ kmat.T).reshape(n, h, w, c).transpose(0, 3, 1, 2) if x.requires_grad else None
        gk = (x2.T @ cols).reshape(kernels.shape) if kernels.requires_grad else None
        return gx, gk, g.sum(axis=(0, 2, 3))

    _record((out,), (x, kernels, bias), backward)
    return out


# A single output (or input) pixel only meets the kernel taps that overlap the
# unpadded image, so both directions reduce to a dense product with a cropped kernel.

def _conv_to_1x1(x: Tensor, kernels: Tensor, bias: Tensor, pad: int) -> Tensor:
    n, c, h, w = x.shape
    f = kernels.shape[0]
    crop = (slice(None), slice(None), slice(pad, pad + h), slice(pad, pad + w))
    wmat = kernels.data[crop].reshape(f, -1)
    x2 = x.data.reshape(n, -1)
    out = Tensor((x2 @ wmat.T + bias.data).reshape(n, f, 1, 1))

    def backward(g):
        g2 = g.reshape(n, f)
        gx = (g2 @ wmat).reshape(x.shape) if x.requires_grad else None
        gk = None
        if kernels.requires_grad:
            gk = np.zeros_like(kernels.data)
            gk[crop] = (g2.T @ x2).reshape(f, c, h, w)
        return gx, gk, g2.sum(axis=0)

    _record((out,), (x, kernels, bias), backward)
    return out


def _transposed_from_1x1(x: Tensor, kernels: Tensor, bias: Tensor, pad: int, ho: int, wo: int) -> Tensor:
    n, c = x.shape[:2]
    f = kernels.shape[1]
    crop = (slice(None), slice(None), slice(pad, pad + ho), slice(pad, pad + wo))
    kmat = kernels.data[crop].reshape(c, -1)
    x2 = x.data.reshape(n, c)
    out = Tensor((x2 @ kmat).reshape(n, f, ho, wo) + bias.data[None, :, None, None])

    def backward(g):
        g2 = g.reshape(n, -1)
        gx = (g2 @ kmat.T).reshape(x.shape) if x.requires_grad else None
        gk = None
        if kernels.requires_grad:
            gk = np.zeros_like(kernels.data)
            gk[crop] = (x2.T @ g2).reshape(c, f, ho, wo)
        return gx, gk, g.sum(axis=(0, 2, 3))

    _record((out,), (x, kernels, bias), backward)
    return out


def conv2d_input_grad(g: np.ndarray, kernels: np.ndarray, input_shape, stride: int = 2,
                      padding: int = 2) -> np.ndarray:
    """d(conv2d)/d(input) applied to an output-space array ``g``."""
    n, f, ho, wo = g.shape
    k = kernels.shape[-1]
    g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
    return _col2im(g2 @ _taps_last(kernels), input_shape, ho, wo, k, stride, padding)


# ---------------------------------------------------------------- dense + activations

def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"dense: input width {x.shape[-1]} (shape {x.shape}) != weight rows "
                             f"{weight.shape[0]} (shape {weight.shape})")
    return x @ weight + bias


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    scale = np.where(x.data >= 0, 1.0, slope)
    out = Tensor(x.data * scale)
    _record((out,), (x,), lambda g: (g * scale,))
    return out


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))
    _record((out,), (x,), lambda g: (g * (1.0 - out.data ** 2),))
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = Tensor(_sigmoid(x.data))
    _record((out,), (x,), lambda g: (g * out.data * (1.0 - out.data),))
    return out


ACTIVATIONS = {"leaky_relu": leaky_relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None


# ---------------------------------------------------------------- batch norm

class RunningStats:
    """Per-channel running mean/variance for inference-mode batch norm."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels, dtype=DTYPE)
        self.var = np.ones(channels, dtype=DTYPE)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str = "train",
               running: RunningStats | None = None, update: bool = True) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    In train mode batch statistics are used and, if ``running`` is given and
    ``update`` is true, folded into the running estimate with momentum 0.9.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batch_norm: gamma {gamma.shape}/beta {beta.shape} vs input {x.shape}")
    if mode == "train":
        count = x.data.size // x.shape[1]
        if count < 2:
            raise DegenerateStatisticsError(
                f"batch_norm in train mode needs >= 2 samples per channel, input shape {x.shape}")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running is not None and update:
            running.mean = BN_MOMENTUM * running.mean + (1 - BN_MOMENTUM) * mu
            running.var = BN_MOMENTUM * running.var + (1 - BN_MOMENTUM) * var
    elif mode == "infer":
        if running is None:
            raise ContractError("batch_norm in infer mode needs running statistics")
        mu, var = running.mean, running.var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = Tensor(xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape))

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if mode == "train":
                m = x.data.size // x.shape[1]
                gx = (inv.reshape(bshape) / m) * (
                    m * gxhat - gxhat.sum(axis=axes, keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            else:
                gx = gxhat * inv.reshape(bshape)
        return gx, ggamma, gbeta

    _record((out,), (x, gamma, beta), backward)
    return out


# ---------------------------------------------------------------- LSTM

def lstm_pointwise(gates: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """Gate nonlinearities and state update from pre-activations laid out [i | f | g | o]."""
    u = c_prev.shape[-1]
    if gates.shape[-1] != 4 * u:
        raise DimensionError(f"gate width {gates.shape[-1]} != 4 * hidden size {u}")
    z = gates.data
    i = _sigmoid(z[:, :u])
    f = _sigmoid(z[:, u : 2 * u])
    gg = np.tanh(z[:, 2 * u : 3 * u])
    o = _sigmoid(z[:, 3 * u :])
    c = f * c_prev.data + i * gg
    tc = np.tanh(c)
    h_out, c_out = Tensor(o * tc), Tensor(c)

    def backward(gh, gc):
        gc = gc + gh * o * (1.0 - tc ** 2)
        dz = np.empty_like(z)
        dz[:, :u] = gc * gg * i * (1.0 - i)
        dz[:, u : 2 * u] = gc * c_prev.data * f * (1.0 - f)
        dz[:, 2 * u : 3 * u] = gc * i * (1.0 - gg ** 2)
        dz[:, 3 * u :] = gh * tc * o * (1.0 - o)
        return dz, gc * f

    _record((h_out, c_out), (gates, c_prev), backward)
    return h_out, c_out


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, params) -> tuple[Tensor, Tensor]:
    """One LSTM step. ``params`` is (w_ih [D,4U], w_hh [U,4U], bias [4U])."""
    w_ih, w_hh, b = params
    u = w_hh.shape[0]
    if h_prev.shape[-1] != u or c_prev.shape[-1] != u or w_hh.shape[1] != 4 * u:
        raise DimensionError(f"lstm_cell: state widths {h_prev.shape}/{c_prev.shape} do not fit "
                             f"recurrent weights {w_hh.shape}")
    gates = dense(x_t, w_ih, b) + h_prev @ w_hh
    return lstm_pointwise(gates, c_prev)


# ---------------------------------------------------------------- losses

def bce(p: Tensor, target) -> Tensor:
    """Mean binary cross-entropy. Probabilities are clamped to [1e-7, 1 - 1e-7]."""
    y = np.broadcast_to(np.asarray(target, dtype=DTYPE), p.shape)
    pc = clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return -(mean(log(pc) * y + log(1.0 - pc) * (1.0 - y)))


def l1(a: Tensor, b) -> Tensor:
    return mean(tabs(sub(a, as_tensor(b))))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of (N, K) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = np.log(ez.sum(axis=1, keepdims=True)) + zmax
    rows = np.arange(len(labels))
    out = Tensor(np.mean(lse[:, 0] - z[rows, labels]))

    def backward(g):
        grad = ez / ez.sum(axis=1, keepdims=True)
        grad[rows, labels] -= 1.0
        return (grad * (g / len(labels)),)

    _record((out,), (logits,), backward)
    return out


def gan_value(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Batch estimate of E[log D(real)] + E[log(1 - D(fake))]."""
    real = clip(d_real, PROB_EPS, 1.0 - PROB_EPS)
    fake = clip(d_fake, PROB_EPS, 1.0 - PROB_EPS)
    return mean(log(real)) + mean(log(1.0 - fake))


LOSSES = {"bce": bce, "l1": l1, "cross_entropy": cross_entropy, "gan_value": gan_value}


def loss(kind: str, *args) -> Tensor:
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss {kind!r}; expected one of {sorted(LOSSES)}") from None
    return fn(*args)
