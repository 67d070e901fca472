"""Generator (conv encoder -> stacked BiLSTM -> deconv decoder), patch
discriminator, font classifier, and the non-recurrent baseline generator.

Parameters live in plain ``dict[str, Tensor]`` bundles. The discriminator and
classifier hold the *same* trunk dict object, so an update made through
either network is visible to the other.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from crgan import nn
from crgan.data.images import PATCH, PatchSequence
from crgan.errors import ContractError, DimensionError
from crgan.tensor import Tensor, concat, reshape, split, stack, take_rows, unstack

log = logging.getLogger(__name__)

KINDS = ("recurrent", "baseline")
INIT_STD = 0.02
FORGET_BIAS = 1.0


@dataclass(frozen=True)
class ModelConfig:
    enc_channels: tuple[int, ...] = (32, 64, 128, 256, 256)
    dec_channels: tuple[int, ...] = (256, 128, 64, 32, 1)
    trunk_channels: tuple[int, ...] = (32, 64, 128, 256)
    embed_dim: int = 32
    hidden: int = 512
    head_hidden: int = 256
    kernel: int = 5

    def __post_init__(self):
        object.__setattr__(self, "enc_channels", tuple(self.enc_channels))
        object.__setattr__(self, "dec_channels", tuple(self.dec_channels))
        object.__setattr__(self, "trunk_channels", tuple(self.trunk_channels))
        if PATCH >> len(self.enc_channels) != 1:
            raise ValueError(f"{len(self.enc_channels)} stride-2 layers do not reduce {PATCH} to 1")
        if PATCH >> len(self.dec_channels) != 1 or self.dec_channels[-1] != 1:
            raise ValueError("decoder must double 1 -> 32 and end in a single channel")

    @property
    def latent(self) -> int:
        return self.enc_channels[-1]

    @property
    def trunk_features(self) -> int:
        side = PATCH >> len(self.trunk_channels)
        return self.trunk_channels[-1] * side * side


Params = dict[str, Tensor]


@dataclass
class GeneratorParams:
    config: ModelConfig
    kind: str
    tensors: Params
    stats: dict[str, nn.RunningStats] = field(default_factory=dict)


@dataclass
class DiscriminatorParams:
    trunk: Params
    head: Params

    def tensors(self) -> Params:
        return {**{f"trunk.{k}": v for k, v in self.trunk.items()}, **{f"dhead.{k}": v for k, v in self.head.items()}}


@dataclass
class ClassifierParams:
    trunk: Params
    head: Params

    @property
    def num_classes(self) -> int:
        return self.head["fc1.w"].shape[1]

    def tensors(self) -> Params:
        return {**{f"trunk.{k}": v for k, v in self.trunk.items()}, **{f"chead.{k}": v for k, v in self.head.items()}}


# ---------------------------------------------------------------- init

class _Init:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def normal(self, *shape) -> Tensor:
        return Tensor(self.rng.normal(0.0, INIT_STD, shape), requires_grad=True)

    @staticmethod
    def const(value, *shape) -> Tensor:
        return Tensor(np.full(shape, value, dtype=np.float64), requires_grad=True)


def _lstm_params(p: Params, prefix: str, d_in: int, u: int, init: _Init):
    p[f"{prefix}.w_ih"] = init.normal(d_in, 4 * u)
    p[f"{prefix}.w_hh"] = init.normal(u, 4 * u)
    b = np.zeros(4 * u)
    b[u : 2 * u] = FORGET_BIAS
    p[f"{prefix}.b"] = Tensor(b, requires_grad=True)


def _init_generator(cfg: ModelConfig, num_fonts: int, kind: str, init: _Init) -> GeneratorParams:
    p: Params = {}
    stats: dict[str, nn.RunningStats] = {}
    k = cfg.kernel
    c_in = 1
    for i, c in enumerate(cfg.enc_channels):
        p[f"enc.{i}.w"] = init.normal(c, c_in, k, k)
        p[f"enc.{i}.b"] = init.const(0.0, c)
        if i < len(cfg.enc_channels) - 1:
            p[f"enc.{i}.bn.g"] = init.const(1.0, c)
            p[f"enc.{i}.bn.b"] = init.const(0.0, c)
            stats[f"enc.{i}.bn"] = nn.RunningStats(c)
        c_in = c
    p["embed"] = init.normal(num_fonts, cfg.embed_dim)
    lat, e, u = cfg.latent, cfg.embed_dim, cfg.hidden
    if kind == "recurrent":
        _lstm_params(p, "rnn.0.fwd", lat + e + lat, u, init)
        _lstm_params(p, "rnn.0.bwd", lat + e, u, init)
        _lstm_params(p, "rnn.1.fwd", 2 * u, u, init)
        _lstm_params(p, "rnn.1.bwd", 2 * u, u, init)
        p["rnn.proj.w"] = init.normal(2 * u, lat)
        p["rnn.proj.b"] = init.const(0.0, lat)
    else:
        p["fuse.w"] = init.normal(lat + e, lat)
        p["fuse.b"] = init.const(0.0, lat)
    c_in = lat
    for i, c in enumerate(cfg.dec_channels):
        p[f"dec.{i}.w"] = init.normal(c_in, c, k, k)
        p[f"dec.{i}.b"] = init.const(0.0, c)
        if i < len(cfg.dec_channels) - 1:
            p[f"dec.{i}.bn.g"] = init.const(1.0, c)
            p[f"dec.{i}.bn.b"] = init.const(0.0, c)
            stats[f"dec.{i}.bn"] = nn.RunningStats(c)
        c_in = c
    for name, t in p.items():
        t.name = name
    return GeneratorParams(cfg, kind, p, stats)


def init_params(num_fonts: int, seed: int, config: ModelConfig | None = None, kind: str = "recurrent"):
    """Fresh (generator, discriminator, classifier) parameters.

    The discriminator/classifier draws come from their own stream, so for a
    given seed they are identical whichever generator ``kind`` is requested.
    """
    if num_fonts < 2:
        raise ValueError(f"need at least 2 fonts, got {num_fonts}")
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    cfg = config or ModelConfig()
    g_seq, d_seq = np.random.SeedSequence(seed).spawn(2)
    gen = _init_generator(cfg, num_fonts, kind, _Init(np.random.default_rng(g_seq)))

    init = _Init(np.random.default_rng(d_seq))
    k = cfg.kernel
    trunk: Params = {}
    c_in = 1
    for i, c in enumerate(cfg.trunk_channels):
        trunk[f"conv.{i}.w"] = init.normal(c, c_in, k, k)
        trunk[f"conv.{i}.b"] = init.const(0.0, c)
        c_in = c
    f, h = cfg.trunk_features, cfg.head_hidden
    dhead = {"embed": init.normal(num_fonts, cfg.embed_dim),
             "fc0.w": init.normal(f + cfg.embed_dim, h), "fc0.b": init.const(0.0, h),
             "fc1.w": init.normal(h, 1), "fc1.b": init.const(0.0, 1)}
    chead = {"fc0.w": init.normal(f, h), "fc0.b": init.const(0.0, h),
             "fc1.w": init.normal(h, num_fonts), "fc1.b": init.const(0.0, num_fonts)}
    disc, clf = DiscriminatorParams(trunk, dhead), ClassifierParams(trunk, chead)
    for bundle in (disc.tensors(), clf.tensors()):
        for name, t in bundle.items():
            t.name = name
    log.info("parameter count: %s", parameter_count(gen, disc, clf))
    return gen, disc, clf


def parameter_count(gen: GeneratorParams, disc: DiscriminatorParams, clf: ClassifierParams) -> dict[str, int]:
    size = lambda ps: sum(t.data.size for t in ps.values())
    out = {"generator": size(gen.tensors), "trunk": size(disc.trunk), "discriminator_head": size(disc.head),
           "classifier_head": size(clf.head)}
    out["total"] = sum(out.values())
    return out


# ---------------------------------------------------------------- generator pieces

def _as_labels(labels, n: int) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64)
    if arr.ndim == 0:
        arr = np.full(n, int(arr))
    if arr.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {arr.shape}")
    return arr


def _check_patches(x: Tensor):
    if x.ndim != 4 or x.shape[1:] != (1, PATCH, PATCH):
        raise DimensionError(f"expected patches of shape (N, 1, {PATCH}, {PATCH}), got {x.shape}")


def encode_patch(patches, gen: GeneratorParams, mode: str = "train", update_stats: bool = True) -> Tensor:
    """(N, 1, 32, 32) patches -> (N, latent) codes via five stride-2 convolutions."""
    x = patches if isinstance(patches, Tensor) else Tensor(patches)
    _check_patches(x)
    p = gen.tensors
    last = len(gen.config.enc_channels) - 1
    for i in range(last + 1):
        x = nn.conv2d(x, p[f"enc.{i}.w"], p[f"enc.{i}.b"])
        if i < last:
            x = nn.batch_norm(x, p[f"enc.{i}.bn.g"], p[f"enc.{i}.bn.b"], mode, gen.stats[f"enc.{i}.bn"],
                              update_stats)
        x = nn.leaky_relu(x)
    return reshape(x, (x.shape[0], gen.config.latent))


def decode_feature(features: Tensor, gen: GeneratorParams, mode: str = "train", update_stats: bool = True) -> Tensor:
    """(N, latent) features -> (N, 1, 32, 32) patches in [-1, 1]."""
    lat = gen.config.latent
    if features.ndim != 2 or features.shape[1] != lat:
        raise DimensionError(f"decoder expects (N, {lat}) features, got {features.shape}")
    p = gen.tensors
    x = reshape(features, (features.shape[0], lat, 1, 1))
    last = len(gen.config.dec_channels) - 1
    for i in range(last + 1):
        x = nn.transposed_conv2d(x, p[f"dec.{i}.w"], p[f"dec.{i}.b"])
        if i < last:
            x = nn.batch_norm(x, p[f"dec.{i}.bn.g"], p[f"dec.{i}.bn.b"], mode, gen.stats[f"dec.{i}.bn"],
                              update_stats)
            x = nn.leaky_relu(x)
    return nn.tanh(x)


def _scan(pre: list[Tensor], w_hh: Tensor, reverse: bool = False) -> list[Tensor]:
    """Run an LSTM over precomputed input pre-activations; returns hidden states in time order."""
    steps = range(len(pre) - 1, -1, -1) if reverse else range(len(pre))
    n, u = pre[0].shape[0], w_hh.shape[0]
    h, c = None, Tensor(np.zeros((n, u)))
    out: list[Tensor | None] = [None] * len(pre)
    for t in steps:
        gates = pre[t] if h is None else pre[t] + h @ w_hh
        h, c = nn.lstm_pointwise(gates, c)
        out[t] = h
    return out


def _seq_matmul(x: Tensor, w: Tensor) -> Tensor:
    b, n, d = x.shape
    return reshape(reshape(x, (b * n, d)) @ w, (b, n, w.shape[1]))


def recurrent_core(latents: Tensor, target_font, gen: GeneratorParams) -> Tensor:
    """(B, N, latent) patch codes -> (B, N, latent) context-aware features.

    Two stacked bidirectional LSTM layers. The forward scan of layer 1 also sees
    the previous step's feedback feature (zeros at the first step), defined as
    the forward-direction half of the output projection::

        feedback_t = f2_t @ proj.w[:U] + proj.b
        output_t   = feedback_t + b2_t @ proj.w[U:]

    Everything a forward step needs is then available before the backward
    directions of layer 2 have run, so the feedback loop stays causal.
    """
    if latents.ndim != 3 or latents.shape[1] == 0:
        raise ContractError(f"recurrent core needs a non-empty (B, N, D) sequence, got {latents.shape}")
    p = gen.tensors
    bsz, n, lat = latents.shape
    if lat != gen.config.latent:
        raise DimensionError(f"latent width {lat} != {gen.config.latent}")
    e, u = gen.config.embed_dim, gen.config.hidden
    emb = take_rows(p["embed"], _as_labels(target_font, bsz))

    # input-weight row blocks: [latent | embedding | feedback] and [forward | backward]
    w0f_z, w0f_e, w_fb = split(p["rnn.0.fwd.w_ih"], [lat, e, lat])
    w0b_z, w0b_e = split(p["rnn.0.bwd.w_ih"], [lat, e])
    w1f_f, w1f_b = split(p["rnn.1.fwd.w_ih"], [u, u])
    w1b_f, w1b_b = split(p["rnn.1.bwd.w_ih"], [u, u])
    proj_f, proj_b = split(p["rnn.proj.w"], [u, u])

    def cond(w_z: Tensor, w_e: Tensor, bias: Tensor) -> Tensor:
        # z_t @ W_z + emb @ W_e + b, for every t at once
        return _seq_matmul(latents, w_z) + reshape(emb @ w_e, (bsz, 1, 4 * u)) + bias

    pre0f = unstack(cond(w0f_z, w0f_e, p["rnn.0.fwd.b"]), axis=1)
    b1 = _scan(unstack(cond(w0b_z, w0b_e, p["rnn.0.bwd.b"]), axis=1), p["rnn.0.bwd.w_hh"], reverse=True)
    b1_seq = stack(b1, axis=1)
    pre1f = unstack(_seq_matmul(b1_seq, w1f_b) + p["rnn.1.fwd.b"], axis=1)

    h0 = h1 = None
    c0 = c1 = Tensor(np.zeros((bsz, u)))
    feedback = None
    f1, fbs = [], []
    for t in range(n):
        g0 = pre0f[t]
        if feedback is not None:
            g0 = g0 + feedback @ w_fb + h0 @ p["rnn.0.fwd.w_hh"]
        h0, c0 = nn.lstm_pointwise(g0, c0)
        g1 = pre1f[t] + h0 @ w1f_f
        if h1 is not None:
            g1 = g1 + h1 @ p["rnn.1.fwd.w_hh"]
        h1, c1 = nn.lstm_pointwise(g1, c1)
        feedback = h1 @ proj_f + p["rnn.proj.b"]
        f1.append(h0)
        fbs.append(feedback)

    pre1b = _seq_matmul(stack(f1, axis=1), w1b_f) + _seq_matmul(b1_seq, w1b_b) + p["rnn.1.bwd.b"]
    b2 = _scan(unstack(pre1b, axis=1), p["rnn.1.bwd.w_hh"], reverse=True)
    return stack(fbs, axis=1) + _seq_matmul(stack(b2, axis=1), proj_b)


def _fuse(latents: Tensor, target_font, gen: GeneratorParams) -> Tensor:
    p = gen.tensors
    bsz, n, lat = latents.shape
    emb = take_rows(p["embed"], np.repeat(_as_labels(target_font, bsz), n))
    flat = reshape(latents, (bsz * n, lat))
    return reshape(nn.dense(concat([flat, emb], axis=1), p["fuse.w"], p["fuse.b"]), (bsz, n, lat))


def translate_batch(source, target_font, gen: GeneratorParams, mode: str = "train",
                    update_stats: bool = True) -> Tensor:
    """(B, N, 32, 32) source patches -> (B, N, 32, 32) generated patches.

    All B*N patches go through the encoder/decoder as one batch; only the
    recurrent core (if any) is sequential in N.
    """
    x = source.data if isinstance(source, Tensor) else np.asarray(source, dtype=np.float64)
    if x.ndim != 4 or x.shape[2:] != (PATCH, PATCH) or x.shape[1] == 0:
        raise DimensionError(f"expected (B, N, {PATCH}, {PATCH}) source patches, got {x.shape}")
    bsz, n = x.shape[:2]
    z = encode_patch(x.reshape(bsz * n, 1, PATCH, PATCH), gen, mode, update_stats)
    z = reshape(z, (bsz, n, gen.config.latent))
    h = recurrent_core(z, target_font, gen) if gen.kind == "recurrent" else _fuse(z, target_font, gen)
    y = decode_feature(reshape(h, (bsz * n, gen.config.latent)), gen, mode, update_stats)
    return reshape(y, (bsz, n, PATCH, PATCH))


def _forward_sequence(source: PatchSequence, target_font: int, gen: GeneratorParams, mode: str) -> PatchSequence:
    y = translate_batch(source.patches[None], [target_font], gen, mode, update_stats=False)
    return PatchSequence(y.data[0].copy(), source.original_width, source.pad_columns)


def generator_forward(source: PatchSequence, target_font: int, gen: GeneratorParams,
                      mode: str = "infer") -> PatchSequence:
    if gen.kind != "recurrent":
        raise ContractError(f"generator_forward needs recurrent parameters, got {gen.kind!r}")
    return _forward_sequence(source, target_font, gen, mode)


def baseline_forward(source: PatchSequence, target_font: int, gen: GeneratorParams,
                     mode: str = "infer") -> PatchSequence:
    if gen.kind != "baseline":
        raise ContractError(f"baseline_forward needs baseline parameters, got {gen.kind!r}")
    return _forward_sequence(source, target_font, gen, mode)


def translate_sequence(source: PatchSequence, target_font: int, gen: GeneratorParams,
                       mode: str = "infer") -> PatchSequence:
    """Dispatch on the generator kind."""
    return _forward_sequence(source, target_font, gen, mode)


# ---------------------------------------------------------------- discriminator / classifier

def trunk_features(patches, trunk: Params) -> Tensor:
    x = patches if isinstance(patches, Tensor) else Tensor(patches)
    _check_patches(x)
    i = 0
    while f"conv.{i}.w" in trunk:
        x = nn.leaky_relu(nn.conv2d(x, trunk[f"conv.{i}.w"], trunk[f"conv.{i}.b"]))
        i += 1
    return reshape(x, (x.shape[0], -1))


def discriminator_head(features: Tensor, target_font, disc: DiscriminatorParams) -> Tensor:
    h = disc.head
    emb = take_rows(h["embed"], _as_labels(target_font, features.shape[0]))
    x = nn.leaky_relu(nn.dense(concat([features, emb], axis=1), h["fc0.w"], h["fc0.b"]))
    return nn.sigmoid(nn.dense(x, h["fc1.w"], h["fc1.b"]))


def classifier_head(features: Tensor, clf: ClassifierParams) -> Tensor:
    h = clf.head
    x = nn.leaky_relu(nn.dense(features, h["fc0.w"], h["fc0.b"]))
    return nn.dense(x, h["fc1.w"], h["fc1.b"])


def discriminator_forward(patch, target_font, disc: DiscriminatorParams, mode: str = "train") -> Tensor:
    """(N, 1, 32, 32) patches and their conditioning fonts -> (N, 1) probability of being real.

    ``mode`` is accepted for symmetry with the generator; the trunk has no
    batch norm, so train and infer behave identically.
    """
    return discriminator_head(trunk_features(patch, disc.trunk), target_font, disc)


def classifier_forward(patch, clf: ClassifierParams, mode: str = "train") -> Tensor:
    """(N, 1, 32, 32) patches -> (N, K) font logits."""
    return classifier_head(trunk_features(patch, clf.trunk), clf)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
