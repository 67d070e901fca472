"""Binary parameter checkpoints.

Layout (all integers little-endian)::

    b"CRGN"  u32 version  u32 K  u64 seed
    repeated: u32 name_len, name (UTF-8), u32 rank, rank x u64 extents, f64 payload

The first record is ``meta/count`` (the number of records that follow), so a
truncated file is detected even when it ends exactly on a record boundary.
The trunk shared by discriminator and classifier is written once.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from crgan import nn
from crgan.errors import CheckpointFormatError
from crgan.models import (ClassifierParams, DiscriminatorParams, GeneratorParams, KINDS, ModelConfig)
from crgan.optim import AdamState
from crgan.tensor import Tensor

MAGIC = b"CRGN"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_HYPER = ("learning_rate", "beta1", "beta2", "epsilon", "weight_decay")


@dataclass
class Checkpoint:
    gen: GeneratorParams
    disc: DiscriminatorParams
    clf: ClassifierParams
    seed: int
    optimizers: dict[str, AdamState] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)

    @property
    def num_fonts(self) -> int:
        return self.clf.num_classes


def _records(ck: Checkpoint) -> list[tuple[str, np.ndarray]]:
    recs = [("meta/kind", np.array(float(KINDS.index(ck.gen.kind))))]
    recs += [(f"gen/{k}", t.data) for k, t in ck.gen.tensors.items()]
    for k, s in ck.gen.stats.items():
        recs += [(f"gen.stats/{k}/mean", s.mean), (f"gen.stats/{k}/var", s.var)]
    recs += [(f"trunk/{k}", t.data) for k, t in ck.disc.trunk.items()]
    recs += [(f"dhead/{k}", t.data) for k, t in ck.disc.head.items()]
    recs += [(f"chead/{k}", t.data) for k, t in ck.clf.head.items()]
    for net, st in sorted(ck.optimizers.items()):
        recs.append((f"opt/{net}/t", np.array(float(st.t))))
        recs.append((f"opt/{net}/hyper", np.array([getattr(st, h) for h in _HYPER])))
        recs += [(f"opt/{net}/m/{k}", v) for k, v in st.m.items()]
        recs += [(f"opt/{net}/v/{k}", v) for k, v in st.v.items()]
    recs += [(f"state/{k}", np.array(float(v))) for k, v in sorted(ck.counters.items())]
    return [("meta/count", np.array(float(len(recs))))] + recs


def save_checkpoint(ck: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [_HEADER.pack(MAGIC, VERSION, ck.num_fonts, ck.seed)]
    for name, arr in _records(ck):
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")  # keeps scalars 0-d
        chunks.append(struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) + arr.tobytes())
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, buf: bytes, path: Path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"{self.path}: truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def record(self) -> tuple[str, np.ndarray]:
        (n,) = self.unpack("<I")
        try:
            name = self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"{self.path}: bad tensor name at byte {self.pos - n}") from exc
        (rank,) = self.unpack("<I")
        if rank > 8:
            raise CheckpointFormatError(f"{self.path}: implausible rank {rank} for {name!r}")
        shape = self.unpack(f"<{rank}Q")
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        return name, arr


def read_records(path: str | Path) -> tuple[int, int, dict[str, np.ndarray]]:
    """Low-level read: (K, seed, name -> array)."""
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if len(r.buf) < _HEADER.size:
        raise CheckpointFormatError(f"{path}: file too short for a checkpoint header")
    magic, version, k, seed = r.unpack(_HEADER.format)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    name, count = r.record()
    if name != "meta/count":
        raise CheckpointFormatError(f"{path}: first record is {name!r}, expected 'meta/count'")
    recs = {}
    for _ in range(int(count)):
        name, arr = r.record()
        recs[name] = arr
    if r.pos != len(r.buf):
        raise CheckpointFormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return k, seed, recs


def _group(recs: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in recs.items() if k.startswith(prefix)}


def _count(group: dict, fmt: str) -> int:
    i = 0
    while fmt.format(i) in group:
        i += 1
    return i


def _infer_config(gen: dict, trunk: dict, dhead: dict) -> ModelConfig:
    enc = tuple(gen[f"enc.{i}.w"].shape[0] for i in range(_count(gen, "enc.{}.w")))
    dec = tuple(gen[f"dec.{i}.w"].shape[1] for i in range(_count(gen, "dec.{}.w")))
    tr = tuple(trunk[f"conv.{i}.w"].shape[0] for i in range(_count(trunk, "conv.{}.w")))
    hidden = gen["rnn.0.bwd.w_hh"].shape[0] if "rnn.0.bwd.w_hh" in gen else ModelConfig.hidden
    return ModelConfig(enc_channels=enc, dec_channels=dec, trunk_channels=tr, embed_dim=gen["embed"].shape[1],
                       hidden=hidden, head_hidden=dhead["fc0.w"].shape[1], kernel=gen["enc.0.w"].shape[-1])


def _params(group: dict[str, np.ndarray], prefix: str) -> dict[str, Tensor]:
    return {k: Tensor(v.copy(), requires_grad=True, name=f"{prefix}{k}") for k, v in group.items()}


def load_checkpoint(path: str | Path, expected_fonts: int | None = None) -> Checkpoint:
    """Read a checkpoint; ``expected_fonts`` (K) is validated when given."""
    path = Path(path)
    k, seed, recs = read_records(path)
    if expected_fonts is not None and k != expected_fonts:
        raise CheckpointFormatError(f"{path}: checkpoint was trained for K={k} fonts, expected K={expected_fonts}")
    try:
        kind = KINDS[int(recs["meta/kind"])]
        gen_raw, trunk_raw = _group(recs, "gen/"), _group(recs, "trunk/")
        dhead_raw, chead_raw = _group(recs, "dhead/"), _group(recs, "chead/")
        config = _infer_config(gen_raw, trunk_raw, dhead_raw)
        if gen_raw["embed"].shape[0] != k or chead_raw["fc1.w"].shape[1] != k:
            raise CheckpointFormatError(f"{path}: header K={k} disagrees with embedding/classifier shapes")
        stats = {}
        for name in dict.fromkeys(key.rsplit("/", 1)[0] for key in _group(recs, "gen.stats/")):
            rs = nn.RunningStats(len(recs[f"gen.stats/{name}/mean"]))
            rs.mean[...] = recs[f"gen.stats/{name}/mean"]
            rs.var[...] = recs[f"gen.stats/{name}/var"]
            stats[name] = rs
        gen = GeneratorParams(config, kind, _params(gen_raw, ""), stats)
        trunk = _params(trunk_raw, "trunk.")
        disc = DiscriminatorParams(trunk, _params(dhead_raw, "dhead."))
        clf = ClassifierParams(trunk, _params(chead_raw, "chead."))

        optimizers = {}
        for net in dict.fromkeys(key.split("/")[1] for key in recs if key.startswith("opt/")):
            g = _group(recs, f"opt/{net}/")
            st = AdamState(**dict(zip(_HYPER, map(float, g["hyper"]))), t=int(g["t"]))
            st.m = {key: v.copy() for key, v in _group(g, "m/").items()}
            st.v = {key: v.copy() for key, v in _group(g, "v/").items()}
            optimizers[net] = st
        counters = {key: int(v) for key, v in _group(recs, "state/").items()}
    except (KeyError, IndexError, ValueError) as exc:
        if isinstance(exc, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"{path}: incomplete or inconsistent checkpoint ({exc})") from exc
    return Checkpoint(gen, disc, clf, seed, optimizers, counters)
