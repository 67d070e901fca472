import struct

import numpy as np
import pytest

from crgan import models
from crgan.checkpoint import Checkpoint, load_checkpoint, read_records, save_checkpoint
from crgan.errors import CheckpointFormatError
from crgan.models import ModelConfig, init_params
from crgan.optim import AdamState

TINY = ModelConfig(enc_channels=(3, 4, 4, 6, 6), dec_channels=(6, 4, 4, 3, 1), trunk_channels=(3, 4, 4, 6),
                   embed_dim=4, hidden=5, head_hidden=7)


def _checkpoint(kind="recurrent", config=TINY, k=3, seed=7):
    gen, disc, clf = init_params(k, seed, config, kind)
    rng = np.random.default_rng(0)
    for s in gen.stats.values():
        s.mean[:] = rng.standard_normal(s.mean.shape)
        s.var[:] = rng.uniform(0.5, 2.0, s.var.shape)
    opt = AdamState(learning_rate=0.002, t=5)
    opt.m = {k_: rng.standard_normal(t.shape) for k_, t in gen.tensors.items()}
    opt.v = {k_: rng.uniform(0, 1, t.shape) for k_, t in gen.tensors.items()}
    return Checkpoint(gen, disc, clf, seed, {"G": opt}, {"step": 12, "epoch": 3})


@pytest.mark.parametrize("kind", ["recurrent", "baseline"])
def test_save_load_save_is_byte_identical(tmp_path, kind):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(_checkpoint(kind), a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_restores_everything(tmp_path):
    ck = _checkpoint()
    save_checkpoint(ck, tmp_path / "c.ckpt")
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert back.gen.config == TINY and back.gen.kind == "recurrent" and back.seed == 7
    for name, t in ck.gen.tensors.items():
        np.testing.assert_array_equal(back.gen.tensors[name].data, t.data)
    for name, s in ck.gen.stats.items():
        np.testing.assert_array_equal(back.gen.stats[name].var, s.var)
    opt = back.optimizers["G"]
    assert opt.t == 5 and opt.learning_rate == 0.002
    for name, m in ck.optimizers["G"].m.items():
        np.testing.assert_array_equal(opt.m[name], m)
    assert back.counters == {"epoch": 3, "step": 12}
    assert back.disc.trunk is back.clf.trunk


def test_shared_trunk_stored_once(tmp_path):
    save_checkpoint(_checkpoint(), tmp_path / "c.ckpt")
    _, _, recs = read_records(tmp_path / "c.ckpt")
    assert sum(name.startswith("trunk/") for name in recs) == len(_checkpoint().disc.trunk)


def test_header_layout(tmp_path):
    save_checkpoint(_checkpoint(k=4, seed=2**40 + 3), tmp_path / "c.ckpt")
    magic, version, k, seed = struct.unpack("<4sIIQ", (tmp_path / "c.ckpt").read_bytes()[:20])
    assert (magic, version, k, seed) == (b"CRGN", 1, 4, 2**40 + 3)


def test_forward_equal_after_load(tmp_path):
    gen, disc, clf = init_params(3, seed=5)
    save_checkpoint(Checkpoint(gen, disc, clf, 5), tmp_path / "full.ckpt")
    back = load_checkpoint(tmp_path / "full.ckpt", expected_fonts=3)
    x = np.random.default_rng(1).uniform(-1, 1, (2, 3, 32, 32))
    np.testing.assert_array_equal(models.translate_batch(x, [0, 2], gen, "infer").data,
                                  models.translate_batch(x, [0, 2], back.gen, "infer").data)
    p = x.reshape(6, 1, 32, 32)
    np.testing.assert_array_equal(models.discriminator_forward(p, [1] * 6, disc).data,
                                  models.discriminator_forward(p, [1] * 6, back.disc).data)
    np.testing.assert_array_equal(models.classifier_forward(p, clf).data, models.classifier_forward(p, back.clf).data)


def test_mismatched_k_names_both(tmp_path):
    save_checkpoint(_checkpoint(k=3), tmp_path / "c.ckpt")
    with pytest.raises(CheckpointFormatError, match=r"K=3.*K=5"):
        load_checkpoint(tmp_path / "c.ckpt", expected_fonts=5)


def test_bad_magic(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(_checkpoint(), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)


@pytest.mark.parametrize("keep", [0, 10, 25, 0.5, -8, -1])
def test_truncated_file(tmp_path, keep):
    path = tmp_path / "c.ckpt"
    save_checkpoint(_checkpoint(), path)
    raw = path.read_bytes()
    cut = int(len(raw) * keep) if isinstance(keep, float) else (keep if keep >= 0 else len(raw) + keep)
    path.write_bytes(raw[:cut])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_truncated_at_record_boundary_detected(tmp_path):
    # drop the whole last record: every remaining record parses, but the count says one is missing
    path = tmp_path / "c.ckpt"
    ck = _checkpoint()
    ck.counters = {"z": 1}
    save_checkpoint(ck, path)
    raw = path.read_bytes()
    last = 4 + len("state/z") + 4 + 8
    path.write_bytes(raw[:-last])
    with pytest.raises(CheckpointFormatError, match="truncated"):
        load_checkpoint(path)


def test_trailing_garbage(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(_checkpoint(), path)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(CheckpointFormatError, match="trailing"):
        load_checkpoint(path)
