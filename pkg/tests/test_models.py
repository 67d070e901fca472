import numpy as np
import pytest

from crgan import models, nn
from crgan.data.images import PatchSequence, WordImage, assemble_patches, extract_patches
from crgan.errors import ContractError, DimensionError
from crgan.gradcheck import finite_diff_check
from crgan.models import ModelConfig, init_params
from crgan.tensor import Tape, Tensor, backward_pass

from conftest import weighted_sum

TINY = ModelConfig(enc_channels=(3, 4, 4, 6, 6), dec_channels=(6, 4, 4, 3, 1), trunk_channels=(3, 4, 4, 6),
                   embed_dim=4, hidden=5, head_hidden=7)


@pytest.fixture(scope="module")
def full():
    return init_params(3, seed=0)


@pytest.fixture(scope="module")
def full_baseline():
    return init_params(3, seed=0, kind="baseline")


def _patches(seed, n):
    return np.random.default_rng(seed).uniform(-1, 1, (n, 32, 32))


# ---------------------------------------------------------------- shapes

@pytest.mark.parametrize("n", [1, 2, 32])
def test_encoder_decoder_shapes(full, n):
    gen = full[0]
    z = models.encode_patch(_patches(n, n)[:, None], gen, "infer")
    assert z.shape == (n, 256)
    y = models.decode_feature(z, gen, "infer")
    assert y.shape == (n, 1, 32, 32)
    assert np.all(np.abs(y.data) <= 1.0)


@pytest.mark.parametrize("width", [1, 31, 32, 33, 70, 200])
def test_generator_preserves_width(full, width):
    img = np.random.default_rng(width).uniform(-1, 1, (32, width))
    seq = extract_patches(WordImage(img))
    out = models.generator_forward(seq, 2, full[0])
    assert out.patches.shape == seq.patches.shape
    assert assemble_patches(out).pixels.shape == (32, width)


def test_parameter_count_counts_trunk_once(full):
    gen, disc, clf = full
    counts = models.parameter_count(gen, disc, clf)
    assert counts["total"] == counts["generator"] + counts["trunk"] + counts["discriminator_head"] + counts["classifier_head"]
    assert disc.trunk is clf.trunk
    assert not set(map(id, disc.head.values())) & set(map(id, clf.head.values()))


def test_bad_shapes_rejected(full):
    gen, disc, _ = full
    with pytest.raises(DimensionError):
        models.encode_patch(np.zeros((2, 1, 16, 16)), gen)
    with pytest.raises(DimensionError):
        models.decode_feature(Tensor(np.zeros((2, 100))), gen)
    with pytest.raises(DimensionError):
        models.discriminator_forward(np.zeros((2, 32, 32)), [0, 1], disc)
    with pytest.raises(ContractError):
        models.baseline_forward(extract_patches(WordImage(np.zeros((32, 40)))), 0, gen)


def test_init_validation():
    with pytest.raises(ValueError):
        init_params(1, 0)
    with pytest.raises(ValueError):
        init_params(3, 0, kind="attention")


# ---------------------------------------------------------------- structural properties

def test_determinism_same_seed(full):
    gen2 = init_params(3, seed=0)[0]
    seq = extract_patches(WordImage(np.random.default_rng(5).uniform(-1, 1, (32, 90))))
    a = models.generator_forward(seq, 1, full[0]).patches
    b = models.generator_forward(seq, 1, gen2).patches
    np.testing.assert_array_equal(a, b)


def test_discriminator_draws_independent_of_generator_kind(full, full_baseline):
    for name, t in full[1].tensors().items():
        np.testing.assert_array_equal(t.data, full_baseline[1].tensors()[name].data)


def _perturbed_pair(seed=3):
    img = np.random.default_rng(seed).uniform(-1, 1, (32, 96))
    seq = extract_patches(WordImage(img))
    other = seq.patches.copy()
    other[0] = np.random.default_rng(seed + 1).uniform(-1, 1, (32, 32))
    return seq, PatchSequence(other, seq.original_width, seq.pad_columns)


def test_recurrent_output_depends_on_neighbours(full):
    seq, perturbed = _perturbed_pair()
    a = models.generator_forward(seq, 0, full[0]).patches
    b = models.generator_forward(perturbed, 0, full[0]).patches
    assert np.max(np.abs(a[1] - b[1])) > 0
    # the backward scan carries information right to left as well
    later = seq.patches.copy()
    later[2] = -later[2]
    c = models.generator_forward(PatchSequence(later, seq.original_width, seq.pad_columns), 0, full[0]).patches
    assert np.max(np.abs(a[1] - c[1])) > 0


def test_baseline_output_is_patchwise(full_baseline):
    seq, perturbed = _perturbed_pair()
    a = models.baseline_forward(seq, 0, full_baseline[0]).patches
    b = models.baseline_forward(perturbed, 0, full_baseline[0]).patches
    np.testing.assert_array_equal(a[1:], b[1:])
    assert np.max(np.abs(a[0] - b[0])) > 0


def test_baseline_repeated_patch_gives_repeated_output(full_baseline):
    p = _patches(9, 1)
    seq = PatchSequence(np.concatenate([p, p]), 64, 0)
    out = models.baseline_forward(seq, 1, full_baseline[0]).patches
    np.testing.assert_array_equal(out[0], out[1])


@pytest.mark.parametrize("kind", ["recurrent", "baseline"])
def test_conditioning_changes_output(full, full_baseline, kind):
    gen = (full if kind == "recurrent" else full_baseline)[0]
    seq = extract_patches(WordImage(np.random.default_rng(2).uniform(-1, 1, (32, 64))))
    outs = [models.translate_sequence(seq, k, gen).patches for k in range(3)]
    assert not np.array_equal(outs[0], outs[1])
    assert not np.array_equal(outs[1], outs[2])


def test_infer_mode_does_not_touch_running_stats(full):
    gen = full[0]
    before = {k: (s.mean.copy(), s.var.copy()) for k, s in gen.stats.items()}
    models.generator_forward(extract_patches(WordImage(np.zeros((32, 40)))), 0, gen)
    for k, s in gen.stats.items():
        np.testing.assert_array_equal(s.mean, before[k][0])


# ---------------------------------------------------------------- D / C

def test_discriminator_not_saturated_at_init(full):
    x = np.random.default_rng(0).uniform(-1, 1, (256, 1, 32, 32))
    labels = np.arange(256) % 3
    p = models.discriminator_forward(x, labels, full[1]).data
    assert p.shape == (256, 1)
    assert np.all((p > 0) & (p < 1))
    assert 0.2 < p.mean() < 0.8


def test_classifier_softmax_rows(full):
    x = np.random.default_rng(1).uniform(-1, 1, (16, 1, 32, 32))
    logits = models.classifier_forward(x, full[2]).data
    assert logits.shape == (16, 3)
    np.testing.assert_allclose(models.softmax(logits).sum(axis=1), 1.0, atol=1e-9)


def test_trunk_update_through_discriminator_visible_to_classifier():
    _, disc, clf = init_params(3, seed=4, config=TINY)
    probe = np.random.default_rng(0).uniform(-1, 1, (4, 1, 32, 32))
    before = models.classifier_forward(probe, clf).data.copy()
    disc.trunk["conv.0.w"].data += 0.01
    after = models.classifier_forward(probe, clf).data
    assert not np.array_equal(before, after)


# ---------------------------------------------------------------- gradients

def test_decoder_gradcheck():
    gen = init_params(2, seed=1, config=TINY)[0]
    z = Tensor(np.random.default_rng(0).standard_normal((3, TINY.latent)))
    f = lambda t: weighted_sum(models.decode_feature(t, gen, "train", update_stats=False))
    assert finite_diff_check(f, z) < 1e-3
    w = gen.tensors["dec.2.w"]
    g = lambda t: weighted_sum(models.decode_feature(z, _swap(gen, "dec.2.w", t), "train", update_stats=False))
    assert finite_diff_check(g, Tensor(w.data.copy())) < 1e-3


def _swap(gen, name, t):
    tensors = dict(gen.tensors)
    tensors[name] = t
    return models.GeneratorParams(gen.config, gen.kind, tensors, gen.stats)


def test_recurrent_core_gradcheck():
    gen = init_params(2, seed=2, config=TINY)[0]
    z = Tensor(np.random.default_rng(1).standard_normal((2, 3, TINY.latent)))
    f = lambda t: weighted_sum(models.recurrent_core(t, [0, 1], gen))
    assert finite_diff_check(f, z) < 1e-4
    for name in ["rnn.0.fwd.w_ih", "rnn.1.bwd.w_hh", "rnn.proj.w", "embed"]:
        g = lambda t: weighted_sum(models.recurrent_core(z, [0, 1], _swap(gen, name, t)))
        assert finite_diff_check(g, Tensor(gen.tensors[name].data.copy())) < 1e-4, name


def test_gradient_reaches_first_encoder_layer_through_lstm(full):
    gen = full[0]
    x = _patches(11, 4)[None]
    with Tape() as tape:
        loss = nn.l1(models.translate_batch(x, [1], gen, update_stats=False), Tensor(np.zeros_like(x)))
    backward_pass(loss, tape)
    try:
        assert np.linalg.norm(gen.tensors["enc.0.w"].grad) > 0
        assert np.linalg.norm(gen.tensors["rnn.0.fwd.w_hh"].grad) > 0
        assert all(np.all(np.isfinite(t.grad)) for t in gen.tensors.values() if t.grad is not None)
    finally:
        for t in gen.tensors.values():
            t.zero_grad()


def test_single_patch_word_trains(full):
    gen = full[0]
    x = _patches(12, 1)[None]
    with Tape() as tape:
        loss = nn.l1(models.translate_batch(x, [0], gen, update_stats=False), Tensor(np.zeros_like(x)))
    backward_pass(loss, tape)
    try:
        assert np.isfinite(loss.item())
        assert gen.tensors["rnn.0.fwd.w_hh"].grad is None  # no recurrence over a single step
        assert np.linalg.norm(gen.tensors["enc.0.w"].grad) > 0
    finally:
        for t in gen.tensors.values():
            t.zero_grad()
