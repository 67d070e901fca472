"""L1 pre-training, alternating D -> C -> G optimization, checkpointing and resume."""
from __future__ import annotations

import contextlib
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from crgan import models, nn
from crgan.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from crgan.data.dataset import Batch, Manifest, WordSample, bucket_batches, load_manifest, load_samples
from crgan.errors import ConfigError, NonFiniteError
from crgan.models import ModelConfig, init_params
from crgan.optim import AdamState, adam_step
from crgan.tensor import Tape, Tensor, backward_pass, reshape

log = logging.getLogger(__name__)

REPORT_FIELDS = ("step", "loss_d", "loss_g_adv", "loss_g_l1", "loss_g_cls", "loss_c", "d_real", "d_fake")
CKPT_DIR = "checkpoints"
STEPS_CSV = "steps.csv"


@dataclass
class TrainingConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 60
    pretrain_epochs: int = 2
    lambda_adv: float = 1.0
    lambda_l1: float = 100.0
    lambda_cls: float = 1.0
    weight_decay: float = 1e-5
    seed: int = 0
    checkpoint_interval: int = 1  # epochs
    manifest: str | None = None
    model_kind: str = "recurrent"
    max_steps: int | None = None  # cap on adversarial steps; None = run every epoch

    def __post_init__(self):
        for key in ("lambda_adv", "lambda_l1", "lambda_cls", "weight_decay"):
            if not getattr(self, key) >= 0:
                raise ConfigError(key, f"must be >= 0, got {getattr(self, key)}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", f"must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError("batch_size", f"must be >= 1, got {self.batch_size}")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs", f"must be >= 0, got {self.pretrain_epochs}")
        if self.epochs < self.pretrain_epochs:
            raise ConfigError("epochs", f"must be >= pretrain_epochs ({self.pretrain_epochs}), got {self.epochs}")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval", f"must be >= 1, got {self.checkpoint_interval}")
        if self.model_kind not in models.KINDS:
            raise ConfigError("model_kind", f"must be one of {models.KINDS}, got {self.model_kind!r}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps", f"must be >= 0 or null, got {self.max_steps}")
        if self.seed < 0:
            raise ConfigError("seed", f"must be >= 0, got {self.seed}")

    def adam(self) -> AdamState:
        return AdamState(learning_rate=self.learning_rate, weight_decay=self.weight_decay)


@dataclass
class StepReport:
    step: int
    loss_d: float = 0.0
    loss_g_adv: float = 0.0
    loss_g_l1: float = 0.0
    loss_g_cls: float = 0.0
    loss_c: float = 0.0
    d_real: float = 0.0
    d_fake: float = 0.0

    def row(self) -> list[str]:
        return [str(self.step)] + [repr(float(getattr(self, f))) for f in REPORT_FIELDS[1:]]


@dataclass
class TrainState:
    gen: models.GeneratorParams
    disc: models.DiscriminatorParams
    clf: models.ClassifierParams
    seed: int
    opt: dict[str, AdamState] = field(default_factory=dict)
    step: int = 0       # batches processed, pre-training included
    adv_steps: int = 0
    epoch: int = 0      # index of the epoch in progress
    batch: int = 0      # batches already done within that epoch

    @classmethod
    def fresh(cls, config: TrainingConfig, num_fonts: int, model_config: ModelConfig | None = None) -> "TrainState":
        gen, disc, clf = init_params(num_fonts, config.seed, model_config, config.model_kind)
        return cls(gen, disc, clf, config.seed, {k: config.adam() for k in ("G", "D", "C")})

    def checkpoint(self) -> Checkpoint:
        counters = {"step": self.step, "adv_steps": self.adv_steps, "epoch": self.epoch, "batch": self.batch}
        return Checkpoint(self.gen, self.disc, self.clf, self.seed, self.opt, counters)

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "TrainState":
        c = ck.counters
        return cls(ck.gen, ck.disc, ck.clf, ck.seed, dict(ck.optimizers), c.get("step", 0), c.get("adv_steps", 0),
                   c.get("epoch", 0), c.get("batch", 0))


# ---------------------------------------------------------------- single steps

def _finite(name: str, value: float, step: int | None = None) -> float:
    if not np.isfinite(value):
        where = f" at step {step}" if step is not None else ""
        raise NonFiniteError(f"{name} is {value}{where}")
    return value


def _apply(params: dict[str, Tensor], opt: AdamState):
    try:
        adam_step(params, {k: t.grad for k, t in params.items()}, opt)
    finally:
        for t in params.values():
            t.zero_grad()


@contextlib.contextmanager
def _frozen(*bundles: dict[str, Tensor]):
    tensors = [t for b in bundles for t in b.values()]
    saved = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, flag in zip(tensors, saved):
            t.requires_grad = flag


def _patches(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, 1, x.shape[-2], x.shape[-1])


def _patch_labels(batch: Batch) -> np.ndarray:
    return np.repeat(batch.labels, batch.source.shape[1])


def pretrain_step(batch: Batch, state: TrainState, config: TrainingConfig) -> StepReport:
    """One Adam step on lambda_L1 * L1(G(x|c), y) alone."""
    with Tape() as tape:
        fake = models.translate_batch(batch.source, batch.labels, state.gen, "train")
        l1 = nn.l1(fake, batch.target)
        loss = l1 * config.lambda_l1
    _finite("generator L1 loss", loss.item(), state.step)
    backward_pass(loss, tape)
    _apply(state.gen.tensors, state.opt["G"])
    return StepReport(state.step, loss_g_l1=l1.item())


def generate(batch: Batch, state: TrainState) -> tuple[Tape, Tensor]:
    """Train-mode generator forward on its own tape, for reuse by the D and G steps."""
    with Tape() as tape:
        fake = models.translate_batch(batch.source, batch.labels, state.gen, "train")
    return tape, fake


def discriminator_step(batch: Batch, state: TrainState, config: TrainingConfig,
                       fake: np.ndarray | None = None) -> dict[str, float]:
    """BCE(D(y|c), 1) + BCE(D(G(x|c)|c), 0) over all patches; updates trunk + D head.

    The generated patches are constants here. Without ``fake`` they come from a
    tape-free forward pass that leaves the generator's running statistics alone.
    """
    if fake is None:
        fake = models.translate_batch(batch.source, batch.labels, state.gen, "train", update_stats=False).data
    m = fake.shape[0] * fake.shape[1]
    labels = _patch_labels(batch)
    x = np.concatenate([_patches(batch.target), _patches(fake)])
    params = state.disc.tensors()
    with Tape() as tape:
        p = models.discriminator_forward(x, np.concatenate([labels, labels]), state.disc)
        p_real, p_fake = p[:m], p[m:]
        loss = nn.bce(p_real, 1.0) + nn.bce(p_fake, 0.0)
    _finite("discriminator loss", loss.item(), state.step)
    backward_pass(loss, tape)
    _apply(params, state.opt["D"])
    return {"loss_d": loss.item(), "d_real": float(p_real.data.mean()), "d_fake": float(p_fake.data.mean())}


def classifier_step(batch: Batch, state: TrainState, config: TrainingConfig) -> dict[str, float]:
    """CE(C(real target patches), c); updates trunk + classifier head."""
    params = state.clf.tensors()
    with Tape() as tape:
        loss = nn.cross_entropy(models.classifier_forward(_patches(batch.target), state.clf), _patch_labels(batch))
    _finite("classifier loss", loss.item(), state.step)
    backward_pass(loss, tape)
    _apply(params, state.opt["C"])
    return {"loss_c": loss.item()}


def generator_step(batch: Batch, state: TrainState, config: TrainingConfig,
                   generated: tuple[Tape, Tensor] | None = None) -> dict[str, float]:
    """lambda_adv * BCE(D(G(x|c)|c), 1) + lambda_L1 * L1 + lambda_cls * CE(C(G(x|c)), c).

    D and C are frozen; zero-weighted terms are left out of the graph, so with
    lambda_adv = lambda_cls = 0 this is exactly :func:`pretrain_step`.
    ``generated`` is the output of :func:`generate` for this batch and the
    current generator; the graph is continued on its tape.
    """
    disc, clf = state.disc, state.clf
    labels = _patch_labels(batch)
    tape, fake = generate(batch, state) if generated is None else generated
    # D and C stay frozen through backward too, or G's loss would leave gradients on them
    with _frozen(disc.trunk, disc.head, clf.head):
        with tape:
            l1 = nn.l1(fake, batch.target)
            loss = l1 * config.lambda_l1
            feats = None
            if config.lambda_adv or config.lambda_cls:
                feats = models.trunk_features(reshape(fake, (len(labels), 1) + fake.shape[2:]), disc.trunk)
            if config.lambda_adv:
                adv = nn.bce(models.discriminator_head(feats, labels, disc), 1.0)
                loss = loss + adv * config.lambda_adv
            if config.lambda_cls:
                cls = nn.cross_entropy(models.classifier_head(feats, clf), labels)
                loss = loss + cls * config.lambda_cls
        _finite("generator loss", loss.item(), state.step)
        backward_pass(loss, tape)
    _apply(state.gen.tensors, state.opt["G"])

    if not config.lambda_adv or not config.lambda_cls:
        # report the unweighted terms anyway, evaluated on the same generated patches
        feats = models.trunk_features(_patches(fake.data), disc.trunk)
        if not config.lambda_adv:
            adv = nn.bce(models.discriminator_head(feats, labels, disc), 1.0)
        if not config.lambda_cls:
            cls = nn.cross_entropy(models.classifier_head(feats, clf), labels)
    return {"loss_g_adv": adv.item(), "loss_g_l1": l1.item(), "loss_g_cls": cls.item()}


def adversarial_step(batch: Batch, state: TrainState, config: TrainingConfig) -> StepReport:
    """D, C, then G. One generator forward serves both the D and the G step:
    G is unchanged until its own update, and train-mode batch norm does not
    read the running statistics, so the result equals three separate steps."""
    generated = generate(batch, state)
    rep = StepReport(state.step)
    for out in (discriminator_step(batch, state, config, generated[1].data),
                classifier_step(batch, state, config),
                generator_step(batch, state, config, generated)):
        for k, v in out.items():
            setattr(rep, k, v)
    return rep


def pretrain_generator(config: TrainingConfig, samples: list[WordSample], state: TrainState,
                       on_report: Callable[[StepReport], None] | None = None) -> TrainState:
    """Run the L1-only phase (``config.pretrain_epochs`` epochs) in place."""
    while state.epoch < config.pretrain_epochs:
        for batch in epoch_batches(samples, config, state.epoch)[state.batch:]:
            rep = pretrain_step(batch, state, config)
            state.step += 1
            state.batch += 1
            if on_report:
                on_report(rep)
        state.epoch += 1
        state.batch = 0
    return state


def epoch_batches(samples: list[WordSample], config: TrainingConfig, epoch: int) -> list[Batch]:
    """Deterministic per-epoch batching: the shuffle is keyed by (seed, epoch)."""
    groups = bucket_batches(samples, config.batch_size, seed=[config.seed, epoch])
    return [Batch.from_samples(g) for g in groups]


# ---------------------------------------------------------------- full run

@dataclass
class TrainResult:
    state: TrainState
    out_dir: Path
    checkpoints: list[Path]
    interrupted: bool
    wall_seconds: float

    @property
    def final_checkpoint(self) -> Path:
        return self.checkpoints[-1]


def checkpoint_path(out_dir: Path, step: int) -> Path:
    return out_dir / CKPT_DIR / f"step-{step:07d}.ckpt"


def list_checkpoints(out_dir: str | Path) -> list[Path]:
    return sorted((Path(out_dir) / CKPT_DIR).glob("step-*.ckpt"))


def read_report(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def _open_report(path: Path, keep_before: int | None):
    """Fresh CSV, or (on resume) the existing one cut back to rows with step < keep_before."""
    rows = []
    if keep_before is not None and path.exists():
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            rows = [r for r in reader if r and int(r[0]) < keep_before]
    fh = open(path, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REPORT_FIELDS)
    writer.writerows(rows)
    return fh, writer


def _resolve_data(config: TrainingConfig, data) -> tuple[list[WordSample], int]:
    if data is None:
        if config.manifest is None:
            raise ConfigError("manifest", "no dataset manifest given")
        data = config.manifest
    manifest = data if isinstance(data, Manifest) else load_manifest(data)
    samples = load_samples(manifest)
    if not samples:
        raise ValueError("manifest lists no samples")
    return samples, manifest.num_fonts


def train(config: TrainingConfig, out_dir: str | Path, data: Manifest | str | Path | None = None, *,
          resume: bool = False, model_config: ModelConfig | None = None,
          should_stop: Callable[[int], bool] | None = None) -> TrainResult:
    """Pre-train, then one D, C and G step per batch until ``epochs`` or ``max_steps``.

    Writes ``steps.csv`` (one row per batch), a checkpoint at step 0, every
    ``checkpoint_interval`` epochs and at the end, and ``train-report.json``.
    With ``resume=True`` the latest checkpoint in ``out_dir`` is restored and
    the CSV is cut back to it, so the continued run reproduces an
    uninterrupted one. ``should_stop(step)`` is polled after every batch and
    simulates an interruption (no checkpoint is written when it fires).
    """
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples, num_fonts = _resolve_data(config, data)

    existing = list_checkpoints(out) if resume else []
    if existing:
        state = TrainState.from_checkpoint(load_checkpoint(existing[-1], expected_fonts=num_fonts))
        log.info("resuming from %s (step %d)", existing[-1], state.step)
        fh, writer = _open_report(out / STEPS_CSV, keep_before=state.step)
        written = list(existing)
    else:
        state = TrainState.fresh(config, num_fonts, model_config)
        fh, writer = _open_report(out / STEPS_CSV, keep_before=None)
        written = [save_checkpoint(state.checkpoint(), checkpoint_path(out, 0))]

    def emit(rep: StepReport):
        for name in REPORT_FIELDS[1:]:
            _finite(name, getattr(rep, name), rep.step)
        writer.writerow(rep.row())

    def save():
        path = checkpoint_path(out, state.step)
        if not written or written[-1] != path:
            written.append(save_checkpoint(state.checkpoint(), path))

    try:
        while state.epoch < config.epochs and not (state.epoch >= config.pretrain_epochs and _capped(config, state)):
            batches = epoch_batches(samples, config, state.epoch)
            pretraining = state.epoch < config.pretrain_epochs
            for batch in batches[state.batch:]:
                if not pretraining and _capped(config, state):
                    break
                rep = pretrain_step(batch, state, config) if pretraining else adversarial_step(batch, state, config)
                emit(rep)
                state.step += 1
                state.batch += 1
                state.adv_steps += not pretraining
                if should_stop is not None and should_stop(state.step):
                    return TrainResult(state, out, written, True, time.perf_counter() - t0)
            if state.batch == len(batches):
                state.epoch += 1
                state.batch = 0
                if state.epoch % config.checkpoint_interval == 0:
                    save()
        save()
    except NonFiniteError:
        log.error("non-finite value; last good checkpoint is %s", written[-1] if written else None)
        raise
    finally:
        fh.close()

    result = TrainResult(state, out, written, False, time.perf_counter() - t0)
    report = {"steps": state.step, "adversarial_steps": state.adv_steps, "epochs_completed": state.epoch,
              "wall_seconds": result.wall_seconds, "final_checkpoint": str(result.final_checkpoint),
              "checkpoints": [str(p) for p in written], "config": asdict(config)}
    (out / "train-report.json").write_text(json.dumps(report, indent=1))
    return result


def _capped(config: TrainingConfig, state: TrainState) -> bool:
    return config.max_steps is not None and state.adv_steps >= config.max_steps
