"""Fidelity, seam and font-identity metrics, and the recurrent-vs-baseline report."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from crgan import models
from crgan.checkpoint import load_checkpoint
from crgan.data.dataset import Manifest, WordSample, load_manifest, load_samples
from crgan.data.images import PATCH, PatchSequence, WordImage, assemble_patches, save_png
from crgan.errors import ContractError

PEAK = 2.0
SEAM_EPS = 1e-6
GRID_GAP = 4
GRID_GAP_VALUE = 0.0
METRICS = ("l1", "psnr", "seam_raw", "seam_ratio")


def _pixels(img) -> np.ndarray:
    return img.pixels if isinstance(img, WordImage) else np.asarray(img, dtype=np.float64)


def l1_and_psnr(generated, ground_truth) -> tuple[float, float]:
    """Mean absolute difference and PSNR (peak 2.0); identical images give ``math.inf``."""
    a, b = _pixels(generated), _pixels(ground_truth)
    if a.shape != b.shape:
        raise ContractError(f"image sizes differ: {a.shape} vs {b.shape}")
    diff = a - b
    l1 = float(np.mean(np.abs(diff)))
    mse = float(np.mean(diff * diff))
    psnr = math.inf if mse == 0 else 10.0 * math.log10(PEAK * PEAK / mse)
    return l1, psnr


@dataclass(frozen=True)
class SeamScore:
    boundary: float   # mean |column difference| across patch boundaries
    interior: float   # same, over every other adjacent column pair
    raw: float        # boundary - interior
    ratio: float      # (boundary + eps) / (interior + eps)


def seam_score(img, patch_width: int = PATCH) -> SeamScore:
    x = _pixels(img)
    width = x.shape[1]
    if width <= patch_width:
        raise ContractError(f"width {width} has no interior patch boundary (needs > {patch_width})")
    col_diff = np.mean(np.abs(np.diff(x, axis=1)), axis=0)  # entry j-1 compares columns j-1 and j
    at_boundary = (np.arange(1, width) % patch_width) == 0
    boundary = float(col_diff[at_boundary].mean())
    rest = col_diff[~at_boundary]
    interior = float(rest.mean()) if rest.size else 0.0
    return SeamScore(boundary, interior, boundary - interior, (boundary + SEAM_EPS) / (interior + SEAM_EPS))


def word_logits(seq, clf: models.ClassifierParams) -> np.ndarray:
    patches = seq.patches if isinstance(seq, PatchSequence) else np.asarray(seq)
    return models.classifier_forward(patches[:, None], clf).data.mean(axis=0)


def classifier_accuracy(samples, clf: models.ClassifierParams) -> float:
    """``samples``: iterable of (PatchSequence, intended font id). Word prediction = argmax of mean patch logits."""
    samples = list(samples)
    if not samples:
        raise ContractError("classifier_accuracy needs at least one sample")
    k = clf.num_classes
    hits = 0
    for seq, label in samples:
        if not 0 <= int(label) < k:
            raise ContractError(f"label {label} outside the classifier's K={k} fonts")
        hits += int(np.argmax(word_logits(seq, clf)) == int(label))
    return hits / len(samples)


def generate(gen: models.GeneratorParams, sample: WordSample) -> PatchSequence:
    return models.translate_sequence(sample.source, sample.target_font_id, gen)


def mean_l1(gen: models.GeneratorParams, samples: list[WordSample]) -> float:
    """Average per-word L1 of assembled infer-mode output against ground truth."""
    vals = [l1_and_psnr(assemble_patches(generate(gen, s)), assemble_patches(s.target))[0] for s in samples]
    return float(np.mean(vals))


def mean_seam_ratio(gen: models.GeneratorParams, samples: list[WordSample]) -> float:
    vals = [seam_score(assemble_patches(generate(gen, s))).ratio for s in samples if s.source.original_width > PATCH]
    if not vals:
        raise ContractError("no sample is wider than one patch")
    return float(np.mean(vals))


# ---------------------------------------------------------------- comparison report

def _metrics(out: WordImage, truth: WordImage) -> dict[str, float | None]:
    l1, psnr = l1_and_psnr(out, truth)
    row: dict[str, float | None] = {"l1": l1, "psnr": psnr, "seam_raw": None, "seam_ratio": None}
    if out.width > PATCH:
        s = seam_score(out)
        row["seam_raw"], row["seam_ratio"] = s.raw, s.ratio
    return row


def _json_number(v):
    if v is None or math.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


def aggregate(values) -> dict[str, float | int | None]:
    """Mean and population standard deviation over finite values (infinite PSNRs counted separately)."""
    vals = [v for v in values if v is not None]
    finite = np.array([v for v in vals if math.isfinite(v)], dtype=np.float64)
    return {"mean": float(finite.mean()) if finite.size else None, "std": float(finite.std()) if finite.size else None,
            "count": int(finite.size), "infinite": len(vals) - int(finite.size)}


def grid_image(columns: list[tuple[WordImage, WordImage, WordImage]]) -> np.ndarray:
    """Rows ground truth / baseline / recurrent; one column per target font, separated by gaps."""
    rows = []
    for r in range(3):
        parts = []
        for i, col in enumerate(columns):
            if i:
                parts.append(np.full((PATCH, GRID_GAP), GRID_GAP_VALUE))
            parts.append(col[r].pixels)
        rows.append(np.concatenate(parts, axis=1))
    width = rows[0].shape[1]
    gap = np.full((GRID_GAP, width), GRID_GAP_VALUE)
    return np.concatenate([rows[0], gap, rows[1], gap, rows[2]], axis=0)


def compare_models(recurrent_ckpt: str | Path, baseline_ckpt: str | Path, manifest: Manifest | str | Path,
                   out_dir: str | Path) -> dict:
    """Evaluate both generators on every manifest row; writes report.json, paired.csv and grid/<WORD>.png.

    Generated words of both models are scored by the recurrent checkpoint's
    classifier so that both face the same judge.
    """
    manifest = manifest if isinstance(manifest, Manifest) else load_manifest(manifest)
    k = manifest.num_fonts
    rec = load_checkpoint(recurrent_ckpt, expected_fonts=k)
    base = load_checkpoint(baseline_ckpt, expected_fonts=k)
    samples = load_samples(manifest)
    if not samples:
        raise ContractError("manifest lists no samples")
    out = Path(out_dir)
    (out / "grid").mkdir(parents=True, exist_ok=True)

    rows, columns = [], {}
    judged = {"recurrent": [], "baseline": []}
    for s in samples:
        truth = assemble_patches(s.target)
        row = {"word": s.word, "target_font": s.target_font_id}
        images = {}
        for name, ck in (("recurrent", rec), ("baseline", base)):
            seq = generate(ck.gen, s)
            judged[name].append((seq, s.target_font_id))
            images[name] = assemble_patches(seq)
            row[name] = _metrics(images[name], truth)
        row["delta"] = {m: (None if row["recurrent"][m] is None or not math.isfinite(row["recurrent"][m])
                            or not math.isfinite(row["baseline"][m]) else row["recurrent"][m] - row["baseline"][m])
                        for m in METRICS}
        rows.append(row)
        columns.setdefault(s.word, []).append((truth, images["baseline"], images["recurrent"]))

    grids = []
    for word, cols in columns.items():
        path = out / "grid" / f"{word}.png"
        save_png(grid_image(cols), path)
        grids.append(str(path.relative_to(out)))

    report = {
        "samples": [{**r, "recurrent": {m: _json_number(v) for m, v in r["recurrent"].items()},
                     "baseline": {m: _json_number(v) for m, v in r["baseline"].items()}} for r in rows],
        "aggregate": {name: {m: aggregate(r[name][m] for r in rows) for m in METRICS}
                      for name in ("recurrent", "baseline")},
        "paired": {m: aggregate(r["delta"][m] for r in rows) for m in METRICS},
        "classifier_accuracy": {name: classifier_accuracy(judged[name], rec.clf) for name in judged},
        "grids": grids,
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    with open(out / "paired.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["word", "target_font"] + [f"{m}_{n}" for m in METRICS for n in ("recurrent", "baseline", "delta")])
        for r in rows:
            w.writerow([r["word"], r["target_font"]] + [
                "" if v is None else repr(float(v))
                for m in METRICS for v in (r["recurrent"][m], r["baseline"][m], r["delta"][m])])
    return report
