"""Synthetic multi-font corpus: generation, manifest IO and aspect-ratio bucketing."""
from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from crgan.data.fonts import ALPHABET, DEFAULT_STYLES, FontSpec, default_catalog, font_from_dict, render_word
from crgan.data.images import (PatchSequence, WordImage, align_ground_truth, extract_patches, load_png,
                               resize_to_height, save_png)
from crgan.errors import ConfigError

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


@dataclass
class WordSample:
    word: str
    source: PatchSequence
    target: PatchSequence
    source_font_id: int
    target_font_id: int

    @property
    def patch_count(self) -> int:
        return len(self.source)


@dataclass
class Manifest:
    seed: int
    source_font_id: int
    fonts: list[FontSpec]
    samples: list[dict]
    root: Path | None = None
    duplicates_removed: int = 0
    version: int = MANIFEST_VERSION

    @property
    def num_fonts(self) -> int:
        return len(self.fonts)

    def to_json(self) -> dict:
        return {"version": self.version, "seed": self.seed, "source_font_id": self.source_font_id,
                "fonts": [f.to_dict() for f in self.fonts], "samples": self.samples}


@dataclass
class DatasetConfig:
    seed: int = 0
    vocabulary: list[str] | None = None
    num_words: int = 64
    min_length: int = 3
    max_length: int = 8
    num_fonts: int = 10
    fonts: list[dict] | None = None
    source_font_id: int = 0

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed", f"must be >= 0, got {self.seed}")
        if self.num_words < 1:
            raise ConfigError("num_words", f"must be >= 1, got {self.num_words}")
        if not 1 <= self.min_length <= self.max_length:
            raise ConfigError("min_length", f"need 1 <= min_length <= max_length, got {self.min_length}, {self.max_length}")
        if self.vocabulary is not None:
            bad = [w for w in self.vocabulary if not w or set(w) - set(ALPHABET)]
            if bad or not self.vocabulary:
                raise ConfigError("vocabulary", f"words must be non-empty and use only A-Z, got {bad[:3] or 'an empty list'}")
        if self.fonts is None and not 2 <= self.num_fonts <= len(DEFAULT_STYLES):
            raise ConfigError("num_fonts", f"must be in 2..{len(DEFAULT_STYLES)}, got {self.num_fonts}")
        k = len(self.fonts) if self.fonts is not None else self.num_fonts
        if not 0 <= self.source_font_id < k:
            raise ConfigError("source_font_id", f"must be in 0..{k - 1}, got {self.source_font_id}")

    def catalog(self) -> list[FontSpec]:
        if self.fonts is not None:
            return [font_from_dict(d) for d in self.fonts]
        return default_catalog(self.num_fonts)

    def words(self) -> list[str]:
        if self.vocabulary is not None:
            return list(self.vocabulary)
        return random_vocabulary(self.num_words, self.min_length, self.max_length, self.seed)


def random_vocabulary(count: int, min_length: int, max_length: int, seed) -> list[str]:
    if not 1 <= min_length <= max_length:
        raise ValueError(f"need 1 <= min_length <= max_length, got {min_length}, {max_length}")
    rng = np.random.default_rng(seed)
    words: list[str] = []
    seen = set()
    letters = np.array(list(ALPHABET))
    while len(words) < count:
        n = int(rng.integers(min_length, max_length + 1))
        w = "".join(rng.choice(letters, n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def render_source(font: FontSpec, word: str) -> WordImage:
    return resize_to_height(render_word(font, word))


def make_sample(word: str, source_font: FontSpec, target_font: FontSpec) -> WordSample:
    src = render_source(source_font, word)
    tgt = align_ground_truth(src, render_word(target_font, word))
    return WordSample(word, extract_patches(src), extract_patches(tgt), source_font.font_id, target_font.font_id)


def _dedupe(vocabulary: list[str]) -> tuple[list[str], int]:
    seen, out = set(), []
    for w in vocabulary:
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out, len(vocabulary) - len(out)


def generate_dataset(catalog: list[FontSpec], vocabulary: list[str], source_font_id: int,
                     out_dir: str | Path, seed: int = 0) -> Manifest:
    """Render every (word, target font) pair to PNG and write ``manifest.json``.

    Rows are emitted sorted by (word, target font id).
    """
    ids = sorted(f.font_id for f in catalog)
    if len(catalog) < 2:
        raise ValueError(f"catalog needs at least 2 fonts, got {len(catalog)}")
    if ids != list(range(len(catalog))):
        raise ValueError(f"font ids must be dense 0..K-1, got {ids}")
    if not vocabulary:
        raise ValueError("vocabulary is empty")
    fonts = sorted(catalog, key=lambda f: f.font_id)
    if not 0 <= source_font_id < len(fonts):
        raise ValueError(f"source_font_id {source_font_id} not in catalog of {len(fonts)} fonts")
    words, dupes = _dedupe(vocabulary)
    if dupes:
        log.warning("removed %d duplicate word(s) from the vocabulary", dupes)

    out = Path(out_dir)
    (out / "source").mkdir(parents=True, exist_ok=True)
    source = fonts[source_font_id]
    rows = []
    for word in sorted(words):
        src = render_source(source, word)
        src_path = f"source/{word}.png"
        save_png(src, out / src_path)
        n = -(-src.width // 32)
        for font in fonts:
            if font.font_id == source_font_id:
                continue
            tgt = align_ground_truth(src, render_word(font, word))
            tgt_path = f"target/{font.font_id}/{word}.png"
            (out / tgt_path).parent.mkdir(parents=True, exist_ok=True)
            save_png(tgt, out / tgt_path)
            rows.append({"word": word, "source_path": src_path, "target_font_id": font.font_id,
                         "target_path": tgt_path, "width": src.width, "patch_count": n})
    manifest = Manifest(seed, source_font_id, fonts, rows, out, dupes)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest.to_json(), fh, indent=1)
    return manifest


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {doc.get('version')!r}")
    fonts = [font_from_dict(d) for d in doc["fonts"]]
    return Manifest(doc["seed"], doc.get("source_font_id", 0), fonts, doc["samples"], path.parent)


def load_samples(manifest: Manifest | str | Path) -> list[WordSample]:
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    root = manifest.root or Path(".")
    cache: dict[str, PatchSequence] = {}
    out = []
    for row in manifest.samples:
        if row["source_path"] not in cache:
            cache[row["source_path"]] = extract_patches(load_png(root / row["source_path"]))
        src = cache[row["source_path"]]
        tgt = extract_patches(load_png(root / row["target_path"]))
        out.append(WordSample(row["word"], src, tgt, manifest.source_font_id, row["target_font_id"]))
    return out


def bucket_batches(samples: list, batch_size: int = 32, seed=0) -> list[list]:
    """Group samples by patch count, shuffle within groups, chunk, then shuffle batch order."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    groups: dict[int, list] = defaultdict(list)
    for s in samples:
        groups[s.patch_count].append(s)
    batches = []
    for n in sorted(groups):
        members = groups[n]
        order = rng.permutation(len(members))
        for i in range(0, len(members), batch_size):
            batches.append([members[j] for j in order[i : i + batch_size]])
    return [batches[i] for i in rng.permutation(len(batches))]


@dataclass
class Batch:
    """Stacked arrays for one homogeneous-N batch."""

    source: np.ndarray  # (B, N, 32, 32)
    target: np.ndarray  # (B, N, 32, 32)
    labels: np.ndarray  # (B,) target font ids
    words: list[str] = field(default_factory=list)

    @classmethod
    def from_samples(cls, samples: list[WordSample]) -> "Batch":
        counts = {s.patch_count for s in samples}
        if len(counts) != 1:
            raise ValueError(f"batch mixes patch counts {sorted(counts)}")
        return cls(np.stack([s.source.patches for s in samples]), np.stack([s.target.patches for s in samples]),
                   np.array([s.target_font_id for s in samples], dtype=np.int64), [s.word for s in samples])

    def __len__(self):
        return len(self.labels)
