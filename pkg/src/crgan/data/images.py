"""Word-image geometry: resizing to the model height, patch extraction and reassembly."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from crgan.errors import ContractError

PATCH = 32
INK, BACKGROUND = -1.0, 1.0


@dataclass
class WordImage:
    """Grayscale image in [-1, 1]; ink is -1, background +1."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ContractError(f"word image must be 2-D, got shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        return isinstance(other, WordImage) and np.array_equal(self.pixels, other.pixels)


@dataclass
class PatchSequence:
    patches: np.ndarray  # (N, 32, 32)
    original_width: int
    pad_columns: int

    def __len__(self):
        return self.patches.shape[0]


def scaled_width(width: int, height: int, target_height: int = PATCH) -> int:
    """round_half_away_from_zero(width * target_height / height), computed exactly in integers."""
    return max(1, (2 * width * target_height + height) // (2 * height))


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, clamped at the borders
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = pixels.shape
    if (h, w) == (height, width):
        return pixels.copy()
    r0, r1, fr = _axis_weights(h, height)
    c0, c1, fc = _axis_weights(w, width)
    rows = pixels[r0] * (1 - fr)[:, None] + pixels[r1] * fr[:, None]
    out = rows[:, c0] * (1 - fc) + rows[:, c1] * fc
    return np.clip(out, INK, BACKGROUND)


def resize_to_height(img: WordImage, target_height: int = PATCH) -> WordImage:
    if img.height < 1:
        raise ContractError("cannot resize an image with zero height")
    return WordImage(bilinear(img.pixels, target_height, scaled_width(img.width, img.height, target_height)))


def align_ground_truth(source: WordImage, target_render: WordImage) -> WordImage:
    """Resample the target rendering to exactly the source's height and width."""
    return WordImage(bilinear(target_render.pixels, source.height, source.width))


def extract_patches(img: WordImage) -> PatchSequence:
    if img.height != PATCH:
        raise ContractError(f"patch extraction needs height {PATCH}, got {img.height}")
    n = -(-img.width // PATCH)
    pad = n * PATCH - img.width
    padded = np.pad(img.pixels, ((0, 0), (0, pad)), constant_values=BACKGROUND)
    patches = padded.reshape(PATCH, n, PATCH).transpose(1, 0, 2).copy()
    return PatchSequence(patches, img.width, pad)


def assemble_patches(seq: PatchSequence) -> WordImage:
    if len(seq) == 0:
        raise ContractError("cannot assemble an empty patch sequence")
    if seq.patches.shape[1:] != (PATCH, PATCH):
        raise ContractError(f"patches must be {PATCH}x{PATCH}, got {seq.patches.shape[1:]}")
    wide = seq.patches.transpose(1, 0, 2).reshape(PATCH, -1)
    return WordImage(wide[:, : seq.original_width].copy())


# ---------------------------------------------------------------- PNG IO

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.floor((np.clip(pixels, -1.0, 1.0) + 1.0) * 127.5 + 0.5).astype(np.uint8)


def save_png(img: WordImage | np.ndarray, path: str | Path):
    pixels = img.pixels if isinstance(img, WordImage) else img
    Image.fromarray(to_uint8(pixels), mode="L").save(path, optimize=False)


def load_png(path: str | Path) -> WordImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return WordImage(arr / 127.5 - 1.0)
