"""Procedural uppercase fonts.

Every glyph starts from a fixed 24x16 stroke skeleton and is restyled by
dilation (weight), outline, serifs and shear (slant). Rendering is a pure
function of the :class:`FontSpec` and the text.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from crgan.data.images import WordImage

GLYPH_H, GLYPH_W = 24, 16
GAP = 2
MARGIN = 4

# strokes as polylines of (x, y) in a 16-wide, 24-tall box, y pointing down
_O = [(5, 2), (10, 2), (13, 5), (13, 18), (10, 21), (5, 21), (2, 18), (2, 5), (5, 2)]
_P = [(2, 21), (2, 2), (10, 2), (13, 5), (13, 9), (10, 12), (2, 12)]
STROKES: dict[str, list[list[tuple[int, int]]]] = {
    "A": [[(2, 21), (7, 2)], [(8, 2), (13, 21)], [(4, 14), (11, 14)]],
    "B": [[(2, 2), (2, 21)], [(2, 2), (10, 2), (12, 4), (12, 9), (10, 11), (2, 11)],
          [(2, 11), (11, 11), (13, 13), (13, 19), (11, 21), (2, 21)]],
    "C": [[(13, 4), (11, 2), (5, 2), (2, 5), (2, 18), (5, 21), (11, 21), (13, 19)]],
    "D": [[(2, 2), (2, 21)], [(2, 2), (9, 2), (13, 6), (13, 17), (9, 21), (2, 21)]],
    "E": [[(13, 2), (2, 2), (2, 21), (13, 21)], [(2, 11), (10, 11)]],
    "F": [[(13, 2), (2, 2), (2, 21)], [(2, 11), (10, 11)]],
    "G": [[(13, 4), (11, 2), (5, 2), (2, 5), (2, 18), (5, 21), (11, 21), (13, 19), (13, 12), (8, 12)]],
    "H": [[(2, 2), (2, 21)], [(13, 2), (13, 21)], [(2, 11), (13, 11)]],
    "I": [[(4, 2), (11, 2)], [(7, 2), (7, 21)], [(4, 21), (11, 21)]],
    "J": [[(6, 2), (13, 2)], [(11, 2), (11, 18), (8, 21), (5, 21), (2, 18)]],
    "K": [[(2, 2), (2, 21)], [(13, 2), (2, 13)], [(6, 9), (13, 21)]],
    "L": [[(2, 2), (2, 21), (13, 21)]],
    "M": [[(2, 21), (2, 2), (7, 12), (13, 2), (13, 21)]],
    "N": [[(2, 21), (2, 2), (13, 21), (13, 2)]],
    "O": [_O],
    "P": [_P],
    "Q": [_O, [(8, 15), (14, 22)]],
    "R": [_P, [(7, 12), (13, 21)]],
    "S": [[(13, 4), (11, 2), (4, 2), (2, 4), (2, 9), (4, 11), (11, 11), (13, 13), (13, 19), (11, 21),
           (4, 21), (2, 19)]],
    "T": [[(2, 2), (13, 2)], [(7, 2), (7, 21)]],
    "U": [[(2, 2), (2, 18), (5, 21), (10, 21), (13, 18), (13, 2)]],
    "V": [[(2, 2), (7, 21)], [(8, 21), (13, 2)]],
    "W": [[(1, 2), (4, 21), (7, 8), (10, 21), (13, 2)]],
    "X": [[(2, 2), (13, 21)], [(13, 2), (2, 21)]],
    "Y": [[(2, 2), (7, 11)], [(13, 2), (8, 11)], [(7, 11), (7, 21)]],
    "Z": [[(2, 2), (13, 2), (2, 21), (13, 21)]],
}
ALPHABET = "".join(sorted(STROKES))


@lru_cache(maxsize=None)
def base_glyph(ch: str) -> np.ndarray:
    """Boolean 24x16 skeleton, drawn with a 2x2 brush. Treat the result as read-only."""
    img = np.zeros((GLYPH_H, GLYPH_W), dtype=bool)
    for line in STROKES[ch]:
        for (x0, y0), (x1, y1) in zip(line, line[1:]):
            n = 2 * max(abs(x1 - x0), abs(y1 - y0)) + 1
            xs = np.rint(np.linspace(x0, x1, n)).astype(int)
            ys = np.rint(np.linspace(y0, y1, n)).astype(int)
            for dy in (0, 1):
                for dx in (0, 1):
                    img[np.clip(ys + dy, 0, GLYPH_H - 1), np.clip(xs + dx, 0, GLYPH_W - 1)] = True
    img.setflags(write=False)
    return img


@dataclass(frozen=True)
class FontSpec:
    font_id: int
    name: str
    dilation: int = 0
    shear: float = 0.0
    outline: bool = False
    serif: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def glyph(self, ch: str) -> np.ndarray:
        return _styled_glyph(self, ch)

    @property
    def line_height(self) -> int:
        return GLYPH_H + 2 * self.dilation + 2 * MARGIN


def make_procedural_font(font_id: int, name: str | None = None, dilation: int = 0, shear: float = 0.0,
                         outline: bool = False, serif: bool = False, seed: int | None = None) -> FontSpec:
    if not isinstance(dilation, (int, np.integer)) or not 0 <= dilation <= 2:
        raise ValueError(f"dilation must be an integer in [0, 2], got {dilation!r}")
    if not -0.4 <= shear <= 0.4:
        raise ValueError(f"shear must lie in [-0.4, 0.4], got {shear!r}")
    if font_id < 0:
        raise ValueError(f"font_id must be non-negative, got {font_id}")
    return FontSpec(font_id, name or f"font{font_id}", int(dilation), float(shear), bool(outline),
                    bool(serif), font_id if seed is None else int(seed))


def _shear_offsets(shear: float, height: int) -> np.ndarray:
    # slant about the bottom row; round half away from zero so +s and -s mirror
    raw = shear * (height - 1 - np.arange(height))
    off = (np.sign(raw) * np.floor(np.abs(raw) + 0.5)).astype(int)
    return off - off.min()


@lru_cache(maxsize=None)
def _styled_glyph(spec: FontSpec, ch: str) -> np.ndarray:
    g = base_glyph(ch)
    r = spec.dilation
    if r:
        g = np.pad(g, r)
        g = ndimage.binary_dilation(g, structure=np.ones((2 * r + 1, 2 * r + 1), dtype=bool))
    if spec.serif:
        g = np.pad(g, ((0, 0), (2, 2)))
        rows = np.flatnonzero(g.any(axis=1))
        for y in (rows[0], rows[-1]):
            g[y] = ndimage.binary_dilation(g[y], structure=np.ones(5, dtype=bool))
    if spec.outline:
        g = g & ~ndimage.binary_erosion(g, structure=np.ones((3, 3), dtype=bool), border_value=0)
    if spec.shear:
        off = _shear_offsets(spec.shear, g.shape[0])
        out = np.zeros((g.shape[0], g.shape[1] + off.max()), dtype=bool)
        for y, dx in enumerate(off):
            out[y, dx : dx + g.shape[1]] = g[y]
        g = out
    g = np.ascontiguousarray(g)
    g.setflags(write=False)
    return g


def render_word(spec: FontSpec, word: str) -> WordImage:
    """Left-to-right composite with a 2-column gap between glyphs and 4-pixel margins."""
    if not word:
        raise ValueError("cannot render an empty word")
    bad = sorted({c for c in word if c not in STROKES})
    if bad:
        raise ValueError(f"unsupported character(s) {bad!r}; only uppercase A-Z are available")
    glyphs = [spec.glyph(c) for c in word]
    width = 2 * MARGIN + sum(g.shape[1] for g in glyphs) + GAP * (len(glyphs) - 1)
    ink = np.zeros((spec.line_height, width), dtype=bool)
    x = MARGIN
    for g in glyphs:
        ink[MARGIN : MARGIN + g.shape[0], x : x + g.shape[1]] |= g
        x += g.shape[1] + GAP
    return WordImage(np.where(ink, -1.0, 1.0))


# (name, dilation, shear, outline, serif); font 0 is the source style
DEFAULT_STYLES = [
    ("plain", 0, 0.0, False, False),
    ("heavy", 2, 0.0, False, False),
    ("slant", 0, 0.35, False, False),
    ("outline", 2, 0.0, True, False),
    ("serif", 0, 0.0, False, True),
    ("heavy-slant", 1, 0.3, False, False),
    ("backslant", 1, -0.3, False, False),
    ("outline-slant", 2, 0.25, True, False),
    ("heavy-serif", 1, 0.0, False, True),
    ("slant-serif", 0, 0.2, False, True),
]


def default_catalog(count: int = 10) -> list[FontSpec]:
    if not 2 <= count <= len(DEFAULT_STYLES):
        raise ValueError(f"default catalog holds 2..{len(DEFAULT_STYLES)} fonts, asked for {count}")
    return [make_procedural_font(i, name, d, s, o, f) for i, (name, d, s, o, f) in enumerate(DEFAULT_STYLES[:count])]


def font_from_dict(d: dict) -> FontSpec:
    return make_procedural_font(d["font_id"], d.get("name"), d.get("dilation", 0), d.get("shear", 0.0),
                                d.get("outline", False), d.get("serif", False), d.get("seed"))
