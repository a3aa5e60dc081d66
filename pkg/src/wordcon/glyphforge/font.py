"""Stroke skeletons for the built-in alphabet and the five synthetic font classes.

Glyphs are polylines on a 5x7 logical grid: x in 0..4 (left to right), y in
0..6 with y=0 on the baseline and y=6 on the cap line.
"""

from __future__ import annotations

from dataclasses import dataclass

GRID_W = 4
GRID_H = 6

Point = tuple[int, int]
Stroke = list[Point]

_O = [(1, 0), (0, 1), (0, 5), (1, 6), (3, 6), (4, 5), (4, 1), (3, 0), (1, 0)]
_P = [(0, 0), (0, 6), (3, 6), (4, 5), (4, 4), (3, 3), (0, 3)]

GLYPHS: dict[str, list[Stroke]] = {
    "A": [[(0, 0), (0, 4), (2, 6), (4, 4), (4, 0)], [(0, 3), (4, 3)]],
    "B": [[(0, 0), (0, 6), (3, 6), (4, 5), (4, 4), (3, 3), (0, 3)], [(3, 3), (4, 2), (4, 1), (3, 0), (0, 0)]],
    "C": [[(4, 5), (3, 6), (1, 6), (0, 5), (0, 1), (1, 0), (3, 0), (4, 1)]],
    "D": [[(0, 0), (0, 6), (2, 6), (4, 4), (4, 2), (2, 0), (0, 0)]],
    "E": [[(4, 6), (0, 6), (0, 0), (4, 0)], [(0, 3), (3, 3)]],
    "F": [[(4, 6), (0, 6), (0, 0)], [(0, 3), (3, 3)]],
    "G": [[(4, 5), (3, 6), (1, 6), (0, 5), (0, 1), (1, 0), (3, 0), (4, 1), (4, 3), (2, 3)]],
    "H": [[(0, 0), (0, 6)], [(4, 0), (4, 6)], [(0, 3), (4, 3)]],
    "I": [[(1, 6), (3, 6)], [(2, 6), (2, 0)], [(1, 0), (3, 0)]],
    "J": [[(4, 6), (4, 1), (3, 0), (1, 0), (0, 1)]],
    "K": [[(0, 0), (0, 6)], [(4, 6), (0, 2)], [(1, 3), (4, 0)]],
    "L": [[(0, 6), (0, 0), (4, 0)]],
    "M": [[(0, 0), (0, 6), (2, 3), (4, 6), (4, 0)]],
    "N": [[(0, 0), (0, 6), (4, 0), (4, 6)]],
    "O": [_O],
    "P": [_P],
    "Q": [_O, [(2, 2), (4, 0)]],
    "R": [_P, [(2, 3), (4, 0)]],
    "S": [[(4, 5), (3, 6), (1, 6), (0, 5), (0, 4), (1, 3), (3, 3), (4, 2), (4, 1), (3, 0), (1, 0), (0, 1)]],
    "T": [[(0, 6), (4, 6)], [(2, 6), (2, 0)]],
    "U": [[(0, 6), (0, 1), (1, 0), (3, 0), (4, 1), (4, 6)]],
    "V": [[(0, 6), (0, 2), (2, 0), (4, 2), (4, 6)]],
    "W": [[(0, 6), (0, 0), (2, 3), (4, 0), (4, 6)]],
    "X": [[(0, 6), (4, 0)], [(0, 0), (4, 6)]],
    "Y": [[(0, 6), (2, 3), (4, 6)], [(2, 3), (2, 0)]],
    "Z": [[(0, 6), (4, 6), (0, 0), (4, 0)]],
    "0": [_O, [(1, 1), (3, 5)]],
    "1": [[(1, 5), (2, 6), (2, 0)], [(1, 0), (3, 0)]],
    "2": [[(0, 5), (1, 6), (3, 6), (4, 5), (4, 4), (0, 0), (4, 0)]],
    "3": [[(0, 6), (4, 6), (2, 3), (3, 3), (4, 2), (4, 1), (3, 0), (1, 0), (0, 1)]],
    "4": [[(3, 0), (3, 6), (0, 2), (4, 2)]],
    "5": [[(4, 6), (0, 6), (0, 3), (3, 3), (4, 2), (4, 1), (3, 0), (0, 0)]],
    "6": [[(3, 6), (1, 6), (0, 5), (0, 1), (1, 0), (3, 0), (4, 1), (4, 2), (3, 3), (0, 3)]],
    "7": [[(0, 6), (4, 6), (1, 0)]],
    "8": [
        [(1, 3), (0, 4), (0, 5), (1, 6), (3, 6), (4, 5), (4, 4), (3, 3), (1, 3)],
        [(1, 3), (0, 2), (0, 1), (1, 0), (3, 0), (4, 1), (4, 2), (3, 3)],
    ],
    "9": [[(4, 3), (1, 3), (0, 4), (0, 5), (1, 6), (3, 6), (4, 5), (4, 1), (3, 0), (1, 0)]],
}

ALPHABET = "".join(sorted(GLYPHS))


@dataclass(frozen=True)
class FontClass:
    """Stroke-style parameters standing in for a real typeface."""

    name: str
    width_ratio: float  # glyph box width / cap height
    stroke_ratio: float  # plain stroke thickness / cap height
    serif: int = 0  # serif tick half-length in grid units (0 = none)
    base_shear: float = 0.0  # intrinsic slant (tan of angle) of upright text
    tracking: int = 0  # extra inter-glyph pixels


FONT_CLASSES: dict[str, FontClass] = {
    "sans": FontClass("sans", width_ratio=0.5, stroke_ratio=0.08),
    "serif": FontClass("serif", width_ratio=0.6, stroke_ratio=0.08, serif=1),
    "slab": FontClass("slab", width_ratio=0.65, stroke_ratio=0.12, serif=1),
    "mono": FontClass("mono", width_ratio=0.45, stroke_ratio=0.08, tracking=1),
    "script": FontClass("script", width_ratio=0.5, stroke_ratio=0.08, base_shear=0.12),
}


def with_serifs(strokes: list[Stroke], half_len: int) -> list[Stroke]:
    """Add horizontal ticks where a near-vertical stroke ends on the baseline or cap line."""
    if half_len <= 0:
        return strokes
    out = list(strokes)
    for stroke in strokes:
        for end, nxt in ((stroke[0], stroke[1]), (stroke[-1], stroke[-2])):
            x, y = end
            if y not in (0, GRID_H) or abs(nxt[0] - x) > abs(nxt[1] - y) / 2:
                continue
            out.append([(max(0, x - half_len), y), (min(GRID_W, x + half_len), y)])
    return out
