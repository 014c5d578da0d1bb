"""Fixed 5x7 bitmap font used to stamp tag text into images.

Only uppercase letters, digits, dash and space are defined; tag text is
upper-cased before rendering.  Glyphs are drawn as solid pixels at a given
intensity, leaving every other pixel untouched.
"""

from __future__ import annotations

import numpy as np

GLYPH_W = 5
GLYPH_H = 7
GLYPH_SPACING = 1

_GLYPHS = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "..##.", ".#...", "#....", "#####"),
    "3": (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", "####."),
    "6": (".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."),
    "-": (".....", ".....", ".....", "#####", ".....", ".....", "....."),
    " ": (".....", ".....", ".....", ".....", ".....", ".....", "....."),
}


def text_extent(text: str, scale: int = 1) -> tuple[int, int]:
    """Width and height in pixels of ``text`` rendered at ``scale``."""
    n = len(text)
    if n == 0:
        return (0, 0)
    w = n * GLYPH_W + (n - 1) * GLYPH_SPACING
    return (w * scale, GLYPH_H * scale)


def text_mask(text: str, scale: int = 1) -> np.ndarray:
    """Boolean (H, W) array of the glyph pixels for ``text``."""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    text = text.upper()
    w, h = text_extent(text, scale=1)
    out = np.zeros((h, w), dtype=bool)
    for i, ch in enumerate(text):
        if ch not in _GLYPHS:
            raise ValueError(f"character {ch!r} has no glyph in the 5x7 font")
        x0 = i * (GLYPH_W + GLYPH_SPACING)
        rows = _GLYPHS[ch]
        for r in range(GLYPH_H):
            for c in range(GLYPH_W):
                if rows[r][c] == "#":
                    out[r, x0 + c] = True
    if scale > 1:
        out = np.kron(out, np.ones((scale, scale), dtype=bool))
    return out


def render_text(image: np.ndarray, text: str, x: int, y: int, value: float, scale: int = 1) -> np.ndarray:
    """Stamp ``text`` into ``image`` at top-left (x, y), writing ``value`` on glyph pixels.

    Returns a copy; the input array is untouched.  Raises if the text does not
    fit inside the image.
    """
    mask = text_mask(text, scale)
    h, w = mask.shape
    if x < 0 or y < 0 or y + h > image.shape[0] or x + w > image.shape[1]:
        raise ValueError(
            f"text box ({x},{y},{w},{h}) does not fit in image of shape {image.shape}"
        )
    out = image.copy()
    region = out[y : y + h, x : x + w]
    region[mask] = value
    return out
