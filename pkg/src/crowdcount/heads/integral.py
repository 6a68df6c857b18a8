"""Upright and 45-degree summed-area tables with exact integer rectangle sums.

A tilted rectangle ``(x, y, w, h)`` has its top pixel at ``(x, y)`` and
extends ``w`` steps down-right and ``h`` steps down-left; in the rotated
coordinates ``u = x + y`` and ``v = y - x`` it is the axis-aligned box
``x+y-1 < u <= x+y-1+2w``, ``y-x-1 < v <= y-x-1+2h`` and covers ``2*w*h``
pixels.  Its bounding box spans columns ``x-h+1 .. x+w-1`` and rows
``y .. y+w+h-1``.
"""
from __future__ import annotations

import numpy as np


class IntegralImage:
    def __init__(self, frame):
        img = np.asarray(frame, dtype=np.int64)
        if img.ndim != 2:
            raise ValueError("integral image needs a 2-D frame")
        h, w = img.shape
        self.height, self.width = h, w
        self.upright = np.zeros((h + 1, w + 1), dtype=np.int64)
        self.upright[1:, 1:] = img.cumsum(0).cumsum(1)

        # rotated grid indexed [u + 1, v + 1 + (w - 1)], one spare row/col each side
        size = w + h + 1
        grid = np.zeros((size, size), dtype=np.int64)
        ys, xs = np.mgrid[0:h, 0:w]
        grid[xs + ys + 1, ys - xs + w] = img
        self.tilted = grid.cumsum(0).cumsum(1)
        self.tilted_size = size
        self.flat = np.concatenate([self.upright.ravel(), self.tilted.ravel()])

    @property
    def upright_stride(self) -> int:
        return self.width + 1

    @property
    def tilted_offset(self) -> int:
        return self.upright.size

    def rect_sum(self, x: int, y: int, w: int, h: int) -> int:
        t = self.upright
        return int(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])

    def _quadrant(self, u: int, v: int) -> int:
        # sum of pixels with x+y <= u and y-x <= v
        return int(self.tilted[u + 1, v + self.width])

    def tilted_sum(self, x: int, y: int, w: int, h: int) -> int:
        u0, v0 = x + y - 1, y - x - 1
        u1, v1 = u0 + 2 * w, v0 + 2 * h
        q = self._quadrant
        return q(u1, v1) - q(u0, v1) - q(u1, v0) + q(u0, v0)

    def total(self) -> int:
        return int(self.upright[-1, -1])


def rect_lookups(ii_width: int, ii_height: int, x: int, y: int, w: int, h: int, tilted: bool):
    """Flat indices into ``IntegralImage.flat`` and signs giving a rectangle sum.

    Indices are relative to a window origin of (0, 0); add
    :func:`origin_terms` to move the window.
    """
    if not tilted:
        s = ii_width + 1
        idx = [(y + h) * s + x + w, y * s + x + w, (y + h) * s + x, y * s + x]
        return np.array(idx), np.array([1, -1, -1, 1]), np.zeros(4, dtype=bool)
    size = ii_width + ii_height + 1
    off = (ii_height + 1) * (ii_width + 1)
    u0, v0 = x + y - 1, y - x - 1
    u1, v1 = u0 + 2 * w, v0 + 2 * h

    def q(u, v):
        return off + (u + 1) * size + (v + ii_width)

    idx = [q(u1, v1), q(u0, v1), q(u1, v0), q(u0, v0)]
    return np.array(idx), np.array([1, -1, -1, 1]), np.ones(4, dtype=bool)


def origin_terms(ii_width: int, ii_height: int, ox, oy):
    """Index shifts for moving a window origin to ``(ox, oy)``: (upright, tilted)."""
    ox = np.asarray(ox)
    oy = np.asarray(oy)
    size = ii_width + ii_height + 1
    return oy * (ii_width + 1) + ox, (ox + oy) * size + (oy - ox)
