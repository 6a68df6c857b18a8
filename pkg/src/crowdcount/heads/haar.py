"""The fourteen Haar-like prototypes: 4 edge, 8 line and 2 center-surround.

Each feature is a ``whole`` rectangle with one ``black`` sub-rectangle; the
white part is the rest.  The response is the mean intensity of the white
part minus the mean of the black part, so it does not depend on the scale
of the feature and ignores additive intensity shifts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .integral import IntegralImage, origin_terms, rect_lookups

# id -> (name, tilted, whole size in units, black rect (ux, uy, uw, uh) in units)
PROTOTYPES = {
    1: ("edge_x", False, (2, 1), (1, 0, 1, 1)),
    2: ("edge_y", False, (1, 2), (0, 1, 1, 1)),
    3: ("edge_x_tilted", True, (2, 1), (1, 0, 1, 1)),
    4: ("edge_y_tilted", True, (1, 2), (0, 1, 1, 1)),
    5: ("line_x3", False, (3, 1), (1, 0, 1, 1)),
    6: ("line_x4", False, (4, 1), (1, 0, 2, 1)),
    7: ("line_y3", False, (1, 3), (0, 1, 1, 1)),
    8: ("line_y4", False, (1, 4), (0, 1, 1, 2)),
    9: ("line_x3_tilted", True, (3, 1), (1, 0, 1, 1)),
    10: ("line_x4_tilted", True, (4, 1), (1, 0, 2, 1)),
    11: ("line_y3_tilted", True, (1, 3), (0, 1, 1, 1)),
    12: ("line_y4_tilted", True, (1, 4), (0, 1, 1, 2)),
    13: ("center_surround", False, (3, 3), (1, 1, 1, 1)),
    14: ("center_surround_tilted", True, (3, 3), (1, 1, 1, 1)),
}


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class HaarFeature:
    """Prototype placed at ``(x, y)`` (top-left, or top pixel when tilted) with unit size ``w x h``."""
    proto: int
    x: int
    y: int
    w: int
    h: int

    @property
    def tilted(self) -> bool:
        return PROTOTYPES[self.proto][1]

    def rects(self):
        """``(whole, black)`` rectangles as ``(x, y, w, h)`` in window pixels."""
        _, tilted, (mw, mh), (bx, by, bw, bh) = PROTOTYPES[self.proto]
        whole = (self.x, self.y, mw * self.w, mh * self.h)
        a, b = bx * self.w, by * self.h
        if tilted:
            black = (self.x + a - b, self.y + a + b, bw * self.w, bh * self.h)
        else:
            black = (self.x + a, self.y + b, bw * self.w, bh * self.h)
        return whole, black

    def bbox(self):
        """``(col0, row0, col1, row1)`` inclusive pixel bounds."""
        (x, y, w, h), _ = self.rects()
        if self.tilted:
            return x - h + 1, y, x + w - 1, y + w + h - 1
        return x, y, x + w - 1, y + h - 1

    def fits(self, size: int) -> bool:
        c0, r0, c1, r1 = self.bbox()
        return c0 >= 0 and r0 >= 0 and c1 < size and r1 < size

    def areas(self) -> tuple[int, int]:
        (_, _, ww, wh), (_, _, bw, bh) = self.rects()
        k = 2 if self.tilted else 1
        return k * (ww * wh - bw * bh), k * bw * bh

    def scaled(self, scale: float, size: int) -> "HaarFeature":
        """Feature enlarged by ``scale`` and nudged to fit a ``size`` window."""
        if scale == 1.0:
            if not self.fits(size):
                raise FeatureError(f"{self} exceeds a {size}x{size} window")
            return self
        w = max(1, int(math.floor(self.w * scale)))
        h = max(1, int(math.floor(self.h * scale)))
        f = HaarFeature(self.proto, int(math.floor(self.x * scale)), int(math.floor(self.y * scale)), w, h)
        c0, r0, c1, r1 = f.bbox()
        if c1 - c0 + 1 > size or r1 - r0 + 1 > size:
            raise FeatureError(f"{self} scaled by {scale:.3f} exceeds a {size}x{size} window")
        dx = -c0 if c0 < 0 else min(0, size - 1 - c1)
        dy = -r0 if r0 < 0 else min(0, size - 1 - r1)
        return HaarFeature(f.proto, f.x + dx, f.y + dy, w, h)


def enumerate_features(size: int = 9, stride: int = 1, protos=None) -> list[HaarFeature]:
    protos = protos or sorted(PROTOTYPES)
    out = []
    for p in protos:
        _, tilted, (mw, mh), _ = PROTOTYPES[p]
        for w in range(1, size + 1):
            for h in range(1, size + 1):
                if tilted:
                    if mw * w + mh * h > size:
                        continue
                elif mw * w > size or mh * h > size:
                    continue
                for y in range(0, size, stride):
                    for x in range(0, size, stride):
                        f = HaarFeature(p, x, y, w, h)
                        if f.fits(size):
                            out.append(f)
    return out


def compile_feature(f: HaarFeature, ii_width: int, ii_height: int):
    """Linear lookup form ``(indices, coeffs, tilted_flags)`` of the response."""
    whole, black = f.rects()
    a_white, a_black = f.areas()
    iw, cw, tw = rect_lookups(ii_width, ii_height, *whole, f.tilted)
    ib, cb, tb = rect_lookups(ii_width, ii_height, *black, f.tilted)
    # (S_whole - S_black) / A_white - S_black / A_black
    coeffs = np.concatenate([cw / a_white, -cb * (1.0 / a_white + 1.0 / a_black)])
    return np.concatenate([iw, ib]), coeffs, np.concatenate([tw, tb])


def eval_haar(f: HaarFeature, ii: IntegralImage, origin=(0, 0), size: int | None = None,
              base_size: int = 9) -> float:
    """Response of ``f`` (defined on a ``base_size`` window) in the window at ``origin``."""
    size = size or base_size
    g = f.scaled(size / base_size, size)
    ox, oy = origin
    if ox < 0 or oy < 0 or ox + size > ii.width or oy + size > ii.height:
        raise FeatureError("window lies outside the image")
    (x, y, w, h), (bx, by, bw, bh) = g.rects()
    a_white, a_black = g.areas()
    rsum = ii.tilted_sum if g.tilted else ii.rect_sum
    s_whole = rsum(x + ox, y + oy, w, h)
    s_black = rsum(bx + ox, by + oy, bw, bh)
    return (s_whole - s_black) / a_white - s_black / a_black


class FeatureBank:
    """Vectorised evaluation of many features over many windows of one image."""

    def __init__(self, features, ii_width: int, ii_height: int, scale: float = 1.0, size: int = 9):
        self.features = list(features)
        self.ii_width, self.ii_height = ii_width, ii_height
        parts = [compile_feature(f.scaled(scale, size), ii_width, ii_height) for f in self.features]
        n = len(parts)
        k = max((len(p[0]) for p in parts), default=8)
        self.index = np.zeros((n, k), dtype=np.int64)
        self.coeff = np.zeros((n, k))
        self.tilted = np.zeros((n, k), dtype=bool)
        for i, (idx, c, t) in enumerate(parts):
            self.index[i, :len(idx)] = idx
            self.coeff[i, :len(idx)] = c
            self.tilted[i, :len(idx)] = t

    def responses(self, ii: IntegralImage, ox, oy) -> np.ndarray:
        """(n_features, n_windows) responses for windows at origins ``(ox, oy)``."""
        up, tl = origin_terms(self.ii_width, self.ii_height, np.atleast_1d(ox), np.atleast_1d(oy))
        shift = np.where(self.tilted[:, :, None], tl[None, None, :], up[None, None, :])
        vals = ii.flat[self.index[:, :, None] + shift]
        return np.einsum("fk,fkw->fw", self.coeff, vals)

    def matrix(self) -> np.ndarray:
        """Dense (n_features, table_length) map from a flattened integral table to responses."""
        length = (self.ii_height + 1) * (self.ii_width + 1) + (self.ii_width + self.ii_height + 1) ** 2
        m = np.zeros((len(self.features), length))
        rows = np.repeat(np.arange(len(self.features)), self.index.shape[1])
        np.add.at(m, (rows, self.index.ravel()), self.coeff.ravel())
        return m


def window_responses(windows, features, size: int = 9) -> np.ndarray:
    """(n_windows, n_features) responses for a stack of ``size x size`` windows."""
    windows = np.asarray(windows)
    tables = np.stack([IntegralImage(w).flat for w in windows]).astype(np.float64)
    bank = FeatureBank(features, size, size)
    return tables @ bank.matrix().T
