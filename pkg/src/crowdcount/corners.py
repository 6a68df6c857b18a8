"""Harris-style corner points scored by the eigenvalue ratio lambda_min / lambda_max."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .frames import as_frame
from .motion import GAUSS_DIVISOR, GAUSS_KERNEL, Blob

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T.copy()
WINDOW = GAUSS_KERNEL / GAUSS_DIVISOR
EPS = 1e-12


@dataclass(frozen=True)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.gx, self.gy)


@dataclass(frozen=True)
class StructureTensorField:
    a: np.ndarray  # sum z * gx^2
    b: np.ndarray  # sum z * gx * gy
    c: np.ndarray  # sum z * gy^2


@dataclass(frozen=True)
class CornerPoint:
    x: int
    y: int
    score: float
    view_id: int = 0


@dataclass
class CornerConfig:
    th_d: float = 0.1
    th_g: float = 20.0
    mask_shape: str = "square"
    mask_size: int = 5

    def __post_init__(self):
        if not 0 < self.th_d < 1:
            raise ValueError(f"th_d must lie in (0, 1), got {self.th_d}")
        if self.th_g < 0:
            raise ValueError("th_g must be >= 0")
        if self.mask_shape not in ("square", "circular"):
            raise ValueError(f"mask_shape must be 'square' or 'circular', got {self.mask_shape!r}")
        if self.mask_size not in (3, 5, 7):
            raise ValueError(f"mask_size must be 3, 5 or 7, got {self.mask_size}")


def sobel_gradients(frame) -> GradientField:
    frame = as_frame(frame)
    if frame.shape[0] < 3 or frame.shape[1] < 3:
        raise ValueError(f"frame {frame.shape} too small for 3x3 Sobel")
    f = frame.astype(np.float64)
    return GradientField(
        ndimage.correlate(f, SOBEL_X, mode="nearest"),
        ndimage.correlate(f, SOBEL_Y, mode="nearest"),
    )


def structure_tensor(grads: GradientField) -> StructureTensorField:
    gx, gy = grads.gx, grads.gy

    def window_sum(v):
        return ndimage.correlate(v, WINDOW, mode="nearest")

    return StructureTensorField(window_sum(gx * gx), window_sum(gx * gy), window_sum(gy * gy))


def eigenvalues(tensor: StructureTensorField) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form (lambda_min, lambda_max) of each symmetric 2x2 matrix [[a, b], [b, c]]."""
    a, b, c = tensor.a, tensor.b, tensor.c
    half_trace = 0.5 * (a + c)
    radius = np.hypot(0.5 * (a - c), b)
    return half_trace - radius, half_trace + radius


def corner_discriminant(tensor: StructureTensorField) -> np.ndarray:
    lmin, lmax = eigenvalues(tensor)
    score = np.zeros_like(lmax)
    ok = lmax > EPS
    score[ok] = lmin[ok] / lmax[ok]
    return np.clip(score, 0.0, 1.0)


def strict_local_maxima(score: np.ndarray) -> np.ndarray:
    """True where a pixel exceeds all of its in-frame 8-neighbours."""
    h, w = score.shape
    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = score
    out = np.ones(score.shape, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                out &= score > padded[1 + di:1 + di + h, 1 + dj:1 + dj + w]
    return out


def suppression_offsets(shape: str, size: int) -> np.ndarray:
    r = size // 2
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    if shape == "circular":
        keep = dx * dx + dy * dy <= r * r
        dy, dx = dy[keep], dx[keep]
    return np.stack([dy.ravel(), dx.ravel()], axis=1)


def blob_mask(shape, blobs) -> np.ndarray:
    inside = np.zeros(shape, dtype=bool)
    for b in blobs:
        inside[b.y:b.y + b.h, b.x:b.x + b.w] = True
    return inside


def windowed_gradient(tensor: StructureTensorField) -> np.ndarray:
    """Gaussian-window RMS gradient magnitude, sqrt(a + c), used for the gradient test."""
    return np.sqrt(np.maximum(tensor.a + tensor.c, 0.0))


def score_maps(frame) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel discriminant and windowed gradient magnitude."""
    tensor = structure_tensor(sobel_gradients(frame))
    return corner_discriminant(tensor), windowed_gradient(tensor)


def select_corners(score, magnitude, candidates, cfg: CornerConfig, view_id: int = 0) -> list[CornerPoint]:
    """Threshold, local-maximum and minimum-distance selection over a candidate mask."""
    keep = candidates & strict_local_maxima(score) & (score > cfg.th_d) & (magnitude > cfg.th_g)
    ys, xs = np.nonzero(keep)
    if ys.size == 0:
        return []
    vals = score[ys, xs]
    # descending score, ties broken by (y, x)
    order = np.lexsort((xs, ys, -vals))
    h, w = score.shape
    blocked = np.zeros((h, w), dtype=bool)
    offsets = suppression_offsets(cfg.mask_shape, cfg.mask_size)
    out = []
    for k in order:
        y, x = int(ys[k]), int(xs[k])
        if blocked[y, x]:
            continue
        out.append(CornerPoint(x, y, float(vals[k]), view_id))
        oy, ox = offsets[:, 0] + y, offsets[:, 1] + x
        ok = (oy >= 0) & (oy < h) & (ox >= 0) & (ox < w)
        blocked[oy[ok], ox[ok]] = True
    return out


def detect_corners(frame, blobs: list[Blob], cfg: CornerConfig | None = None, view_id: int = 0) -> list[CornerPoint]:
    cfg = cfg or CornerConfig()
    frame = as_frame(frame)
    if not blobs:
        return []
    score, magnitude = score_maps(frame)
    return select_corners(score, magnitude, blob_mask(frame.shape, blobs), cfg, view_id)


def write_corners_csv(path, rows) -> None:
    """``rows`` is an iterable of (frame_index, CornerPoint)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["frame", "view", "x", "y", "score"])
        for frame_index, cp in rows:
            out.writerow([frame_index, cp.view_id, cp.x, cp.y, f"{cp.score:.6f}"])
