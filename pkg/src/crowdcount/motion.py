"""Regions of movement: background subtraction ANDed with frame differencing,
followed by smoothing, closing, hysteresis thresholding and blob extraction.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .frames import as_frame, read_pgm, write_pgm

# integer 5x5 approximation of a Gaussian with sigma = 1.0
GAUSS_KERNEL = np.array(
    [
        [1, 4, 7, 4, 1],
        [4, 16, 26, 16, 4],
        [7, 26, 41, 26, 7],
        [4, 16, 26, 16, 4],
        [1, 4, 7, 4, 1],
    ],
    dtype=np.int64,
)
GAUSS_DIVISOR = int(GAUSS_KERNEL.sum())  # 273

FULL_3X3 = np.ones((3, 3), dtype=bool)
EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class BackgroundModel:
    mean: np.ndarray
    tolerance: float

    def save(self, path) -> None:
        """Write ``<path>`` as PGM plus a ``tolerance=<int>`` sidecar next to it."""
        path = Path(path)
        write_pgm(path, self.mean)
        path.with_suffix(".txt").write_text(f"tolerance={int(round(self.tolerance))}\n")

    @classmethod
    def load(cls, path) -> "BackgroundModel":
        path = Path(path)
        mean = read_pgm(path)
        side = path.with_suffix(".txt").read_text().strip()
        key, _, value = side.partition("=")
        if key.strip() != "tolerance":
            raise ValueError(f"{path.with_suffix('.txt')}: expected 'tolerance=<int>'")
        return cls(mean, float(int(value)))


@dataclass(frozen=True)
class Blob:
    x: int
    y: int
    w: int
    h: int
    area: int

    def contains(self, px, py) -> bool:
        return self.x <= px < self.x + self.w and self.y <= py < self.y + self.h


@dataclass
class MotionConfig:
    tolerance: float = 25.0
    diff_threshold: float = 10.0
    low: float = 64.0
    high: float = 128.0
    min_area: int = 50


def build_background(frames, tolerance: float) -> BackgroundModel:
    frames = [as_frame(f) for f in frames]
    if not frames:
        raise ValueError("build_background needs at least one frame")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ValueError("background frames differ in size")
    total = np.zeros(shape, dtype=np.int64)
    for f in frames:
        total += f
    n = len(frames)
    # round half up in exact integer arithmetic
    mean = (2 * total + n) // (2 * n)
    return BackgroundModel(mean.astype(np.uint8), tolerance)


def segment_motion(current, previous, model: BackgroundModel, diff_threshold: float) -> np.ndarray:
    cur = as_frame(current).astype(np.int16)
    prev = as_frame(previous).astype(np.int16)
    bg = model.mean.astype(np.int16)
    if not (cur.shape == prev.shape == bg.shape):
        raise ValueError(f"size mismatch: current {cur.shape}, previous {prev.shape}, background {bg.shape}")
    return (np.abs(cur - bg) > model.tolerance) & (np.abs(cur - prev) > diff_threshold)


def gaussian_blur(frame) -> np.ndarray:
    """Convolve with the 5x5 integer kernel, replicating edges; output is rounded."""
    frame = as_frame(frame)
    acc = ndimage.correlate(frame.astype(np.int64), GAUSS_KERNEL, mode="nearest")
    return ((acc + GAUSS_DIVISOR // 2) // GAUSS_DIVISOR).astype(np.uint8)


def _shift_reduce(arr: np.ndarray, se: np.ndarray, reduce, sign: int) -> np.ndarray:
    # out[p] = reduce over set se offsets b of arr[p + sign*b]; out-of-array reads as 0
    r0, c0 = se.shape[0] // 2, se.shape[1] // 2
    h, w = arr.shape
    pad = max(r0, c0)
    padded = np.zeros((h + 2 * pad, w + 2 * pad), dtype=arr.dtype)
    padded[pad:pad + h, pad:pad + w] = arr
    out = None
    for i, j in zip(*np.nonzero(se)):
        di, dj = sign * (i - r0), sign * (j - c0)
        view = padded[pad + di:pad + di + h, pad + dj:pad + dj + w]
        out = view.copy() if out is None else reduce(out, view)
    return out


def dilate(arr: np.ndarray, se: np.ndarray = FULL_3X3) -> np.ndarray:
    return _shift_reduce(arr, se, np.maximum, -1)


def erode(arr: np.ndarray, se: np.ndarray = FULL_3X3) -> np.ndarray:
    return _shift_reduce(arr, se, np.minimum, 1)


def morphological_close(mask, se: np.ndarray = FULL_3X3) -> np.ndarray:
    """Dilation then erosion by ``se``; pixels outside the frame count as clear.

    Works on boolean masks and, with max/min semantics, on grayscale frames.
    """
    se = np.asarray(se, dtype=bool)
    if se.shape[0] % 2 == 0 or se.shape[1] % 2 == 0 or not se[se.shape[0] // 2, se.shape[1] // 2]:
        raise ValueError("structuring element needs odd dimensions and a set origin")
    arr = np.asarray(mask)
    r = max(se.shape) // 2
    h, w = arr.shape
    # work on a zero border so the result matches closing of the mask on an unbounded clear plane
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=arr.dtype)
    padded[r:r + h, r:r + w] = arr
    closed = erode(dilate(padded, se), se)
    return closed[r:r + h, r:r + w]


def hysteresis_threshold(frame, low: float, high: float) -> np.ndarray:
    if not 0 <= low <= high:
        raise ValueError(f"hysteresis needs 0 <= low <= high, got low={low}, high={high}")
    frame = np.asarray(frame)
    weak = frame >= low
    labels, n = ndimage.label(weak, structure=EIGHT_CONNECTED)
    if n == 0:
        return weak
    seeded = np.zeros(n + 1, dtype=bool)
    seeded[np.unique(labels[frame >= high])] = True
    seeded[0] = False
    return seeded[labels]


def extract_blobs(mask, min_area: int = 1) -> list[Blob]:
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    if n == 0:
        return []
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    blobs = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if areas[idx] < min_area:
            continue
        ys, xs = sl
        blobs.append(Blob(xs.start, ys.start, xs.stop - xs.start, ys.stop - ys.start, int(areas[idx])))
    blobs.sort(key=lambda b: (b.y, b.x))
    return blobs


def movement_mask(current, previous, model: BackgroundModel, cfg: MotionConfig | None = None) -> np.ndarray:
    """Full chain: AND mask -> blur -> close -> hysteresis."""
    cfg = cfg or MotionConfig()
    raw = segment_motion(current, previous, model, cfg.diff_threshold)
    smoothed = gaussian_blur(raw.astype(np.uint8) * 255)
    closed = morphological_close(smoothed, FULL_3X3)
    return hysteresis_threshold(closed, cfg.low, cfg.high)


def detect_movement(current, previous, model: BackgroundModel, cfg: MotionConfig | None = None):
    cfg = cfg or MotionConfig()
    mask = movement_mask(current, previous, model, cfg)
    return mask, extract_blobs(mask, cfg.min_area)
