"""Sliding-window head detection inside movement blobs and merging of nearby hits."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .boost import Cascade, CascadeScanner
from .integral import IntegralImage
from .svm import normalize_samples, resample_windows

logger = logging.getLogger(__name__)

DEFAULT_SIZES = tuple(range(9, 26, 2))


@dataclass(frozen=True)
class DetectionBox:
    cx: float
    cy: float
    size: float
    confidence: float
    view_id: int = 0

    @property
    def center(self):
        return self.cx, self.cy


class CascadeDetector:
    """Adapter exposing a Haar cascade through the window-scoring interface."""

    def __init__(self, cascade: Cascade):
        self.scanner = CascadeScanner(cascade)

    def scores(self, frame, ii, ox, oy, size: int) -> np.ndarray:
        return self.scanner.scores(ii, ox, oy, size)


class RawPixelDetector:
    """Adapter for any classifier over 81-value raw-pixel samples.

    Uses ``decision_function`` when available (confidence = margin),
    otherwise falls back to calling ``decide(sample)`` once per window.
    """

    def __init__(self, classifier, batch: int = 4096):
        self.classifier = classifier
        self.batch = batch

    def scores(self, frame, ii, ox, oy, size: int) -> np.ndarray:
        out = np.zeros(len(ox))
        for s in range(0, len(ox), self.batch):
            sl = slice(s, s + self.batch)
            samples = normalize_samples(resample_windows(frame, ox[sl], oy[sl], size))
            if hasattr(self.classifier, "decision_function"):
                out[sl] = np.maximum(self.classifier.decision_function(samples), 0.0)
            else:
                out[sl] = [1.0 if self.classifier.decide(x) > 0 else 0.0 for x in samples]
        return out


def as_detector(classifier):
    if isinstance(classifier, Cascade):
        return CascadeDetector(classifier)
    if hasattr(classifier, "scores"):
        return classifier
    if hasattr(classifier, "decide") or hasattr(classifier, "decision_function"):
        return RawPixelDetector(classifier)
    raise TypeError(f"cannot use {type(classifier).__name__} as a window classifier")


def blob_centers(shape, blobs) -> np.ndarray:
    """Boolean map of pixels covered by any blob bounding box."""
    m = np.zeros(shape, dtype=bool)
    for b in blobs:
        m[b.y:b.y + b.h, b.x:b.x + b.w] = True
    return m


def sliding_window_detect(frame, blobs, classifier, sizes=DEFAULT_SIZES, step: int = 1,
                          view_id: int = 0, merge: bool = True) -> list[DetectionBox]:
    """Classify every window whose centre lies in a blob, at each odd size in ``sizes``."""
    frame = np.asarray(frame)
    if not blobs:
        return []
    detector = as_detector(classifier)
    ii = IntegralImage(frame)
    h, w = frame.shape
    centers = blob_centers(frame.shape, blobs)
    grid = np.zeros_like(centers)
    grid[::step, ::step] = True
    cy, cx = np.nonzero(centers & grid)
    hits = []
    for size in sizes:
        if size % 2 == 0:
            raise ValueError(f"window sizes must be odd so the centre is a pixel, got {size}")
        half = size // 2
        ok = (cx >= half) & (cy >= half) & (cx + half < w) & (cy + half < h)
        if not ok.any():
            continue
        sx, sy = cx[ok], cy[ok]
        conf = detector.scores(frame, ii, sx - half, sy - half, size)
        for i in np.flatnonzero(conf > 0):
            hits.append(DetectionBox(float(sx[i]), float(sy[i]), float(size), float(conf[i]), view_id))
    logger.debug("view %d: %d raw detections", view_id, len(hits))
    return merge_nearby(hits) if merge else hits


def merge_nearby(boxes) -> list[DetectionBox]:
    """Single-link clusters of boxes closer than half the larger window size.

    Each cluster becomes one box at the confidence-weighted mean centre
    with the mean size and the summed confidence.
    """
    boxes = list(boxes)
    if len(boxes) <= 1:
        return boxes
    pts = np.array([(b.cx, b.cy) for b in boxes])
    size = np.array([b.size for b in boxes])
    conf = np.array([b.confidence for b in boxes])
    pairs = cKDTree(pts).query_pairs(size.max() / 2.0, output_type="ndarray")
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        d = np.hypot(*(pts[i] - pts[j]).T)
        keep = d <= np.maximum(size[i], size[j]) / 2.0
        i, j = i[keep], j[keep]
    else:
        i = j = np.zeros(0, dtype=int)
    graph = coo_matrix((np.ones(len(i)), (i, j)), shape=(len(boxes), len(boxes)))
    _, labels = connected_components(graph, directed=False)
    out = []
    # order clusters by first member so the output is stable
    _, first = np.unique(labels, return_index=True)
    for lab in labels[np.sort(first)]:
        idx = np.flatnonzero(labels == lab)
        wts = conf[idx] if conf[idx].sum() > 0 else np.ones(len(idx))
        c = (pts[idx] * wts[:, None]).sum(0) / wts.sum()
        out.append(DetectionBox(float(c[0]), float(c[1]), float(size[idx].mean()),
                                float(conf[idx].sum()), boxes[idx[0]].view_id))
    return out
