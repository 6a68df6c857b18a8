"""Camera-centric distance bands, perspective weights and projection correction."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import GroundPoint, TsaiCamera, back_project_to_plane

logger = logging.getLogger(__name__)


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class RegionMap:
    camera_x: float
    camera_y: float
    region_width: float = 1000.0
    region_count: int = 37

    def __post_init__(self):
        if self.region_width <= 0:
            raise ValueError("region_width must be positive")
        if self.region_count < 1:
            raise ValueError("region_count must be >= 1")

    def distances(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        return np.hypot(xy[:, 0] - self.camera_x, xy[:, 1] - self.camera_y)

    def indices(self, xy) -> np.ndarray:
        """Region index per point, ``-1`` beyond the outermost band."""
        idx = np.floor(self.distances(xy) / self.region_width).astype(int)
        idx[idx >= self.region_count] = -1
        return idx

    def region_of(self, x: float, y: float) -> int | None:
        idx = int(self.indices([(x, y)])[0])
        return None if idx < 0 else idx


def build_regions(camera_pos: GroundPoint, region_width: float = 1000.0, count: int = 37) -> RegionMap:
    return RegionMap(camera_pos.x, camera_pos.y, region_width, count)


@dataclass(frozen=True)
class HeightProfile:
    """Average person height in pixels per region; NaN where unobserved."""
    heights: np.ndarray

    def observed(self) -> np.ndarray:
        return np.flatnonzero(~np.isnan(self.heights))


@dataclass(frozen=True)
class RegionWeights:
    weights: np.ndarray

    def __getitem__(self, idx):
        return self.weights[idx]

    def __len__(self):
        return len(self.weights)


@dataclass
class ExemplarTrack:
    frames: np.ndarray
    foot_px: np.ndarray  # (N, 2) pixel positions of the feet
    height_px: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=int)
        self.foot_px = np.asarray(self.foot_px, dtype=float).reshape(-1, 2)
        self.height_px = np.asarray(self.height_px, dtype=float)
        if np.any(self.height_px <= 0):
            raise ValueError("exemplar heights must be positive")

    def __len__(self):
        return len(self.frames)

    @classmethod
    def load(cls, path) -> "ExemplarTrack":
        rows = list(csv.DictReader(open(path, newline="")))
        return cls(
            [int(r["frame"]) for r in rows],
            [(float(r["foot_x"]), float(r["foot_y"])) for r in rows],
            [float(r["height_px"]) for r in rows],
        )

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["frame", "foot_x", "foot_y", "height_px"])
            for f, (u, v), h in zip(self.frames, self.foot_px, self.height_px):
                out.writerow([int(f), f"{u:.3f}", f"{v:.3f}", f"{h:.3f}"])


def interpolate_profile(profile: HeightProfile) -> HeightProfile:
    """Fill unobserved regions: linear between observations, clamped outside them."""
    obs = profile.observed()
    if len(obs) < 2:
        raise CalibrationError(f"interpolation needs >= 2 observed regions, got {len(obs)}")
    idx = np.arange(len(profile.heights))
    return HeightProfile(np.interp(idx, obs, profile.heights[obs]))


def calibrate_weights(track: ExemplarTrack, cam: TsaiCamera, regions: RegionMap):
    """Per-region mean pixel height of the exemplar and the inverse-height weights.

    Returns ``(observed_profile, weights)``.  The region holding the world
    origin gets weight 1; regions the exemplar never visited take their
    height from :func:`interpolate_profile` before weighting.
    """
    if len(track) == 0:
        raise CalibrationError("exemplar track is empty")
    feet = back_project_to_plane(cam, track.foot_px)
    idx = regions.indices(feet)
    sums = np.zeros(regions.region_count)
    counts = np.zeros(regions.region_count)
    valid = idx >= 0
    np.add.at(sums, idx[valid], track.height_px[valid])
    np.add.at(counts, idx[valid], 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        heights = np.where(counts > 0, sums / counts, np.nan)
    profile = HeightProfile(heights)

    origin = regions.region_of(0.0, 0.0)
    if origin is None or np.isnan(heights[origin]):
        raise CalibrationError(
            "the exemplar never entered the region containing the world origin; "
            "weights cannot be normalised without it"
        )
    filled = heights if len(profile.observed()) == len(heights) else (
        interpolate_profile(profile).heights if len(profile.observed()) >= 2
        else np.full_like(heights, heights[origin])
    )
    weights = filled[origin] / filled
    weights[origin] = 1.0
    return profile, RegionWeights(weights)


def save_weights(path, profile: HeightProfile, weights: RegionWeights) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["region_index", "avg_height_px", "weight"])
        for i, (h, w) in enumerate(zip(profile.heights, weights.weights)):
            out.writerow([i, "" if np.isnan(h) else f"{h:.6f}", f"{w:.9f}"])


def load_weights(path) -> tuple[HeightProfile, RegionWeights]:
    rows = list(csv.DictReader(open(Path(path), newline="")))
    heights = np.array([float(r["avg_height_px"]) if r["avg_height_px"] else np.nan for r in rows])
    return HeightProfile(heights), RegionWeights(np.array([float(r["weight"]) for r in rows]))


def correct_corner_positions(xy, regions: RegionMap, heights_mm) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised corner correction.

    Each point slides toward the camera's ground position by half the
    region's person height, stopping at the inner edge of its own region.
    Returns ``(corrected_xy, region_index)``; points beyond the outermost
    region (index -1) are left where they are.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float)).copy()
    heights_mm = np.broadcast_to(np.asarray(heights_mm, dtype=float), (regions.region_count,))
    idx = regions.indices(xy)
    inside = idx >= 0
    if not np.any(inside):
        return xy, idx
    cam = np.array([regions.camera_x, regions.camera_y])
    dist = regions.distances(xy[inside])
    inner = idx[inside] * regions.region_width
    new_dist = np.maximum(dist - heights_mm[idx[inside]] / 2.0, inner)
    scale = np.ones_like(dist)
    nz = dist > 0
    scale[nz] = new_dist[nz] / dist[nz]
    xy[inside] = cam + (xy[inside] - cam) * scale[:, None]
    return xy, idx


def correct_corner_projection(g: GroundPoint, regions: RegionMap, profile_mm) -> GroundPoint:
    xy, idx = correct_corner_positions([(g.x, g.y)], regions, profile_mm)
    if idx[0] < 0:
        logger.warning("corner point (%.0f, %.0f) lies outside all regions; left uncorrected", g.x, g.y)
        return g
    return GroundPoint(float(xy[0, 0]), float(xy[0, 1]), g.weight, g.source, g.view_id)


def head_displacement(distance, camera_height: float, person_height: float, inverted_ratio: bool = False):
    if inverted_ratio:
        # D * hC / hP overshoots past the camera whenever hC > hP; kept for comparison runs only
        if person_height <= 0:
            raise ValueError("person height must be positive")
        return distance * camera_height / person_height
    if not 0 <= person_height < camera_height:
        raise ValueError(
            f"person height {person_height} mm must be below camera height {camera_height} mm"
        )
    return distance * person_height / camera_height


def correct_head_positions(xy, camera_pos, camera_height: float, person_height: float,
                           inverted_ratio: bool = False) -> np.ndarray:
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    cam = np.asarray(camera_pos, dtype=float)
    offset = xy - cam
    dist = np.hypot(offset[:, 0], offset[:, 1])
    d = head_displacement(dist, camera_height, person_height, inverted_ratio)
    scale = np.zeros_like(dist)
    nz = dist > 0
    scale[nz] = (dist[nz] - d[nz]) / dist[nz]
    return cam + offset * scale[:, None]


def correct_head_projection(g: GroundPoint, camera_pos: GroundPoint, camera_height: float,
                            person_height: float, inverted_ratio: bool = False) -> GroundPoint:
    """Move a ground-projected head toward the camera by ``D * hP / hC``."""
    (x, y), = correct_head_positions([(g.x, g.y)], (camera_pos.x, camera_pos.y),
                                     camera_height, person_height, inverted_ratio)
    return GroundPoint(float(x), float(y), g.weight, g.source, g.view_id)


def region_weights_for(xy, regions: RegionMap, weights: RegionWeights) -> np.ndarray:
    idx = regions.indices(xy)
    out = np.where(idx >= 0, weights.weights[np.clip(idx, 0, None)], weights.weights[-1])
    return out

