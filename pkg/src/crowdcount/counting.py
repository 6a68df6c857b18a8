"""Corner-count calibration, per-view estimates, cross-view fusion, head correspondence and scoring."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import GroundPlaneSpec, ground_to_plane_pixels
from .ground import RegionMap, RegionWeights

logger = logging.getLogger(__name__)

FUSION_RULES = ("max", "min", "avg")


@dataclass
class FrameObservation:
    """Weighted corner tallies of one view in one frame.

    ``overflow`` holds points beyond the outermost region, weighted like
    the outermost region; ``overflow_points`` records how many there were.
    """
    frame: int
    view_id: int
    tallies: np.ndarray
    overflow: float = 0.0
    overflow_points: int = 0

    def __post_init__(self):
        self.tallies = np.asarray(self.tallies, dtype=float)
        if np.any(self.tallies < 0) or self.overflow < 0:
            raise ValueError("corner tallies must be non-negative")

    @property
    def slots(self) -> np.ndarray:
        """Region tallies with the overflow bucket appended."""
        return np.append(self.tallies, self.overflow)

    @property
    def total(self) -> float:
        return float(self.tallies.sum() + self.overflow)


def accumulate_observation(points, regions: RegionMap, weights: RegionWeights,
                           frame: int = 0, view_id: int = 0) -> FrameObservation:
    """Per-region sum of region weights over the (corrected) ground points."""
    if not isinstance(points, np.ndarray):
        points = [(p.x, p.y) if hasattr(p, "x") else p for p in points]
    xy = np.asarray(points, dtype=float).reshape(-1, 2)
    w = np.asarray(weights.weights, dtype=float)
    if len(w) != regions.region_count:
        raise ValueError(f"{len(w)} weights for {regions.region_count} regions")
    tallies = np.zeros(regions.region_count)
    if len(xy) == 0:
        return FrameObservation(frame, view_id, tallies)
    idx = regions.indices(xy)
    inside = idx >= 0
    np.add.at(tallies, idx[inside], w[idx[inside]])
    n_out = int((~inside).sum())
    if n_out:
        logger.debug("frame %d view %d: %d corner points beyond the outermost region", frame, view_id, n_out)
    return FrameObservation(frame, view_id, tallies, n_out * float(w[-1]), n_out)


@dataclass(frozen=True)
class AcppModel:
    acpp: float
    views: tuple = ()
    frames: int = 0

    def __post_init__(self):
        if not self.acpp > 0:
            raise ValueError(f"ACPP must be positive, got {self.acpp}")

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"acpp = {float(self.acpp)!r}\n")
            fh.write(f"views = {','.join(str(v) for v in self.views)}\n")
            fh.write(f"frames = {self.frames}\n")

    @classmethod
    def load(cls, path) -> "AcppModel":
        vals = {}
        for line in open(path):
            if "=" in line and not line.lstrip().startswith("#"):
                k, v = line.split("=", 1)
                vals[k.strip()] = v.strip()
        views = tuple(int(v) for v in vals.get("views", "").split(",") if v)
        return cls(float(vals["acpp"]), views, int(vals.get("frames", 0)))


def calibrate_acpp(observations, gt) -> AcppModel:
    """Mean over training frames of weighted corner total divided by true count.

    ``gt`` is a sequence aligned with ``observations`` or a mapping from
    frame index to count.  Frames with no people are skipped.
    """
    observations = list(observations)
    if isinstance(gt, dict):
        counts = [gt[o.frame] for o in observations]
    else:
        counts = list(gt)
        if len(counts) != len(observations):
            raise ValueError(f"{len(observations)} observations but {len(counts)} ground-truth counts")
    ratios = []
    skipped = 0
    for o, n in zip(observations, counts):
        if n <= 0:
            skipped += 1
            continue
        ratios.append(o.total / n)
    if skipped:
        logger.warning("ACPP calibration skipped %d frame(s) with zero people", skipped)
    if not ratios:
        raise ValueError("no training frame with people; ACPP is undefined")
    views = tuple(sorted({o.view_id for o in observations}))
    return AcppModel(float(np.mean(ratios)), views, len(ratios))


def scene_acpp(models, policy: str = "mean") -> AcppModel:
    """Single ACPP used to divide fused tallies, from the per-view models."""
    models = list(models)
    if not models:
        raise ValueError("no per-view ACPP models")
    vals = np.array([m.acpp for m in models])
    pick = {"mean": np.mean, "min": np.min, "max": np.max, "median": np.median}
    if policy not in pick:
        raise ValueError(f"unknown scene ACPP policy {policy!r}")
    views = tuple(sorted({v for m in models for v in m.views}))
    return AcppModel(float(pick[policy](vals)), views, sum(m.frames for m in models))


def estimate_single_view(obs: FrameObservation, model: AcppModel) -> float:
    return obs.total / model.acpp


def combine_tallies(stack: np.ndarray, rule: str) -> np.ndarray:
    if rule == "max":
        return stack.max(axis=0)
    if rule == "min":
        return stack.min(axis=0)
    if rule == "avg":
        return stack.mean(axis=0)
    raise ValueError(f"unknown fusion rule {rule!r}; expected one of {FUSION_RULES}")


def fuse_corner_counts(observations, rule: str, model: AcppModel) -> float:
    """Combine views region by region with ``rule``, sum regions, divide by ACPP."""
    observations = list(observations)
    if not observations:
        raise ValueError("fusion needs at least one view")
    lengths = {len(o.tallies) for o in observations}
    if len(lengths) != 1:
        raise ValueError("observations use different region structures")
    if len(observations) == 1:
        return estimate_single_view(observations[0], model)
    stack = np.stack([o.slots for o in observations])
    return float(combine_tallies(stack, rule).sum() / model.acpp)


@dataclass(frozen=True)
class HeadPoint:
    x: float
    y: float
    view_id: int = 0
    frame: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError("head point coordinates must be finite")


def _in_zones(x: float, y: float, zones) -> bool:
    if not zones:
        return False
    from shapely.geometry import Point

    p = Point(x, y)
    return any(z.covers(p) for z in zones)


def as_polygons(zones):
    """Accept shapely geometries or plain vertex lists (ground mm)."""
    from shapely.geometry import Polygon
    from shapely.geometry.base import BaseGeometry

    return [z if isinstance(z, BaseGeometry) else Polygon(z) for z in (zones or [])]


def correspond_heads(points, max_mask: int = 9, single_view_zones=None,
                     plane: GroundPlaneSpec | None = None, n_views: int | None = None) -> list[HeadPoint]:
    """Greedy cross-view pairing of ground-plane head points.

    Views are visited in ascending id and their points in ascending plane
    position.  Around each unmatched point a square mask of 3, 5, ... up to
    ``max_mask`` plane pixels looks for the first unmatched point of every
    later view; matched points are replaced by their mean.  Points without
    a partner survive only inside ``single_view_zones``.  With a single
    view there is nothing to corroborate and every point is kept.
    """
    points = list(points)
    if not points:
        return []
    plane = plane or GroundPlaneSpec()
    zones = as_polygons(single_view_zones)
    xy = np.array([(p.x, p.y) for p in points])
    pix = np.rint(ground_to_plane_pixels(plane, xy)).astype(int)
    views = sorted({p.view_id for p in points})
    if n_views is None:
        n_views = len(views)
    order = {v: sorted((i for i, p in enumerate(points) if p.view_id == v),
                       key=lambda i: (pix[i, 1], pix[i, 0])) for v in views}
    used = np.zeros(len(points), dtype=bool)
    masks = list(range(3, max_mask + 1, 2)) or [max_mask]
    fused = []
    for vi, v in enumerate(views):
        for i in order[v]:
            if used[i]:
                continue
            used[i] = True
            group = [i]
            for w in views[vi + 1:]:
                partner = None
                for m in masks:
                    r = m // 2
                    for j in order[w]:
                        if not used[j] and abs(pix[j, 0] - pix[i, 0]) <= r and abs(pix[j, 1] - pix[i, 1]) <= r:
                            partner = j
                            break
                    if partner is not None:
                        break
                if partner is not None:
                    used[partner] = True
                    group.append(partner)
            p = points[i]
            if len(group) > 1:
                mx, my = xy[group].mean(axis=0)
                fused.append(HeadPoint(float(mx), float(my), p.view_id, p.frame))
            elif n_views == 1 or _in_zones(p.x, p.y, zones):
                fused.append(p)
    return fused


def count_heads(fused) -> int:
    return len(list(fused))


def aepf(estimates, gt, signed: bool = False) -> float:
    """Average error per frame; ``signed`` lets over- and under-counts cancel."""
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(gt, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"{est.size} estimates for {ref.size} ground-truth frames")
    if est.size == 0:
        raise ValueError("no frames to score")
    err = est - ref
    return float(np.mean(err if signed else np.abs(err)))


@dataclass
class CountReport:
    frames: np.ndarray
    view_estimates: dict  # view id -> per-frame estimates
    fused: np.ndarray
    gt: np.ndarray
    rule: str = "avg"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=int)
        self.fused = np.asarray(self.fused, dtype=float)
        self.gt = np.asarray(self.gt, dtype=float)
        self.view_estimates = {int(k): np.asarray(v, dtype=float) for k, v in self.view_estimates.items()}

    @property
    def aepf(self) -> float:
        return aepf(self.fused, self.gt)

    def view_aepf(self, view_id: int, gt=None) -> float:
        return aepf(self.view_estimates[view_id], self.gt if gt is None else gt)

    def write_csv(self, path) -> None:
        views = sorted(self.view_estimates)
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["frame"] + [f"view{v}_est" for v in views] + ["fused_est", "gt", "abs_err"])
            for k, f in enumerate(self.frames):
                row = [int(f)] + [f"{self.view_estimates[v][k]:.4f}" for v in views]
                row += [f"{self.fused[k]:.4f}", f"{self.gt[k]:g}", f"{abs(self.fused[k] - self.gt[k]):.4f}"]
                out.writerow(row)
            fh.write(f"# rule={self.rule} AepF={self.aepf:.6f}\n")

    @classmethod
    def read_csv(cls, path) -> "CountReport":
        lines = [l for l in open(path) if not l.startswith("#")]
        rows = list(csv.DictReader(lines))
        views = [int(k[4:-4]) for k in rows[0] if k.startswith("view") and k.endswith("_est")] if rows else []
        rule = "avg"
        for l in open(path):
            if l.startswith("# rule="):
                rule = l.split()[1].split("=")[1]
        return cls(
            [int(r["frame"]) for r in rows],
            {v: [float(r[f"view{v}_est"]) for r in rows] for v in views},
            [float(r["fused_est"]) for r in rows],
            [float(r["gt"]) for r in rows],
            rule,
        )


def read_ground_truth(path) -> dict:
    """``frame,count`` CSV to a frame -> count mapping."""
    with open(path, newline="") as fh:
        return {int(r["frame"]): int(float(r["count"])) for r in csv.DictReader(fh)}


def write_ground_truth(path, counts: dict) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["frame", "count"])
        for f in sorted(counts):
            out.writerow([f, counts[f]])
