"""End-to-end orchestration: frames -> movement -> corners/heads -> ground plane -> counts."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corners import CornerConfig, detect_corners
from .counting import (
    AcppModel, CountReport, FrameObservation, HeadPoint, accumulate_observation,
    calibrate_acpp, correspond_heads, estimate_single_view, fuse_corner_counts,
)
from .geometry import GroundPlaneSpec, TsaiCamera, back_project_to_plane, camera_ground_position
from .ground import (
    ExemplarTrack, HeightProfile, RegionMap, RegionWeights, build_regions, calibrate_weights,
    correct_corner_positions, correct_head_positions,
)
from .heads.detect import sliding_window_detect
from .motion import BackgroundModel, MotionConfig, detect_movement

logger = logging.getLogger(__name__)


@dataclass
class ViewContext:
    """Everything needed to turn one view's frames into ground-plane evidence."""
    view_id: int
    camera: TsaiCamera
    background: BackgroundModel
    regions: RegionMap
    weights: RegionWeights
    profile: HeightProfile | None = None

    @property
    def camera_xy(self) -> np.ndarray:
        return np.array([self.regions.camera_x, self.regions.camera_y])

    @property
    def camera_height(self) -> float:
        return camera_ground_position(self.camera, self.view_id)[1]


def prepare_view(view_id: int, camera: TsaiCamera, background: BackgroundModel, exemplar: ExemplarTrack | None,
                 region_width: float = 1000.0, region_count: int = 37, use_weights: bool = True) -> ViewContext:
    """Regions around the camera's ground position and, given an exemplar, their weights."""
    cam_pos, _ = camera_ground_position(camera, view_id)
    regions = build_regions(cam_pos, region_width, region_count)
    if exemplar is None or not use_weights:
        return ViewContext(view_id, camera, background, regions, RegionWeights(np.ones(region_count)))
    profile, weights = calibrate_weights(exemplar, camera, regions)
    return ViewContext(view_id, camera, background, regions, weights, profile)


@dataclass
class CountingParams:
    motion: MotionConfig = None
    corners: CornerConfig = None
    person_height: float = 1750.0
    correct: bool = True
    inverted_head_ratio: bool = False

    def __post_init__(self):
        self.motion = self.motion or MotionConfig()
        self.corners = self.corners or CornerConfig()


def corner_ground_points(ctx: ViewContext, frame, previous, params: CountingParams):
    """Corrected ground positions (N, 2) of the corners found in the moving regions."""
    _, blobs = detect_movement(frame, previous, ctx.background, params.motion)
    corners = detect_corners(frame, blobs, params.corners, ctx.view_id)
    if not corners:
        return np.zeros((0, 2))
    px = np.array([(c.x, c.y) for c in corners], dtype=float)
    xy = back_project_to_plane(ctx.camera, px)
    if params.correct:
        xy, _ = correct_corner_positions(xy, ctx.regions, params.person_height)
    return xy


def observe_view(ctx: ViewContext, frames, params: CountingParams, frame_ids=None) -> list[FrameObservation]:
    """Observations for every frame after the first (each needs its predecessor)."""
    frames = list(frames)
    frame_ids = list(frame_ids) if frame_ids is not None else list(range(len(frames)))
    out = []
    for k in range(1, len(frames)):
        xy = corner_ground_points(ctx, frames[k], frames[k - 1], params)
        out.append(accumulate_observation(xy, ctx.regions, ctx.weights, frame_ids[k], ctx.view_id))
    return out


def calibrate_views(contexts, frames_per_view, gt_per_view, params: CountingParams) -> dict:
    """Per-view ACPP from a training sequence; ``gt_per_view[v]`` maps frame -> count."""
    models = {}
    for ctx in contexts:
        obs = observe_view(ctx, frames_per_view[ctx.view_id], params)
        models[ctx.view_id] = calibrate_acpp(obs, gt_per_view[ctx.view_id])
        logger.info("view %d: ACPP %.3f over %d frames", ctx.view_id, models[ctx.view_id].acpp,
                    models[ctx.view_id].frames)
    return models


def fused_training_acpp(contexts, frames_per_view, scene_gt, params: CountingParams, rule: str) -> AcppModel:
    """Scene ACPP fitted directly on fused training tallies."""
    per_view = [observe_view(ctx, frames_per_view[ctx.view_id], params) for ctx in contexts]
    fused = []
    for obs in zip(*per_view):
        unit = AcppModel(1.0)
        total = fuse_corner_counts(obs, rule, unit)
        fused.append(FrameObservation(obs[0].frame, -1, [total]))
    return calibrate_acpp(fused, scene_gt)


def count_sequence(contexts, frames_per_view, view_models: dict, scene_model: AcppModel, rule: str,
                   scene_gt: dict, params: CountingParams, observations=None) -> CountReport:
    """Per-view and fused estimates for every frame after the first."""
    per_view = observations or {ctx.view_id: observe_view(ctx, frames_per_view[ctx.view_id], params)
                                for ctx in contexts}
    views = sorted(per_view)
    n = {len(per_view[v]) for v in views}
    if len(n) != 1:
        raise ValueError(f"views are not synchronised: frame counts {sorted(n)}")
    frames = [o.frame for o in per_view[views[0]]]
    est = {v: [estimate_single_view(o, view_models[v]) for o in per_view[v]] for v in views}
    fused = [fuse_corner_counts([per_view[v][k] for v in views], rule, scene_model) for k in range(len(frames))]
    if len(views) == 1:
        fused = est[views[0]]
    gt = [scene_gt[f] for f in frames]
    return CountReport(frames, est, fused, gt, rule)


def head_points(ctx: ViewContext, frame, previous, classifier, params: CountingParams,
                sizes=None, frame_id: int = 0) -> list[HeadPoint]:
    """Detected heads of one frame, projected and moved back over the feet."""
    _, blobs = detect_movement(frame, previous, ctx.background, params.motion)
    kw = {} if sizes is None else {"sizes": sizes}
    boxes = sliding_window_detect(frame, blobs, classifier, view_id=ctx.view_id, **kw)
    if not boxes:
        return []
    xy = back_project_to_plane(ctx.camera, [(b.cx, b.cy) for b in boxes])
    if params.correct:
        xy = correct_head_positions(xy, ctx.camera_xy, ctx.camera_height, params.person_height,
                                    params.inverted_head_ratio)
    return [HeadPoint(float(x), float(y), ctx.view_id, frame_id) for x, y in xy]


def count_heads_sequence(contexts, frames_per_view, classifier, scene_gt: dict, params: CountingParams,
                         zones=None, max_mask: int = 9, plane: GroundPlaneSpec | None = None,
                         sizes=None) -> CountReport:
    views = [ctx.view_id for ctx in contexts]
    lengths = {len(frames_per_view[v]) for v in views}
    if len(lengths) != 1:
        raise ValueError(f"views are not synchronised: frame counts {sorted(lengths)}")
    n = lengths.pop()
    per_view = {v: [] for v in views}
    fused = []
    for k in range(1, n):
        pts = []
        for ctx in contexts:
            f = frames_per_view[ctx.view_id]
            p = head_points(ctx, f[k], f[k - 1], classifier, params, sizes, k)
            per_view[ctx.view_id].append(len(p))
            pts.extend(p)
        fused.append(len(correspond_heads(pts, max_mask, zones, plane, n_views=len(views))))
    frames = list(range(1, n))
    return CountReport(frames, per_view, fused, [scene_gt[f] for f in frames], "heads")
