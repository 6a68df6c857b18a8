"""Calibrated multi-view synthetic crowds with exact ground truth.

People are vertical billboards facing each camera: a textured ellipse for
the body with a darker disc for the head, whose centre sits at the
person's height above the foot point.  Every pixel is rendered by casting
its ray through the Tsai model onto the billboard, so geometry and
occlusion follow the same camera model as the counting pipeline.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import GeometryError, TsaiCamera, pixel_rays, project_points

logger = logging.getLogger(__name__)

TEXTURE_CELL_MM = 120.0
HEAD_GRAY = 28


@dataclass
class Agent:
    id: int
    trajectory: np.ndarray  # (frames, 2) foot position in mm
    height: float = 1750.0  # height of the head centre above the ground
    width: float = 520.0
    texture_seed: int = 0
    head_radius: float = 110.0

    def __post_init__(self):
        self.trajectory = np.asarray(self.trajectory, dtype=float).reshape(-1, 2)
        if not 1500 <= self.height <= 2000:
            raise ValueError(f"agent height {self.height} mm outside [1500, 2000]")
        if len(self.trajectory) > 1:
            step = np.hypot(*np.diff(self.trajectory, axis=0).T).max()
            if step > 2000:
                raise ValueError(f"agent {self.id} jumps {step:.0f} mm between frames")

    def texture(self) -> np.ndarray:
        """Blocky body texture indexed [row from the ground, column across]."""
        rng = np.random.default_rng(self.texture_seed)
        rows = int(np.ceil(self.height / TEXTURE_CELL_MM)) + 1
        cols = int(np.ceil(self.width / TEXTURE_CELL_MM)) + 1
        dark = rng.integers(45, 90, size=(rows, cols))
        bright = rng.integers(170, 235, size=(rows, cols))
        return np.where(rng.random((rows, cols)) < 0.5, dark, bright)


@dataclass
class SyntheticScene:
    cameras: list
    agents: list
    frames: int
    width: int = 384
    height: int = 288
    background_seed: int = 0
    noise_sigma: float = 1.5
    background_amplitude: float = 6.0
    area: tuple = (-3500.0, -2500.0, 3500.0, 3500.0)  # xmin, ymin, xmax, ymax of the walk area

    def __post_init__(self):
        if not self.cameras:
            raise ValueError("a scene needs at least one camera")
        xmin, ymin, xmax, ymax = self.area
        for a in self.agents:
            t = a.trajectory
            if len(t) != self.frames:
                raise ValueError(f"agent {a.id} has {len(t)} positions for {self.frames} frames")
            if np.any(t[:, 0] < xmin - 1) or np.any(t[:, 0] > xmax + 1) or \
                    np.any(t[:, 1] < ymin - 1) or np.any(t[:, 1] > ymax + 1):
                raise ValueError(f"agent {a.id} leaves the walk area")


@dataclass
class SceneTruth:
    visible: np.ndarray  # (frames, views, agents) bool
    head_px: np.ndarray  # (frames, views, agents, 2), NaN when not projectable
    foot: np.ndarray  # (frames, agents, 2) mm
    unseen: np.ndarray = field(default=None)  # (frames, agents) present but visible in no view

    def __post_init__(self):
        if self.unseen is None:
            self.unseen = ~self.visible.any(axis=1)

    @property
    def view_counts(self) -> np.ndarray:
        """(frames, views) number of people visible per view."""
        return self.visible.sum(axis=2)

    @property
    def scene_counts(self) -> np.ndarray:
        """Size of the union of the per-view visible sets."""
        return self.visible.any(axis=1).sum(axis=1)


def background_image(scene: SyntheticScene, view: int) -> np.ndarray:
    rng = np.random.default_rng([scene.background_seed, view])
    noise = ndimage.gaussian_filter(rng.normal(size=(scene.height, scene.width)), 2.0)
    noise *= scene.background_amplitude / max(noise.std(), 1e-9)
    ramp = np.linspace(-10, 10, scene.height)[:, None]
    return 120.0 + ramp + noise


def _silhouette(cam: TsaiCamera, agent: Agent, foot, width: int, height: int, texture):
    """Pixels covered by one billboard: (rows, cols, values, is_head, full_area)."""
    center = cam.center
    foot3 = np.array([foot[0], foot[1], 0.0])
    normal = center - foot3
    normal[2] = 0.0
    n = np.linalg.norm(normal)
    if n < 1e-6:
        return None
    normal /= n
    side = np.array([-normal[1], normal[0], 0.0])
    half_w = agent.width / 2.0
    top = agent.height + agent.head_radius
    corners = [foot3 + s * half_w * side + np.array([0, 0, z]) for s in (-1, 1) for z in (0.0, top)]
    try:
        px = project_points(cam, corners)
    except GeometryError:
        return None
    u0, v0 = np.floor(px.min(axis=0)).astype(int) - 2
    u1, v1 = np.ceil(px.max(axis=0)).astype(int) + 2
    if u1 < 0 or v1 < 0 or u0 >= width or v0 >= height:
        return None
    if (u1 - u0) * (v1 - v0) > 4 * width * height:
        return None
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    uu, vv = uu.ravel(), vv.ravel()
    origin, dirs = pixel_rays(cam, np.stack([uu, vv], axis=1).astype(float))
    denom = dirs @ normal
    ok = np.abs(denom) > 1e-12
    t = np.zeros_like(denom)
    t[ok] = ((foot3 - origin) @ normal) / denom[ok]
    ok &= t > 0
    hit = origin + t[:, None] * dirs
    s = (hit - foot3) @ side
    z = hit[:, 2]
    r = agent.head_radius
    head = ok & (s * s + (z - agent.height) ** 2 <= r * r)
    body_half = (agent.height - r) / 2.0
    body = ok & ~head & ((s / half_w) ** 2 + ((z - body_half) / body_half) ** 2 <= 1.0)
    cover = head | body
    full_area = int(cover.sum())
    inside = cover & (uu >= 0) & (vv >= 0) & (uu < width) & (vv < height)
    rows = np.clip(((z[inside]) // TEXTURE_CELL_MM).astype(int), 0, texture.shape[0] - 1)
    cols = np.clip(((s[inside] + half_w) // TEXTURE_CELL_MM).astype(int), 0, texture.shape[1] - 1)
    values = np.where(head[inside], HEAD_GRAY, texture[rows, cols])
    return vv[inside], uu[inside], values, head[inside], full_area


def render_view(scene: SyntheticScene, view: int, frame: int, *, textures=None, draw_heads: bool = True,
                min_pixels: int = 10, min_fraction: float = 0.2):
    """One rendered frame: (image uint8, label map (-1 = background), visible bool per agent)."""
    cam = scene.cameras[view]
    textures = textures if textures is not None else [a.texture() for a in scene.agents]
    img = background_image(scene, view)
    labels = np.full((scene.height, scene.width), -1, dtype=np.int32)
    full = np.zeros(len(scene.agents), dtype=int)
    center = cam.center[:2]
    order = sorted(range(len(scene.agents)),
                   key=lambda i: -np.hypot(*(scene.agents[i].trajectory[frame] - center)))
    for i in order:
        a = scene.agents[i]
        sil = _silhouette(cam, a, a.trajectory[frame], scene.width, scene.height, textures[i])
        if sil is None:
            continue
        rows, cols, values, is_head, full[i] = sil
        if not draw_heads:
            keep = ~is_head
            rows, cols, values = rows[keep], cols[keep], values[keep]
        img[rows, cols] = values
        labels[rows, cols] = i
    rng = np.random.default_rng([scene.background_seed, view, frame, 7])
    img = img + rng.normal(0.0, scene.noise_sigma, size=img.shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    seen = np.bincount(labels[labels >= 0], minlength=len(scene.agents))
    visible = (seen >= np.maximum(min_pixels, min_fraction * full)) & (full > 0)
    return img, labels, visible


def render_sequence(scene: SyntheticScene, draw_heads: bool = True):
    """All frames of all views plus the matching :class:`SceneTruth`.

    Returns ``(frames, truth)`` with ``frames[view][frame]`` a uint8 image.
    """
    n_f, n_v, n_a = scene.frames, len(scene.cameras), len(scene.agents)
    textures = [a.texture() for a in scene.agents]
    visible = np.zeros((n_f, n_v, n_a), dtype=bool)
    head_px = np.full((n_f, n_v, n_a, 2), np.nan)
    foot = np.zeros((n_f, n_a, 2))
    for i, a in enumerate(scene.agents):
        foot[:, i] = a.trajectory
    frames = [[None] * n_f for _ in range(n_v)]
    for v, cam in enumerate(scene.cameras):
        for i, a in enumerate(scene.agents):
            heads = np.column_stack([a.trajectory, np.full(n_f, a.height)])
            try:
                head_px[:, v, i] = project_points(cam, heads)
            except GeometryError:
                pass
        for f in range(n_f):
            frames[v][f], _, visible[f, v] = render_view(scene, v, f, textures=textures, draw_heads=draw_heads)
    truth = SceneTruth(visible, head_px, foot)
    if truth.unseen.any():
        logger.info("%d agent-frames are inside the walk area but visible in no view",
                    int(truth.unseen.sum()))
    return frames, truth


def default_cameras(width: int = 384, height: int = 288, f: float = 5.0, k: float = 0.002):
    """Two cameras 5.5 m and 6.5 m high on the same side of the walk area, largely overlapping."""
    return [
        TsaiCamera.look_at((-6500.0, -9500.0, 6500.0), (-300.0, 600.0, 0.0), width=width, height=height, f=f, k=k),
        TsaiCamera.look_at((6000.0, -9000.0, 5500.0), (300.0, 600.0, 0.0), width=width, height=height, f=f, k=k),
    ]


def walk(rng, start, heading, speed, frames: int, area) -> np.ndarray:
    """Straight walk at constant speed, mirrored at the walls of ``area``."""
    xmin, ymin, xmax, ymax = area
    pos = np.empty((frames, 2))
    p = np.array(start, dtype=float)
    d = np.array([np.cos(heading), np.sin(heading)]) * speed
    for t in range(frames):
        pos[t] = p
        p = p + d
        for k, (lo, hi) in enumerate(((xmin, xmax), (ymin, ymax))):
            if p[k] < lo:
                p[k], d[k] = 2 * lo - p[k], -d[k]
            elif p[k] > hi:
                p[k], d[k] = 2 * hi - p[k], -d[k]
    return pos


def make_default_scene(agents: int = 15, frames: int = 100, seed: int = 42, *, width: int = 384,
                       height: int = 288, cameras=None, area=(-3500.0, -2500.0, 3500.0, 3500.0)) -> SyntheticScene:
    if agents < 0:
        raise ValueError("agent count must be >= 0")
    rng = np.random.default_rng(seed)
    xmin, ymin, xmax, ymax = area
    people = []
    for i in range(agents):
        start = (rng.uniform(xmin, xmax), rng.uniform(ymin, ymax))
        speed = rng.uniform(120.0, 220.0)
        track = walk(rng, start, rng.uniform(0, 2 * np.pi), speed, frames, area)
        people.append(Agent(i, track, height=float(rng.uniform(1600, 1900)),
                            width=float(rng.uniform(460, 580)), texture_seed=int(rng.integers(2**31))))
    cams = cameras if cameras is not None else default_cameras(width, height)
    return SyntheticScene(cams, people, frames, width, height, int(rng.integers(2**31)), area=tuple(area))


def exemplar_track(cam: TsaiCamera, person_height: float = 1750.0, step: float = 150.0,
                   reach: float = 30000.0):
    """Analytic walk along the camera's radial line through the world origin.

    Returns ``(frames, foot_px, height_px)`` for the positions whose foot
    and head both fall inside the image.
    """
    c = cam.center[:2]
    direction = -c / max(np.linalg.norm(c), 1e-9)
    start = c + direction * 500.0
    pts = start + np.arange(0.0, reach, step)[:, None] * direction
    feet3 = np.column_stack([pts, np.zeros(len(pts))])
    heads3 = np.column_stack([pts, np.full(len(pts), person_height)])
    keep_feet, keep_heads = [], []
    for p, q in zip(feet3, heads3):
        try:
            fp, hp = project_points(cam, [p, q])
        except GeometryError:
            continue
        if 0 <= fp[0] < cam.width and 0 <= fp[1] < cam.height and 0 <= hp[0] < cam.width and 0 <= hp[1] < cam.height:
            keep_feet.append(fp)
            keep_heads.append(hp)
    feet = np.array(keep_feet).reshape(-1, 2)
    heads = np.array(keep_heads).reshape(-1, 2)
    return np.arange(len(feet)), feet, np.hypot(*(feet - heads).T)


def coverage_zones(cameras, area, step: float = 250.0, person_height: float = 1750.0):
    """Ground polygons seen (foot and head in frame) by exactly one camera."""
    from shapely.geometry import box
    from shapely.ops import unary_union

    xmin, ymin, xmax, ymax = area
    xs = np.arange(xmin, xmax, step) + step / 2
    ys = np.arange(ymin, ymax, step) + step / 2
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    seen = np.zeros(len(pts), dtype=int)
    for cam in cameras:
        ok = np.ones(len(pts), dtype=bool)
        for z in (0.0, person_height):
            try:
                px = project_points(cam, np.column_stack([pts, np.full(len(pts), z)]))
            except GeometryError:
                ok[:] = False
                continue
            ok &= (px[:, 0] >= 0) & (px[:, 0] < cam.width) & (px[:, 1] >= 0) & (px[:, 1] < cam.height)
        seen += ok
    cells = [box(x - step / 2, y - step / 2, x + step / 2, y + step / 2) for x, y in pts[seen == 1]]
    if not cells:
        return []
    merged = unary_union(cells)
    return list(getattr(merged, "geoms", [merged]))


def head_radius_px(cam: TsaiCamera, agent: Agent, foot) -> float:
    c, top = project_points(cam, [(foot[0], foot[1], agent.height), (foot[0], foot[1], agent.height + agent.head_radius)])
    return float(np.hypot(*(c - top)))


def head_corpus(scene: SyntheticScene, frames, truth: SceneTruth, rng, per_class: int = 300):
    """Head and non-head crops (native size, square, odd side in 9..25) from rendered frames."""
    heads, others = [], []
    textures = [a.texture() for a in scene.agents]
    for v, cam in enumerate(scene.cameras):
        for f in range(scene.frames):
            img = frames[v][f]
            _, labels, _ = render_view(scene, v, f, textures=textures)
            centers = []
            for i, a in enumerate(scene.agents):
                if not truth.visible[f, v, i]:
                    continue
                u, w = truth.head_px[f, v, i]
                r = head_radius_px(cam, a, a.trajectory[f])
                side = int(np.clip(2 * int(round(2 * r)) + 1, 9, 25))
                cu, cv = int(round(u)), int(round(w))
                centers.append((cu, cv, r))
                h = side // 2
                if cv - h < 0 or cu - h < 0 or cv + h >= img.shape[0] or cu + h >= img.shape[1]:
                    continue
                if labels[cv, cu] != i:
                    continue
                heads.append(img[cv - h:cv + h + 1, cu - h:cu + h + 1])
            body = np.argwhere(labels >= 0)
            for _ in range(3):
                side = int(rng.choice(np.arange(9, 26, 2)))
                h = side // 2
                if len(body) and rng.random() < 0.7:
                    cv, cu = body[rng.integers(len(body))]
                else:
                    cv, cu = rng.integers(h, img.shape[0] - h), rng.integers(h, img.shape[1] - h)
                if cv - h < 0 or cu - h < 0 or cv + h >= img.shape[0] or cu + h >= img.shape[1]:
                    continue
                if any(np.hypot(cu - x, cv - y) < max(2.5 * r, h) for x, y, r in centers):
                    continue
                others.append(img[cv - h:cv + h + 1, cu - h:cu + h + 1])
    pick = lambda items: [items[i] for i in sorted(rng.permutation(len(items))[:per_class])]
    return pick(heads), pick(others)


def write_dataset(out, agents: int = 15, frames: int = 100, seed: int = 42, train_frames: int | None = None,
                  corpus_per_class: int = 300, background_frames: int = 5) -> dict:
    """Write a complete two-view dataset ready for the command-line pipeline.

    Layout: ``view<N>/`` (calibration, empty-scene frames, exemplar track),
    ``train/`` and ``test/`` sequences with per-view and scene ground truth,
    ``heads/`` corpus, ``zones.wkt`` and ``pipeline.cfg``.
    """
    from pathlib import Path

    from .config import format_config
    from .counting import write_ground_truth
    from .frames import write_pgm
    from .ground import ExemplarTrack

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    cams = default_cameras()
    train_frames = train_frames or max(40, frames // 2)
    train = make_default_scene(agents, train_frames, int(rng.integers(2**31)), cameras=cams)
    test = make_default_scene(agents, frames, int(rng.integers(2**31)), cameras=cams)
    test.background_seed = train.background_seed
    empty = SyntheticScene(cams, [], background_frames, background_seed=train.background_seed)
    bg, _ = render_sequence(empty)

    view_paths = {}
    for v, cam in enumerate(cams):
        vid = v + 1
        d = out / f"view{vid}"
        (d / "background").mkdir(parents=True, exist_ok=True)
        cam.save(d / "calibration.txt")
        for k, img in enumerate(bg[v]):
            write_pgm(d / "background" / f"frame_{k:04d}.pgm", img)
        ExemplarTrack(*exemplar_track(cam)).save(d / "exemplar.csv")
        view_paths[vid] = {
            "calibration": f"view{vid}/calibration.txt",
            "background": f"view{vid}/background",
            "exemplar": f"view{vid}/exemplar.csv",
            "frames": f"test/view{vid}/frames",
            "gt": f"test/view{vid}/gt.csv",
            "train_frames": f"train/view{vid}/frames",
            "train_gt": f"train/view{vid}/gt.csv",
        }

    summary = {}
    rendered = {}
    for name, scene in (("train", train), ("test", test)):
        seq, truth = render_sequence(scene)
        rendered[name] = (scene, seq, truth)
        for v in range(len(cams)):
            d = out / name / f"view{v + 1}" / "frames"
            d.mkdir(parents=True, exist_ok=True)
            for f, img in enumerate(seq[v]):
                write_pgm(d / f"frame_{f:04d}.pgm", img)
            write_ground_truth(out / name / f"view{v + 1}" / "gt.csv",
                               {f: int(c) for f, c in enumerate(truth.view_counts[:, v])})
        write_ground_truth(out / name / "scene_gt.csv", {f: int(c) for f, c in enumerate(truth.scene_counts)})
        with open(out / name / "heads_truth.csv", "w") as fh:
            fh.write("frame,view,agent,head_u,head_v,foot_x,foot_y,height_mm,visible\n")
            for f in range(scene.frames):
                for v in range(len(cams)):
                    for i, a in enumerate(scene.agents):
                        u, w = truth.head_px[f, v, i]
                        fx, fy = truth.foot[f, i]
                        fh.write(f"{f},{v + 1},{i},{u:.3f},{w:.3f},{fx:.1f},{fy:.1f},{a.height:.1f},"
                                 f"{int(truth.visible[f, v, i])}\n")
        summary[name] = {"frames": scene.frames, "mean_count": float(truth.scene_counts.mean()),
                         "unseen_agent_frames": int(truth.unseen.sum())}

    scene, seq, truth = rendered["train"]
    heads, others = head_corpus(scene, seq, truth, rng, corpus_per_class)
    for sub, items in (("heads", heads), ("non_heads", others)):
        d = out / "heads" / sub
        d.mkdir(parents=True, exist_ok=True)
        for k, img in enumerate(items):
            write_pgm(d / f"{sub}_{k:04d}.pgm", img)
    neg = out / "heads" / "negatives"
    neg.mkdir(parents=True, exist_ok=True)
    textures = [a.texture() for a in scene.agents]
    for k, f in enumerate(np.linspace(0, scene.frames - 1, 6).astype(int)):
        for v in range(len(cams)):
            img, _, _ = render_view(scene, v, int(f), textures=textures, draw_heads=False)
            write_pgm(neg / f"negative_{k:02d}_{v + 1}.pgm", img)

    zones = coverage_zones(cams, scene.area)
    (out / "zones.wkt").write_text("".join(z.wkt + "\n" for z in zones))

    paths = {
        "scene_gt": "test/scene_gt.csv",
        "train_scene_gt": "train/scene_gt.csv",
        "heads_dir": "heads/heads",
        "non_heads_dir": "heads/non_heads",
        "negatives_dir": "heads/negatives",
        "single_view_zones": "zones.wkt",
    }
    (out / "pipeline.cfg").write_text(format_config({"seed": seed, "out": "results"}, paths, view_paths))
    summary.update({"views": len(cams), "agents": agents, "heads": len(heads), "non_heads": len(others)})
    return summary
