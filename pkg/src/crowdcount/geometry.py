"""Tsai camera model, planar homographies and the shared ground-plane raster.

World coordinates are millimetres with the ground at ``z = 0``.  Rotations
compose as ``R = Rz(rz) @ Ry(ry) @ Rx(rx)`` and map world to camera frame:
``Xc = R @ Xw + t``.  Radial distortion follows Tsai's convention, where the
undistorted sensor coordinate is ``Xu = Xd * (1 + k * rd**2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CALIBRATION_KEYS = (
    "width", "height", "ncx", "nfx", "dx", "dy", "dpx", "dpy",
    "f", "k", "cx", "cy", "sx", "tx", "ty", "tz", "rx", "ry", "rz",
)
DISTORTION_MAX_ITER = 20
DISTORTION_TOL = 1e-6  # mm on the sensor


class GeometryError(ValueError):
    """A point or ray that the camera model cannot map."""


@dataclass(frozen=True)
class TsaiCamera:
    width: int
    height: int
    ncx: float
    nfx: float
    dx: float
    dy: float
    dpx: float
    dpy: float
    f: float
    k: float
    cx: float
    cy: float
    sx: float
    tx: float
    ty: float
    tz: float
    rx: float
    ry: float
    rz: float

    def __post_init__(self):
        if self.f <= 0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image width and height must be positive")
        if self.dpx <= 0 or self.dpy <= 0:
            raise ValueError("dpx and dpy must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.rx, self.ry, self.rz)

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz])

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates, ``-R^T t``."""
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, position, target, *, width, height, f, pixel_mm=0.01, k=0.0):
        """Build a camera at ``position`` whose optical axis passes through ``target``.

        Square pixels of ``pixel_mm`` and a principal point at the image centre.
        """
        position = np.asarray(position, dtype=float)
        z = np.asarray(target, dtype=float) - position
        z /= np.linalg.norm(z)
        up = np.array([0.0, 0.0, 1.0])
        if abs(z @ up) > 1 - 1e-9:
            up = np.array([0.0, 1.0, 0.0])
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.stack([x, y, z])
        rx, ry, rz = euler_from_rotation(rot)
        t = -rotation_matrix(rx, ry, rz) @ position
        return cls(
            width=width, height=height, ncx=width, nfx=width,
            dx=pixel_mm, dy=pixel_mm, dpx=pixel_mm, dpy=pixel_mm,
            f=f, k=k, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0, sx=1.0,
            tx=t[0], ty=t[1], tz=t[2], rx=rx, ry=ry, rz=rz,
        )

    def to_text(self) -> str:
        def fmt(v):
            return str(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))

        return "".join(f"{key} = {fmt(getattr(self, key))}\n" for key in CALIBRATION_KEYS)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "TsaiCamera":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key = key.strip().lower()
            if key not in CALIBRATION_KEYS:
                raise ValueError(f"line {lineno}: unknown calibration key {key!r}")
            values[key] = float(value)
        missing = [k for k in CALIBRATION_KEYS if k not in values]
        if missing:
            raise ValueError(f"calibration is missing keys: {', '.join(missing)}")
        values["width"] = int(values["width"])
        values["height"] = int(values["height"])
        return cls(**values)

    @classmethod
    def from_xml(cls, text: str) -> "TsaiCamera":
        """Tsai calibration XML with ``Geometry``, ``Intrinsic`` and ``Extrinsic`` elements."""
        import xml.etree.ElementTree as ET

        root = ET.fromstring(text)
        attrs = {}
        for tag in ("Geometry", "Intrinsic", "Extrinsic"):
            el = root if root.tag == tag else root.find(f".//{tag}")
            if el is None:
                raise ValueError(f"calibration XML has no <{tag}> element")
            attrs.update({k.lower(): v for k, v in el.attrib.items()})
        attrs.setdefault("f", attrs.pop("focal", None))
        attrs.setdefault("k", attrs.pop("kappa1", None))
        lines = [f"{k} = {attrs[k]}" for k in CALIBRATION_KEYS if attrs.get(k) is not None]
        return cls.from_text("\n".join(lines))

    @classmethod
    def load(cls, path) -> "TsaiCamera":
        text = Path(path).read_text()
        return cls.from_xml(text) if text.lstrip().startswith("<") else cls.from_text(text)


@dataclass(frozen=True)
class GroundPoint:
    x: float
    y: float
    weight: float = 1.0
    source: str = "corner"
    view_id: int = 0

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class GroundPlaneSpec:
    size: int = 600
    mm_per_pixel: float = 50.0

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("plane size must be positive")
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be positive")

    @property
    def center(self) -> int:
        return self.size // 2


def rotation_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rot_z @ rot_y @ rot_x


def euler_from_rotation(rot: np.ndarray) -> tuple[float, float, float]:
    ry = -math.asin(max(-1.0, min(1.0, rot[2, 0])))
    rx = math.atan2(rot[2, 1], rot[2, 2])
    rz = math.atan2(rot[1, 0], rot[0, 0])
    return rx, ry, rz


def _distort(cam: TsaiCamera, xu: np.ndarray, yu: np.ndarray):
    """Invert ``Xu = Xd (1 + k rd^2)`` by Newton iteration on the radius."""
    ru = np.hypot(xu, yu)
    if cam.k == 0.0:
        return xu, yu
    rd = ru.copy()
    for _ in range(DISTORTION_MAX_ITER):
        g = rd * (1.0 + cam.k * rd * rd) - ru
        step = g / (1.0 + 3.0 * cam.k * rd * rd)
        rd = rd - step
        if np.all(np.abs(step) < DISTORTION_TOL * 1e-3):
            break
    residual = np.abs(rd * (1.0 + cam.k * rd * rd) - ru)
    if not np.all(np.isfinite(rd)) or np.any(residual > DISTORTION_TOL) or np.any(rd < 0):
        raise GeometryError("radial distortion inversion did not converge")
    scale = np.ones_like(ru)
    nz = ru > 0
    scale[nz] = rd[nz] / ru[nz]
    return xu * scale, yu * scale


def project_points(cam: TsaiCamera, world) -> np.ndarray:
    """Vectorised world (N, 3) mm -> pixel (N, 2)."""
    world = np.atleast_2d(np.asarray(world, dtype=float))
    pc = world @ cam.rotation.T + cam.translation
    depth = pc[:, 2]
    if np.any(depth <= 0):
        raise GeometryError("point at or behind the camera plane")
    xu = cam.f * pc[:, 0] / depth
    yu = cam.f * pc[:, 1] / depth
    xd, yd = _distort(cam, xu, yu)
    u = cam.sx * xd / cam.dpx + cam.cx
    v = yd / cam.dpy + cam.cy
    return np.stack([u, v], axis=1)


def world_to_image(cam: TsaiCamera, world) -> tuple[float, float]:
    u, v = project_points(cam, [world])[0]
    return float(u), float(v)


def pixel_rays(cam: TsaiCamera, pixels) -> tuple[np.ndarray, np.ndarray]:
    """Camera centre and world-frame ray directions (N, 3) through ``pixels`` (N, 2)."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    xd = (pixels[:, 0] - cam.cx) * cam.dpx / cam.sx
    yd = (pixels[:, 1] - cam.cy) * cam.dpy
    factor = 1.0 + cam.k * (xd * xd + yd * yd)
    dirs_cam = np.stack([xd * factor, yd * factor, np.full_like(xd, cam.f)], axis=1)
    return cam.center, dirs_cam @ cam.rotation


def back_project_to_plane(cam: TsaiCamera, pixels, z: float = 0.0) -> np.ndarray:
    """Intersect pixel rays with the horizontal plane at height ``z``; returns (N, 2)."""
    origin, dirs = pixel_rays(cam, pixels)
    dz = dirs[:, 2]
    if np.any(np.abs(dz) < 1e-12):
        raise GeometryError("pixel ray parallel to the ground plane")
    s = (z - origin[2]) / dz
    if np.any(s <= 0):
        raise GeometryError("pixel ray does not reach the ground plane in front of the camera")
    return origin[:2] + s[:, None] * dirs[:, :2]


def image_to_ground(cam: TsaiCamera, pixel, view_id: int = 0, source: str = "corner") -> GroundPoint:
    x, y = back_project_to_plane(cam, [pixel])[0]
    return GroundPoint(float(x), float(y), 1.0, source, view_id)


def camera_ground_position(cam: TsaiCamera, view_id: int = 0) -> tuple[GroundPoint, float]:
    c = cam.center
    if c[2] <= 0:
        raise GeometryError(f"camera height {c[2]:.1f} mm is not positive; check the calibration")
    return GroundPoint(float(c[0]), float(c[1]), 1.0, "camera", view_id), float(c[2])


@dataclass(frozen=True)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float).reshape(3, 3)
        if abs(m[2, 2]) > 1e-15:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise GeometryError("homography is singular")
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, points) -> np.ndarray:
        """Map (N, 2) points; raises on points sent to infinity."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        hom = pts @ self.matrix[:, :2].T + self.matrix[:, 2]
        w = hom[:, 2]
        if np.any(np.abs(w) < 1e-12):
            raise GeometryError("point maps to infinity under the homography")
        return hom[:, :2] / w[:, None]


def apply_homography(h: Homography, p) -> tuple[float, float]:
    x, y = h.apply([p])[0]
    return float(x), float(y)


def _conditioner(pts: np.ndarray) -> np.ndarray:
    mean = pts.mean(axis=0)
    spread = np.sqrt(((pts - mean) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2.0) / spread if spread > 0 else 1.0
    return np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])


def estimate_homography(src, dst) -> tuple[Homography, float]:
    """Normalised DLT fit of ``dst ~ H src``; returns H and the RMS transfer error."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("src and dst must both be (N, 2) arrays")
    if len(src) < 4:
        raise ValueError("a homography needs at least 4 correspondences")
    ts, td = _conditioner(src), _conditioner(dst)
    s = src @ ts[:2, :2].T + ts[:2, 2]
    d = dst @ td[:2, :2].T + td[:2, 2]
    n = len(s)
    a = np.zeros((2 * n, 9))
    a[0::2, 0:2] = s
    a[0::2, 2] = 1
    a[0::2, 6:8] = -d[:, :1] * s
    a[0::2, 8] = -d[:, 0]
    a[1::2, 3:5] = s
    a[1::2, 5] = 1
    a[1::2, 6:8] = -d[:, 1:2] * s
    a[1::2, 8] = -d[:, 1]
    _, sing, vt = np.linalg.svd(a)
    if sing[7] <= 1e-10 * sing[0]:
        raise GeometryError("degenerate correspondences (rank < 8)")
    hn = vt[-1].reshape(3, 3)
    h = Homography(np.linalg.inv(td) @ hn @ ts)
    residual = float(np.sqrt(np.mean(np.sum((h.apply(src) - dst) ** 2, axis=1))))
    return h, residual


def camera_homography(cam: TsaiCamera, samples: int = 9) -> tuple[Homography, float]:
    """Image -> ground homography fitted to a pixel grid whose rays reach the ground.

    Exact when ``k == 0``; with distortion it is the least-squares planar fit.
    """
    us = np.linspace(0, cam.width - 1, samples)
    vs = np.linspace(0, cam.height - 1, samples)
    gu, gv = np.meshgrid(us, vs)
    pix = np.stack([gu.ravel(), gv.ravel()], axis=1)
    origin, dirs = pixel_rays(cam, pix)
    # keep rays that descend steeply enough to land within a sane distance
    down = dirs[:, 2] < -1e-3 * np.linalg.norm(dirs, axis=1)
    pix = pix[down]
    if len(pix) < 4:
        raise GeometryError("fewer than 4 image points see the ground plane")
    ground = back_project_to_plane(cam, pix)
    return estimate_homography(pix, ground)


def ground_to_plane_pixels(spec: GroundPlaneSpec, xy) -> np.ndarray:
    """Vectorised (N, 2) mm -> unrounded plane pixel coordinates."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    return spec.center + xy / spec.mm_per_pixel


def ground_to_plane_image(spec: GroundPlaneSpec, g: GroundPoint):
    """Nearest plane pixel ``(col, row)``, or ``None`` when outside the raster."""
    col, row = ground_to_plane_pixels(spec, [(g.x, g.y)])[0]
    col, row = int(math.floor(col + 0.5)), int(math.floor(row + 0.5))
    if 0 <= col < spec.size and 0 <= row < spec.size:
        return col, row
    return None

