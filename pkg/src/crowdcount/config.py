"""Plain-text pipeline configuration: ``key = value`` lines with ``[view.N]`` sections.

Keys before the first section belong to ``[global]``.  Relative paths are
resolved against the directory holding the config file.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .corners import CornerConfig
from .counting import FUSION_RULES
from .geometry import GroundPlaneSpec
from .motion import MotionConfig


class ConfigError(ValueError):
    pass


ACPP_POLICIES = ("mean", "min", "max", "median", "fused_training")

# key -> (type, default, check, message)
GLOBAL_KEYS = {
    "seed": (int, 42, None, ""),
    "out": (str, "out", None, ""),
    "fusion": (str, "avg", lambda v: v in FUSION_RULES, f"one of {FUSION_RULES}"),
    "tolerance": (float, 25.0, lambda v: 0 <= v <= 255, "in [0, 255]"),
    "diff_threshold": (float, 10.0, lambda v: 0 <= v <= 255, "in [0, 255]"),
    "hysteresis_low": (float, 64.0, lambda v: 0 <= v <= 255, "in [0, 255]"),
    "hysteresis_high": (float, 128.0, lambda v: 0 <= v <= 255, "in [0, 255]"),
    "min_area": (int, 50, lambda v: v >= 1, ">= 1"),
    "th_d": (float, 0.1, lambda v: 0 < v < 1, "in (0, 1)"),
    "th_g": (float, 20.0, lambda v: v >= 0, ">= 0"),
    "mask_shape": (str, "square", lambda v: v in ("square", "circular"), "square or circular"),
    "mask_size": (int, 5, lambda v: v in (3, 5, 7), "3, 5 or 7"),
    "region_count": (int, 37, lambda v: 1 <= v <= 1000, "in [1, 1000]"),
    "region_width": (float, 1000.0, lambda v: v > 0, "> 0 mm"),
    "person_height": (float, 1750.0, lambda v: 1000 <= v <= 2500, "in [1000, 2500] mm"),
    "correct": (bool, True, None, ""),
    "use_weights": (bool, True, None, ""),
    "inverted_head_ratio": (bool, False, None, ""),
    "plane_size": (int, 600, lambda v: v > 0, "> 0"),
    "mm_per_pixel": (float, 50.0, lambda v: v > 0, "> 0"),
    "acpp_policy": (str, "mean", lambda v: v in ACPP_POLICIES, f"one of {ACPP_POLICIES}"),
    "head_kind": (str, "cascade", lambda v: v in ("cascade", "svm"), "cascade or svm"),
    "head_mask": (int, 9, lambda v: v >= 3 and v % 2 == 1, "odd and >= 3"),
    "head_min_size": (int, 9, lambda v: v >= 9 and v % 2 == 1, "odd and >= 9"),
    "head_max_size": (int, 25, lambda v: v <= 25 and v % 2 == 1, "odd and <= 25"),
    "head_step": (int, 1, lambda v: v >= 1, ">= 1"),
    "target_fa": (float, 0.4, lambda v: 0 < v < 1, "in (0, 1)"),
    "max_stages": (int, 10, lambda v: v >= 1, ">= 1"),
    "feature_stride": (int, 1, lambda v: v >= 1, ">= 1"),
    "kernel_width": (float, 3.0, lambda v: v > 0, "> 0"),
    "penalty": (float, 10.0, lambda v: v > 0, "> 0"),
}
GLOBAL_PATHS = ("scene_gt", "train_scene_gt", "acpp_file", "head_model", "heads_dir", "non_heads_dir",
                "negatives_dir", "single_view_zones")
VIEW_PATHS = ("frames", "train_frames", "calibration", "background", "exemplar", "gt", "train_gt", "weights")


@dataclass
class ViewConfig:
    view_id: int
    paths: dict = field(default_factory=dict)

    def path(self, key: str) -> Path | None:
        return self.paths.get(key)


@dataclass
class PipelineConfig:
    values: dict
    paths: dict
    views: list
    source: Path | None = None

    def __getattr__(self, key):
        values = self.__dict__.get("values", {})
        if key in values:
            return values[key]
        raise AttributeError(key)

    def path(self, key: str) -> Path | None:
        return self.paths.get(key)

    @property
    def motion(self) -> MotionConfig:
        v = self.values
        return MotionConfig(v["tolerance"], v["diff_threshold"], v["hysteresis_low"], v["hysteresis_high"],
                            v["min_area"])

    @property
    def corners(self) -> CornerConfig:
        v = self.values
        return CornerConfig(v["th_d"], v["th_g"], v["mask_shape"], v["mask_size"])

    @property
    def plane(self) -> GroundPlaneSpec:
        return GroundPlaneSpec(self.values["plane_size"], self.values["mm_per_pixel"])

    def require(self, key: str, view: ViewConfig | None = None) -> Path:
        p = view.path(key) if view is not None else self.path(key)
        if p is None:
            where = f"[view.{view.view_id}]" if view is not None else "[global]"
            raise ConfigError(f"missing required key '{key}' in {where}")
        return p


def _convert(key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key} = {raw!r}: expected {kind.__name__}") from None


def parse_config(text: str, base: Path | None = None, check_files: bool = True,
                 overrides: dict | None = None) -> PipelineConfig:
    base = Path(base) if base is not None else Path.cwd()
    stripped = text.lstrip()
    if not stripped.startswith("["):
        text = "[global]\n" + text
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None

    def resolve(raw: str) -> Path:
        p = Path(raw).expanduser()
        return p if p.is_absolute() else base / p

    values = {k: spec[1] for k, spec in GLOBAL_KEYS.items()}
    paths = {}
    views = []
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "global":
            for key, raw in items.items():
                if key in GLOBAL_KEYS:
                    values[key] = _convert(key, raw, GLOBAL_KEYS[key][0])
                elif key in GLOBAL_PATHS:
                    paths[key] = resolve(raw)
                else:
                    raise ConfigError(f"unknown key '{key}' in [global]")
        elif section.startswith("view."):
            try:
                vid = int(section[5:])
            except ValueError:
                raise ConfigError(f"bad section name [{section}]; expected [view.N]") from None
            vpaths = {}
            for key, raw in items.items():
                if key not in VIEW_PATHS:
                    raise ConfigError(f"unknown key '{key}' in [{section}]")
                vpaths[key] = resolve(raw)
            views.append(ViewConfig(vid, vpaths))
        else:
            raise ConfigError(f"unknown section [{section}]")
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    for key, (kind, _, check, msg) in GLOBAL_KEYS.items():
        if check is not None and not check(values[key]):
            raise ConfigError(f"{key} = {values[key]!r} out of range: must be {msg}")
    if values["hysteresis_low"] > values["hysteresis_high"]:
        raise ConfigError("hysteresis_low must not exceed hysteresis_high")
    if values["head_min_size"] > values["head_max_size"]:
        raise ConfigError("head_min_size must not exceed head_max_size")
    views.sort(key=lambda v: v.view_id)
    if len({v.view_id for v in views}) != len(views):
        raise ConfigError("duplicate [view.N] sections")
    cfg = PipelineConfig(values, paths, views)
    if check_files:
        missing = [str(p) for p in paths.values() if not p.exists()]
        missing += [str(p) for v in views for p in v.paths.values() if not p.exists()]
        if missing:
            raise ConfigError("referenced files do not exist: " + ", ".join(missing))
    return cfg


def load_config(path, check_files: bool = True, overrides: dict | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cfg = parse_config(path.read_text(), path.parent, check_files, overrides)
    cfg.source = path
    return cfg


def format_config(values: dict, paths: dict, views: dict) -> str:
    """Inverse of :func:`parse_config` for generated configs; ``views`` maps id -> {key: path}."""
    lines = ["[global]"]
    lines += [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in values.items()]
    lines += [f"{k} = {v}" for k, v in paths.items()]
    for vid in sorted(views):
        lines += ["", f"[view.{vid}]"] + [f"{k} = {v}" for k, v in views[vid].items()]
    return "\n".join(lines) + "\n"
