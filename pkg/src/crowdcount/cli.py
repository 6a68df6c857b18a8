"""Command-line front end: ``crowdcount [--config C] [--seed N] [--out D] [--fusion R] <command>``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import ConfigError, PipelineConfig, load_config
from .corners import CornerConfig, detect_corners, write_corners_csv
from .counting import (
    FUSION_RULES, AcppModel, CountReport, aepf, as_polygons, read_ground_truth, scene_acpp,
)
from .frames import list_frames, load_frames, write_pgm
from .geometry import TsaiCamera
from .ground import ExemplarTrack, calibrate_weights, load_weights, save_weights
from .motion import BackgroundModel, build_background, detect_movement

logger = logging.getLogger("crowdcount")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
MIN_CORPUS = 50


class DataError(RuntimeError):
    pass


# ---------------------------------------------------------------- loading

def _frames(path: Path, what: str):
    if not path.is_dir():
        raise DataError(f"{what}: {path} is not a directory")
    if not list_frames(path):
        raise DataError(f"{what}: no frames in {path}")
    return load_frames(path)


def _background(view, cfg: PipelineConfig) -> BackgroundModel:
    p = cfg.require("background", view)
    if p.is_dir():
        return build_background(_frames(p, f"view {view.view_id} background"), cfg.tolerance)
    return BackgroundModel.load(p)


def _camera(view) -> TsaiCamera:
    p = view.path("calibration")
    if p is None:
        raise DataError(f"view {view.view_id}: missing calibration")
    return TsaiCamera.load(p)


def _context(view, cfg: PipelineConfig) -> pl.ViewContext:
    cam = _camera(view)
    ctx = pl.prepare_view(view.view_id, cam, _background(view, cfg), None, cfg.region_width, cfg.region_count)
    if not cfg.use_weights:
        return ctx
    if view.path("weights") is not None:
        profile, weights = load_weights(view.path("weights"))
        if len(weights) != cfg.region_count:
            raise DataError(f"view {view.view_id}: weights file has {len(weights)} regions, "
                            f"config asks for {cfg.region_count}")
        ctx.weights, ctx.profile = weights, profile
    elif view.path("exemplar") is not None:
        ctx.profile, ctx.weights = calibrate_weights(ExemplarTrack.load(view.path("exemplar")), cam, ctx.regions)
    else:
        raise DataError(f"view {view.view_id}: weighting needs 'weights' or 'exemplar' (or use_weights = false)")
    return ctx


def _params(cfg: PipelineConfig, corners: CornerConfig | None = None) -> pl.CountingParams:
    return pl.CountingParams(cfg.motion, corners or cfg.corners, cfg.person_height, cfg.correct,
                             cfg.inverted_head_ratio)


def _views(cfg: PipelineConfig):
    if not cfg.views:
        raise ConfigError("config defines no [view.N] sections")
    return cfg.views


def _out(cfg: PipelineConfig, args) -> Path:
    out = Path(args.out) if args.out else (cfg.source.parent / cfg.out if cfg.source else Path(cfg.out))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    return out


def _scene_gt(cfg: PipelineConfig, key: str, view_key: str) -> dict:
    if cfg.path(key) is not None:
        return read_ground_truth(cfg.path(key))
    views = cfg.views
    if len(views) == 1 and views[0].path(view_key) is not None:
        return read_ground_truth(views[0].path(view_key))
    raise ConfigError(f"missing '{key}' (scene ground truth)")


def _check_sync(frames_per_view: dict):
    lengths = {v: len(f) for v, f in frames_per_view.items()}
    if len(set(lengths.values())) > 1:
        raise DataError(f"views are not synchronised: frame counts {lengths}")


# ---------------------------------------------------------------- commands

def cmd_segment(cfg, args) -> int:
    out = _out(cfg, args)
    for view in _views(cfg):
        frames = _frames(cfg.require("frames", view), f"view {view.view_id}")
        bg = _background(view, cfg)
        d = out / "segment" / f"view{view.view_id}"
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "blobs.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "x", "y", "w", "h", "area"])
            for k in range(1, len(frames)):
                mask, blobs = detect_movement(frames[k], frames[k - 1], bg, cfg.motion)
                write_pgm(d / f"mask_{k:04d}.pgm", mask.astype(np.uint8) * 255)
                overlay = np.where(mask, (frames[k].astype(np.uint16) + 255) // 2, frames[k]).astype(np.uint8)
                write_pgm(d / f"overlay_{k:04d}.pgm", overlay)
                for b in blobs:
                    w.writerow([k, b.x, b.y, b.w, b.h, b.area])
        print(f"view {view.view_id}: {len(frames) - 1} frames segmented -> {d}")
    return EXIT_OK


def cmd_corners(cfg, args) -> int:
    out = _out(cfg, args)
    rows = []
    for view in _views(cfg):
        frames = _frames(cfg.require("frames", view), f"view {view.view_id}")
        bg = _background(view, cfg)
        for k in range(1, len(frames)):
            _, blobs = detect_movement(frames[k], frames[k - 1], bg, cfg.motion)
            for c in detect_corners(frames[k], blobs, cfg.corners, view.view_id):
                rows.append((k, c))
    write_corners_csv(out / "corners.csv", rows)
    print(f"{len(rows)} corners -> {out / 'corners.csv'}")
    return EXIT_OK


def cmd_calibrate_weights(cfg, args) -> int:
    out = _out(cfg, args)
    for view in _views(cfg):
        cam = _camera(view)
        ctx = pl.prepare_view(view.view_id, cam, None, None, cfg.region_width, cfg.region_count)
        track = ExemplarTrack.load(cfg.require("exemplar", view))
        profile, weights = calibrate_weights(track, cam, ctx.regions)
        path = out / f"weights_view{view.view_id}.csv"
        save_weights(path, profile, weights)
        print(f"view {view.view_id}: {len(profile.observed())} regions observed -> {path}")
    return EXIT_OK


def _training(cfg, contexts):
    frames, gts = {}, {}
    for view in _views(cfg):
        frames[view.view_id] = _frames(cfg.require("train_frames", view), f"view {view.view_id} training")
        gts[view.view_id] = read_ground_truth(cfg.require("train_gt", view))
    _check_sync(frames)
    return frames, gts


def _calibrate(cfg, contexts, params, rule):
    frames, gts = _training(cfg, contexts)
    models = pl.calibrate_views(contexts, frames, gts, params)
    if cfg.acpp_policy == "fused_training":
        scene = pl.fused_training_acpp(contexts, frames, _scene_gt(cfg, "train_scene_gt", "train_gt"), params, rule)
    else:
        scene = scene_acpp(models.values(), cfg.acpp_policy)
    return models, scene


def cmd_calibrate_acpp(cfg, args) -> int:
    out = _out(cfg, args)
    contexts = [_context(v, cfg) for v in _views(cfg)]
    models, scene = _calibrate(cfg, contexts, _params(cfg), cfg.fusion)
    for vid, m in models.items():
        m.save(out / f"acpp_view{vid}.txt")
        print(f"view {vid}: ACPP {m.acpp:.4f} ({m.frames} frames)")
    scene.save(out / "acpp_scene.txt")
    print(f"scene ACPP ({cfg.acpp_policy}): {scene.acpp:.4f}")
    return EXIT_OK


def _load_models(cfg, out, contexts, params, rule):
    files = {c.view_id: out / f"acpp_view{c.view_id}.txt" for c in contexts}
    scene_file = cfg.path("acpp_file") or out / "acpp_scene.txt"
    if all(p.exists() for p in files.values()) and scene_file.exists():
        return {v: AcppModel.load(p) for v, p in files.items()}, AcppModel.load(scene_file)
    if all(v.path("train_frames") and v.path("train_gt") for v in cfg.views):
        return _calibrate(cfg, contexts, params, rule)
    raise DataError("missing calibration: no ACPP files and no training sequence configured")


def _test_frames(cfg):
    frames = {v.view_id: _frames(cfg.require("frames", v), f"view {v.view_id}") for v in _views(cfg)}
    _check_sync(frames)
    return frames


def cmd_count(cfg, args) -> int:
    out = _out(cfg, args)
    contexts = [_context(v, cfg) for v in _views(cfg)]
    frames = _test_frames(cfg)
    gt = _scene_gt(cfg, "scene_gt", "gt")
    rules = [args.fusion] if args.fusion else list(FUSION_RULES)
    if args.sweep:
        return _sweep(cfg, out, contexts, frames, gt, rules[0] if args.fusion else cfg.fusion)
    params = _params(cfg)
    obs = {c.view_id: pl.observe_view(c, frames[c.view_id], params) for c in contexts}
    for rule in rules:
        models, scene = _load_models(cfg, out, contexts, params, rule)
        report = pl.count_sequence(contexts, frames, models, scene, rule, gt, params, observations=obs)
        path = out / f"report_{rule}.csv"
        report.write_csv(path)
        per_view = ", ".join(f"view{v}={report.view_aepf(v):.3f}" for v in sorted(report.view_estimates))
        print(f"{rule}: AepF={report.aepf:.3f} ({per_view}) -> {path}")
    return EXIT_OK


def _sweep(cfg, out, contexts, frames, gt, rule) -> int:
    rows = []
    for shape in ("square", "circular"):
        for size in (3, 5, 7):
            params = _params(cfg, CornerConfig(cfg.th_d, cfg.th_g, shape, size))
            models, scene = _calibrate(cfg, contexts, params, rule)
            report = pl.count_sequence(contexts, frames, models, scene, rule, gt, params)
            rows.append((shape, size, rule, report.aepf))
            print(f"{shape} {size}x{size} {rule}: AepF={report.aepf:.3f}")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mask_shape", "mask_size", "rule", "aepf"])
        for shape, size, rule_, val in rows:
            w.writerow([shape, size, rule_, f"{val:.6f}"])
    return EXIT_OK


def _corpus(path: Path, what: str):
    from .heads.svm import resample_windows

    if not path.is_dir():
        raise DataError(f"{what}: {path} is not a directory")
    imgs = [f for f in load_frames(path)] if list_frames(path) else []
    if len(imgs) < MIN_CORPUS:
        raise DataError(f"{what} corpus too small: {len(imgs)} images, need at least {MIN_CORPUS}")
    out = []
    for img in imgs:
        side = min(img.shape)
        out.append(np.rint(resample_windows(img[:side, :side], 0, 0, side)[0]).astype(np.uint8))
    return np.array(out)


def cmd_train_heads(cfg, args) -> int:
    from .heads.boost import train_adaboost
    from .heads.svm import normalize_samples, train_reference_classifier

    out = _out(cfg, args)
    pos = _corpus(cfg.require("heads_dir"), "heads")
    neg = _corpus(cfg.require("non_heads_dir"), "non_heads")
    if cfg.head_kind == "svm":
        x = normalize_samples(np.concatenate([pos, neg]).astype(float))
        y = np.r_[np.ones(len(pos)), -np.ones(len(neg))]
        clf = train_reference_classifier(x, y, cfg.kernel_width, cfg.penalty)
        path = out / "head_model.npz"
        clf.save(path)
        acc = float((clf.predict(x) == y).mean())
        print(f"kernel classifier: {len(clf.support)} support vectors, training accuracy {acc:.3f} -> {path}")
        return EXIT_OK
    negatives = []
    if cfg.path("negatives_dir") is not None and list_frames(cfg.path("negatives_dir")):
        negatives = load_frames(cfg.path("negatives_dir"))
    cascade = train_adaboost(pos, neg, cfg.target_fa, cfg.max_stages, stride=cfg.feature_stride,
                             negative_images=negatives, seed=cfg.seed)
    path = out / "head_model.cascade"
    cascade.save(path)
    for i, st in enumerate(cascade.stages):
        print(f"stage {i}: {len(st.learners)} learners, detection {st.detection_rate:.3f}, "
              f"false alarm {st.false_alarm:.3f} (target {cfg.target_fa})")
    print(f"cascade -> {path}")
    return EXIT_OK


def _head_model(cfg, out):
    from .heads.boost import Cascade
    from .heads.svm import KernelClassifier

    path = cfg.path("head_model")
    if path is None:
        path = out / ("head_model.npz" if cfg.head_kind == "svm" else "head_model.cascade")
    if not path.exists():
        raise DataError(f"model missing: {path} (run train-heads first)")
    return KernelClassifier.load(path) if path.suffix == ".npz" else Cascade.load(path)


def cmd_count_heads(cfg, args) -> int:
    out = _out(cfg, args)
    model = _head_model(cfg, out)
    contexts = [_context(v, cfg) for v in _views(cfg)]
    frames = _test_frames(cfg)
    gt = _scene_gt(cfg, "scene_gt", "gt")
    zones = None
    if cfg.path("single_view_zones") is not None:
        from shapely import wkt

        zones = [wkt.loads(line) for line in cfg.path("single_view_zones").read_text().splitlines() if line.strip()]
    sizes = range(cfg.head_min_size, cfg.head_max_size + 1, 2)
    frames = {v: f for v, f in frames.items()}
    report = pl.count_heads_sequence(contexts, frames, model, gt, _params(cfg), as_polygons(zones),
                                     cfg.head_mask, cfg.plane, sizes)
    path = out / "report_heads.csv"
    report.write_csv(path)
    print(f"heads: AepF={report.aepf:.3f} -> {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import write_dataset

    out = Path(args.out or "synth")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"cannot write to {out}: {exc}") from None
    summary = write_dataset(out, args.agents, args.frames, args.seed, args.train_frames)
    print(f"dataset -> {out}")
    for k, v in summary.items():
        print(f"  {k}: {v}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.report:
        raise ConfigError("eval needs --report")
    path = Path(args.report)
    if not path.is_file():
        raise DataError(f"report {path} not found")
    report = CountReport.read_csv(path)
    gt = report.gt
    if args.gt:
        table = read_ground_truth(args.gt)
        try:
            gt = np.array([table[int(f)] for f in report.frames], dtype=float)
        except KeyError as exc:
            raise DataError(f"ground truth has no frame {exc}") from None
    print(f"frames={len(report.frames)} AepF={aepf(report.fused, gt):.4f} "
          f"signed={aepf(report.fused, gt, signed=True):.4f}")
    for v in sorted(report.view_estimates):
        print(f"view{v}: AepF={aepf(report.view_estimates[v], gt):.4f}")
    return EXIT_OK


CONFIG_COMMANDS = {
    "segment": cmd_segment,
    "corners": cmd_corners,
    "calibrate-weights": cmd_calibrate_weights,
    "calibrate-acpp": cmd_calibrate_acpp,
    "count": cmd_count,
    "train-heads": cmd_train_heads,
    "count-heads": cmd_count_heads,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="pipeline config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 42)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--fusion", choices=FUSION_RULES, default=argparse.SUPPRESS, help="fusion rule")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="crowdcount", parents=[common],
                                     description="Multi-view crowd counting from corner points and heads.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in CONFIG_COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "count":
            p.add_argument("--sweep", action="store_true", help="AepF for mask sizes 3/5/7 x square/circular")
    p = sub.add_parser("synth", parents=[common], help="write a synthetic two-view dataset")
    p.add_argument("--agents", type=int, default=15)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--train-frames", type=int, default=None)
    p = sub.add_parser("eval", parents=[common], help="score a count report")
    p.add_argument("--report")
    p.add_argument("--gt")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    seed_given = hasattr(args, "seed")
    for key, default in (("config", None), ("seed", 42), ("out", None), ("fusion", None), ("verbose", 0)):
        if not hasattr(args, key):
            setattr(args, key, default)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            if args.agents < 0 or args.frames < 2:
                raise ConfigError("synth needs --agents >= 0 and --frames >= 2")
            return cmd_synth(args)
        if args.command == "eval":
            return cmd_eval(args)
        if not args.config:
            raise ConfigError(f"'{args.command}' needs --config")
        cfg = load_config(args.config, overrides={"seed": args.seed if seed_given else None,
                                                  "fusion": args.fusion})
        return CONFIG_COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
