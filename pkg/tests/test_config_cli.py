from __future__ import annotations

import csv
import shutil

import numpy as np
import pytest

from crowdcount.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, run
from crowdcount.config import ConfigError, format_config, load_config, parse_config
from crowdcount.counting import CountReport, read_ground_truth
from crowdcount.frames import write_pgm
from crowdcount.motion import MotionConfig, build_background, detect_movement
from crowdcount.synth import SyntheticScene, make_default_scene, render_sequence, render_view


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert run(["synth", "--out", str(root), "--agents", "6", "--frames", "30", "--train-frames", "20",
                "--seed", "3"]) == EXIT_OK
    return root


def _read(path):
    return CountReport.read_csv(path)


# ---------------------------------------------------------------- config parsing

def test_defaults_and_global_prefix(tmp_path):
    cfg = parse_config("fusion = max\nmask_size = 7\n", tmp_path, check_files=False)
    assert cfg.fusion == "max" and cfg.corners.mask_size == 7
    assert cfg.person_height == 1750.0 and cfg.region_count == 37
    assert cfg.plane.size == 600 and cfg.plane.mm_per_pixel == 50.0
    assert cfg.motion == MotionConfig()


@pytest.mark.parametrize("text, match", [
    ("bogus = 1", "unknown key"),
    ("mask_size = 4", "mask_size"),
    ("person_height = 900", "person_height"),
    ("person_height = 2600", "person_height"),
    ("fusion = median", "fusion"),
    ("th_d = 1.0", "th_d"),
    ("hysteresis_low = 200", "hysteresis_low"),
    ("mask_size = five", "expected int"),
    ("correct = maybe", "expected bool"),
    ("[view.x]\nframes = f", "view.N"),
    ("[camera]\nframes = f", "unknown section"),
    ("[view.1]\ncolour = red", "unknown key"),
    ("[view.1]\n[view.1]", "cannot parse"),
])
def test_config_rejections(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text, tmp_path, check_files=False)


def test_paths_resolve_relative_to_config(tmp_path):
    (tmp_path / "f").mkdir()
    (tmp_path / "c.cfg").write_text("[view.2]\nframes = f\n[view.1]\nframes = f\n")
    cfg = load_config(tmp_path / "c.cfg")
    assert [v.view_id for v in cfg.views] == [1, 2]
    assert cfg.views[0].path("frames") == tmp_path / "f"


def test_missing_files_rejected(tmp_path):
    (tmp_path / "c.cfg").write_text("scene_gt = nowhere.csv\n")
    with pytest.raises(ConfigError, match="do not exist"):
        load_config(tmp_path / "c.cfg")
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.cfg")


def test_overrides_are_validated(tmp_path):
    assert parse_config("", tmp_path, overrides={"fusion": "min"}).fusion == "min"
    with pytest.raises(ConfigError):
        parse_config("", tmp_path, overrides={"mask_size": 9})


def test_format_config_round_trip(tmp_path):
    text = format_config({"seed": 5, "correct": False}, {"scene_gt": "gt.csv"}, {1: {"frames": "a"}})
    cfg = parse_config(text, tmp_path, check_files=False)
    assert cfg.seed == 5 and cfg.correct is False
    assert cfg.path("scene_gt") == tmp_path / "gt.csv"
    assert cfg.views[0].path("frames") == tmp_path / "a"


# ---------------------------------------------------------------- exit codes

def test_config_errors_exit_2(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("mask_size = 4\n")
    assert run(["--config", str(tmp_path / "bad.cfg"), "count"]) == EXIT_CONFIG
    assert "mask_size" in capsys.readouterr().err
    assert run(["count"]) == EXIT_CONFIG
    (tmp_path / "empty.cfg").write_text("")
    assert run(["--config", str(tmp_path / "empty.cfg"), "segment"]) == EXIT_CONFIG
    assert run(["eval"]) == EXIT_CONFIG


def test_empty_frame_directory_exit_3(tmp_path, capsys):
    (tmp_path / "frames").mkdir()
    (tmp_path / "c.cfg").write_text("[view.1]\nframes = frames\nbackground = frames\n")
    assert run(["--config", str(tmp_path / "c.cfg"), "segment"]) == EXIT_DATA
    assert "no frames" in capsys.readouterr().err


def test_small_corpus_exit_3(tmp_path, capsys):
    for sub in ("h", "n"):
        (tmp_path / sub).mkdir()
        for k in range(10):
            write_pgm(tmp_path / sub / f"x_{k}.pgm", np.zeros((9, 9), dtype=np.uint8))
    (tmp_path / "c.cfg").write_text("heads_dir = h\nnon_heads_dir = n\n")
    assert run(["--config", str(tmp_path / "c.cfg"), "train-heads", "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "corpus too small" in capsys.readouterr().err


def test_missing_model_exit_3(dataset, tmp_path, capsys):
    code = run(["--config", str(dataset / "pipeline.cfg"), "count-heads", "--out", str(tmp_path / "none")])
    assert code == EXIT_DATA
    assert "model missing" in capsys.readouterr().err


def test_missing_report_exit_3(tmp_path):
    assert run(["eval", "--report", str(tmp_path / "nope.csv")]) == EXIT_DATA


# ---------------------------------------------------------------- commands on a synthetic dataset

def test_synth_is_reproducible(dataset, tmp_path):
    again = tmp_path / "again"
    assert run(["--seed", "3", "synth", "--out", str(again), "--agents", "6", "--frames", "30",
                "--train-frames", "20"]) == EXIT_OK
    for rel in ("test/view1/frames/frame_0007.pgm", "test/scene_gt.csv", "view2/calibration.txt",
                "heads/heads/heads_0003.pgm", "pipeline.cfg"):
        assert (again / rel).read_bytes() == (dataset / rel).read_bytes()


def test_synth_with_no_agents(tmp_path):
    out = tmp_path / "empty"
    assert run(["synth", "--out", str(out), "--agents", "0", "--frames", "4"]) == EXIT_OK
    assert set(read_ground_truth(out / "test" / "scene_gt.csv").values()) == {0}


def test_synth_rejects_bad_sizes(tmp_path):
    assert run(["synth", "--out", str(tmp_path / "x"), "--frames", "1"]) == EXIT_CONFIG


def test_segment_and_corners(dataset, tmp_path):
    out = tmp_path / "seg"
    assert run(["--config", str(dataset / "pipeline.cfg"), "segment", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "segment" / "view1" / "blobs.csv")))
    assert rows and all(int(r["area"]) >= 50 for r in rows)
    assert (out / "segment" / "view2" / "mask_0029.pgm").exists()
    assert run(["--config", str(dataset / "pipeline.cfg"), "corners", "--out", str(out)]) == EXIT_OK
    header = (out / "corners.csv").read_text().splitlines()[0]
    assert header == "frame,view,x,y,score"


def test_segmentation_covers_rendered_agents():
    scene = make_default_scene(6, 6, seed=1)
    frames, _ = render_sequence(scene)
    empty = SyntheticScene(scene.cameras, [], 3, background_seed=scene.background_seed)
    bg, _ = render_sequence(empty)
    for v in range(2):
        model = build_background(bg[v], 25.0)
        for f in range(1, 6):
            mask, _ = detect_movement(frames[v][f], frames[v][f - 1], model, MotionConfig())
            _, labels, _ = render_view(scene, v, f)
            agent = labels >= 0
            assert (mask & agent).sum() >= 0.95 * agent.sum()


def test_static_scene_gives_no_blobs(dataset, tmp_path):
    bg_dir = dataset / "view1" / "background"
    (tmp_path / "frames").mkdir()
    for p in sorted(bg_dir.iterdir())[:1]:
        for k in range(3):
            shutil.copy(p, tmp_path / "frames" / f"frame_{k}.pgm")
    (tmp_path / "c.cfg").write_text(f"[view.1]\nframes = frames\nbackground = {bg_dir}\n")
    assert run(["--config", str(tmp_path / "c.cfg"), "segment", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert len((tmp_path / "o" / "segment" / "view1" / "blobs.csv").read_text().splitlines()) == 1


def test_calibrate_and_count(dataset, tmp_path):
    cfg = str(dataset / "pipeline.cfg")
    out = tmp_path / "run"
    assert run(["--config", cfg, "calibrate-weights", "--out", str(out)]) == EXIT_OK
    assert (out / "weights_view1.csv").exists()
    assert run(["--config", cfg, "calibrate-acpp", "--out", str(out)]) == EXIT_OK
    assert {p.name for p in out.glob("acpp_*.txt")} == {"acpp_view1.txt", "acpp_view2.txt", "acpp_scene.txt"}
    assert run(["--config", cfg, "count", "--out", str(out)]) == EXIT_OK
    reports = {r: _read(out / f"report_{r}.csv") for r in ("min", "avg", "max")}
    assert np.all(reports["min"].fused <= reports["avg"].fused + 1e-3)
    assert np.all(reports["avg"].fused <= reports["max"].fused + 1e-3)
    truth = read_ground_truth(dataset / "test" / "scene_gt.csv")
    # the first frame has no predecessor to difference against
    assert reports["avg"].frames.tolist() == list(range(1, 30))
    np.testing.assert_array_equal(reports["avg"].gt, [truth[f] for f in reports["avg"].frames])
    assert reports["avg"].aepf < 3.0
    # identical inputs give byte-identical outputs
    first = (out / "report_avg.csv").read_bytes()
    assert run(["--config", cfg, "count", "--out", str(out), "--fusion", "avg"]) == EXIT_OK
    assert (out / "report_avg.csv").read_bytes() == first


def test_single_view_fused_equals_view(dataset, tmp_path):
    text = (dataset / "pipeline.cfg").read_text()
    single = text[:text.index("[view.2]")].replace("scene_gt = test/scene_gt.csv\n", "")
    single = single.replace("train_scene_gt = train/scene_gt.csv\n", "")
    (dataset / "single.cfg").write_text(single)
    out = tmp_path / "single"
    assert run(["--config", str(dataset / "single.cfg"), "--fusion", "max", "count", "--out", str(out)]) == EXIT_OK
    rep = _read(out / "report_max.csv")
    np.testing.assert_allclose(rep.fused, rep.view_estimates[1], atol=1e-4)
    truth = read_ground_truth(dataset / "test" / "view1" / "gt.csv")
    np.testing.assert_array_equal(rep.gt, [truth[f] for f in rep.frames])


def test_mask_sweep_has_six_rows(dataset, tmp_path):
    out = tmp_path / "sweep"
    assert run(["--config", str(dataset / "pipeline.cfg"), "count", "--sweep", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert {(r["mask_shape"], r["mask_size"]) for r in rows} == {
        (s, str(n)) for s in ("square", "circular") for n in (3, 5, 7)}


def test_heads_train_count_and_eval(dataset, tmp_path, capsys):
    cfg = str(dataset / "pipeline.cfg")
    out = tmp_path / "heads"
    assert run(["--config", cfg, "train-heads", "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    for line in text.splitlines():
        if line.startswith("stage"):
            fa = float(line.split("false alarm ")[1].split()[0])
            assert fa <= 0.4
    assert run(["--config", cfg, "count-heads", "--out", str(out)]) == EXIT_OK
    rep = _read(out / "report_heads.csv")
    assert len(rep.frames) == 29 and rep.aepf >= 0
    assert run(["eval", "--report", str(out / "report_heads.csv"),
                "--gt", str(dataset / "test" / "scene_gt.csv")]) == EXIT_OK
    assert "AepF=" in capsys.readouterr().out


def test_seed_flag_position(dataset, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["--seed", "9", "synth", "--out", str(a), "--agents", "1", "--frames", "3"]) == EXIT_OK
    assert run(["synth", "--seed", "9", "--out", str(b), "--agents", "1", "--frames", "3"]) == EXIT_OK
    assert (a / "test" / "view1" / "frames" / "frame_0002.pgm").read_bytes() == \
        (b / "test" / "view1" / "frames" / "frame_0002.pgm").read_bytes()
