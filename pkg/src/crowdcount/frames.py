"""Grayscale frame container helpers and image file ingestion.

Frames are plain 2-D ``numpy.uint8`` arrays indexed ``[row, col]``; masks
are 2-D boolean arrays of the same shape.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

FRAME_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg")


def as_frame(data) -> np.ndarray:
    """Validate ``data`` as a non-empty 2-D luminance raster and return it as uint8."""
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2-D frame, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ValueError("pixel values must lie in [0, 255]")
        arr = np.rint(arr).astype(np.uint8)
    return arr


def to_luminance(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


def write_pgm(path, frame: np.ndarray) -> None:
    frame = as_frame(frame)
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(frame.tobytes())


def _pgm_tokens(data: bytes, count: int):
    # header tokens separated by whitespace, '#' comments allowed
    pos = 2
    tokens = []
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    (w, h, maxval), offset = _pgm_tokens(data, 3)
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset)
    return pixels.reshape(h, w).copy()


def read_frame(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    img = Image.open(path)
    if img.mode in ("L", "I;8"):
        return np.asarray(img, dtype=np.uint8).copy()
    return to_luminance(np.asarray(img.convert("RGB")))


def _numeric_key(path: Path):
    nums = re.findall(r"\d+", path.stem)
    return (int(nums[-1]) if nums else -1, path.name)


def list_frames(directory) -> list[Path]:
    """Numbered frame files in ``directory``, ordered by their trailing number."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory not found: {directory}")
    files = [p for p in directory.iterdir() if p.suffix.lower() in FRAME_SUFFIXES]
    return sorted(files, key=_numeric_key)


def load_frames(directory) -> list[np.ndarray]:
    files = list_frames(directory)
    if not files:
        raise ValueError(f"no frames in {directory}")
    return [read_frame(p) for p in files]
