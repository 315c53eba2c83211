"""Readers and writers for frames, flow fields, canvases and trajectory tables."""

import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .flow import FlowField
from .advect import Trajectory

FLO_TAG = 202021.25
DTC_MAGIC = b"DTC1"


# --- grayscale frames ------------------------------------------------------

def _pgm_tokens(buf):
    """Yield (token, end_offset) for the whitespace/comment separated PGM header."""
    pos = 0
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
                pos += 1
            yield buf[start:pos], pos


def read_pgm(path):
    buf = Path(path).read_bytes()
    tokens = _pgm_tokens(buf)
    try:
        magic, _ = next(tokens)
        width, _ = next(tokens)
        height, _ = next(tokens)
        maxval, end = next(tokens)
        width, height, maxval = int(width), int(height), int(maxval)
    except (StopIteration, ValueError):
        raise DataError(f"{path}: truncated or malformed PGM header") from None
    if magic != b"P5":
        raise DataError(f"{path}: only binary PGM (P5) is supported")
    if not 0 < maxval < 65536:
        raise DataError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    offset = end + 1
    count = width * height
    if len(buf) < offset + count * dtype.itemsize:
        raise DataError(f"{path}: pixel data truncated")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    return data.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, img, maxval=255):
    """Write a [0,1] grayscale array as binary PGM (values scaled by maxval and rounded)."""
    img = np.asarray(img, dtype=np.float64)
    q = np.floor(np.clip(img, 0.0, 1.0) * maxval + 0.5)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(q.astype(dtype).tobytes())


def read_image(path):
    """Load a grayscale frame as float64 in [0,1]. PGM (P5) and PNG are accepted."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    try:
        with Image.open(path) as im:
            if im.mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64)
                return arr / (65535.0 if arr.max() > 255 else 255.0)
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    return arr / 255.0


def write_png(path, img):
    q = np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255 + 0.5)
    Image.fromarray(q.astype(np.uint8), mode="L").save(path)


def write_image(path, img):
    if Path(path).suffix.lower() == ".png":
        write_png(path, img)
    else:
        write_pgm(path, img)


# --- Middlebury .flo ------------------------------------------------------

def write_flo(path, flow):
    h, w = flow.u.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = flow.u
    data[..., 1] = flow.v
    with open(path, "wb") as fh:
        fh.write(struct.pack("<f", FLO_TAG))
        fh.write(struct.pack("<ii", w, h))
        fh.write(data.tobytes())


def read_flo(path):
    buf = Path(path).read_bytes()
    if len(buf) < 12:
        raise DataError(f"{path}: truncated .flo header")
    (tag,) = struct.unpack_from("<f", buf, 0)
    if tag != FLO_TAG:
        raise DataError(f"{path}: bad .flo tag {tag!r}")
    w, h = struct.unpack_from("<ii", buf, 4)
    if w <= 0 or h <= 0 or len(buf) != 12 + 8 * w * h:
        raise DataError(f"{path}: inconsistent .flo size")
    data = np.frombuffer(buf, dtype="<f4", offset=12).reshape(h, w, 2)
    return FlowField(data[..., 0].astype(np.float64), data[..., 1].astype(np.float64))


# --- raw float canvases ---------------------------------------------------

def write_canvas_raw(path, img):
    img = np.asarray(img)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(DTC_MAGIC)
        fh.write(struct.pack("<ii", w, h))
        fh.write(img.astype("<f4").tobytes())


def read_canvas_raw(path):
    buf = Path(path).read_bytes()
    if buf[:4] != DTC_MAGIC:
        raise DataError(f"{path}: not a DTC1 canvas file")
    w, h = struct.unpack_from("<ii", buf, 4)
    if w <= 0 or h <= 0 or len(buf) != 12 + 4 * w * h:
        raise DataError(f"{path}: inconsistent canvas size")
    return np.frombuffer(buf, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)


# --- trajectory tables ----------------------------------------------------

TRAJ_HEADER = ["traj_id", "t", "x", "y", "u", "v"]


def write_trajectories(path, trajs):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(TRAJ_HEADER)
        for tid, traj in enumerate(trajs):
            for t, x, y, u, v in traj.points:
                out.writerow([tid, int(t), f"{x:.6f}", f"{y:.6f}", f"{u:.6f}", f"{v:.6f}"])


def read_trajectories(path):
    groups = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRAJ_HEADER:
            raise DataError(f"{path}: expected header {','.join(TRAJ_HEADER)}")
        for row in reader:
            if not row:
                continue
            try:
                tid = int(row[0])
                groups.setdefault(tid, []).append([float(c) for c in row[1:6]])
            except (ValueError, IndexError):
                raise DataError(f"{path}: malformed row {row!r}") from None
    return [Trajectory(np.array(groups[k])) for k in sorted(groups)]
