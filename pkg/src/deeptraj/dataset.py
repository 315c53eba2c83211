"""Video records, manifests, segmentation, train/test splits and synthetic data."""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .fileio import read_image, write_pgm

FRAME_SUFFIXES = (".pgm", ".png")
SPLITS = ("train", "test", "unassigned")

MOTION_FAMILIES = (
    "translate_right",
    "translate_down",
    "oscillate_horizontal",
    "orbit",
    "translate_left",
    "translate_up",
    "oscillate_vertical",
)


@dataclass(frozen=True)
class VideoRecord:
    frames_dir: Path
    mask_dir: Path | None
    label: str
    split: str = "unassigned"

    def __post_init__(self):
        object.__setattr__(self, "frames_dir", Path(self.frames_dir))
        if self.mask_dir is not None:
            object.__setattr__(self, "mask_dir", Path(self.mask_dir))
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")


@dataclass(frozen=True)
class SegmentPlan:
    n: int
    boundaries: tuple  # half-open (start, end) frame intervals


# --- manifests ------------------------------------------------------------

def read_manifest(path):
    """Parse ``frames_dir<TAB>mask_dir|-<TAB>label<TAB>split|-`` lines.

    Relative directories are resolved against the manifest's folder.
    """
    path = Path(path)
    base = path.parent
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
        frames, masks, label, split = parts
        records.append(VideoRecord(
            frames_dir=base / frames,
            mask_dir=None if masks == "-" else base / masks,
            label=label,
            split="unassigned" if split == "-" else split,
        ))
    return records


def write_manifest(path, records):
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for rec in records:
        def rel(p):
            p = Path(p).resolve()
            try:
                return p.relative_to(base).as_posix()
            except ValueError:
                return p.as_posix()
        masks = "-" if rec.mask_dir is None else rel(rec.mask_dir)
        split = "-" if rec.split == "unassigned" else rec.split
        lines.append("\t".join([rel(rec.frames_dir), masks, rec.label, split]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def class_names(records):
    return sorted({r.label for r in records})


# --- loading --------------------------------------------------------------

def _numbered_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    found = {}
    for p in directory.iterdir():
        if p.suffix.lower() in FRAME_SUFFIXES and p.stem.isdigit():
            idx = int(p.stem)
            if idx in found:
                raise DataError(f"{directory}: duplicate frame index {idx}")
            found[idx] = p
    if not found:
        raise DataError(f"{directory}: no numbered frames")
    keys = sorted(found)
    if keys[-1] - keys[0] + 1 != len(keys):
        raise DataError(f"{directory}: non-contiguous sequence")
    return [found[k] for k in keys]


def load_video(record):
    """Return (frames, masks); masks is None when the record has none."""
    frames = [read_image(p) for p in _numbered_files(record.frames_dir)]
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise DataError(f"{record.frames_dir}: frames differ in size")
    masks = None
    if record.mask_dir is not None:
        files = _numbered_files(record.mask_dir)
        if len(files) != len(frames):
            raise DataError(f"{record.mask_dir}: {len(files)} masks for {len(frames)} frames")
        masks = [(read_image(p) >= 0.5).astype(np.float64) for p in files]
        if any(m.shape != shape for m in masks):
            raise DataError(f"{record.mask_dir}: mask size differs from frames")
    return frames, masks


# --- segments and splits --------------------------------------------------

def plan_segments(frame_count, n):
    if n < 1:
        raise DataError("segment count must be >= 1")
    if frame_count < 2 * n:
        raise DataError("video too short")
    size = frame_count // n
    bounds = [(k * size, (k + 1) * size) for k in range(n - 1)]
    bounds.append(((n - 1) * size, frame_count))
    return SegmentPlan(n, tuple(bounds))


def split_dataset(records, per_class_train=6, seed=0, train_fraction=None):
    """Assign train/test per class with a seeded uniform draw.

    ``per_class_train`` records of every class go to training; with
    ``train_fraction`` set, round(fraction * class size) go instead.
    """
    by_class = {}
    for i, rec in enumerate(records):
        by_class.setdefault(rec.label, []).append(i)
    rng = np.random.default_rng(seed)
    splits = ["test"] * len(records)
    for label in sorted(by_class):
        members = by_class[label]
        if train_fraction is not None:
            k = int(np.floor(train_fraction * len(members) + 0.5))
        else:
            k = per_class_train
        if k < 1 or k >= len(members):
            raise DataError(
                f"class {label!r} has {len(members)} records; cannot put {k} in training and keep a test set")
        for j in rng.choice(len(members), size=k, replace=False):
            splits[members[j]] = "train"
    return [dataclasses.replace(rec, split=s) for rec, s in zip(records, splits)]


# --- synthetic motion data ------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    class_count: int = 4
    sequences_per_class: int = 20
    frame_count: int = 18
    frame_size: int = 64
    motions: tuple = field(default=None)
    noise: float = 0.01
    speed: float = 2.0
    blob_radius: float = 9.0
    seed: int = 0

    def __post_init__(self):
        motions = self.motions or MOTION_FAMILIES[:self.class_count]
        object.__setattr__(self, "motions", tuple(motions))
        if len(self.motions) != self.class_count:
            raise ValueError("need one motion family per class")
        if len(set(self.motions)) != len(self.motions):
            raise ValueError("motion families must be distinct")
        unknown = set(self.motions) - set(MOTION_FAMILIES)
        if unknown:
            raise ValueError(f"unknown motion families: {sorted(unknown)}")
        if self.frame_count < 2 or self.frame_size < 16 or self.sequences_per_class < 1:
            raise ValueError("synthetic videos need >= 2 frames of >= 16 px")


def motion_path(family, frame_count, size, speed, jitter=(0.0, 0.0), phase=0.0):
    """Blob centre (x, y) for every frame of one sequence."""
    t = np.arange(frame_count, dtype=np.float64)
    mid = (size - 1) / 2.0
    travel = speed * (frame_count - 1) / 2.0
    jx, jy = jitter
    if family == "translate_right":
        return np.column_stack([mid - travel + jx + speed * t, np.full_like(t, mid + jy)])
    if family == "translate_left":
        return np.column_stack([mid + travel + jx - speed * t, np.full_like(t, mid + jy)])
    if family == "translate_down":
        return np.column_stack([np.full_like(t, mid + jx), mid - travel + jy + speed * t])
    if family == "translate_up":
        return np.column_stack([np.full_like(t, mid + jx), mid + travel + jy - speed * t])
    if family in ("oscillate_horizontal", "oscillate_vertical"):
        amp = size * 0.16
        period = 16.0
        swing = amp * np.sin(2 * np.pi * t / period + phase)
        if family == "oscillate_horizontal":
            return np.column_stack([mid + jx + swing, np.full_like(t, mid + jy)])
        return np.column_stack([np.full_like(t, mid + jx), mid + jy + swing])
    if family == "orbit":
        radius = size * 0.22
        omega = 1.5 * speed / radius
        ang = omega * t + phase
        return np.column_stack([mid + jx + radius * np.cos(ang), mid + jy + radius * np.sin(ang)])
    raise ValueError(f"unknown motion family {family!r}")


def _sinusoid_texture(rng, waves=6, fmin=0.15, fmax=0.6):
    k = rng.uniform(fmin, fmax, size=waves)
    theta = rng.uniform(0, np.pi, size=waves)
    kx, ky = k * np.cos(theta), k * np.sin(theta)
    phi = rng.uniform(0, 2 * np.pi, size=waves)

    def tex(x, y):
        val = np.zeros(np.broadcast(x, y).shape)
        for a, b, p in zip(kx, ky, phi):
            val += np.sin(a * x + b * y + p)
        return val / waves

    return tex


def render_sequence(centres, size, radius, rng, noise):
    """Frames and exact masks of a textured disc moving over a static textured background."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    bg_tex = _sinusoid_texture(rng, fmin=0.1, fmax=0.35)
    blob_tex = _sinusoid_texture(rng)
    background = 0.3 + 0.15 * bg_tex(xx, yy)
    frames, masks = [], []
    for cx, cy in centres:
        inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
        blob = 0.72 + 0.22 * blob_tex(xx - cx, yy - cy)
        frame = np.where(inside, blob, background)
        if noise > 0:
            frame = frame + rng.normal(0.0, noise, size=frame.shape)
        frames.append(np.clip(frame, 0.0, 1.0))
        masks.append(inside.astype(np.float64))
    return frames, masks


def synth_generate(spec, root):
    """Write a labelled synthetic corpus under ``root`` and return its records.

    Layout: ``root/<family>/<family>_NN/{frames,masks}/NNNNN.pgm`` plus a
    ``centres.tsv`` with the exact blob path and ``root/manifest.tsv``.
    """
    root = Path(root)
    rng = np.random.default_rng(spec.seed)
    records = []
    for family in spec.motions:
        for k in range(spec.sequences_per_class):
            seq_rng = np.random.default_rng(rng.integers(2**63))
            jitter = tuple(seq_rng.uniform(-2.0, 2.0, size=2))
            phase = seq_rng.uniform(-0.5, 0.5)
            centres = motion_path(family, spec.frame_count, spec.frame_size, spec.speed, jitter, phase)
            frames, masks = render_sequence(centres, spec.frame_size, spec.blob_radius, seq_rng, spec.noise)
            seq_dir = root / family / f"{family}_{k:02d}"
            (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
            (seq_dir / "masks").mkdir(parents=True, exist_ok=True)
            for t, (fr, mk) in enumerate(zip(frames, masks)):
                write_pgm(seq_dir / "frames" / f"{t:05d}.pgm", fr)
                write_pgm(seq_dir / "masks" / f"{t:05d}.pgm", mk)
            np.savetxt(seq_dir / "centres.tsv", centres, delimiter="\t", fmt="%.17g", header="x\ty", comments="")
            records.append(VideoRecord(seq_dir / "frames", seq_dir / "masks", family))
    write_manifest(root / "manifest.tsv", records)
    return records
