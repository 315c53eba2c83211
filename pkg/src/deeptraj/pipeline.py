"""Video -> per-segment texture stack, plus the pipeline configuration file."""

import dataclasses
import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import advect as advection
from . import canvas, cnn
from .dataset import load_video, plan_segments
from .errors import DataError, PipelineError
from .flow import FlowParams, compute_flow


@dataclass(frozen=True)
class PipelineConfig:
    flow: FlowParams = field(default_factory=FlowParams)
    advect: advection.AdvectParams = field(default_factory=advection.AdvectParams)
    segments: int = 3
    canvas_size: int = canvas.CANVAS_SIZE
    network: cnn.NetworkConfig = field(default_factory=cnn.NetworkConfig)
    seed: int = 0

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError("segments must be >= 1")
        if self.canvas_size < 1:
            raise ValueError("canvas_size must be >= 1")

    def network_for(self, class_count):
        """Network settings with input shape, class count and seed tied to this pipeline."""
        return dataclasses.replace(
            self.network,
            input_channels=self.segments,
            input_size=self.canvas_size,
            class_count=class_count,
            seed=self.seed,
        )

    def stack_key(self):
        """Hash of everything that influences a texture stack."""
        text = repr((self.flow, self.advect, self.segments, self.canvas_size))
        return hashlib.sha1(text.encode()).hexdigest()[:16]


# --- key=value config files ----------------------------------------------

_SECTIONS = {"flow": FlowParams, "advect": advection.AdvectParams, "network": cnn.NetworkConfig}


def _parse_value(raw, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text):
    """Build a PipelineConfig from ``key = value`` lines (``#`` starts a comment).

    Keys are ``segments``, ``canvas_size``, ``seed`` or ``<section>.<field>``
    with section one of flow, advect, network.
    """
    top = {}
    sections = {name: {} for name in _SECTIONS}
    defaults = PipelineConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            if "." in key:
                section, name = key.split(".", 1)
                if section not in _SECTIONS:
                    raise DataError(f"config line {lineno}: unknown section {section!r}")
                base = getattr(defaults, section)
                if not hasattr(base, name):
                    raise DataError(f"config line {lineno}: unknown key {key!r}")
                sections[section][name] = _parse_value(raw, getattr(base, name))
            else:
                if key not in ("segments", "canvas_size", "seed"):
                    raise DataError(f"config line {lineno}: unknown key {key!r}")
                top[key] = int(raw)
        except ValueError as exc:
            raise DataError(f"config line {lineno}: {exc}") from None
    try:
        built = {name: cls(**sections[name]) for name, cls in _SECTIONS.items()}
        return PipelineConfig(**built, **top)
    except ValueError as exc:
        raise DataError(f"invalid configuration: {exc}") from None


def load_config(path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg):
    lines = [f"segments = {cfg.segments}", f"canvas_size = {cfg.canvas_size}", f"seed = {cfg.seed}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, bool):
                val = str(val).lower()
            elif isinstance(val, float):
                val = repr(val)
            lines.append(f"{section}.{f.name} = {val}")
    return "\n".join(lines) + "\n"


# --- stages ---------------------------------------------------------------

def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except DataError as exc:
        raise PipelineError(name, str(exc)) from exc


def video_flows(frames, masks, flow_params):
    """Flow for every consecutive frame pair, zeroed outside the first frame's mask."""
    flows = []
    for k in range(len(frames) - 1):
        fl = compute_flow(frames[k], frames[k + 1], flow_params)
        if masks is not None:
            fl = fl.masked(masks[k])
        flows.append(fl)
    return flows


def segment_trajectories(flows, masks, plan, params):
    """Filtered trajectories for each segment; frame indices are global."""
    out = []
    for start, end in plan.boundaries:
        seg_flows = flows[start:end - 1]
        seg_masks = None if masks is None or not params.use_foreground_mask else masks[start:end - 1]
        trajs = advection.extract_trajectories(seg_flows, seg_masks, params, t0=start)
        out.append(advection.filter_trajectories(trajs, params.min_extent))
    return out


def video_trajectories(record, cfg):
    frames, masks = _stage("load", load_video, record)
    plan = _stage("segment", plan_segments, len(frames), cfg.segments)
    flows = _stage("flow", video_flows, frames, masks, cfg.flow)
    trajs = _stage("advect", segment_trajectories, flows, masks, plan, cfg.advect)
    return frames[0].shape, plan, trajs


def run_pipeline(record, cfg):
    """Texture stack of shape (segments, canvas_size, canvas_size) for one video."""
    (h, w), _, per_segment = video_trajectories(record, cfg)
    textures = [_stage("canvas", canvas.segment_texture, trajs, w, h, cfg.canvas_size)
                for trajs in per_segment]
    return _stage("stack", canvas.build_stack, textures, cfg.segments)


def _cache_path(cache_dir, record, cfg):
    ident = f"{Path(record.frames_dir).resolve()}|{record.mask_dir and Path(record.mask_dir).resolve()}"
    digest = hashlib.sha1(ident.encode()).hexdigest()[:16]
    return Path(cache_dir) / f"{digest}-{cfg.stack_key()}.npy"


def _run_one(args):
    record, cfg, cache_dir = args
    if cache_dir is not None:
        path = _cache_path(cache_dir, record, cfg)
        if path.exists():
            return np.load(path)
    stack = run_pipeline(record, cfg)
    if cache_dir is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, stack)
    return stack


def compute_stacks(records, cfg, cache_dir=None, jobs=1):
    """Texture stacks for many records, in record order."""
    work = [(rec, cfg, cache_dir) for rec in records]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, work))
    return [_run_one(w) for w in work]
