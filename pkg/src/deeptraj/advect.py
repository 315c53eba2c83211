"""Particle advection through a sequence of flow fields.

A regular grid of particles is seeded on the first flow field and moved with
explicit Euler steps ``x <- x + F(x) * B``. The gate ``B`` is 1 while the
particle stays in the frame, on the foreground, above a minimum speed and
roughly keeps its heading; once it drops to 0 the particle is retired and its
trajectory is closed.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .flow import bilinear_sample


@dataclass(frozen=True)
class AdvectParams:
    stride: int = 2
    min_extent: float = 5.0
    coherence_cos_min: float = 0.0
    magnitude_min: float = 0.05
    use_foreground_mask: bool = True

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.min_extent < 0:
            raise ValueError("min_extent must be >= 0")
        if not -1.0 <= self.coherence_cos_min <= 1.0:
            raise ValueError("coherence_cos_min must be in [-1, 1]")
        if self.magnitude_min < 0:
            raise ValueError("magnitude_min must be >= 0")


class Trajectory:
    """Rows of ``(t, x, y, u, v)``: position at frame t and the flow sampled there."""

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.array(points, dtype=np.float64).reshape(-1, 5)
        if len(pts) < 1:
            raise DataError("trajectory needs at least one point")
        if not np.isfinite(pts).all():
            raise DataError("trajectory contains non-finite values")
        if len(pts) > 1 and not np.all(np.diff(pts[:, 0]) == 1):
            raise DataError("trajectory frame indices must increase by one")
        pts.flags.writeable = False
        self.points = pts

    def __len__(self):
        return len(self.points)

    @property
    def start(self):
        return self.points[0, 1:3]

    @property
    def end(self):
        return self.points[-1, 1:3]

    def extent(self):
        d = self.end - self.start
        return float(np.hypot(d[0], d[1]))

    def __repr__(self):
        return f"Trajectory(len={len(self)}, t0={int(self.points[0, 0])})"


@dataclass
class ParticleGrid:
    width: int
    height: int
    stride: int
    sources: np.ndarray  # (P, 2) as (x, y)
    current: np.ndarray  # (P, 2)
    active: np.ndarray  # (P,) bool
    maps: np.ndarray  # (2, rows, cols): horizontal and vertical coordinate maps
    prev_disp: np.ndarray  # (P, 2), NaN before the first accepted step
    history: list = field(default_factory=list)  # per step: (emitted mask, (P, 5) rows)

    def __len__(self):
        return len(self.sources)


def init_particles(width, height, stride):
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride >= min(width, height):
        raise DataError("stride too large")
    xs = np.arange(0, width, stride, dtype=np.float64)
    ys = np.arange(0, height, stride, dtype=np.float64)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    sources = np.column_stack([gx.ravel(), gy.ravel()])
    return ParticleGrid(
        width=width,
        height=height,
        stride=stride,
        sources=sources,
        current=sources.copy(),
        active=np.ones(len(sources), dtype=bool),
        maps=np.stack([gx, gy]),
        prev_disp=np.full((len(sources), 2), np.nan),
    )


def _gate_many(in_bounds, mask_values, samples, prev, params):
    mag = np.hypot(samples[:, 0], samples[:, 1])
    ok = in_bounds & (mag >= params.magnitude_min)
    if mask_values is not None and params.use_foreground_mask:
        ok &= mask_values >= 0.5
    pmag = np.hypot(prev[:, 0], prev[:, 1])
    has_dir = np.isfinite(pmag) & (pmag > 0) & (mag > 0)
    dot = samples[:, 0] * prev[:, 0] + samples[:, 1] * prev[:, 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(has_dir, dot / (mag * pmag), 1.0)
    ok &= ~has_dir | (cos >= params.coherence_cos_min)
    return ok


def gate(in_bounds, mask_value, flow_sample, prev_disp, params):
    """Return B in {0, 1} for one particle.

    ``mask_value`` may be None (no mask); ``prev_disp`` is None on the first step.
    """
    prev = np.full((1, 2), np.nan) if prev_disp is None else np.asarray(prev_disp, float).reshape(1, 2)
    mask = None if mask_value is None else np.array([float(mask_value)])
    ok = _gate_many(np.array([bool(in_bounds)]), mask, np.asarray(flow_sample, float).reshape(1, 2),
                    prev, params)
    return int(ok[0])


def advect_step(grid, flow, mask, params, t):
    """Move every active particle by one flow field.

    Returns the indices of particles that emitted a point and the emitted
    ``(t, x, y, u, v)`` rows; the grid is updated in place.
    """
    if flow.shape != (grid.height, grid.width):
        raise DataError("flow size does not match particle grid")
    if mask is not None and np.shape(mask) != flow.shape:
        raise DataError("mask size does not match particle grid")
    idx = np.flatnonzero(grid.active)
    pos = grid.current[idx]
    x, y = pos[:, 0], pos[:, 1]
    in_bounds = (x >= 0) & (x <= grid.width - 1) & (y >= 0) & (y <= grid.height - 1)
    samples = np.column_stack([bilinear_sample(flow.u, x, y), bilinear_sample(flow.v, x, y)])
    mask_values = None
    if mask is not None:
        xi = np.clip(np.floor(x + 0.5), 0, grid.width - 1).astype(np.intp)
        yi = np.clip(np.floor(y + 0.5), 0, grid.height - 1).astype(np.intp)
        mask_values = np.asarray(mask)[yi, xi]
    ok = _gate_many(in_bounds, mask_values, samples, grid.prev_disp[idx], params)

    moved = idx[ok]
    rows = np.column_stack([np.full(len(moved), float(t)), pos[ok], samples[ok]])
    grid.current[moved] = pos[ok] + samples[ok]
    grid.prev_disp[moved] = samples[ok]
    grid.active[idx[~ok]] = False

    cols = grid.maps.shape[2]
    r, c = np.divmod(moved, cols)
    grid.maps[0, r, c] = grid.current[moved, 0]
    grid.maps[1, r, c] = grid.current[moved, 1]

    emitted = np.zeros(len(grid), dtype=bool)
    emitted[moved] = True
    step_rows = np.zeros((len(grid), 5))
    step_rows[moved] = rows
    grid.history.append((emitted, step_rows))
    return moved, rows


def collect_trajectories(grid):
    """Assemble per-particle trajectories from the grid's step history."""
    if not grid.history:
        return []
    emitted = np.stack([h[0] for h in grid.history])  # (steps, P)
    rows = np.stack([h[1] for h in grid.history])  # (steps, P, 5)
    counts = emitted.sum(axis=0)
    trajs = []
    for p in np.flatnonzero(counts):
        trajs.append(Trajectory(rows[emitted[:, p], p]))
    return trajs


def extract_trajectories(flows, masks=None, params=None, t0=0):
    params = params or AdvectParams()
    flows = list(flows)
    if not flows:
        return []
    shape = flows[0].shape
    if any(f.shape != shape for f in flows):
        raise DataError("flow fields differ in size")
    if masks is not None:
        masks = list(masks)
        if len(masks) != len(flows):
            raise DataError("mask count does not match flow count")
        if any(np.shape(m) != shape for m in masks):
            raise DataError("mask size does not match flow")
    grid = init_particles(shape[1], shape[0], params.stride)
    for k, fl in enumerate(flows):
        if not grid.active.any():
            break
        advect_step(grid, fl, None if masks is None else masks[k], params, t0 + k)
    return collect_trajectories(grid)


def filter_trajectories(trajs, min_extent):
    if min_extent < 0:
        raise ValueError("min_extent must be >= 0")
    return [tr for tr in trajs if tr.extent() >= min_extent]
