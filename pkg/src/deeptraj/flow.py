"""Dense variational optical flow.

Energy: Psi(gray-value residual^2 + gamma * gradient residual^2)
+ alpha * Psi(|grad u|^2 + |grad v|^2) with Psi(s^2) = sqrt(s^2 + eps^2),
minimized coarse-to-fine. At each pyramid level the second frame is warped
towards the first (outer fixed point), the flow increment is linearized, and
the resulting sparse system is relaxed with red-black SOR while the robust
weights are re-evaluated (inner iterations).
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError

# Intensities are solved on a 0..255 scale so the default weights keep their
# usual meaning regardless of how frames were loaded.
INTENSITY_SCALE = 255.0


@dataclass(frozen=True)
class FlowParams:
    alpha: float = 30.0
    gamma: float = 80.0
    pyramid_factor: float = 0.5
    min_level_size: int = 16
    outer_iterations: int = 10
    inner_iterations: int = 5
    sor_iterations: int = 3
    sor_relaxation: float = 1.8
    epsilon: float = 1e-3
    presmooth_sigma: float = 0.8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if not 0 < self.pyramid_factor < 1:
            raise ValueError("pyramid_factor must be in (0, 1)")
        if self.min_level_size < 8:
            raise ValueError("min_level_size must be >= 8")
        if self.outer_iterations < 1 or self.inner_iterations < 1 or self.sor_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if not 0 < self.sor_relaxation < 2:
            raise ValueError("sor_relaxation must be in (0, 2)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.presmooth_sigma < 0:
            raise ValueError("presmooth_sigma must be >= 0")


class FlowField:
    """Per-pixel displacement (u right, v down) from one frame to the next.

    The arrays are copied and frozen on construction.
    """

    __slots__ = ("u", "v")

    def __init__(self, u, v):
        u = np.array(u, dtype=np.float64)
        v = np.array(v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise DataError("flow components must be 2D grids of equal shape")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise DataError("flow contains non-finite values")
        u.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    def __setattr__(self, name, value):
        raise AttributeError("FlowField is immutable")

    @property
    def shape(self):
        return self.u.shape

    @property
    def width(self):
        return self.u.shape[1]

    @property
    def height(self):
        return self.u.shape[0]

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    def masked(self, mask):
        """Zero the flow wherever ``mask`` is below 0.5."""
        keep = np.asarray(mask) >= 0.5
        if keep.shape != self.shape:
            raise DataError("mask size does not match flow")
        return FlowField(np.where(keep, self.u, 0.0), np.where(keep, self.v, 0.0))

    def __repr__(self):
        return f"FlowField({self.width}x{self.height})"


def check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DataError("invalid image")
    if not np.isfinite(img).all():
        raise DataError("invalid image")
    return img


def bilinear_sample(img, x, y):
    """Sample ``img`` at real coordinates, clamping to the nearest edge pixel."""
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1)
    y = np.clip(y, 0.0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    bottom = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    return top + fy * (bottom - top)


def _round_half_up(x):
    return int(np.floor(x + 0.5))


def _resample(img, out_h, out_w):
    """Bilinear resampling with pixel-centre alignment (used between pyramid levels)."""
    h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(img, xx, yy)


def build_pyramid(img, factor, min_size):
    """Return pyramid levels fine to coarse; level 0 is ``img`` itself."""
    if not 0 < factor < 1:
        raise ValueError("factor must be in (0, 1)")
    if min_size < 8:
        raise ValueError("min_size must be >= 8")
    img = check_image(img)
    sigma = np.sqrt(1.0 / factor**2 - 1.0) / 2.0
    levels = [img]
    while True:
        h, w = levels[-1].shape
        nh, nw = _round_half_up(h * factor), _round_half_up(w * factor)
        if nh < min_size or nw < min_size:
            break
        smooth = ndimage.gaussian_filter(levels[-1], sigma, mode="nearest")
        levels.append(_resample(smooth, nh, nw))
    return levels


def warp_image(img, flow):
    """Backward warp: out(x, y) = img(x + u, y + v), bilinear with edge clamping."""
    img = check_image(img)
    if img.shape != flow.shape:
        raise DataError("frame size mismatch")
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return bilinear_sample(img, xx + flow.u, yy + flow.v)


def flow_magnitude(flow):
    return np.hypot(flow.u, flow.v)


def _grad(f):
    """Central differences with edge replication; returns (d/dx, d/dy)."""
    p = np.pad(f, 1, mode="edge")
    fx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    fy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return fx, fy


def _psi_prime(s2, eps2):
    # derivative of sqrt(s^2 + eps^2) with respect to s^2
    return 0.5 / np.sqrt(s2 + eps2)


def _neighbour_weights(psi):
    """Diffusivities on the four pixel edges; zero across the image border."""
    h, w = psi.shape
    east = np.zeros((h, w))
    south = np.zeros((h, w))
    east[:, :-1] = 0.5 * (psi[:, :-1] + psi[:, 1:])
    south[:-1, :] = 0.5 * (psi[:-1, :] + psi[1:, :])
    west = np.zeros((h, w))
    north = np.zeros((h, w))
    west[:, 1:] = east[:, :-1]
    north[1:, :] = south[:-1, :]
    return north, south, west, east


def _neighbour_sum(f, north, south, west, east):
    out = np.zeros_like(f)
    out[1:, :] += north[1:, :] * f[:-1, :]
    out[:-1, :] += south[:-1, :] * f[1:, :]
    out[:, 1:] += west[:, 1:] * f[:, :-1]
    out[:, :-1] += east[:, :-1] * f[:, 1:]
    return out


def _solve_level(i1, i2, u, v, params):
    h, w = i1.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    colours = [(yy + xx) % 2 == 0, (yy + xx) % 2 == 1]
    eps2 = params.epsilon**2
    alpha, gamma, omega = params.alpha, params.gamma, params.sor_relaxation
    i1x, i1y = _grad(i1)

    for _ in range(params.outer_iterations):
        wx, wy = xx + u, yy + v
        inside = (wx >= 0) & (wx <= w - 1) & (wy >= 0) & (wy <= h - 1)
        i2w = bilinear_sample(i2, wx, wy)
        i2x, i2y = _grad(i2w)
        ix, iy = 0.5 * (i1x + i2x), 0.5 * (i1y + i2y)
        iz = i2w - i1
        ixx, ixy = _grad(ix)
        _, iyy = _grad(iy)
        ixz, iyz = i2x - i1x, i2y - i1y

        du = np.zeros_like(u)
        dv = np.zeros_like(v)
        for _ in range(params.inner_iterations):
            rd = iz + ix * du + iy * dv
            rgx = ixz + ixx * du + ixy * dv
            rgy = iyz + ixy * du + iyy * dv
            psi_d = _psi_prime(rd**2 + gamma * (rgx**2 + rgy**2), eps2) * inside
            psi_g = gamma * psi_d

            ux, uy = _grad(u + du)
            vx, vy = _grad(v + dv)
            psi_s = alpha * _psi_prime(ux**2 + uy**2 + vx**2 + vy**2, eps2)
            nbrs = _neighbour_weights(psi_s)
            wsum = nbrs[0] + nbrs[1] + nbrs[2] + nbrs[3]
            # smoothness pull of the already accumulated flow
            su = _neighbour_sum(u, *nbrs) - wsum * u
            sv = _neighbour_sum(v, *nbrs) - wsum * v

            a11 = psi_d * ix**2 + psi_g * (ixx**2 + ixy**2) + wsum
            a22 = psi_d * iy**2 + psi_g * (ixy**2 + iyy**2) + wsum
            a12 = psi_d * ix * iy + psi_g * (ixx * ixy + ixy * iyy)
            b1 = su - psi_d * ix * iz - psi_g * (ixx * ixz + ixy * iyz)
            b2 = sv - psi_d * iy * iz - psi_g * (ixy * ixz + iyy * iyz)

            for _ in range(params.sor_iterations):
                for c in colours:
                    target = (b1 + _neighbour_sum(du, *nbrs) - a12 * dv) / a11
                    du[c] = (1 - omega) * du[c] + omega * target[c]
                    target = (b2 + _neighbour_sum(dv, *nbrs) - a12 * du) / a22
                    dv[c] = (1 - omega) * dv[c] + omega * target[c]
        u = u + du
        v = v + dv
    return u, v


def compute_flow(prev, next, params=None):
    """Dense flow from ``prev`` to ``next`` (both 2D arrays with values in [0, 1])."""
    params = params or FlowParams()
    prev = np.asarray(prev, dtype=np.float64)
    next = np.asarray(next, dtype=np.float64)
    if prev.shape != next.shape:
        raise DataError("frame size mismatch")
    prev = check_image(prev) * INTENSITY_SCALE
    next = check_image(next) * INTENSITY_SCALE

    pyr1 = build_pyramid(prev, params.pyramid_factor, params.min_level_size)
    pyr2 = build_pyramid(next, params.pyramid_factor, params.min_level_size)
    h, w = pyr1[-1].shape
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    for level in range(len(pyr1) - 1, -1, -1):
        i1, i2 = pyr1[level], pyr2[level]
        if params.presmooth_sigma > 0:
            i1 = ndimage.gaussian_filter(i1, params.presmooth_sigma, mode="nearest")
            i2 = ndimage.gaussian_filter(i2, params.presmooth_sigma, mode="nearest")
        if u.shape != i1.shape:
            ch, cw = u.shape
            fh, fw = i1.shape
            u = _resample(u, fh, fw) * (fw / cw)
            v = _resample(v, fh, fw) * (fh / ch)
        u, v = _solve_level(i1, i2, u, v, params)
    return FlowField(u, v)
