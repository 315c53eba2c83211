"""Texture images: trajectories rasterized as flow magnitudes on a canvas."""

import numpy as np

from .errors import DataError

CANVAS_SIZE = 165


def render_canvas(trajs, width, height):
    """Write sqrt(u^2 + v^2) of every trajectory point at its rounded pixel.

    Overlapping writes keep the maximum, so the result does not depend on
    trajectory order.
    """
    canvas = np.zeros((height, width))
    if not trajs:
        return canvas
    pts = np.concatenate([tr.points for tr in trajs])
    xi = np.floor(pts[:, 1] + 0.5).astype(np.intp)
    yi = np.floor(pts[:, 2] + 0.5).astype(np.intp)
    if (xi < 0).any() or (xi >= width).any() or (yi < 0).any() or (yi >= height).any():
        raise DataError("trajectory outside canvas")
    mag = np.hypot(pts[:, 3], pts[:, 4])
    np.maximum.at(canvas, (yi, xi), mag)
    return canvas


def resize_bilinear(img, out_w, out_h):
    """Corner-aligned bilinear resampling; output stays within the input's range."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be >= 1")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = np.linspace(0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = a + fx * (b - a)
    bottom = c + fx * (d - c)
    out = top + fy * (bottom - top)
    return np.clip(out, img.min(), img.max())


def normalize(img):
    img = np.asarray(img, dtype=np.float64)
    peak = img.max() if img.size else 0.0
    if peak > 0:
        return img / peak
    return img.copy()


def build_stack(per_segment, n):
    """Stack per-segment texture images as an (n, H, W) network input."""
    if len(per_segment) != n:
        raise DataError("segment count mismatch")
    if n < 1:
        raise DataError("segment count must be >= 1")
    shapes = {np.shape(img) for img in per_segment}
    if len(shapes) != 1:
        raise DataError("segment canvases differ in size")
    return np.stack([np.asarray(img, dtype=np.float64) for img in per_segment])


def segment_texture(trajs, width, height, size=CANVAS_SIZE):
    """Render, resize to size x size and normalize one segment's canvas."""
    return normalize(resize_bilinear(render_canvas(trajs, width, height), size, size))
