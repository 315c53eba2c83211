"""Static figures for reports: confusion matrices, texture stacks, flow, loss curves."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .flow import flow_magnitude  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 110,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_confusion(cm, path, title=None):
    k = len(cm.classes)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.0 + 0.6 * k, 0.8 + 0.6 * k))
        im = ax.imshow(cm.rows, vmin=0.0, vmax=1.0, cmap="Blues")
        ax.set_xticks(range(k), cm.classes, rotation=45, ha="right")
        ax.set_yticks(range(k), cm.classes)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        for i in range(k):
            for j in range(k):
                val = cm.rows[i, j]
                ax.text(j, i, f"{val:.2f}", ha="center", va="center",
                        color="white" if val > 0.5 else "black", fontsize=7)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_stack(stack, path, title=None):
    n = len(stack)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, n, figsize=(2.4 * n, 2.6), squeeze=False)
        for s, ax in enumerate(axes[0]):
            ax.imshow(stack[s], cmap="magma", vmin=0.0, vmax=max(1e-12, float(np.max(stack))))
            ax.set_title(f"segment {s}")
            ax.set_axis_off()
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_flow(flow, path, step=4):
    mag = flow_magnitude(flow)
    h, w = flow.shape
    ys, xs = np.mgrid[0:h:step, 0:w:step]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4 * h / w))
        im = ax.imshow(mag, cmap="viridis")
        ax.quiver(xs, ys, flow.u[::step, ::step], -flow.v[::step, ::step], color="white",
                  angles="xy", scale_units="xy", scale=0.5, width=0.004)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="px / frame")
        ax.set_axis_off()
        return _save(fig, path)


def plot_trajectories(trajs, width, height, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4 * height / width))
        for tr in trajs:
            ax.plot(tr.points[:, 1], tr.points[:, 2], lw=0.6)
        ax.set_xlim(0, width - 1)
        ax.set_ylim(height - 1, 0)
        ax.set_aspect("equal")
        ax.set_title(f"{len(trajs)} trajectories")
        return _save(fig, path)


def plot_losses(losses, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        ax.plot(np.arange(1, len(losses) + 1), losses)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean cross-entropy")
        ax.set_yscale("log")
        return _save(fig, path)
