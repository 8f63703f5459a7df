"""Report figures rendered to image files next to the CSV outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "egodance",
}
_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def plot_losses(history: dict, path) -> None:
    """``history`` maps column name to a list of values; ``step`` is the x axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        steps = np.asarray(history["step"], dtype=float)
        for key in ("total", "simple", "kin", "align"):
            if key in history:
                ax.semilogy(steps, np.asarray(history[key], dtype=float), label=key, lw=1)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_cosine(matrix: np.ndarray, names, path) -> None:
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(6.5, 5.5))
        im = ax.imshow(matrix, vmin=-1, vmax=1, cmap="coolwarm")
        ax.set_xticks(range(len(names)), names, rotation=90, fontsize=6)
        ax.set_yticks(range(len(names)), names, fontsize=6)
        fig.colorbar(im, ax=ax, shrink=0.8, label="cosine similarity")
        _save(fig, path)


def plot_correlation(series: dict, path) -> None:
    """Kinematic velocity with beat markers, and the flow proxy beneath it."""
    with plt.rc_context(STYLE):
        fig, (a0, a1) = plt.subplots(2, 1, figsize=(7, 4), sharex=True)
        t = np.asarray(series["frame"])
        a0.plot(t, series["kinematic_velocity"], lw=1, color="C0")
        for b in t[np.asarray(series["beat"]) > 0]:
            a0.axvline(b, color="C3", lw=0.7, alpha=0.6)
        a0.set_ylabel("mean joint speed (m/s)")
        a1.plot(t, series["flow_proxy"], lw=1, color="C2", label="flow proxy")
        if "head_angular_speed" in series:
            a1.plot(t, series["head_angular_speed"], lw=1, color="C1", alpha=0.7,
                    label="head angular speed")
        a1.set_xlabel("frame")
        a1.legend(frameon=False, fontsize=7)
        _save(fig, path)


def plot_metrics(rows: list[dict], path) -> None:
    """Bar chart of per-sequence metrics, one panel per metric."""
    keys = [k for k in rows[0] if k != "name"]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(keys), figsize=(2 * len(keys), 2.8))
        names = [r["name"] for r in rows]
        for ax, k in zip(np.atleast_1d(axes), keys):
            ax.bar(range(len(rows)), [float(r[k]) for r in rows], color="C0")
            ax.set_title(k)
            ax.set_xticks(range(len(rows)), names, rotation=90, fontsize=6)
        _save(fig, path)
