"""Matplotlib figures for experiment reports (Agg backend, written to files)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE = {"dpi": 110, "metadata": {"Software": None}}


def render(result, experiment: str, path) -> str:
    """Draw the most informative view of ``result`` and save it to ``path``."""
    dens = result.densities
    if dens and all(d.dim == 1 for d in dens.values()):
        fig = _densities_1d(dens, experiment)
    elif dens:
        fig = _densities_2d(dens, experiment)
    elif result.curves:
        fig = _curves(result.curves, experiment)
    else:
        fig = _rows(result.rows, experiment)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return str(path)


def _densities_1d(dens, title):
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, d in dens.items():
        x = d.centers
        ax.errorbar(x, d.values, yerr=d.stderr, fmt="o-", ms=3, lw=1, capsize=2, label=name)
    ax.set_xlabel("y")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    return fig


def _densities_2d(dens, title):
    items = [(k, d) for k, d in dens.items() if d.dim == 2]
    fig, axes = plt.subplots(1, max(1, len(items)), figsize=(4.5 * max(1, len(items)), 4), squeeze=False)
    for ax, (name, d) in zip(axes[0], items):
        vals = np.array(d.values, dtype=float)
        if d.ordered_sector:
            lower = np.tril(np.ones_like(vals, dtype=bool), -1)
            vals = np.where(lower, np.nan, vals)
        im = ax.imshow(vals.T, origin="lower", extent=(d.edges[0], d.edges[-1], d.edges[0], d.edges[-1]),
                       aspect="equal")
        ax.set_title(f"{title}: {name}")
        ax.set_xlabel("y1")
        ax.set_ylabel("y2")
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    return fig


def _curves(curves, title):
    fig, axes = plt.subplots(1, len(curves), figsize=(5 * len(curves), 4), squeeze=False)
    for ax, (name, pts) in zip(axes[0], curves.items()):
        x = np.array([p[0] for p in pts], dtype=float)
        y = np.array([p[1] for p in pts], dtype=float)
        e = np.array([p[2] if p[2] is not None else 0.0 for p in pts], dtype=float)
        ax.errorbar(x, y, yerr=e, fmt="o-", capsize=3)
        if np.all(x > 0) and x.max() / x.min() >= 8:
            ax.set_xscale("log")
        ax.set_title(name)
        ax.set_xlabel("m" if "m" in name or "P(" in name else "x")
    fig.suptitle(title)
    fig.tight_layout()
    return fig


def _rows(rows, title):
    z, labels = [], []
    for r in rows:
        if r.oracle is None or r.stderr is None or not math.isfinite(r.estimate):
            continue
        se = math.hypot(r.stderr or 0.0, r.oracle_stderr or 0.0)
        z.append((r.estimate - r.oracle) / se if se > 0 else 0.0)
        labels.append(r.quantity[:48])
    fig, ax = plt.subplots(figsize=(7, 0.35 * max(len(z), 4) + 1))
    if z:
        pos = np.arange(len(z))
        ax.barh(pos, z, color=["tab:red" if abs(v) > 4 else "tab:blue" for v in z])
        ax.set_yticks(pos, labels, fontsize=7)
        ax.axvline(0, color="k", lw=0.8)
        ax.set_xlabel("(estimate - reference) / combined stderr")
    else:
        ax.text(0.5, 0.5, "no comparable rows", ha="center", va="center")
        ax.set_axis_off()
    ax.set_title(title)
    fig.tight_layout()
    return fig
