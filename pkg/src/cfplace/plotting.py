"""PNG figures for CLI results (matplotlib, headless Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .scenario import UserDensity, pdf_eval  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_rates(reports: dict, out_dir, prefix="") -> list[Path]:
    """Sum rate and 95%-likely rate versus ``rho_r`` for each labelled report."""
    out = Path(out_dir)
    paths = []
    for attr, ylabel, stem in (("sum_rate", "sum rate (bits/s/Hz)", "sum_rate"),
                               ("likely95_rate", "95%-likely rate (bits/s/Hz)", "likely95_rate")):
        fig, ax = plt.subplots(figsize=(5, 3.6))
        for label, rep in reports.items():
            ax.plot(rep.powers_db, getattr(rep, attr), marker="o", ms=3, label=label)
        ax.set_xlabel(r"$\rho_r$ (dB)")
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7)
        paths.append(_save(fig, out / f"{prefix}{stem}.png"))
    return paths


def plot_placements(placements: dict, density: UserDensity, path, n_grid=200) -> Path:
    """AP positions of each method over contours of the user density."""
    xmin, xmax, ymin, ymax = density.region
    xs = np.linspace(xmin, xmax, n_grid)
    ys = np.linspace(ymin, ymax, n_grid)
    X, Y = np.meshgrid(xs, ys)
    Z = pdf_eval(density, np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.contour(X, Y, Z, levels=8, colors="0.7", linewidths=0.6)
    markers = "os^vD<>px"
    for i, (label, pl) in enumerate(placements.items()):
        pl = np.asarray(pl)
        ax.scatter(pl[:, 0], pl[:, 1], s=14, marker=markers[i % len(markers)], label=label)
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(fontsize=7)
    return _save(fig, path)


def plot_oned_figure(rows, title, path) -> Path:
    """Colocated sweep curve plus one horizontal line per fixed placement."""
    q = [float(r[1]) for r in rows if r[0] == "colocated"]
    v = [r[2] for r in rows if r[0] == "colocated"]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(q, v, color="k", lw=1, label="colocated")
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    fixed = [r for r in rows if r[0] != "colocated"]
    for i, (label, _, value) in enumerate(fixed):
        ax.axhline(value, lw=1, ls="--", label=label, color=colors[i % len(colors)])
    ax.set_xlabel("colocated AP position q")
    ax.set_title(title, fontsize=9)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    return _save(fig, path)
