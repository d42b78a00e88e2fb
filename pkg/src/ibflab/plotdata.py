"""Plot-facing CSV files and the matching matplotlib figures.

CSV layouts (all numbers written with 9 significant digits):

``boundary_<replica>.csv``
    ``x,y`` centres of swept cells on the region boundary.
``fitted_disk.csv``
    ``circle,radius,x,y`` points on the circles ``t B`` and ``(1 ± eps) t B``.
``diameter_vs_time.csv``
    ``time,mean_diameter,std_error,replicas``.
``survival.csv``
    ``threshold,survival`` with survival nonincreasing down the file.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

BOUNDARY_HEADER = ["x", "y"]
DISK_HEADER = ["circle", "radius", "x", "y"]
DIAMETER_HEADER = ["time", "mean_diameter", "std_error", "replicas"]
SURVIVAL_HEADER = ["threshold", "survival"]
DISK_POINTS = 181


def fmt(x) -> str:
    if isinstance(x, (str, np.str_)):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.9g}"


@dataclass
class PlotData:
    boundaries: dict = field(default_factory=dict)  # replica -> (m, 2) array
    disk: tuple | None = None  # (t, ball_radius, eps)
    diameter: np.ndarray | None = None  # rows: time, mean, se, replicas
    survival: np.ndarray | None = None  # rows: threshold, survival

    def is_empty(self) -> bool:
        return not self.boundaries and self.disk is None and self.diameter is None and self.survival is None


def _write(path, header, rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return str(path)


def disk_rows(t: float, ball_radius: float, eps: float):
    ang = np.linspace(0, 2 * np.pi, DISK_POINTS)
    for name, scale in (("inner", 1 - eps), ("fitted", 1.0), ("outer", 1 + eps)):
        r = scale * t * ball_radius
        for a in ang:
            yield name, r, r * np.cos(a), r * np.sin(a)


def survival_rows(values) -> np.ndarray:
    """Empirical survival ``P[X > x]`` at the sorted sample values."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    return np.column_stack([x, 1.0 - np.arange(1, n + 1) / n]) if n else np.empty((0, 2))


def emit_plot_data(report: PlotData, out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for rep in sorted(report.boundaries):
        paths.append(_write(
            os.path.join(out_dir, f"boundary_{rep:04d}.csv"), BOUNDARY_HEADER, report.boundaries[rep]
        ))
    rows = disk_rows(*report.disk) if report.disk is not None else []
    paths.append(_write(os.path.join(out_dir, "fitted_disk.csv"), DISK_HEADER, rows))
    rows = report.diameter if report.diameter is not None else []
    paths.append(_write(os.path.join(out_dir, "diameter_vs_time.csv"), DIAMETER_HEADER, rows))
    rows = report.survival if report.survival is not None else []
    paths.append(_write(os.path.join(out_dir, "survival.csv"), SURVIVAL_HEADER, rows))
    return paths


def render_figures(report: PlotData, out_dir) -> list[str]:
    """PNG counterparts of the CSV files (skips empty parts)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if report.boundaries or report.disk is not None:
        fig, ax = plt.subplots(figsize=(5, 5))
        for rep in sorted(report.boundaries)[:8]:
            b = np.asarray(report.boundaries[rep])
            if len(b):
                ax.plot(b[:, 0], b[:, 1], ".", ms=1.5, label=f"replica {rep}")
        if report.disk is not None:
            t, rb, eps = report.disk
            ang = np.linspace(0, 2 * np.pi, DISK_POINTS)
            for scale, style in ((1 - eps, "k--"), (1.0, "k-"), (1 + eps, "k--")):
                r = scale * t * rb
                ax.plot(r * np.cos(ang), r * np.sin(ang), style, lw=0.8)
        ax.set_aspect("equal")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title("swept-region boundaries and scaled ball")
        p = os.path.join(out_dir, "shape.png")
        fig.savefig(p, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(p)
    if report.diameter is not None and len(report.diameter):
        d = np.asarray(report.diameter, dtype=float)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(d[:, 0], d[:, 1], yerr=d[:, 2], fmt="-", lw=1, capsize=0)
        ax.set_xlabel("t")
        ax.set_ylabel("mean diameter")
        p = os.path.join(out_dir, "diameter.png")
        fig.savefig(p, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(p)
    if report.survival is not None and len(report.survival):
        s = np.asarray(report.survival, dtype=float)
        keep = (s[:, 0] > 0) & (s[:, 1] > 0)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.loglog(s[keep, 0], s[keep, 1], "-", lw=1)
        ax.set_xlabel("tau / t")
        ax.set_ylabel("survival")
        p = os.path.join(out_dir, "survival.png")
        fig.savefig(p, dpi=120, bbox_inches="tight")
        plt.close(fig)
        paths.append(p)
    return paths
