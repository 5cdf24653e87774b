"""Deterministic SVG panels from SimLog CSV files."""

from __future__ import annotations

import csv
import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

REQUIRED = ("t", "X", "Y", "u", "FxT", "delta_f")
FIGSIZE = (10.0, 7.5)


class MissingColumn(KeyError):
    pass


def read_log_csv(path: str) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    out = {}
    for name in header:
        try:
            out[name] = np.array([float(r[name]) for r in rows], dtype=float)
        except ValueError:
            out[name] = np.array([r[name] for r in rows], dtype=object)
    return out


def plot_logs(logs: Sequence[tuple[str, dict[str, np.ndarray]]], out_path: str, title: str | None = None) -> None:
    """Trajectory, speed, longitudinal force and steering angle, one line per
    labelled log."""
    plt.rcParams["svg.hashsalt"] = "sotif-sentinel"
    plt.rcParams["svg.fonttype"] = "none"
    fig, axes = plt.subplots(2, 2, figsize=FIGSIZE)
    ax_traj, ax_u, ax_f, ax_d = axes.ravel()
    for label, log in logs:
        ax_traj.plot(log["X"], log["Y"], label=label)
        ax_u.plot(log["t"], log["u"], label=label)
        ax_f.plot(log["t"], log["FxT"], label=label)
        ax_d.plot(log["t"], log["delta_f"], label=label)
    first = logs[0][1] if logs else {}
    if "worker_X" in first and np.any(np.isfinite(first["worker_X"].astype(float))):
        ax_traj.plot(first["worker_X"], first["worker_Y"], "k--", linewidth=1, label="worker")
    ax_traj.set_xlabel("X [m]")
    ax_traj.set_ylabel("Y [m]")
    ax_traj.set_title("trajectory")
    ax_u.set_xlabel("t [s]")
    ax_u.set_ylabel("u [m/s]")
    ax_u.set_title("longitudinal velocity")
    ax_f.set_xlabel("t [s]")
    ax_f.set_ylabel("F_xT [N]")
    ax_f.set_title("longitudinal force")
    ax_d.set_xlabel("t [s]")
    ax_d.set_ylabel("delta_f [rad]")
    ax_d.set_title("steering angle")
    for ax in axes.ravel():
        ax.grid(True, linewidth=0.3)
    ax_traj.legend(loc="best", fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_csv(paths: Sequence[str], out_path: str, labels: Sequence[str] | None = None, title: str | None = None) -> None:
    labels = list(labels) if labels else [os.path.splitext(os.path.basename(p))[0] for p in paths]
    plot_logs([(lab, read_log_csv(p)) for lab, p in zip(labels, paths)], out_path, title)
