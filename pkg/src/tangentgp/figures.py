"""Render prediction CSVs to figure files (headless matplotlib)."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import Error, MissingFile


def _read_csv(path) -> tuple[list[str], np.ndarray]:
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"no such file: {p}")
    with p.open(newline="") as handle:
        rows = list(csv.reader(handle))
    header = rows[0]
    data = np.array([[float(c) for c in row] for row in rows[1:]])
    return header, data


def _columns(header, data, prefix):
    idx = [i for i, h in enumerate(header) if h.startswith(prefix)]
    return data[:, idx] if idx else None


def render_predictions(pred_csv, out_path, train_csv=None, target_column: str = "y") -> Path:
    """Draw a figure for a predictions CSV next to its delimited source.

    1D regression gets a mean line with a two-sigma band; 2D classification a
    scatter coloured by the first class probability.  Training data, when
    provided, is overlaid.
    """
    header, data = _read_csv(pred_csv)
    x = _columns(header, data, "x")
    probs = _columns(header, data, "prob_c")
    mean = _columns(header, data, "mean_c")
    pred_var = _columns(header, data, "pred_var")
    var = pred_var if pred_var is not None else _columns(header, data, "var_c")

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if probs is not None and x is not None and x.shape[1] >= 2:
        sc = ax.scatter(x[:, 0], x[:, 1], c=probs[:, -1], cmap="coolwarm", vmin=0.0, vmax=1.0, s=18)
        fig.colorbar(sc, ax=ax, label="class probability")
        ax.set_xlabel("x0")
        ax.set_ylabel("x1")
    elif mean is not None and x is not None and x.shape[1] == 1:
        order = np.argsort(x[:, 0])
        xs = x[order, 0]
        mu = mean[order, 0]
        ax.plot(xs, mu, color="tab:blue", label="predictive mean")
        if var is not None:
            sd = np.sqrt(np.maximum(var[order, 0], 0.0))
            ax.fill_between(xs, mu - 2 * sd, mu + 2 * sd, color="tab:blue", alpha=0.25,
                            label="two sigma band")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.legend(loc="best", fontsize=8)
    else:
        raise Error("predictions CSV has no plottable columns")

    if train_csv is not None:
        t_header, t_data = _read_csv(train_csv)
        names = [h for h in t_header if h != target_column]
        xi = [t_header.index(h) for h in names]
        yi = t_header.index(target_column) if target_column in t_header else None
        if probs is not None and len(xi) >= 2:
            ax.scatter(t_data[:, xi[0]], t_data[:, xi[1]], c="k", s=8, alpha=0.5, label="train")
        elif yi is not None and len(xi) == 1:
            ax.scatter(t_data[:, xi[0]], t_data[:, yi], c="k", s=8, alpha=0.5, label="train")
    out = Path(out_path)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
