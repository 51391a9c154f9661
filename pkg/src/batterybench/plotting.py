"""Figures for scenario results.  Optional: only the CLI ``--figures`` flag
imports this module, and the CSV stays the primary output."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "figure.dpi": 150,
}


def _col(rows, name):
    return np.array([r.get(name, np.nan) for r in rows], dtype=float)


def _trajectory_figure(res):
    rows = res.rows
    t = _col(rows, "t")
    bound_name = "bound_open" if "bound_open" in res.columns else "bound_iso"
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    ax = axes[0]
    ax.plot(t, _col(rows, "P"), label="P")
    ax.plot(t, _col(rows, bound_name), "--", label=bound_name)
    ax.plot(t, -_col(rows, bound_name), "--", color="C1")
    herm = _col(rows, "bound_hermitian")
    if np.any(np.isfinite(herm)):
        ax.plot(t, herm, ":", label="bound_hermitian")
    ax.set_xlabel("t")
    ax.set_ylabel("power")
    ax.legend(frameon=False)
    axes[1].plot(t, _col(rows, "dW"))
    axes[1].set_xlabel("t")
    axes[1].set_ylabel("dW")
    axes[2].plot(t, _col(rows, "sigma_F"))
    axes[2].set_xlabel("t")
    axes[2].set_ylabel("sigma_F")
    red = res.series.get("reduced")
    if red:
        tr = np.array(red["times"])
        axes[0].plot(tr, red["P"], "k:", lw=0.8, label="reduced")
        axes[0].legend(frameon=False)
        axes[1].plot(tr, np.array(red["e_W"]) - red["e_W"][0], "k:", lw=0.8)
        axes[2].plot(tr, red["sigma_F"], "k:", lw=0.8)
    return fig


def _fuzz_figure(res):
    fig, ax = plt.subplots(figsize=(4, 4))
    for i, check in enumerate(sorted({r["check"] for r in res.rows})):
        sel = [r for r in res.rows if r["check"] == check]
        ax.scatter([r["bound"] for r in sel], [abs(r["power"]) for r in sel],
                   s=6, color=f"C{i}", label=check)
    lim = max(max(r["bound"] for r in res.rows), max(abs(r["power"]) for r in res.rows))
    ax.plot([0, lim], [0, lim], "k-", lw=0.6)
    ax.set_xlabel("bound")
    ax.set_ylabel("|P|")
    ax.legend(frameon=False)
    return fig


def render(res, path: Path) -> Path:
    """Write a PNG summarizing ``res`` (a cli Result) and return its path."""
    with plt.rc_context(STYLE):
        fig = _fuzz_figure(res) if res.kind == "bound-fuzz" else _trajectory_figure(res)
        fig.suptitle(res.name)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
