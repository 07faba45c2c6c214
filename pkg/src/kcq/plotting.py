"""Figures for the ``report`` subcommand. Files only; no interactive display."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .coherent import heterodyne_analytic, helstrom_binary_error, phase_measurement_error  # noqa: E402
from .cppm import optimize_bound  # noqa: E402
from .measures import entropy_vs_p1_frontier  # noqa: E402
from .qubit import eve_collective_error  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.labelsize": 11,
    "legend.fontsize": 9,
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def eve_error_vs_angle(path: Path, Ms=(2, 4, 64)) -> Path:
    theta = np.linspace(0, np.pi, 721)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        for M in Ms:
            ax.plot(theta, eve_collective_error(M, theta, True), label=f"M={M}, key after")
            ax.plot(theta, eve_collective_error(M, theta, False), ls="--", label=f"M={M}, no key")
        ax.set_xlabel("Eve measurement angle (rad)")
        ax.set_ylabel("Eve bit error")
        ax.set_ylim(0, 0.52)
        ax.legend(ncol=2)
        return _save(fig, path)


def receiver_errors(path: Path, S_max: float = 12.0) -> Path:
    S = np.linspace(0.1, S_max, 120)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.semilogy(S, [helstrom_binary_error(s) for s in S], label="optimum quantum")
        ax.semilogy(S, [phase_measurement_error(s) for s in S], label="canonical phase")
        ax.semilogy(S, [heterodyne_analytic(s) for s in S], label="heterodyne")
        ax.set_xlabel("photon number S")
        ax.set_ylabel("bit error")
        ax.legend()
        return _save(fig, path)


def cppm_bound(path: Path, S: float = 2.0, n_max: int = 20, mc: dict | None = None) -> Path:
    """Optimized heterodyne error bound against n; ``mc`` maps n to measured error."""
    ns = np.arange(1, n_max + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(ns, [optimize_bound(int(n), S)[1] for n in ns], marker=".", label="lower bound")
        if mc:
            ax.plot(list(mc), list(mc.values()), "o", label="Monte Carlo")
        ax.set_xlabel("bits per use n (N = 2^n)")
        ax.set_ylabel("Eve block error")
        ax.set_ylim(0, 1)
        ax.legend()
        return _save(fig, path)


def entropy_frontier(path: Path, n: int = 8) -> Path:
    p1 = np.linspace(2.0 ** -n, 1.0, 400)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(p1, [entropy_vs_p1_frontier(n, p) for p in p1])
        ax.set_xscale("log")
        ax.set_xlabel("max probability p1")
        ax.set_ylabel("max entropy (bits)")
        ax.set_title(f"n = {n}")
        return _save(fig, path)
