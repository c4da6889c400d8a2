"""Static report figures written straight to files."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"figure.dpi": 110, "axes.grid": True, "grid.alpha": 0.3, "font.size": 9,
       "axes.spines.top": False, "axes.spines.right": False}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else {"Creator": None})
    plt.close(fig)
    return path


def plot_history(history, path, title: str = "") -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(1, 2, figsize=(8, 3))
        ep = np.arange(1, len(history.pred_loss) + 1)
        ax[0].semilogy(ep, history.pred_loss, label="prediction")
        pen = np.asarray(history.penalty_loss, dtype=float)
        if np.any(np.isfinite(pen) & (pen > 0)):
            ax[0].semilogy(ep, np.where(pen > 0, pen, np.nan), label="penalty")
        ax[0].set_xlabel("epoch")
        ax[0].set_ylabel("loss")
        ax[0].legend(frameon=False)
        ax[1].semilogy(ep, history.lr, color="0.3")
        ax[1].set_xlabel("epoch")
        ax[1].set_ylabel("learning rate")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_cost_scatter(model_costs, oracle_costs, feasible, path, title: str = "") -> Path:
    mc, oc = np.asarray(model_costs), np.asarray(oracle_costs)
    ok = np.asarray(feasible, dtype=bool)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.scatter(oc[ok], mc[ok], s=4, label="feasible")
        if (~ok).any():
            ax.scatter(oc[~ok], mc[~ok], s=6, marker="x", color="C3", label="infeasible")
        lim = [min(oc.min(), mc.min()), max(oc.max(), mc.max())]
        ax.plot(lim, lim, color="0.5", lw=0.8)
        ax.set_xlabel("reference cost")
        ax.set_ylabel("predicted cost")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_violations(violations, path, title: str = "") -> Path:
    names = ("delta_pg", "delta_qg", "delta_v", "delta_s")
    labels = ("P_G", "Q_G", "|V|", "S")
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 4, figsize=(10, 2.6), sharey=True)
        for ax, name, lab in zip(axes, names, labels):
            vals = np.array([getattr(v, name) for v in violations])
            hit = vals[vals > 0]
            if hit.size:
                ax.hist(hit, bins=30)
            else:
                ax.text(0.5, 0.5, "none", ha="center", va="center", transform=ax.transAxes)
            ax.set_xlabel(f"{lab} violation (p.u.)")
        axes[0].set_ylabel("samples")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_metrics(reports: Sequence, path) -> Path:
    """Side-by-side bars of eta_fea and eta_opt per experiment."""
    names = [r.experiment or str(i) for i, r in enumerate(reports)]
    x = np.arange(len(reports))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(1, 2, figsize=(8, 3))
        ax[0].bar(x, [r.eta_fea for r in reports])
        ax[0].set_ylabel("feasibility rate (%)")
        ax[1].bar(x, [r.eta_opt for r in reports], color="C1")
        ax[1].set_ylabel("optimality loss (%)")
        for a in ax:
            a.set_xticks(x, names, rotation=30, ha="right")
        return _save(fig, path)
