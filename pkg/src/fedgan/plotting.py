"""SVG figures for run bundles, written deterministically."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so reruns give identical files
plt.rcParams["svg.hashsalt"] = "fedgan"
_META = {"Date": None, "Creator": "fedgan"}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_2d_trajectory(path, steps, synced_params, target=(1.0, 0.0)) -> None:
    """(theta, psi) path of the synced parameters with the start marked."""
    psi, theta = synced_params[:, 0], synced_params[:, 1]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.plot(theta, psi, lw=0.8, color="tab:blue")
    ax.plot(theta[0], psi[0], "o", color="red", label="start")
    ax.plot(*target, "k*", ms=10, label="equilibrium")
    ax.set_xlabel("theta")
    ax.set_ylabel("psi")
    ax.legend(loc="best")
    _save(fig, path)


def plot_scatter(path, real, gen, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(real[:, 0], real[:, 1], s=2, alpha=0.4, label="real", color="tab:gray")
    ax.scatter(gen[:, 0], gen[:, 1], s=2, alpha=0.4, label="generated", color="tab:orange")
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.legend(loc="upper right", markerscale=4)
    _save(fig, path)


def plot_deviation(path, s, dev) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(s, dev, "o-")
    ax.set_xlabel("s (learning-rate time)")
    ax.set_ylabel("sup deviation over [s, s+T]")
    _save(fig, path)


def plot_lemma(path, n, lhs, bound, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(n, bound, "-", label="bound", color="tab:red")
    ax.plot(n, lhs, ".", label="estimated LHS", color="tab:blue")
    ax.set_yscale("symlog", linthresh=1e-4)
    ax.set_xlabel("n")
    ax.set_title(title)
    ax.legend(loc="best")
    _save(fig, path)


def plot_centroids(path, real_c, gen_c, matching) -> None:
    k = len(matching)
    cols = 3
    rows = int(np.ceil(k / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(9, 2.4 * rows), sharey=True)
    for ax, (i, j) in zip(np.ravel(axes), matching):
        ax.plot(real_c[i], label="real", color="tab:gray")
        ax.plot(gen_c[j], label="generated", color="tab:orange", ls="--")
        ax.set_title(f"cluster {i}", fontsize=9)
    np.ravel(axes)[0].legend(fontsize=7)
    for ax in np.ravel(axes)[k:]:
        ax.axis("off")
    fig.tight_layout()
    _save(fig, path)


def plot_gap(path, steps, gaps) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.semilogy(steps, np.maximum(gaps, 1e-12), "o-")
    ax.set_xlabel("n")
    ax.set_ylabel("|w_n - lambda(theta_n)|")
    _save(fig, path)
