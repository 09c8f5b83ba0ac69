"""
Static figures written next to the CLI's delimited outputs.

Everything renders through the non-interactive Agg backend, and PNG
metadata is stripped so reruns produce identical bytes.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.special import logsumexp  # noqa: E402

from .mnig import component_log_densities  # noqa: E402

__all__ = ["density_grid", "plot_contours", "plot_traces", "plot_selection", "plot_pairs"]

_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _save(fig, path):
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def density_grid(model, y, resolution=200, margin=0.1):
    """
    Mixture density on a regular 2-d grid spanning the data range plus ``margin``.

    Returns
    -------
    xs, ys : (resolution,) ndarray
    dens : (resolution, resolution) ndarray
        ``dens[j, i]`` is the density at ``(xs[i], ys[j])``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[1] != 2 or model.d != 2:
        raise ValueError("density grid needs two-dimensional data")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    lo, hi = y.min(axis=0), y.max(axis=0)
    pad = margin * np.where(hi > lo, hi - lo, 1.0)
    xs = np.linspace(lo[0] - pad[0], hi[0] + pad[0], resolution)
    ys = np.linspace(lo[1] - pad[1], hi[1] + pad[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    dens = np.exp(logsumexp(component_log_densities(model, pts), axis=1))
    return xs, ys, dens.reshape(gx.shape)


def plot_contours(path, y, labels, xs, ys, dens, columns=("y1", "y2")):
    """Scatter of the data coloured by cluster with density contours on top."""
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    ax.scatter(y[:, 0], y[:, 1], c=labels, s=6, cmap="tab10", alpha=0.6, linewidths=0)
    levels = np.quantile(dens[dens > 0], [0.5, 0.7, 0.8, 0.9, 0.95, 0.99]) if np.any(dens > 0) else 6
    ax.contour(xs, ys, dens, levels=np.unique(levels), colors="k", linewidths=0.7)
    ax.set_xlabel(columns[0])
    ax.set_ylabel(columns[1])
    fig.tight_layout()
    return _save(fig, path)


def plot_traces(path, loglik, burnin=None, title=None):
    """Observed log-likelihood of each chain against iteration."""
    loglik = np.atleast_2d(loglik)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for c, trace in enumerate(loglik):
        ax.plot(trace, lw=0.6, label=f"chain {c + 1}")
    if burnin:
        ax.axvline(burnin, color="0.4", ls="--", lw=0.8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("log-likelihood")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_selection(path, G, bic, aic=None, best=None):
    """BIC (and optionally AIC) against the number of components."""
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(G, bic, "o-", label="BIC")
    if aic is not None:
        ax.plot(G, aic, "s--", label="AIC")
    if best is not None:
        ax.axvline(best, color="0.5", lw=0.8)
    ax.set_xlabel("G")
    ax.set_xticks(list(G))
    ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_pairs(path, y, labels, columns=None):
    """Pairwise scatter matrix coloured by cluster, for d > 2."""
    d = y.shape[1]
    columns = columns or [f"y{j + 1}" for j in range(d)]
    fig, axes = plt.subplots(d, d, figsize=(1.8 * d, 1.8 * d), squeeze=False)
    for i in range(d):
        for j in range(d):
            ax = axes[i, j]
            if i == j:
                ax.hist(y[:, i], bins=30, color="0.6")
            else:
                ax.scatter(y[:, j], y[:, i], c=labels, s=3, cmap="tab10", linewidths=0)
            if i == d - 1:
                ax.set_xlabel(columns[j])
            if j == 0:
                ax.set_ylabel(columns[i])
            ax.tick_params(labelsize=6)
    fig.tight_layout()
    return _save(fig, path)
