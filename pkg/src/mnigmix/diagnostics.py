"""
Convergence checks, burn-in, label-switching repair and posterior summaries.
"""

from dataclasses import dataclass, fields, replace
import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .mnig import MixtureModel, MNIGComponent

__all__ = [
    "Draws",
    "psrf",
    "burnin_count",
    "apply_burnin",
    "weight_order",
    "relabel_by_weights",
    "relabel_to_pivot",
    "relabel",
    "summarize",
    "PSRF_THRESHOLD",
]

PSRF_THRESHOLD = 1.1


@dataclass
class Draws:
    """
    Stacked posterior draws of a G-component mixture (T draws).

    ``membership`` is optional, with shape (T, n, G); its last axis is
    permuted together with the component parameters.
    """

    weights: np.ndarray  # (T, G)
    mu: np.ndarray  # (T, G, d)
    beta: np.ndarray  # (T, G, d)
    delta: np.ndarray  # (T, G)
    gamma: np.ndarray  # (T, G)
    Delta: np.ndarray  # (T, G, d, d)
    loglik: np.ndarray = None  # (T,)
    membership: np.ndarray = None

    _component_fields = ("weights", "mu", "beta", "delta", "gamma", "Delta")

    def __len__(self):
        return self.weights.shape[0]

    @property
    def G(self):
        return self.weights.shape[1]

    def take(self, index):
        """Subset of draws along the first axis."""
        return Draws(**{f.name: None if getattr(self, f.name) is None
                        else getattr(self, f.name)[index] for f in fields(self)})

    def permute(self, perms):
        """
        Reorder components draw by draw: new component ``k`` of draw ``t``
        is old component ``perms[t, k]``.
        """
        perms = np.asarray(perms)
        rows = np.arange(len(self))[:, None]
        out = {name: getattr(self, name)[rows, perms] for name in self._component_fields}
        if self.membership is not None:
            out["membership"] = np.take_along_axis(self.membership, perms[:, None, :], axis=2)
        return replace(self, **out)

    def model(self, t):
        """Draw ``t`` as a :class:`MixtureModel`."""
        comps = [MNIGComponent(self.mu[t, g], self.beta[t, g], self.delta[t, g],
                               self.gamma[t, g], self.Delta[t, g]) for g in range(self.G)]
        return MixtureModel(self.weights[t], comps)

    @classmethod
    def concatenate(cls, parts):
        parts = list(parts)
        kw = {}
        for f in fields(cls):
            vals = [getattr(p, f.name) for p in parts]
            kw[f.name] = None if any(v is None for v in vals) else np.concatenate(vals)
        return cls(**kw)


def psrf(trace):
    """
    Gelman-Rubin potential scale reduction factor.

    Parameters
    ----------
    trace : (C, T) array_like
        ``C >= 2`` chains of ``T >= 2`` values of one scalar statistic.

    Returns
    -------
    float
        ``sqrt(((T-1)/T W + B/T) / W)`` where ``W`` is the mean within-chain
        variance and ``B/T`` the variance of the chain means.  Chains that
        are all constant (``W == 0``) give 1.0.
    """
    x = np.asarray(trace, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"need at least 2 chains of length 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("trace contains non-finite values")
    T = x.shape[1]
    w = x.var(axis=1, ddof=1).mean()
    b_over_t = x.mean(axis=1).var(ddof=1)
    if w == 0:
        return 1.0
    return math.sqrt(((T - 1) / T * w + b_over_t) / w)


def burnin_count(T, fraction):
    """
    Number of leading draws discarded from a length-``T`` trace.

    At least one draw must be dropped and at least two kept, since a single
    retained draw supports neither a PSRF nor an interval.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"burn-in fraction must lie in (0, 1), got {fraction}")
    drop = int(math.floor(T * fraction))
    if drop < 1 or T - drop < 2:
        raise ValueError(f"burn-in {fraction} of {T} draws leaves nothing usable")
    return drop


def apply_burnin(values, fraction, axis=-1):
    """Drop the first ``floor(T * fraction)`` entries along ``axis``."""
    values = np.asarray(values)
    drop = burnin_count(values.shape[axis], fraction)
    return np.take(values, np.arange(drop, values.shape[axis]), axis=axis)


def weight_order(weights, mu):
    """Permutation sorting components by ascending weight, then mu[0], then index."""
    G = len(weights)
    return np.array(sorted(range(G), key=lambda g: (weights[g], mu[g][0], g)))


def relabel_by_weights(draws):
    """
    Permute every draw so that its mixing weights are ascending.

    Returns
    -------
    Draws, (T, G) ndarray
        Relabelled draws and the permutation applied to each draw.
    """
    perms = np.stack([weight_order(draws.weights[t], draws.mu[t]) for t in range(len(draws))])
    return draws.permute(perms), perms


def _assign(cost):
    # cost[t, g, k]: price of sending draw component g to reference slot k
    perms = np.empty(cost.shape[:2], dtype=int)
    for t in range(cost.shape[0]):
        rows, cols = linear_sum_assignment(cost[t])
        perms[t, cols] = rows
    return perms


def relabel_to_pivot(draws, pivot, max_iter=20):
    """
    Align each draw with the components of draw ``pivot``.

    Starts from the pivot's locations with a common per-coordinate variance,
    then alternates between (a) fitting an independent normal to each
    slot's aligned location draws and (b) re-matching every draw to the
    slots by minimum total negative log-likelihood (Hungarian assignment),
    until the permutations stop changing.
    """
    mu = draws.mu
    floor = 1e-12 + 1e-8 * float(np.var(mu))
    centre = mu[pivot][None]
    var = np.broadcast_to(mu.reshape(-1, mu.shape[-1]).var(axis=0) + floor, centre.shape)
    perms = None
    for _ in range(max_iter):
        diff = mu[:, :, None, :] - centre[:, None, :, :]
        cost = np.sum(diff**2 / var[:, None] + np.log(var[:, None]), axis=-1)
        new = _assign(cost)
        if perms is not None and np.array_equal(new, perms):
            break
        perms = new
        aligned = mu[np.arange(len(draws))[:, None], perms]
        centre = aligned.mean(axis=0)[None]
        var = aligned.var(axis=0)[None] + floor
    return draws.permute(perms), perms


def relabel(draws, method="pivot"):
    """
    Resolve label switching in pooled draws.

    ``method="weights"`` applies :func:`relabel_by_weights` draw by draw.
    ``method="pivot"`` aligns every draw with the highest-likelihood draw and
    then orders the aligned components by ascending posterior-mean weight;
    it stays stable when two components have nearly equal weights.
    """
    if method == "weights":
        return relabel_by_weights(draws)
    if method != "pivot":
        raise ValueError(f"unknown relabelling method {method!r}")
    pivot = int(np.argmax(draws.loglik)) if draws.loglik is not None else 0
    aligned, perms = relabel_to_pivot(draws, pivot)
    order = weight_order(aligned.weights.mean(axis=0), aligned.mu.mean(axis=0))
    final = np.broadcast_to(order, perms.shape)
    return aligned.permute(final), np.take_along_axis(perms, final, axis=1)


def summarize(draws, level=0.95):
    """
    Posterior mean and equal-tailed credible interval of every parameter.

    Interval endpoints are empirical percentiles with linear interpolation
    between order statistics.

    Returns
    -------
    dict
        ``{name: {"mean", "lower", "upper"}}`` with array values shaped like
        one draw of that parameter.
    """
    if len(draws) < 2:
        raise ValueError("need at least 2 draws to summarize")
    tail = 100 * (1 - level) / 2
    out = {}
    for name in Draws._component_fields:
        values = getattr(draws, name)
        lo, hi = np.percentile(values, [tail, 100 - tail], axis=0)
        out[name] = {"mean": values.mean(axis=0), "lower": lo, "upper": hi}
    return out
