"""
Choosing the number of components: parameter counts, BIC/AIC and the
adjusted Rand index.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy.special import comb

from .gibbs import FitError, GibbsConfig, PriorSpec, fit
from .mnig import Dataset

__all__ = [
    "count_free_params",
    "bic",
    "aic",
    "contingency_table",
    "adjusted_rand_index",
    "SelectionRow",
    "SelectionResult",
    "select_model",
]

log = logging.getLogger(__name__)


def count_free_params(G, d):
    """
    Free parameters of a G-component MNIG mixture in d dimensions.

    ``G - 1`` weights plus, per component, ``mu`` and ``beta`` (d each),
    ``delta``, ``gamma`` and a unit-determinant ``Delta``
    (``d(d+1)/2 - 1``).
    """
    if G < 1 or d < 1:
        raise ValueError("G and d must be positive")
    return (G - 1) + G * (2 * d + 2 + d * (d + 1) // 2 - 1)


def bic(loglik, k, n):
    """``-2 loglik + k log n``; smaller is better."""
    if n < 1:
        raise ValueError("n must be positive")
    return -2.0 * loglik + k * math.log(n)


def aic(loglik, k):
    """``-2 loglik + 2k``."""
    return -2.0 * loglik + 2.0 * k


def contingency_table(labels_a, labels_b):
    """
    Cross-tabulation of two labelings.

    Returns
    -------
    table : (R, C) ndarray of int
    rows, cols : ndarray
        Sorted distinct labels of ``labels_a`` and ``labels_b``.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label vectors differ in shape: {a.shape} vs {b.shape}")
    rows, ia = np.unique(a, return_inverse=True)
    cols, ib = np.unique(b, return_inverse=True)
    table = np.zeros((rows.size, cols.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table, rows, cols


def adjusted_rand_index(labels_a, labels_b):
    """
    Adjusted Rand index between two partitions.

    ``(sum_ij C(n_ij, 2) - E) / (M - E)`` with ``E`` the expected index
    under random labelling and ``M`` its maximum.  When ``M == E`` the two
    partitions are identical (both a single block or both all singletons)
    and the result is 1.

    Examples
    --------
    >>> round(adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]), 12)
    -0.5
    """
    table, _, _ = contingency_table(labels_a, labels_b)
    n = int(table.sum())
    if n < 2:
        raise ValueError("need at least 2 observations")
    pairs = comb(table, 2).sum()
    pa = comb(table.sum(axis=1), 2).sum()
    pb = comb(table.sum(axis=0), 2).sum()
    expected = pa * pb / comb(n, 2)
    top = 0.5 * (pa + pb)
    if top == expected:
        return 1.0
    return float((pairs - expected) / (top - expected))


@dataclass
class SelectionRow:
    G: int
    loglik: float
    n_params: int
    bic: float
    aic: float
    converged: bool
    psrf: float

    def as_dict(self):
        return {"G": self.G, "loglik": self.loglik, "n_params": self.n_params,
                "bic": self.bic, "aic": self.aic, "converged": self.converged,
                "psrf": None if math.isnan(self.psrf) else self.psrf}


@dataclass
class SelectionResult:
    rows: list
    fits: dict
    best_G: int
    failures: dict

    @property
    def best(self):
        return self.fits[self.best_G]


def select_model(data, G_range, prior=None, config=None, prior_overrides=None):
    """
    Fit every G in ``G_range`` and pick the smallest BIC.

    Fits flagged as non-converged (PSRF >= 1.1) stay in the table but only
    compete when no converged fit exists.  Ties go to the smaller G.

    Parameters
    ----------
    prior : callable or None
        ``prior(d, G) -> PriorSpec``; defaults to :meth:`PriorSpec.default`
        with ``prior_overrides`` applied.

    Raises
    ------
    FitError
        If no G could be fitted.
    """
    if not isinstance(data, Dataset):
        data = Dataset(data)
    G_range = sorted(set(int(g) for g in G_range))
    if not G_range:
        raise ValueError("G_range is empty")
    config = config or GibbsConfig()
    overrides = prior_overrides or {}
    rows, fits, failures = [], {}, {}
    for G in G_range:
        spec = prior(data.d, G) if prior else PriorSpec.default(data.d, G, **overrides)
        try:
            result = fit(data, G, spec, config)
        except FitError as exc:
            log.warning("G=%d failed: %s", G, exc)
            failures[G] = str(exc)
            continue
        k = count_free_params(G, data.d)
        fits[G] = result
        rows.append(SelectionRow(G, result.max_loglik, k, bic(result.max_loglik, k, data.n),
                                 aic(result.max_loglik, k),
                                 result.converged or config.n_chains < 2, result.psrf))
    if not rows:
        raise FitError(f"every G failed: {failures}")
    pool = [r for r in rows if r.converged] or rows
    best = min(pool, key=lambda r: (r.bic, r.G))
    return SelectionResult(rows, fits, best.G, failures)
