"""
Multivariate normal-inverse Gaussian (MNIG) components and mixtures.

A component is the normal mean-variance mixture

.. math::
    Y \\mid U = u \\sim N(\\mu + u\\Delta\\beta,\\; u\\Delta), \\qquad
    U \\sim IG(\\gamma, \\delta),

with :math:`|\\Delta| = 1`.  Its marginal density is

.. math::
    f(y) = \\frac{\\delta}{2^{(d-1)/2}}
    \\left[\\frac{\\alpha}{\\pi q(y)}\\right]^{(d+1)/2}
    e^{p(y)} K_{(d+1)/2}(\\alpha q(y))

where :math:`\\alpha^2 = \\gamma^2 + \\beta^T\\Delta\\beta`,
:math:`p(y) = \\delta\\gamma + \\beta^T(y-\\mu)` and
:math:`q(y)^2 = \\delta^2 + (y-\\mu)^T\\Delta^{-1}(y-\\mu)`.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .distributions import cholesky, sample_inverse_gaussian
from .special import log_bessel_k

__all__ = [
    "MNIGComponent",
    "MixtureModel",
    "SufficientStats",
    "Dataset",
    "DET_TOL",
    "project_unit_det",
    "mnig_logpdf",
    "mnig_joint_logpdf",
    "component_log_densities",
    "responsibilities",
    "mixture_loglik",
    "accumulate_stats",
    "generate_dataset",
    "affine_component",
]

DET_TOL = 1e-8


def project_unit_det(matrix):
    """Rescale an SPD matrix by ``det**(-1/d)`` so that its determinant is 1."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    d = matrix.shape[0]
    sign, logdet = np.linalg.slogdet(matrix)
    if sign <= 0:
        raise ValueError("matrix is not positive definite")
    if d == 1:
        return np.ones((1, 1))
    out = matrix * math.exp(-logdet / d)
    return 0.5 * (out + out.T)


@dataclass(eq=False)
class MNIGComponent:
    """
    Parameters of one MNIG component.

    Parameters
    ----------
    mu : (d,) ndarray
        Location.
    beta : (d,) ndarray
        Skewness.
    delta, gamma : float
        Positive IG mixing parameters.
    Delta : (d, d) ndarray
        SPD scale matrix with unit determinant.
    """

    mu: np.ndarray
    beta: np.ndarray
    delta: float
    gamma: float
    Delta: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.Delta = np.atleast_2d(np.asarray(self.Delta, dtype=float))
        self.delta = float(self.delta)
        self.gamma = float(self.gamma)
        d = self.mu.size
        if self.beta.shape != (d,) or self.Delta.shape != (d, d):
            raise ValueError("mu, beta and Delta dimensions disagree")
        if not (self.delta > 0 and self.gamma > 0):
            raise ValueError(f"delta and gamma must be > 0, got {self.delta}, {self.gamma}")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.beta))):
            raise ValueError("mu and beta must be finite")
        self.chol = cholesky(self.Delta, "Delta")
        det = float(np.prod(np.diag(self.chol)) ** 2)
        if abs(det - 1.0) >= DET_TOL:
            raise ValueError(f"Delta must have unit determinant, got {det}")

    @property
    def d(self):
        return self.mu.size

    @cached_property
    def log_det(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    @cached_property
    def alpha(self):
        return math.sqrt(self.gamma**2 + float(self.beta @ self.Delta @ self.beta))

    def mahalanobis(self, y):
        """``(y - mu)^T inv(Delta) (y - mu)`` for each row of ``y``."""
        r = np.atleast_2d(y) - self.mu
        w = solve_triangular(self.chol, r.T, lower=True)
        return np.sum(w * w, axis=0)

    def q_squared(self, y):
        return self.delta**2 + self.mahalanobis(y)

    def to_dict(self):
        return {
            "mu": self.mu.tolist(),
            "beta": self.beta.tolist(),
            "delta": self.delta,
            "gamma": self.gamma,
            "Delta": self.Delta.tolist(),
        }

    @classmethod
    def from_dict(cls, spec):
        return cls(spec["mu"], spec["beta"], spec["delta"], spec["gamma"], spec["Delta"])


@dataclass(eq=False)
class MixtureModel:
    """Mixing weights plus one :class:`MNIGComponent` per group."""

    weights: np.ndarray
    components: list

    def __post_init__(self):
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.components = list(self.components)
        if self.weights.size != len(self.components) or not self.components:
            raise ValueError("need one weight per component")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be positive and sum to 1, got {self.weights}")
        if len({c.d for c in self.components}) != 1:
            raise ValueError("components have different dimensions")

    @property
    def G(self):
        return len(self.components)

    @property
    def d(self):
        return self.components[0].d

    def to_dict(self):
        return {"weights": self.weights.tolist(),
                "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, spec):
        return cls(spec["weights"], [MNIGComponent.from_dict(c) for c in spec["components"]])


@dataclass
class SufficientStats:
    """Per-component accumulators of (y, u, z)."""

    t0: float
    t1: np.ndarray
    t2: np.ndarray
    t3: float
    t4: float
    t5: np.ndarray


@dataclass
class Dataset:
    """Observations ``y`` (n x d) with optional 1-based class labels."""

    y: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.y.ndim != 2 or self.y.shape[0] < 1 or self.y.shape[1] < 1:
            raise ValueError("y must be a non-empty n x d matrix")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("y contains missing or non-finite entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.y.shape[0],):
                raise ValueError("labels must have one entry per row")

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def d(self):
        return self.y.shape[1]


def _as_matrix(data, d):
    y = data.y if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=float))
    if y.shape[-1] != d:
        raise ValueError(f"data has dimension {y.shape[-1]}, model has {d}")
    return y


def mnig_logpdf(comp, y):
    """
    Log marginal MNIG density at ``y`` (a d-vector or an n x d matrix).
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y = _as_matrix(y, comp.d)
    d = comp.d
    order = (d + 1) / 2
    q = np.sqrt(comp.q_squared(y))
    p = comp.delta * comp.gamma + (y - comp.mu) @ comp.beta
    out = (math.log(comp.delta) - 0.5 * (d - 1) * math.log(2.0)
           + order * (math.log(comp.alpha) - math.log(math.pi) - np.log(q))
           + p + log_bessel_k(order, comp.alpha * q) - 0.5 * comp.log_det)
    return float(out[0]) if single else out


def mnig_joint_logpdf(comp, y, u):
    """
    Log of ``f(y | u) f(u)``: normal ``N(mu + u Delta beta, u Delta)`` times
    the IG(gamma, delta) density of ``u``.  ``u`` broadcasts against the rows
    of ``y``.
    """
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1 and np.ndim(u) == 0
    y = _as_matrix(y, comp.d)
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or not np.all(np.isfinite(u)):
        raise ValueError("u must be finite and > 0")
    d = comp.d
    maha = comp.mahalanobis(y)
    skew = (y - comp.mu) @ comp.beta
    bdb = comp.alpha**2 - comp.gamma**2
    log_normal = (-0.5 * d * np.log(2 * math.pi * u) - 0.5 * comp.log_det
                  - 0.5 * maha / u + skew - 0.5 * u * bdb)
    log_ig = (math.log(comp.delta) - 0.5 * math.log(2 * math.pi)
              + comp.delta * comp.gamma - 1.5 * np.log(u)
              - 0.5 * (comp.delta**2 / u + comp.gamma**2 * u))
    out = log_normal + log_ig
    return float(np.ravel(out)[0]) if single else out


def component_log_densities(model, data):
    """``log pi_g + log f_g(y_i)`` as an n x G matrix."""
    y = _as_matrix(data, model.d)
    cols = [math.log(w) + mnig_logpdf(c, y)
            for w, c in zip(model.weights, model.components)]
    return np.column_stack(cols)


def responsibilities(model, data):
    """Posterior membership probabilities ``P(g | y_i)`` (n x G)."""
    logd = component_log_densities(model, data)
    return np.exp(logd - logsumexp(logd, axis=1, keepdims=True))


def mixture_loglik(model, data):
    """Observed-data log-likelihood, accumulated with log-sum-exp."""
    return float(np.sum(logsumexp(component_log_densities(model, data), axis=1)))


def accumulate_stats(data, u, z):
    """
    Sufficient statistics of every component.

    Parameters
    ----------
    data : Dataset or (n, d) ndarray
    u : (n, G) ndarray
        Positive latent scales, one per observation and component.
    z : (n, G) ndarray
        One-hot membership indicators.

    Returns
    -------
    list of SufficientStats
        ``t0 = sum z``, ``t1 = sum z y``, ``t2 = sum z y / u``,
        ``t3 = sum z u / 2``, ``t4 = sum z / (2u)``,
        ``t5 = sum z y y^T / (2u)``.
    """
    y = data.y if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=float))
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    if u.ndim != 2 or u.shape != z.shape or u.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: y {y.shape}, u {u.shape}, z {z.shape}")
    if np.any(u <= 0):
        raise ValueError("u must be strictly positive")
    w = z / u
    t0 = z.sum(axis=0)
    t1 = z.T @ y
    t2 = w.T @ y
    t3 = 0.5 * (z * u).sum(axis=0)
    t4 = 0.5 * w.sum(axis=0)
    t5 = 0.5 * np.einsum("ng,ni,nj->gij", w, y, y)
    return [SufficientStats(float(t0[g]), t1[g], t2[g], float(t3[g]), float(t4[g]), t5[g])
            for g in range(z.shape[1])]


def _exact_counts(weights, n):
    raw = np.asarray(weights) * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    counts[np.argsort(-(raw - counts), kind="stable")[:short]] += 1
    return counts


def generate_dataset(model, n, rng, exact_counts=False):
    """
    Simulate ``n`` labelled observations from ``model``.

    Labels are drawn from Categorical(weights) unless ``exact_counts`` is set,
    in which case group sizes are ``round(n * weights)`` (largest remainder)
    and the rows are shuffled.  Labels are 1-based.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    if exact_counts:
        labels = np.repeat(np.arange(model.G), _exact_counts(model.weights, n))
        labels = rng.permutation(labels)
    else:
        labels = rng.choice(model.G, size=n, p=model.weights)
    y = np.empty((n, model.d))
    for g, comp in enumerate(model.components):
        idx = np.flatnonzero(labels == g)
        if idx.size == 0:
            continue
        u = sample_inverse_gaussian(comp.gamma, comp.delta, rng, size=idx.size)
        eps = rng.standard_normal((idx.size, comp.d)) @ comp.chol.T
        y[idx] = comp.mu + u[:, None] * (comp.Delta @ comp.beta) + np.sqrt(u)[:, None] * eps
    return Dataset(y, labels + 1)


def affine_component(comp, center, scale):
    """
    Component followed by ``x -> center + scale * x`` (elementwise ``scale``).

    With ``S = diag(scale)`` and ``c = det(S)**(2/d)`` the image is MNIG with
    ``mu' = center + S mu``, ``beta' = beta / scale``, ``Delta' = S Delta S / c``,
    ``delta' = delta sqrt(c)`` and ``gamma' = gamma / sqrt(c)``.
    """
    scale = np.asarray(scale, dtype=float)
    c = math.exp(2.0 * np.sum(np.log(np.abs(scale))) / comp.d)
    delta_new = scale[:, None] * comp.Delta * scale[None, :] / c
    return MNIGComponent(
        mu=np.asarray(center, dtype=float) + scale * comp.mu,
        beta=comp.beta / scale,
        delta=comp.delta * math.sqrt(c),
        gamma=comp.gamma / math.sqrt(c),
        Delta=project_unit_det(delta_new),
    )
