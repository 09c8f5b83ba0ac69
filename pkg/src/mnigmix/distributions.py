"""
Random variate generation and log-densities used by the Gibbs sampler.

Conventions
-----------
* Gamma is shape/rate: density proportional to ``v**(shape-1) * exp(-rate*v)``.
* ``GIG(lam, chi, psi)`` has density proportional to
  ``x**(lam-1) * exp(-(chi/x + psi*x)/2)``.
* ``W_n(q, c)`` (rate form) has density proportional to
  ``|x|**(q-(n+1)/2) * exp(-tr(c x))``; it is the usual Wishart with
  ``2q`` degrees of freedom and scale ``inv(2c)``, so ``E[X] = q inv(c)``.
* ``MGIG_n(-p, a, b)`` has density proportional to
  ``|x|**(-p-(n+1)/2) * exp(-tr(a x) - tr(b inv(x)))``.

Every sampler takes an explicit ``numpy.random.Generator``.  Build one per
independent stream with :func:`make_rng`; a generator must not be shared by
concurrent callers.
"""

import math

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr, ndtri

from .special import log_bessel_k

__all__ = [
    "make_rng",
    "cholesky",
    "sample_gamma",
    "sample_dirichlet",
    "sample_mvn",
    "sample_truncated_normal_positive",
    "truncated_normal_positive_mean",
    "sample_wishart",
    "sample_inverse_wishart",
    "wishart_logpdf",
    "sample_inverse_gaussian",
    "inverse_gaussian_logpdf",
    "gig_logpdf",
    "gig_moment",
    "gig_markov_step",
    "sample_gig",
    "sample_mgig",
    "mgig_log_unnormalized",
    "DEFAULT_GIG_STEPS",
]

DEFAULT_GIG_STEPS = 200
GIG_COLD_START = 1.0

# switch from inverse-CDF to exponential tail rejection past this many sd
_TAIL_CUTOFF = 5.0
# below this many variates the whole innovation block is drawn up front
_BLOCK_LIMIT = 1_000_000


def make_rng(seed, stream=0):
    """Generator for stream ``stream`` of ``seed``; identical on every platform."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(seq))


def cholesky(a, what="matrix"):
    """Lower Cholesky factor, raising ``ValueError`` when ``a`` is not SPD."""
    a = np.asarray(a, dtype=float)
    if not np.allclose(a, np.swapaxes(a, -1, -2), rtol=1e-10, atol=1e-12):
        raise ValueError(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{what} is not positive definite") from exc


def _positive(value, name):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"{name} must be finite and > 0, got {value!r}")
    return arr


def sample_gamma(shape, rate, rng, size=None):
    """Gamma(shape, rate) draws."""
    shape = _positive(shape, "shape")
    rate = _positive(rate, "rate")
    return rng.gamma(shape, 1.0 / rate, size=size)


def sample_dirichlet(concentrations, rng, size=None):
    """Dirichlet draw(s); rows sum to one."""
    alpha = _positive(concentrations, "concentrations")
    if alpha.ndim != 1:
        raise ValueError("concentrations must be a vector")
    draw = rng.dirichlet(alpha, size=size)
    # renormalise so rows sum to one to rounding (exactly 1.0 when there is one entry)
    return draw / draw.sum(axis=-1, keepdims=True)


def sample_mvn(mean, cov, rng, size=None):
    """Multivariate normal draw(s) through the Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=float)
    chol = cholesky(cov, "covariance")
    shape = () if size is None else tuple(np.atleast_1d(size))
    z = rng.standard_normal(shape + mean.shape)
    return mean + z @ chol.T


def truncated_normal_positive_mean(mean, variance):
    """Analytic mean of N(mean, variance) restricted to (0, inf)."""
    sd = np.sqrt(variance)
    alpha = -np.asarray(mean, dtype=float) / sd
    # phi(alpha) / (1 - Phi(alpha)) evaluated in log space
    log_ratio = -0.5 * alpha**2 - 0.5 * math.log(2 * math.pi) - log_ndtr(-alpha)
    return mean + sd * np.exp(log_ratio)


def _tail_draws(alpha, rng):
    """Standard normal restricted to (alpha, inf), alpha > 0, by Robert's method."""
    out = np.empty_like(alpha)
    todo = np.arange(alpha.size)
    lam = 0.5 * (alpha + np.sqrt(alpha**2 + 4.0))
    while todo.size:
        z = alpha[todo] + rng.standard_exponential(todo.size) / lam[todo]
        keep = rng.random(todo.size) <= np.exp(-0.5 * (z - lam[todo]) ** 2)
        out[todo[keep]] = z[keep]
        todo = todo[~keep]
    return out


def sample_truncated_normal_positive(mean, variance, rng, size=None):
    """
    N(mean, variance) conditioned on being positive.

    Inverse-CDF sampling, except in the far tail (``mean/sd < -5``) where an
    exponential-proposal rejection sampler is used.
    """
    variance = _positive(variance, "variance")
    mean = np.asarray(mean, dtype=float)
    sd = np.sqrt(variance)
    shape = np.broadcast_shapes(mean.shape, sd.shape) if size is None else size
    mean, sd = np.broadcast_to(mean, shape), np.broadcast_to(sd, shape)
    alpha = (-mean / sd).ravel()
    std = np.empty(alpha.shape)
    tail = alpha > _TAIL_CUTOFF
    body = ~tail
    u = rng.random(int(body.sum()))
    # -ndtri(u * Phi(-alpha)) lies above alpha and keeps precision in the tail
    std[body] = -ndtri(u * ndtr(-alpha[body]))
    if np.any(tail):
        std[tail] = _tail_draws(alpha[tail], rng)
    out = mean + sd * std.reshape(np.shape(mean))
    out = np.maximum(out, np.nextafter(0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def sample_wishart(q, c, rng, size=None):
    """
    Draw from ``W_n(q, c)`` in the rate form (Bartlett decomposition).

    Parameters
    ----------
    q : float
        Exponent parameter, ``q > (n-1)/2``.
    c : (n, n) ndarray
        Symmetric positive-definite rate matrix.
    size : int, optional
        Number of independent draws; output gains a leading axis.
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    n = c.shape[0]
    if not np.isfinite(q) or q <= (n - 1) / 2:
        raise ValueError(f"Wishart requires q > (n-1)/2 = {(n - 1) / 2}, got {q}")
    chol_c = cholesky(c, "Wishart rate matrix")
    # scale = inv(2c) = L L^T with L = inv(chol(2c))^T
    scale_chol = np.linalg.inv(np.sqrt(2.0) * chol_c).T
    dof = 2.0 * q
    count = 1 if size is None else int(size)
    bartlett = np.zeros((count, n, n))
    rows, cols = np.tril_indices(n, -1)
    bartlett[:, rows, cols] = rng.standard_normal((count, rows.size))
    diag = np.sqrt(2.0 * rng.gamma((dof - np.arange(n)) / 2.0, size=(count, n)))
    bartlett[:, np.arange(n), np.arange(n)] = diag
    factor = scale_chol @ bartlett
    out = factor @ np.swapaxes(factor, -1, -2)
    return out[0] if size is None else out


def sample_inverse_wishart(q, c, rng, size=None):
    """Inverse of a ``W_n(q, c)`` draw."""
    return np.linalg.inv(sample_wishart(q, c, rng, size=size))


def wishart_logpdf(x, q, c):
    """Normalized log-density of ``W_n(q, c)`` (rate form) at SPD ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    n = c.shape[0]
    _, logdet_x = np.linalg.slogdet(x)
    _, logdet_c = np.linalg.slogdet(c)
    log_mvgamma = n * (n - 1) / 4 * math.log(math.pi) + sum(
        gammaln(q - j / 2) for j in range(n)
    )
    return (q * logdet_c - log_mvgamma + (q - (n + 1) / 2) * logdet_x
            - np.trace(c @ x))


def sample_inverse_gaussian(gamma, delta, rng, size=None):
    """
    Draw U ~ IG(gamma, delta), density
    ``delta/sqrt(2 pi) * exp(delta*gamma) * u**-1.5 * exp(-(delta**2/u + gamma**2*u)/2)``.

    This is the Wald law with mean ``delta/gamma`` and shape ``delta**2``.
    """
    gamma = _positive(gamma, "gamma")
    delta = _positive(delta, "delta")
    return rng.wald(delta / gamma, delta**2, size=size)


def inverse_gaussian_logpdf(u, gamma, delta):
    u = _positive(u, "u")
    return (np.log(delta) - 0.5 * math.log(2 * math.pi) + delta * gamma
            - 1.5 * np.log(u) - 0.5 * (delta**2 / u + gamma**2 * u))


def gig_logpdf(x, lam, chi, psi):
    """Normalized log-density of GIG(lam, chi, psi)."""
    x = _positive(x, "x")
    chi = _positive(chi, "chi")
    psi = _positive(psi, "psi")
    omega = np.sqrt(chi * psi)
    log_norm = 0.5 * lam * np.log(psi / chi) - math.log(2.0) - log_bessel_k(lam, omega)
    return log_norm + (lam - 1) * np.log(x) - 0.5 * (chi / x + psi * x)


def gig_moment(k, lam, chi, psi):
    """Raw moment ``E[X**k]`` of GIG(lam, chi, psi) from a Bessel ratio."""
    omega = np.sqrt(chi * psi)
    return np.exp(0.5 * k * np.log(chi / psi)
                  + log_bessel_k(lam + k, omega) - log_bessel_k(lam, omega))


def _check_gig(lam, chi, psi):
    if not math.isfinite(lam):
        raise ValueError(f"GIG order must be finite, got {lam}")
    return _positive(chi, "chi"), _positive(psi, "psi")


def gig_markov_step(current, lam, chi, psi, rng):
    """
    One continued-fraction update ``U' = S + 1/(V + 1/U)``.

    With ``V ~ Gamma(lam, chi/2)`` and ``S ~ Gamma(lam, psi/2)`` the kernel
    leaves GIG(lam, chi, psi) invariant.  The rate attached to the additive
    term ``S`` is ``psi/2`` (the coefficient of ``x``); the opposite
    assignment targets GIG(lam, psi, chi) instead, which the moment checks
    in the test suite rule out.  Only ``lam > 0`` is a valid Gamma shape.
    """
    chi, psi = _check_gig(lam, chi, psi)
    if lam <= 0:
        raise ValueError(f"continued-fraction chain needs lam > 0, got {lam}")
    current = _positive(current, "current state")
    shape = np.broadcast_shapes(current.shape, chi.shape, psi.shape)
    v = rng.gamma(lam, 2.0 / chi, size=shape)
    s = rng.gamma(lam, 2.0 / psi, size=shape)
    return s + 1.0 / (v + 1.0 / current)


def _run_chain(u, lam, chi, psi, rng, n_steps):
    shape = u.shape
    if u.ndim == 0:
        v = rng.gamma(lam, 2.0 / float(chi), size=n_steps).tolist()
        s = rng.gamma(lam, 2.0 / float(psi), size=n_steps).tolist()
        x = float(u)
        for vi, si in zip(v, s):
            x = si + 1.0 / (vi + 1.0 / x)
        return x
    chi = np.broadcast_to(chi, shape)
    psi = np.broadcast_to(psi, shape)
    scale_v, scale_s = 2.0 / chi, 2.0 / psi
    if n_steps * u.size <= _BLOCK_LIMIT:
        v = rng.gamma(lam, scale_v, size=(n_steps,) + shape)
        s = rng.gamma(lam, scale_s, size=(n_steps,) + shape)
        for i in range(n_steps):
            u = s[i] + 1.0 / (v[i] + 1.0 / u)
        return u
    for _ in range(n_steps):
        v = rng.gamma(lam, scale_v)
        s = rng.gamma(lam, scale_s)
        u = s + 1.0 / (v + 1.0 / u)
    return u


def sample_gig(lam, chi, psi, rng, warm_start=None, n_steps=DEFAULT_GIG_STEPS,
               size=None):
    """
    Approximate GIG(lam, chi, psi) draws from the continued-fraction chain.

    Runs ``n_steps`` updates of :func:`gig_markov_step` from ``warm_start``
    (default 1.0) and returns the final state.  Negative orders use
    ``1/X ~ GIG(-lam, psi, chi)``: the chain runs on the reciprocal target
    and the reciprocal of its final state is returned.

    Parameters
    ----------
    lam : float
        Order, nonzero.
    chi, psi : float or ndarray
        Positive coefficients, broadcast against ``warm_start`` and ``size``.
    warm_start : float or ndarray, optional
        Starting state(s) on the original (not reciprocal) scale.
    n_steps : int
        Number of chain updates, at least 1.
    size : int or tuple, optional
        Output shape when no array argument fixes it.
    """
    chi, psi = _check_gig(lam, chi, psi)
    if lam == 0:
        raise ValueError("GIG order 0 has no continued-fraction chain")
    if int(n_steps) < 1:
        raise ValueError("n_steps must be >= 1")
    start = GIG_COLD_START if warm_start is None else warm_start
    start = _positive(start, "warm_start")
    shape = np.broadcast_shapes(start.shape, chi.shape, psi.shape,
                                () if size is None else tuple(np.atleast_1d(size)))
    start = np.broadcast_to(start, shape).astype(float, copy=True)
    if lam > 0:
        return _run_chain(start, lam, chi, psi, rng, int(n_steps))
    recip = _run_chain(1.0 / start, -lam, psi, chi, rng, int(n_steps))
    return 1.0 / recip


def sample_mgig(q, a, z, b, rng, n_steps=DEFAULT_GIG_STEPS, size=None):
    """
    Draw from ``MGIG_d(-q, b z z^T, a)`` with the Matsumoto-Yor construction.

    With ``p = q + (1-d)/2``:

    1. ``X ~ MGIG_1(-p, z^T a z, b)``, i.e. GIG(-p, chi=2b, psi=2 z^T a z),
       drawn with :func:`sample_gig`;
    2. ``W ~ W_d(q, a)``;
    3. return ``inv(z X z^T + W)``.

    Parameters
    ----------
    q : float
        Must exceed ``(d-1)/2``.
    a : (d, d) ndarray
        SPD coefficient of ``inv(x)`` in the target.
    z : (d,) ndarray
        Nonzero direction of the rank-one coefficient of ``x``.
    b : float
        Positive scalar weight of the rank-one term.
    size : int, optional
        Number of draws (leading axis).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    d = z.size
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape != (d, d):
        raise ValueError(f"a must be {d}x{d}, got {a.shape}")
    if not np.any(z != 0):
        raise ValueError("z must be nonzero")
    b = float(_positive(b, "b"))
    if not np.isfinite(q) or q <= (d - 1) / 2:
        raise ValueError(f"MGIG sampler requires q > (d-1)/2, got {q}")
    cholesky(a, "MGIG coefficient a")
    p = q + (1 - d) / 2
    ztaz = float(z @ a @ z)
    x = sample_gig(-p, 2.0 * b, 2.0 * ztaz, rng, n_steps=n_steps, size=size)
    w = sample_wishart(q, a, rng, size=size)
    outer = np.multiply.outer(np.asarray(x), np.outer(z, z))
    y = np.linalg.inv(outer + w)
    return 0.5 * (y + np.swapaxes(y, -1, -2))


def mgig_log_unnormalized(x, p, a, b):
    """Log of the unnormalized ``MGIG_n(-p, a, b)`` density at SPD ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    _, logdet = np.linalg.slogdet(x)
    tr_ax = np.einsum("ij,...ji->...", a, x)
    tr_bxinv = np.einsum("ij,...ji->...", b, np.linalg.inv(x))
    return -(p + (n + 1) / 2) * logdet - tr_ax - tr_bxinv
