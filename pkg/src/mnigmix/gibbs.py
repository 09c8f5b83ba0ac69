"""
Gibbs sampler for finite mixtures of MNIG distributions.

One sweep, given the current parameters:

1. draw memberships ``z_i`` with ``P(z_ig = 1)`` proportional to
   ``pi_g f(y_i, u_ig | theta_g)``;
2. refresh every latent ``u_ig`` with a warm-started GIG(-(d+1)/2,
   q_g^2(y_i), alpha_g^2) chain;
3. add the sufficient statistics to the prior hyperparameters;
4. draw ``delta^2``, ``gamma | delta``, ``Delta`` (MGIG, projected back to unit
   determinant), ``(mu, beta) | Delta`` and the mixing weights.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import logging
import math

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from . import diagnostics
from .distributions import (
    DEFAULT_GIG_STEPS,
    cholesky,
    make_rng,
    sample_dirichlet,
    sample_gamma,
    sample_gig,
    sample_inverse_wishart,
    sample_mgig,
    sample_mvn,
    sample_truncated_normal_positive,
)
from .mnig import (
    Dataset,
    MixtureModel,
    MNIGComponent,
    accumulate_stats,
    mixture_loglik,
    mnig_joint_logpdf,
    project_unit_det,
    responsibilities,
)

__all__ = [
    "PriorSpec",
    "Hyperparams",
    "GibbsConfig",
    "ChainState",
    "ChainTrace",
    "FitResult",
    "DegeneracyError",
    "FitError",
    "initialize",
    "update_memberships",
    "update_latents",
    "update_hyperparams",
    "draw_delta_sq",
    "draw_gamma_given_delta",
    "draw_mu_beta",
    "draw_delta_matrix",
    "draw_weights",
    "gibbs_sweep",
    "run_chain",
    "fit",
]

log = logging.getLogger(__name__)


class DegeneracyError(RuntimeError):
    """A conditional posterior became improper or numerically degenerate."""

    def __init__(self, message, component=None, iteration=None):
        super().__init__(message)
        self.component = component
        self.iteration = iteration

    def __str__(self):
        where = []
        if self.iteration is not None:
            where.append(f"iteration {self.iteration}")
        if self.component is not None:
            where.append(f"component {self.component}")
        msg = super().__str__()
        return f"{msg} ({', '.join(where)})" if where else msg


class FitError(RuntimeError):
    """Every chain of a fit failed."""


@dataclass
class PriorSpec:
    """
    Conjugate prior shared by all components.

    ``a0 .. a4`` are the prior pseudo-statistics, ``dirichlet`` the weight
    concentrations, and ``(nu0, Lambda0)`` the inverse-Wishart prior on Delta.
    """

    a0: float
    a1: np.ndarray
    a2: np.ndarray
    a3: float
    a4: float
    dirichlet: np.ndarray
    nu0: float
    Lambda0: np.ndarray

    def __post_init__(self):
        self.a1 = np.atleast_1d(np.asarray(self.a1, dtype=float))
        self.a2 = np.atleast_1d(np.asarray(self.a2, dtype=float))
        self.dirichlet = np.atleast_1d(np.asarray(self.dirichlet, dtype=float))
        self.Lambda0 = np.atleast_2d(np.asarray(self.Lambda0, dtype=float))
        d = self.a1.size
        if self.a2.shape != (d,) or self.Lambda0.shape != (d, d):
            raise ValueError("prior dimensions disagree")
        if self.a0 < 0 or self.a3 <= 0 or self.a4 <= 0:
            raise ValueError("prior needs a0 >= 0, a3 > 0, a4 > 0")
        if 4 * self.a3 * self.a4 - self.a0**2 <= 0:
            raise ValueError("prior needs 4*a3*a4 - a0**2 > 0")
        if np.any(self.dirichlet <= 0):
            raise ValueError("Dirichlet concentrations must be positive")
        if self.nu0 < d:
            raise ValueError("nu0 must be at least d")
        cholesky(self.Lambda0, "Lambda0")

    @property
    def d(self):
        return self.a1.size

    @property
    def G(self):
        return self.dirichlet.size

    @classmethod
    def default(cls, d, G, a0=1.0, a3=1.0, a4=1.0, dirichlet=1.0, nu0=None, lambda0=1.0):
        """Weakly informative defaults; scalars broadcast to the right shapes."""
        return cls(a0=a0, a1=np.zeros(d), a2=np.zeros(d), a3=a3, a4=a4,
                   dirichlet=np.full(G, float(dirichlet)),
                   nu0=d + 2.0 if nu0 is None else nu0,
                   Lambda0=float(lambda0) * np.eye(d))

    def to_dict(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in asdict(self).items()}


@dataclass
class Hyperparams:
    """Posterior hyperparameters ``a_j = a_j^(0) + t_j`` of one component."""

    a0: float
    a1: np.ndarray
    a2: np.ndarray
    a3: float
    a4: float

    @property
    def discriminant(self):
        return 4.0 * self.a3 * self.a4 - self.a0**2


@dataclass
class GibbsConfig:
    n_iterations: int = 2000
    n_chains: int = 3
    burnin_fraction: float = 0.5
    inner_gig_steps: int = 10
    mgig_gig_steps: int = DEFAULT_GIG_STEPS
    seed: int = 0
    kmeans_n_init: int = 10
    init_retries: int = 5
    relabel: str = "pivot"
    membership_draws: int = 500
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_iterations < 0 or self.n_chains < 1:
            raise ValueError("n_iterations must be >= 0 and n_chains >= 1")
        if not 0 < self.burnin_fraction < 1:
            raise ValueError("burnin_fraction must lie in (0, 1)")
        if self.inner_gig_steps < 1 or self.mgig_gig_steps < 1:
            raise ValueError("GIG step counts must be >= 1")


@dataclass
class ChainState:
    """Latent and parameter state of one chain after an iteration."""

    model: MixtureModel
    z: np.ndarray  # (n, G) one-hot
    u: np.ndarray  # (n, G) positive
    observed_loglik: float
    iteration: int = 0


@dataclass
class ChainTrace:
    """Per-iteration parameters and log-likelihoods; index 0 is the initial state."""

    chain_id: int
    weights: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    Delta: np.ndarray
    loglik: np.ndarray
    counts: np.ndarray
    final_state: ChainState = None

    @classmethod
    def allocate(cls, chain_id, T, G, d):
        return cls(chain_id, np.empty((T, G)), np.empty((T, G, d)), np.empty((T, G, d)),
                   np.empty((T, G)), np.empty((T, G)), np.empty((T, G, d, d)),
                   np.empty(T), np.empty((T, G)))

    def record(self, t, state):
        m = state.model
        self.weights[t] = m.weights
        for g, c in enumerate(m.components):
            self.mu[t, g] = c.mu
            self.beta[t, g] = c.beta
            self.delta[t, g] = c.delta
            self.gamma[t, g] = c.gamma
            self.Delta[t, g] = c.Delta
        self.loglik[t] = state.observed_loglik
        self.counts[t] = state.z.sum(axis=0)

    def __len__(self):
        return self.loglik.size

    def draws(self, start=0):
        sl = slice(start, None)
        return diagnostics.Draws(self.weights[sl], self.mu[sl], self.beta[sl],
                                 self.delta[sl], self.gamma[sl], self.Delta[sl],
                                 loglik=self.loglik[sl])


@dataclass
class FitResult:
    """Pooled posterior output of :func:`fit` for one number of components."""

    G: int
    config: GibbsConfig
    traces: list
    failures: dict
    burnin: int
    psrf: float
    converged: bool
    draws: diagnostics.Draws
    summary: dict
    model: MixtureModel
    membership: np.ndarray
    labels: np.ndarray
    max_loglik: float
    permutations: np.ndarray = field(repr=False, default=None)

    def loglik_matrix(self):
        return np.stack([t.loglik for t in self.traces])


def _one_hot(labels, G):
    z = np.zeros((labels.size, G))
    z[np.arange(labels.size), labels] = 1.0
    return z


def initialize(data, G, prior, rng, n_init=10, retries=5):
    """
    Starting state from a k-means partition.

    Each component starts at ``gamma = delta = 1``, ``mu`` = cluster mean,
    ``beta = 0.05``, ``Delta`` = cluster covariance scaled to unit
    determinant and ``pi`` = cluster proportion; every ``u`` is 1.
    """
    y = data.y
    n, d = y.shape
    if G > n:
        raise ValueError(f"G={G} exceeds the number of observations {n}")
    ridge = 1e-6 * float(np.mean(np.var(y, axis=0))) or 1e-6
    for _ in range(retries):
        seed = int(rng.integers(2**31 - 1))
        labels = KMeans(n_clusters=G, n_init=n_init, random_state=seed).fit_predict(y)
        counts = np.bincount(labels, minlength=G)
        if np.all(counts >= 2):
            break
    else:
        raise DegeneracyError(f"k-means left a component with fewer than 2 points "
                              f"after {retries} attempts", iteration=0)
    comps = []
    for g in range(G):
        yg = y[labels == g]
        cov = np.atleast_2d(np.cov(yg, rowvar=False)) + ridge * np.eye(d)
        comps.append(MNIGComponent(yg.mean(axis=0), np.full(d, 0.05), 1.0, 1.0,
                                   project_unit_det(cov)))
    model = MixtureModel(counts / n, comps)
    return ChainState(model, _one_hot(labels, G), np.ones((n, G)),
                      mixture_loglik(model, data), 0)


def update_memberships(state, data, rng):
    """Draw one-hot memberships from the complete-data conditional."""
    model = state.model
    logp = np.column_stack([
        math.log(w) + mnig_joint_logpdf(c, data.y, state.u[:, g])
        for g, (w, c) in enumerate(zip(model.weights, model.components))
    ])
    if np.any(np.isnan(logp)) or np.any(logp == np.inf):
        raise DegeneracyError("non-finite membership density")
    norm = logsumexp(logp, axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise DegeneracyError("every component density underflowed for some observation")
    prob = np.exp(logp - norm)
    cum = np.cumsum(prob, axis=1)
    draw = rng.random((prob.shape[0], 1)) * cum[:, -1:]
    labels = np.minimum((cum <= draw).sum(axis=1), prob.shape[1] - 1)
    return _one_hot(labels, prob.shape[1])


def update_latents(state, data, rng, inner_steps=10):
    """
    Warm-started refresh of every u_ig from its conditional.

    ``f(y | u) f(u)`` is proportional to
    ``u^{-(d+3)/2} exp(-(q^2(y)/u + alpha^2 u)/2)`` in ``u``, i.e.
    GIG(-(d+1)/2, q_g^2(y_i), alpha_g^2).
    """
    d = data.d
    chi = np.column_stack([c.q_squared(data.y) for c in state.model.components])
    psi = np.array([c.alpha**2 for c in state.model.components])
    return sample_gig(-(d + 1) / 2, chi, psi[None, :], rng, warm_start=state.u,
                      n_steps=inner_steps)


def update_hyperparams(prior, stats, component=None):
    """
    Posterior hyperparameters ``a_j = a_j^(0) + t_j`` for ``j = 0..4``.

    Raises
    ------
    DegeneracyError
        If ``4 a3 a4 - a0^2 <= 0`` after the update.
    """
    h = Hyperparams(prior.a0 + stats.t0, prior.a1 + stats.t1, prior.a2 + stats.t2,
                    prior.a3 + stats.t3, prior.a4 + stats.t4)
    if not (h.a3 > 0 and h.discriminant > 0):
        raise DegeneracyError("posterior requires a3 > 0 and 4*a3*a4 - a0^2 > 0",
                              component=component)
    return h


def draw_delta_sq(h, rng):
    """``delta^2 ~ Gamma(a0/2 + 1, a4 - a0^2/(4 a3))``."""
    rate = h.a4 - h.a0**2 / (4.0 * h.a3)
    if not rate > 0:
        raise DegeneracyError(f"delta^2 posterior rate {rate} is not positive")
    return float(sample_gamma(h.a0 / 2 + 1, rate, rng))


def draw_gamma_given_delta(h, delta, rng):
    """``gamma | delta ~ N(a0 delta / (2 a3), 1 / (2 a3))`` restricted to gamma > 0."""
    if not h.a3 > 0:
        raise DegeneracyError(f"gamma posterior needs a3 > 0, got {h.a3}")
    return float(sample_truncated_normal_positive(h.a0 * delta / (2 * h.a3),
                                                  1.0 / (2 * h.a3), rng))


def mu_beta_moments(h, Delta):
    """Mean (2d,) and covariance (2d, 2d) of the joint ``(mu, beta) | Delta`` posterior."""
    D = h.discriminant
    d = h.a1.size
    Delta_inv = np.linalg.inv(Delta)
    mean = np.concatenate([(2 * h.a3 * h.a2 - h.a0 * h.a1) / D,
                           Delta_inv @ (2 * h.a4 * h.a1 - h.a0 * h.a2) / D])
    off = -h.a0 * np.eye(d) / D
    cov = np.block([[2 * h.a3 * Delta / D, off], [off, 2 * h.a4 * Delta_inv / D]])
    return mean, 0.5 * (cov + cov.T)


def draw_mu_beta(h, Delta, rng):
    """Joint draw of ``(mu, beta)`` given ``Delta``."""
    if not h.discriminant > 0:
        raise DegeneracyError("(mu, beta) posterior needs 4*a3*a4 - a0^2 > 0")
    mean, cov = mu_beta_moments(h, Delta)
    try:
        x = sample_mvn(mean, cov, rng)
    except ValueError as exc:
        raise DegeneracyError(f"(mu, beta) covariance: {exc}") from exc
    d = h.a1.size
    return x[:d], x[d:]


def scatter_about(y, u, mu):
    """``S0 = sum_i (y_i - mu)(y_i - mu)^T / u_i`` over the rows given."""
    r = np.atleast_2d(y) - mu
    return (r / np.asarray(u)[:, None]).T @ r


def draw_delta_matrix(beta, t3, t0, y_g, mu, u_g, prior, rng, n_steps=DEFAULT_GIG_STEPS):
    """
    Draw Delta from its MGIG conditional and rescale it to unit determinant.

    The conditional is proportional to
    ``|D|^{-(nu0+t0)/2-(d+1)/2} exp(-t3 beta^T D beta - tr((S0 + Lambda0) inv(D)) / 2)``,
    i.e. ``MGIG_d(-q, t3 beta beta^T, (S0 + Lambda0)/2)`` with
    ``q = (nu0 + t0)/2``.  When ``beta = 0`` or ``t3 = 0`` the rank-one term
    vanishes and the draw is inverse-Wishart.
    """
    d = prior.d
    q = 0.5 * (prior.nu0 + t0)
    a = 0.5 * (scatter_about(y_g, u_g, mu) + prior.Lambda0) if len(y_g) else 0.5 * prior.Lambda0
    a = 0.5 * (a + a.T)
    try:
        if t3 > 0 and np.any(beta != 0):
            draw = sample_mgig(q, a, beta, t3, rng, n_steps=n_steps)
        else:
            draw = sample_inverse_wishart(q, a, rng)
        return project_unit_det(draw)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise DegeneracyError(f"Delta draw failed: {exc}") from exc


def draw_weights(dirichlet_prior, t0, rng):
    """Mixing weights from Dirichlet(prior + t0)."""
    w = sample_dirichlet(np.asarray(dirichlet_prior) + np.asarray(t0), rng)
    w = np.maximum(w, np.finfo(float).tiny)
    return w / w.sum()


def gibbs_sweep(state, data, prior, config, rng):
    """One full sweep; returns the next :class:`ChainState`."""
    z = update_memberships(state, data, rng)
    state = ChainState(state.model, z, state.u, state.observed_loglik, state.iteration)
    u = update_latents(state, data, rng, config.inner_gig_steps)
    stats = accumulate_stats(data, u, z)
    comps = []
    for g, (st, old) in enumerate(zip(stats, state.model.components)):
        try:
            h = update_hyperparams(prior, st, component=g)
            delta = math.sqrt(draw_delta_sq(h, rng))
            gamma = draw_gamma_given_delta(h, delta, rng)
            mask = z[:, g] > 0
            Delta = draw_delta_matrix(old.beta, st.t3, st.t0, data.y[mask], old.mu,
                                      u[mask, g], prior, rng, config.mgig_gig_steps)
            mu, beta = draw_mu_beta(h, Delta, rng)
            comps.append(MNIGComponent(mu, beta, delta, gamma, Delta))
        except DegeneracyError as exc:
            exc.component = g
            raise
        except ValueError as exc:
            raise DegeneracyError(str(exc), component=g) from exc
    weights = draw_weights(prior.dirichlet, [s.t0 for s in stats], rng)
    model = MixtureModel(weights, comps)
    loglik = mixture_loglik(model, data)
    if not math.isfinite(loglik):
        raise DegeneracyError("observed log-likelihood is not finite")
    return ChainState(model, z, u, loglik, state.iteration + 1)


def run_chain(data, G, prior, config, chain_id=0, rng=None):
    """
    Run one chain for ``config.n_iterations`` sweeps.

    The generator defaults to stream ``chain_id`` of ``config.seed``.
    """
    rng = make_rng(config.seed, chain_id) if rng is None else rng
    if prior.G != G or prior.d != data.d:
        raise ValueError("prior does not match G or data dimension")
    state = initialize(data, G, prior, rng, config.kmeans_n_init, config.init_retries)
    trace = ChainTrace.allocate(chain_id, config.n_iterations + 1, G, data.d)
    trace.record(0, state)
    for t in range(1, config.n_iterations + 1):
        try:
            state = gibbs_sweep(state, data, prior, config, rng)
        except DegeneracyError as exc:
            exc.iteration = t
            raise
        trace.record(t, state)
    trace.final_state = state
    return trace


def _chain_job(args):
    data, G, prior, config, chain_id = args
    try:
        return run_chain(data, G, prior, config, chain_id)
    except DegeneracyError as exc:
        return exc


def _average_membership(draws, data, limit):
    T = len(draws)
    idx = np.unique(np.linspace(0, T - 1, min(limit, T)).round().astype(int))
    total = np.zeros((data.n, draws.G))
    for t in idx:
        total += responsibilities(draws.model(t), data)
    return total / idx.size


def _mean_model(summary):
    w = summary["weights"]["mean"]
    comps = [MNIGComponent(summary["mu"]["mean"][g], summary["beta"]["mean"][g],
                           summary["delta"]["mean"][g], summary["gamma"]["mean"][g],
                           project_unit_det(summary["Delta"]["mean"][g]))
             for g in range(w.size)]
    return MixtureModel(w / w.sum(), comps)


def fit(data, G, prior=None, config=None):
    """
    Run ``config.n_chains`` independent chains and pool their output.

    Chains start from different k-means partitions (one random stream each).
    After burn-in the draws are relabelled, the PSRF of the log-likelihood
    traces is computed, and posterior means, 95% credible intervals and a MAP
    classification from averaged membership probabilities are reported.

    Raises
    ------
    FitError
        If every chain hits a degenerate conditional.
    """
    if not isinstance(data, Dataset):
        data = Dataset(data)
    config = config or GibbsConfig()
    prior = prior or PriorSpec.default(data.d, G)
    jobs = [(data, G, prior, config, c) for c in range(config.n_chains)]
    if config.n_jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
            results = list(pool.map(_chain_job, jobs))
    else:
        results = [_chain_job(j) for j in jobs]
    traces = [r for r in results if isinstance(r, ChainTrace)]
    failures = {c: str(r) for c, r in enumerate(results) if not isinstance(r, ChainTrace)}
    for c, msg in failures.items():
        log.warning("G=%d chain %d failed: %s", G, c, msg)
    if not traces:
        raise FitError(f"all {config.n_chains} chains failed for G={G}: {failures}")

    T = config.n_iterations + 1
    try:
        burn = diagnostics.burnin_count(T, config.burnin_fraction)
    except ValueError:
        # too short to discard anything and keep two draws; pool everything
        burn = 0
    pooled = diagnostics.Draws.concatenate(t.draws(burn) for t in traces)
    if len(traces) >= 2 and T - burn >= 2:
        value = diagnostics.psrf(np.stack([t.loglik[burn:] for t in traces]))
    else:
        value = float("nan")
    converged = bool(value < diagnostics.PSRF_THRESHOLD)

    relabelled, perms = diagnostics.relabel(pooled, config.relabel)
    if len(relabelled) >= 2:
        summary = diagnostics.summarize(relabelled)
        model = _mean_model(summary)
    else:
        summary = None
        model = relabelled.model(0)
    membership = _average_membership(relabelled, data, config.membership_draws)
    return FitResult(
        G=G, config=config, traces=traces, failures=failures, burnin=burn,
        psrf=value, converged=converged, draws=relabelled, summary=summary, model=model,
        membership=membership, labels=np.argmax(membership, axis=1) + 1,
        max_loglik=float(np.max(pooled.loglik)), permutations=perms,
    )
