"""Feynman-Kac particle machinery.

A model is given by an initial law mu, transition kernels M_p and
nonnegative potentials G_p over a horizon n.  run_smc produces the full
particle system (multinomial resampling), pick_path draws one path by
terminal weight, run_csmc is the conditional variant that retains a
reference path verbatim, and icsmc_step composes the two into the
invariant iterated-conditional-SMC kernel on path space.

Weights are carried in log space throughout; a step on which every
particle has zero potential raises ParticleDeathError rather than
propagating NaNs.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import BudgetExceededError, ConfigurationError, ContractViolationError, ParticleDeathError


class FeynmanKacModel:
    """A discrete-time Feynman-Kac model with horizon n.

    Callbacks are vectorized over particles:

    * ``mu_sample(N, rng)`` -- array of N initial points (first axis N).
    * ``m_sample(p, z, rng)`` -- array of moves from M_p, one per row of z,
      for p in 2..n.
    * ``g_eval(p, z)`` -- nonnegative potentials G_p(z), shape (N,),
      for p in 1..n.
    * ``g_upper(p)`` -- optional upper bound on G_p, asserted when given.
    """

    def __init__(self, n, mu_sample, m_sample, g_eval, g_upper=None):
        if n < 1:
            raise ConfigurationError(f"horizon n={n} must be >= 1")
        self.n = int(n)
        self.mu_sample = mu_sample
        self.m_sample = m_sample
        self.g_eval = g_eval
        self.g_upper = g_upper

    def log_g(self, p, z):
        """log G_p over a batch of points, validating the potential contract."""
        g = np.asarray(self.g_eval(p, z), dtype=float)
        if np.any(g < 0.0) or np.any(np.isnan(g)):
            raise ContractViolationError(f"negative or NaN potential at step {p}")
        if self.g_upper is not None and np.any(g > self.g_upper(p) * (1.0 + 1e-12)):
            raise ContractViolationError(f"potential above declared bound at step {p}")
        with np.errstate(divide="ignore"):
            return np.log(g)


@dataclass
class ParticleSystem:
    """The full output of one (conditional) SMC sweep.

    zeta has shape (n, N, ...), ancestors (n-1, N) with 0-based indices,
    log_potentials (n, N).
    """

    N: int
    zeta: np.ndarray
    ancestors: np.ndarray
    log_potentials: np.ndarray

    def lineages(self):
        """(n, N) array B with B[p, k] the time-p ancestor index of path k."""
        n, N = self.log_potentials.shape
        B = np.empty((n, N), dtype=np.int64)
        B[n - 1] = np.arange(N)
        for p in range(n - 2, -1, -1):
            B[p] = self.ancestors[p][B[p + 1]]
        return B

    def all_paths(self):
        """(n, N, ...) array whose [:, k] slice is the surviving path of particle k."""
        B = self.lineages()
        return np.stack([self.zeta[p][B[p]] for p in range(self.log_potentials.shape[0])])


@dataclass
class PickedPath:
    """A single path drawn from a particle system by terminal weight."""

    lineage: np.ndarray  # 0-based indices K_1..K_n
    path: np.ndarray


def _categorical(weights, size, rng):
    """size draws from the categorical law prop. to weights (one uniform each).

    Cumulative-sum inversion; exact ties at a cumulative boundary resolve to
    the lower index.
    """
    nz = np.flatnonzero(weights > 0.0)
    if nz.size == 0:
        raise ValueError("all categorical weights zero")
    c = np.cumsum(weights[nz])
    u = rng.random(size) * c[-1]
    idx = np.searchsorted(c, u, side="left")
    return nz[np.minimum(idx, nz.size - 1)]


def _resample(log_weights, size, rng, step):
    m = np.max(log_weights)
    if not np.isfinite(m):
        raise ParticleDeathError(step)
    return _categorical(np.exp(log_weights - m), size, rng)


def run_smc(model, N, rng):
    """Run the particle filter with N particles; returns the ParticleSystem."""
    if N < 1:
        raise ConfigurationError(f"N={N} must be >= 1")
    n = model.n
    z = np.asarray(model.mu_sample(N, rng))
    zeta = np.empty((n,) + z.shape, dtype=z.dtype)
    log_potentials = np.empty((n, N))
    ancestors = np.empty((max(n - 1, 0), N), dtype=np.int64)
    zeta[0] = z
    log_potentials[0] = model.log_g(1, z)
    for p in range(2, n + 1):
        a = _resample(log_potentials[p - 2], N, rng, step=p - 1)
        z = np.asarray(model.m_sample(p, zeta[p - 2][a], rng))
        ancestors[p - 2] = a
        zeta[p - 1] = z
        log_potentials[p - 1] = model.log_g(p, z)
    return ParticleSystem(N=N, zeta=zeta, ancestors=ancestors, log_potentials=log_potentials)


def pick_path(v, rng):
    """Draw one path: terminal index by terminal weight, lineage by ancestry."""
    n, _ = v.log_potentials.shape
    lineage = np.empty(n, dtype=np.int64)
    lineage[n - 1] = int(_resample(v.log_potentials[n - 1], 1, rng, step=n)[0])
    for p in range(n - 2, -1, -1):
        lineage[p] = v.ancestors[p][lineage[p + 1]]
    path = np.stack([v.zeta[p][lineage[p]] for p in range(n)])
    return PickedPath(lineage=lineage, path=path)


def run_csmc(model, N, ref_path, rng):
    """Conditional SMC retaining ref_path verbatim in uniformly chosen slots.

    Returns (K, ParticleSystem) where K is the (0-based) slot sequence; the
    system's path at lineage K equals ref_path exactly.
    """
    if N < 1:
        raise ConfigurationError(f"N={N} must be >= 1")
    n = model.n
    ref = np.asarray(ref_path)
    if ref.shape[0] != n:
        raise ConfigurationError(f"reference path has length {ref.shape[0]}, model horizon is {n}")
    K = rng.integers(0, N, size=n)
    z = np.asarray(model.mu_sample(N, rng))
    zeta = np.empty((n,) + z.shape, dtype=z.dtype)
    log_potentials = np.empty((n, N))
    ancestors = np.empty((max(n - 1, 0), N), dtype=np.int64)
    z[K[0]] = ref[0]
    zeta[0] = z
    log_potentials[0] = model.log_g(1, z)
    for p in range(2, n + 1):
        a = _resample(log_potentials[p - 2], N, rng, step=p - 1)
        a[K[p - 1]] = K[p - 2]
        z = np.asarray(model.m_sample(p, zeta[p - 2][a], rng))
        z[K[p - 1]] = ref[p - 1]
        ancestors[p - 2] = a
        zeta[p - 1] = z
        log_potentials[p - 1] = model.log_g(p, z)
    return K, ParticleSystem(N=N, zeta=zeta, ancestors=ancestors, log_potentials=log_potentials)


def icsmc_step(model, N, x, rng):
    """One draw from the iterated-conditional-SMC kernel started at path x.

    N=1 degenerates to the identity kernel.
    """
    x = np.asarray(x)
    if N == 1:
        return x.copy()
    _, v = run_csmc(model, N, x, rng)
    return pick_path(v, rng).path


def estimate_log_nc(v):
    """log of the unnormalized-measure estimate prod_p (mean of G_p over particles)."""
    n, N = v.log_potentials.shape
    step_logs = logsumexp(v.log_potentials, axis=1) - np.log(N)
    dead = ~np.isfinite(step_logs)
    if np.any(dead):
        raise ParticleDeathError(int(np.flatnonzero(dead)[0]) + 1)
    return float(np.sum(step_logs))


def estimate_pi_f(v, f):
    """Terminal-weighted particle estimate of the normalized expectation of f.

    f maps one path (shape (n, ...)) to a real.
    """
    n, N = v.log_potentials.shape
    logw = v.log_potentials[n - 1]
    m = np.max(logw)
    if not np.isfinite(m):
        raise ParticleDeathError(n)
    w = np.exp(logw - m)
    paths = v.all_paths()
    vals = np.array([f(paths[:, k]) for k in range(N)], dtype=float)
    return float(np.sum(w * vals) / np.sum(w))


def estimate_gamma_f(v, f):
    """Unbiased estimate of the unnormalized expectation gamma_n(f)."""
    return float(np.exp(estimate_log_nc(v))) * estimate_pi_f(v, f)


def self_normalized_unbiased(perfect_x, model, N, f, rng):
    """Unbiased estimate of pi(f) built on one exact draw perfect_x ~ pi.

    Runs conditional SMC from perfect_x and returns the terminal-weighted
    average of f over all N surviving paths; unbiased for every N.
    """
    _, v = run_csmc(model, N, perfect_x, rng)
    return estimate_pi_f(v, f)


def unbiased_pi_f_regen(first_regen_sampler, g_pmf, gamma_f_estimator, rng, k_cap=10**6):
    """Unbiased estimate of pi(f) from regeneration-time structure.

    first_regen_sampler(rng) draws the first regeneration time M of the
    stationary split chain; g_pmf is a pmf on positive integers;
    gamma_f_estimator(k, rng) is unbiased for gamma_k(f).  Output is 0
    unless M = 1, in which case K ~ g is drawn and the estimate is
    gamma-hat_K(f) / g(K).
    """
    m = int(first_regen_sampler(rng))
    if m != 1:
        return 0.0
    u = rng.random()
    cum = 0.0
    k = 0
    while cum <= u:
        k += 1
        if k > k_cap:
            raise BudgetExceededError(k_cap, k, what="pmf inversion steps")
        gk = float(g_pmf(k))
        if gk < 0.0:
            raise ConfigurationError(f"g_pmf({k}) = {gk} negative")
        cum += gk
    gk = float(g_pmf(k))
    if gk <= 0.0:
        raise ConfigurationError(f"g_pmf({k}) = {gk} not positive for drawn K")
    return float(gamma_f_estimator(k, rng)) / gk
