"""Artificial-atom extension of a Feynman-Kac model.

Grafting an absorbing atom path onto the model's path space makes the
iterated-conditional-SMC kernel a chain with a singleton atom, so the
perfect samplers of the regen module apply.  The extended invariant law is
the mixture k*pi + (1-k)*delta_atom, so discarding atom outputs yields
exact draws from the base path measure pi.

Atom representation: inside particle arrays the atom is a sentinel row --
NaN-filled for float state spaces (detected structurally with isnan, never
by coordinate comparison), or a caller-supplied out-of-support code for
integer state spaces.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import BudgetExceededError, ConfigurationError, ParticleDeathError
from .regen import AtomicKernel, perfect_sample_imputation, perfect_sample_multigamma
from .smc import FeynmanKacModel, icsmc_step, run_smc


class ExtendedModel(FeynmanKacModel):
    """The base model with an absorbing atom of prior weight b.

    The initial law puts mass b on the atom; transitions keep the atom
    absorbing and agree with the base elsewhere; the atom's potential at
    step p is psi[p-1].  Usable directly wherever a FeynmanKacModel is.
    """

    def __init__(self, base, b, psi, atom_value=None):
        if not 0.0 < b < 1.0:
            raise ConfigurationError(f"b={b} outside (0, 1)")
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (base.n,):
            raise ConfigurationError(f"psi must have length n={base.n}, got shape {psi.shape}")
        if np.any(psi <= 0.0):
            raise ConfigurationError("all psi values must be positive")
        self.base = base
        self.b = float(b)
        self.psi = psi
        self._nan_atom = atom_value is None
        self.atom_value = math.nan if self._nan_atom else atom_value
        super().__init__(
            n=base.n,
            mu_sample=self._mu_sample,
            m_sample=self._m_sample,
            g_eval=self._g_eval,
        )

    def is_atom_mask(self, z):
        """Boolean atom mask over a batch of extended-space points."""
        z = np.asarray(z)
        hit = np.isnan(z) if self._nan_atom else (z == self.atom_value)
        if hit.ndim > 1:
            hit = hit.all(axis=tuple(range(1, hit.ndim)))
        return hit

    def is_atom_point(self, z):
        """Atom test for a single extended-space point."""
        z = np.asarray(z)
        hit = np.isnan(z) if self._nan_atom else (z == self.atom_value)
        return bool(np.all(hit))

    def atom_path(self, point_shape=()):
        """The all-atom path, the chain's regeneration state."""
        dtype = float if self._nan_atom else np.asarray(self.atom_value).dtype
        return np.full((self.n,) + tuple(point_shape), self.atom_value, dtype=dtype)

    def _mu_sample(self, N, rng):
        z = np.asarray(self.base.mu_sample(N, rng))
        if self._nan_atom and not np.issubdtype(z.dtype, np.floating):
            z = z.astype(float)
        else:
            z = np.array(z, copy=True)
        z[rng.random(N) < self.b] = self.atom_value
        return z

    def _m_sample(self, p, z, rng):
        mask = self.is_atom_mask(z)
        out = np.array(z, copy=True)
        live = ~mask
        if np.any(live):
            out[live] = self.base.m_sample(p, z[live], rng)
        return out

    def _g_eval(self, p, z):
        mask = self.is_atom_mask(z)
        g = np.empty(mask.shape[0], dtype=float)
        g[mask] = self.psi[p - 1]
        live = ~mask
        if np.any(live):
            g[live] = self.base.g_eval(p, z[live])
        return g


def extend_model(base, b, psi, atom_value=None):
    """Build the atom-extended model; see ExtendedModel."""
    return ExtendedModel(base, b, psi, atom_value=atom_value)


def mixture_weight_k(b, psi, gamma_n1=None, log_gamma_n1=None):
    """The non-atom mass k = (1-b) / (1-b + b * prod(psi) / gamma_n(1)).

    Computed in log space; pass log_gamma_n1 when gamma_n(1) underflows.
    """
    if not 0.0 < b < 1.0:
        raise ConfigurationError(f"b={b} outside (0, 1)")
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0.0):
        raise ConfigurationError("all psi values must be positive")
    if log_gamma_n1 is None:
        if gamma_n1 is None or gamma_n1 <= 0.0:
            raise ConfigurationError("gamma_n1 must be positive (or pass log_gamma_n1)")
        log_gamma_n1 = math.log(gamma_n1)
    log_num = math.log1p(-b)
    log_den = np.logaddexp(log_num, math.log(b) + float(np.sum(np.log(psi))) - log_gamma_n1)
    return float(np.exp(log_num - log_den))


@dataclass
class TuningReport:
    """Output of tune_psi: the tuned potentials and a beta recommendation."""

    psi: np.ndarray
    atom_mass_estimates: np.ndarray
    beta_recommendation: float
    evidence: dict = field(default_factory=dict)


def tune_psi(
    base,
    n_prime,
    reps,
    rng,
    b=0.5,
    safety_factor=0.5,
    confidence=0.99,
    atom_value=None,
):
    """Tune the atom potentials psi and recommend a regeneration bound beta.

    One large run (n_prime particles) on the base model sets
    psi_p = mean of G_p over particles, targeting gamma_p(1)/gamma_{p-1}(1).
    Then ``reps`` runs on the extended model estimate the atom's stationary
    mass by the terminal-weighted atom fraction; the recommendation is a
    Hoeffding lower confidence bound on that mass times ``safety_factor``.
    """
    if n_prime < 2:
        raise ConfigurationError(f"n_prime={n_prime} must be >= 2")
    if reps < 1:
        raise ConfigurationError(f"reps={reps} must be >= 1")
    v = run_smc(base, n_prime, rng)
    step_logs = logsumexp(v.log_potentials, axis=1) - math.log(n_prime)
    dead = ~np.isfinite(step_logs)
    if np.any(dead):
        raise ParticleDeathError(int(np.flatnonzero(dead)[0]) + 1)
    psi = np.exp(step_logs)
    ext = extend_model(base, b, psi, atom_value=atom_value)
    estimates = np.empty(reps)
    for r in range(reps):
        v2 = run_smc(ext, n_prime, rng)
        logw = v2.log_potentials[-1]
        m = np.max(logw)
        if not np.isfinite(m):
            raise ParticleDeathError(ext.n)
        w = np.exp(logw - m)
        atom_terminal = ext.is_atom_mask(v2.zeta[-1])
        estimates[r] = float(np.sum(w[atom_terminal]) / np.sum(w))
    hoeffding = float(np.mean(estimates) - math.sqrt(math.log(1.0 / (1.0 - confidence)) / (2.0 * reps)))
    beta_rec = max(0.0, hoeffding) * safety_factor
    return TuningReport(
        psi=psi,
        atom_mass_estimates=estimates,
        beta_recommendation=beta_rec,
        evidence={
            "n_prime": n_prime,
            "reps": reps,
            "b": b,
            "confidence": confidence,
            "safety_factor": safety_factor,
            "hoeffding_lower": hoeffding,
        },
    )


def epsilon_N_bound(N, F, n):
    """Minorization rate bound ((N-1)/(N+2(F-1)))^n for the i-cSMC kernel."""
    if N < 2 or F < 1.0 or n < 1:
        raise ConfigurationError(f"need N >= 2, F >= 1, n >= 1; got N={N}, F={F}, n={n}")
    return float(np.exp(n * (math.log(N - 1) - math.log(N + 2.0 * (F - 1.0)))))


def rn_derivative_bound(N, F, n):
    """Reporting-only upper bound (1 + 2(F-1)/N)^n on the particle RN derivative."""
    if N < 1 or F < 1.0 or n < 1:
        raise ConfigurationError(f"need N >= 1, F >= 1, n >= 1; got N={N}, F={F}, n={n}")
    return float(np.exp(n * math.log1p(2.0 * (F - 1.0) / N)))


def bound_F_one_step(sup_ratio_G_over_MG, sup_kernel_ratio):
    """One-step forgetting bound: product of the two model-specific suprema.

    Callers supply sup over the potential-over-integrated-potential ratio
    and sup over the kernel density ratio; closed forms for the bundled
    models live in the models module.
    """
    if sup_ratio_G_over_MG <= 0.0 or sup_kernel_ratio <= 0.0:
        raise ConfigurationError("suprema must be positive")
    return float(sup_ratio_G_over_MG) * float(sup_kernel_ratio)


def bound_F_m_step(potential_product_ratio, kernel_density_ratio):
    """m-step forgetting bound from the m-step suprema; equals the one-step
    form at m=1."""
    return bound_F_one_step(potential_product_ratio, kernel_density_ratio)


def bound_F_check(F, E, n):
    """Bound F * E^n on the extended model's forgetting constant, where E
    bounds the per-step ratio between psi_p and the exact increment."""
    if F < 1.0 or E < 1.0 or n < 1:
        raise ConfigurationError(f"need F >= 1, E >= 1, n >= 1; got F={F}, E={E}, n={n}")
    return float(np.exp(math.log(F) + n * math.log(E)))


def perfect_sample_path(
    base,
    N,
    b,
    psi,
    cfg,
    rng,
    algorithm="imputation",
    atom_value=None,
    point_shape=(),
    max_rejections=10**4,
    cost=None,
):
    """Draw one exact path from the base model's normalized path measure.

    Builds the atom-extended model, wraps icsmc_step with N particles as an
    AtomicKernel on path space (atom = the all-atom path), runs the chosen
    perfect sampler, and repeats independently whenever the exact draw is
    the atom itself.  Requires cfg.beta at most the kernel's true atom-hit
    probability bound; a budget error here usually means beta is too large.
    """
    ext = extend_model(base, b, psi, atom_value=atom_value)
    atom_path = ext.atom_path(point_shape)
    kernel = AtomicKernel(
        sample=lambda x, r: icsmc_step(ext, N, x, r),
        atom=atom_path,
        is_atom=lambda path: ext.is_atom_point(np.asarray(path)[-1]),
    )
    if algorithm == "imputation":
        sampler = perfect_sample_imputation
    elif algorithm == "multigamma":
        sampler = perfect_sample_multigamma
    else:
        raise ConfigurationError(f"unknown algorithm {algorithm!r}")
    for _ in range(max_rejections):
        report = sampler(kernel, cfg, rng, cost=cost)
        if not kernel.is_atom(report.sample):
            return np.asarray(report.sample)
    raise BudgetExceededError(max_rejections, max_rejections, what="atom-path rejections")
