"""Concrete models and test oracles.

Hidden-Markov-style Feynman-Kac models used by the examples and the test
suite -- a particle in an absorbing medium, interval-censored sensor data,
a linear Gaussian state space model -- plus an atomized pseudo-marginal
(PMMH) kernel for Bayesian parameter inference, and the independent
oracles everything is validated against: power-iteration stationary
distributions, exact finite-model path enumeration, and the Kalman
filter/smoother with backward path sampling.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .regen import AtomicKernel
from .smc import FeynmanKacModel, estimate_log_nc, run_smc

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _norm_cdf(x):
    return 0.5 * (1.0 + math.erf(x / _SQRT2))


def _norm_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# finite-chain oracles


def finite_chain_oracle(transition, tol=1e-12, max_iter=10**6):
    """Stationary distribution of a finite row-stochastic matrix.

    Power iteration to L1 residual ``tol``; independent of the samplers it
    is used to validate.
    """
    P = np.asarray(transition, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ConfigurationError(f"transition matrix must be square, got shape {P.shape}")
    if np.any(P < 0.0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
        raise ConfigurationError("rows must be nonnegative and sum to 1")
    x = np.full(P.shape[0], 1.0 / P.shape[0])
    for _ in range(max_iter):
        y = x @ P
        if np.abs(y - x).sum() < tol:
            return y / y.sum()
        x = y
    raise ConfigurationError("power iteration did not converge; is the chain irreducible?")


class FiniteChainKernel(AtomicKernel):
    """AtomicKernel backed by an explicit finite transition matrix.

    States are integers 0..K-1; the atom is ``atom_index``.
    """

    def __init__(self, transition, atom_index=0):
        P = np.asarray(transition, dtype=float)
        if np.any(P < 0.0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigurationError("rows must be nonnegative and sum to 1")
        self.transition = P
        self._cum = np.cumsum(P, axis=1)
        self._K = P.shape[0]
        super().__init__(sample=self._sample, atom=int(atom_index))

    def _sample(self, x, rng):
        j = int(np.searchsorted(self._cum[x], rng.random(), side="right"))
        return min(j, self._K - 1)

    def min_atom_prob(self):
        """The exact uniform lower bound inf_x Pi(x, {atom})."""
        return float(self.transition[:, self.atom].min())


# ---------------------------------------------------------------------------
# finite Feynman-Kac models and exact enumeration


def _rowwise_categorical(cum_rows, rng):
    u = rng.random(cum_rows.shape[0])
    idx = (cum_rows > u[:, None]).argmax(axis=1)
    return idx.astype(np.int64)


def finite_fk_model(mu, transitions, potentials):
    """FeynmanKacModel over states 0..K-1 from explicit arrays.

    mu: (K,) initial probabilities; transitions: (n-1, K, K) row-stochastic
    matrices; potentials: (n, K) nonnegative.
    """
    mu = np.asarray(mu, dtype=float)
    transitions = np.asarray(transitions, dtype=float)
    potentials = np.asarray(potentials, dtype=float)
    n = potentials.shape[0]
    if transitions.shape[0] != n - 1 and n > 1:
        raise ConfigurationError("need n-1 transition matrices")
    cum_mu = np.cumsum(mu)
    cum_T = np.cumsum(transitions, axis=2) if n > 1 else None

    def mu_sample(N, rng):
        u = rng.random(N)
        return np.searchsorted(cum_mu, u, side="right").clip(0, mu.size - 1).astype(np.int64)

    def m_sample(p, z, rng):
        return _rowwise_categorical(cum_T[p - 2][z], rng)

    def g_eval(p, z):
        return potentials[p - 1][z]

    return FeynmanKacModel(n=n, mu_sample=mu_sample, m_sample=m_sample, g_eval=g_eval)


def enumerate_fk_paths(mu, transitions, potentials):
    """Exact path enumeration of a finite Feynman-Kac model.

    Returns (paths, gamma) where paths is a (K^n, n) int array of all
    paths and gamma the corresponding unnormalized path weights
    mu(z_1) G_1(z_1) prod_p M_p(z_{p-1}, z_p) G_p(z_p).  The normalized
    path law is gamma / gamma.sum().
    """
    mu = np.asarray(mu, dtype=float)
    transitions = np.asarray(transitions, dtype=float)
    potentials = np.asarray(potentials, dtype=float)
    n = potentials.shape[0]
    K = mu.size
    paths = np.array(list(itertools.product(range(K), repeat=n)), dtype=np.int64)
    gamma = np.empty(paths.shape[0])
    for i, path in enumerate(paths):
        w = mu[path[0]] * potentials[0, path[0]]
        for p in range(1, n):
            w *= transitions[p - 1, path[p - 1], path[p]] * potentials[p, path[p]]
        gamma[i] = w
    return paths, gamma


def fk_gamma_one(mu, transitions, potentials):
    """Exact gamma_p(1) for p = 1..n of a finite Feynman-Kac model."""
    mu = np.asarray(mu, dtype=float)
    transitions = np.asarray(transitions, dtype=float)
    potentials = np.asarray(potentials, dtype=float)
    n = potentials.shape[0]
    out = np.empty(n)
    v = mu * potentials[0]
    out[0] = v.sum()
    for p in range(2, n + 1):
        v = (v @ transitions[p - 2]) * potentials[p - 1]
        out[p - 1] = v.sum()
    return out


def fk_forgetting_constant(mu, transitions, potentials):
    """Exact forgetting constant F of a finite Feynman-Kac model.

    F = max over p, k of sup_z (gamma_{p-1}(1)/gamma_{p+k}(1)) * h_{p,k}(z)
    where h_{p,k}(z) is the expected potential product over the next k
    steps started at z, computed by backward matrix recursion.
    """
    transitions = np.asarray(transitions, dtype=float)
    potentials = np.asarray(potentials, dtype=float)
    n = potentials.shape[0]
    gamma = fk_gamma_one(mu, transitions, potentials)
    gamma_prev = np.concatenate([[1.0], gamma[:-1]])
    best = 0.0
    for p in range(1, n + 1):
        h = potentials[p - 1].copy()  # k = 0
        best = max(best, gamma_prev[p - 1] / gamma[p - 1] * h.max())
        for k in range(1, n - p + 1):
            # prepend step p, extending the horizon to p+k
            h = potentials[p - 1] * (transitions[p - 1] @ _shift_h(potentials, transitions, p, k))
            best = max(best, gamma_prev[p - 1] / gamma[p + k - 1] * h.max())
    return best


def _shift_h(potentials, transitions, p, k):
    # expected product of G_{p+1}..G_{p+k} started one step ahead of p
    h = potentials[p + k - 1].copy()
    for q in range(p + k - 1, p, -1):
        h = potentials[q - 1] * (transitions[q - 1] @ h)
    return h


def extend_finite_fk(mu, transitions, potentials, b, psi):
    """Explicit arrays of the atom-extended finite model (atom index = K).

    Returns (mu_e, transitions_e, potentials_e); exact enumeration of
    these is the oracle for the extended path law.
    """
    mu = np.asarray(mu, dtype=float)
    transitions = np.asarray(transitions, dtype=float)
    potentials = np.asarray(potentials, dtype=float)
    psi = np.asarray(psi, dtype=float)
    n, K = potentials.shape
    mu_e = np.concatenate([(1.0 - b) * mu, [b]])
    T_e = np.zeros((max(n - 1, 0), K + 1, K + 1))
    if n > 1:
        T_e[:, :K, :K] = transitions
        T_e[:, K, K] = 1.0
    G_e = np.concatenate([potentials, psi[:, None]], axis=1)
    return mu_e, T_e, G_e


# ---------------------------------------------------------------------------
# particle in an absorbing medium


@dataclass
class AbsorbingMediumModel:
    """Gaussian random walk killed outside the interval [lo, hi].

    Initial law uniform on [0, 1]; transitions are mean-preserving normals
    with variance sigma2; potentials are the interval indicator.
    """

    lo: float = 0.0
    hi: float = 1.0
    sigma2: float = 0.25
    n: int = 10

    def __post_init__(self):
        if self.hi <= self.lo:
            raise ConfigurationError(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if self.sigma2 <= 0.0:
            raise ConfigurationError(f"sigma2={self.sigma2} must be positive")

    def to_fk(self):
        sd = math.sqrt(self.sigma2)
        return FeynmanKacModel(
            n=self.n,
            mu_sample=lambda N, rng: rng.random(N),
            m_sample=lambda p, z, rng: z + sd * rng.standard_normal(z.shape[0]),
            g_eval=lambda p, z: ((z >= self.lo) & (z <= self.hi)).astype(float),
            g_upper=lambda p: 1.0,
        )


def absorbing_A_bound(model):
    """Closed-form one-step forgetting bound for the absorbing medium.

    For S = [lo, hi] and walk deviation sigma: the potential factor is
    1 / inf_{z in S} M(z, S) = 1 / (Phi(L/sigma) - 1/2) with L = hi - lo,
    and the kernel density ratio factor is exp(L^2 / (2 sigma^2)).
    """
    L = model.hi - model.lo
    sd = math.sqrt(model.sigma2)
    denom = _norm_cdf(L / sd) - 0.5
    if denom <= 0.0:
        raise ConfigurationError("degenerate interval; compute numeric suprema instead")
    return math.exp(L * L / (2.0 * model.sigma2)) / denom


# ---------------------------------------------------------------------------
# interval-censored sensor data


@dataclass
class SensorHmmModel:
    """Random walk observed through unit-interval sensors.

    Observation y_p means the state lay in [y_p, y_p + 1).  Initial law
    standard normal; transitions normal with variance sigma2.
    """

    sigma2: float
    observations: list

    def __post_init__(self):
        if self.sigma2 <= 0.0:
            raise ConfigurationError(f"sigma2={self.sigma2} must be positive")
        if len(self.observations) == 0:
            raise ConfigurationError("observations must be nonempty")
        self.observations = [int(y) for y in self.observations]

    @property
    def n(self):
        return len(self.observations)

    def to_fk(self):
        sd = math.sqrt(self.sigma2)
        y = np.asarray(self.observations, dtype=float)

        def g_eval(p, z):
            return ((z >= y[p - 1]) & (z < y[p - 1] + 1.0)).astype(float)

        return FeynmanKacModel(
            n=self.n,
            mu_sample=lambda N, rng: rng.standard_normal(N),
            m_sample=lambda p, z, rng: z + sd * rng.standard_normal(z.shape[0]),
            g_eval=g_eval,
            g_upper=lambda p: 1.0,
        )

    @classmethod
    def simulate(cls, sigma2, n, seed, required_max_gap=None, max_attempts=10**4):
        """Simulate a dataset from the model's own dynamics.

        If required_max_gap is given, redraw until the largest consecutive
        observation gap equals it.
        """
        rng = np.random.default_rng(seed)
        sd = math.sqrt(sigma2)
        for _ in range(max_attempts):
            z = np.empty(n)
            z[0] = rng.standard_normal()
            for p in range(1, n):
                z[p] = z[p - 1] + sd * rng.standard_normal()
            y = np.floor(z).astype(int)
            gap = int(np.abs(np.diff(y)).max()) if n > 1 else 0
            if required_max_gap is None or gap == required_max_gap:
                return cls(sigma2=sigma2, observations=y.tolist())
        raise ConfigurationError(f"no dataset with max gap {required_max_gap} in {max_attempts} tries")


def _sensor_pair_bound(i, j, sd):
    # kernel density ratio and inverse interval mass for one observation pair
    if i <= j:
        ratio = _norm_pdf((j + 1 - (i + 1)) / sd) / _norm_pdf((j + 1 - i) / sd)
        mass = _norm_cdf((j + 1 - i) / sd) - _norm_cdf((j - i) / sd)
    else:
        ratio = _norm_pdf((j - i) / sd) / _norm_pdf((j - (i + 1)) / sd)
        mass = _norm_cdf((j + 1 - (i + 1)) / sd) - _norm_cdf((j - (i + 1)) / sd)
    return ratio / mass


def sensor_A_bound(model):
    """Data-dependent one-step forgetting bound for the sensor model.

    For each consecutive observation pair the bound multiplies the
    worst-case kernel density ratio between the two sensor cells by the
    reciprocal of the smallest transition mass into the target cell; the
    overall bound is the maximum over pairs (attained at the widest gap).
    With a single observation only the initial-law term remains.
    """
    sd = math.sqrt(model.sigma2)
    y = model.observations
    if len(y) == 1:
        return 1.0 / (_norm_cdf(y[0] + 1.0) - _norm_cdf(float(y[0])))
    return max(_sensor_pair_bound(y[p], y[p + 1], sd) for p in range(len(y) - 1))


# ---------------------------------------------------------------------------
# linear Gaussian state space model


@dataclass
class LinearGaussianModel:
    """z_1 ~ N(m0, v0); z_p = a z_{p-1} + N(0, q_var); y_p = c z_p + N(0, r_var)."""

    a_coef: float
    q_var: float
    c_coef: float
    r_var: float
    observations: list
    m0: float = 0.0
    v0: float = 1.0

    def __post_init__(self):
        if min(self.q_var, self.r_var, self.v0) <= 0.0:
            raise ConfigurationError("variances must be positive")
        self.observations = [float(y) for y in self.observations]

    @property
    def n(self):
        return len(self.observations)

    @classmethod
    def simulate(cls, a_coef, q_var, c_coef, r_var, n, seed, m0=0.0, v0=1.0):
        """Draw observations from the model's own generative law."""
        rng = np.random.default_rng(seed)
        z = m0 + math.sqrt(v0) * rng.standard_normal()
        ys = []
        for _ in range(n):
            ys.append(c_coef * z + math.sqrt(r_var) * rng.standard_normal())
            z = a_coef * z + math.sqrt(q_var) * rng.standard_normal()
        return cls(a_coef=a_coef, q_var=q_var, c_coef=c_coef, r_var=r_var,
                   observations=ys, m0=m0, v0=v0)

    def to_fk(self):
        y = np.asarray(self.observations)
        sd_q = math.sqrt(self.q_var)
        norm_const = 1.0 / math.sqrt(2.0 * math.pi * self.r_var)

        def g_eval(p, z):
            d = y[p - 1] - self.c_coef * z
            return norm_const * np.exp(-0.5 * d * d / self.r_var)

        return FeynmanKacModel(
            n=self.n,
            mu_sample=lambda N, rng: self.m0 + math.sqrt(self.v0) * rng.standard_normal(N),
            m_sample=lambda p, z, rng: self.a_coef * z + sd_q * rng.standard_normal(z.shape[0]),
            g_eval=g_eval,
            g_upper=lambda p: norm_const,
        )


@dataclass
class KalmanStep:
    pred_mean: float
    pred_var: float
    filt_mean: float
    filt_var: float
    log_increment: float


def kalman_filter(model):
    """Exact filtering recursion; the log-increments sum to log gamma_n(1)."""
    a, c, q, r = model.a_coef, model.c_coef, model.q_var, model.r_var
    steps = []
    pred_mean, pred_var = model.m0, model.v0
    for y in model.observations:
        s = c * c * pred_var + r
        resid = y - c * pred_mean
        log_inc = -0.5 * resid * resid / s - 0.5 * math.log(s) - _LOG_SQRT_2PI
        gain = pred_var * c / s
        filt_mean = pred_mean + gain * resid
        filt_var = (1.0 - gain * c) * pred_var
        steps.append(KalmanStep(pred_mean, pred_var, filt_mean, filt_var, log_inc))
        pred_mean = a * filt_mean
        pred_var = a * a * filt_var + q
    return steps


def kalman_smoother(model, filter_steps=None):
    """Exact smoothed marginals (mean, var) by the backward recursion."""
    steps = kalman_filter(model) if filter_steps is None else filter_steps
    a, q = model.a_coef, model.q_var
    n = len(steps)
    means = np.empty(n)
    variances = np.empty(n)
    means[n - 1] = steps[n - 1].filt_mean
    variances[n - 1] = steps[n - 1].filt_var
    for p in range(n - 2, -1, -1):
        pred_var_next = a * a * steps[p].filt_var + q
        pred_mean_next = a * steps[p].filt_mean
        J = steps[p].filt_var * a / pred_var_next
        means[p] = steps[p].filt_mean + J * (means[p + 1] - pred_mean_next)
        variances[p] = steps[p].filt_var + J * J * (variances[p + 1] - pred_var_next)
    return [(float(m), float(v)) for m, v in zip(means, variances)]


def kalman_sample_paths(model, size, rng, filter_steps=None):
    """Exact draws from the smoothing path law, shape (size, n).

    Backward sampling through the filtered moments; used as an
    independent source of perfect path samples.
    """
    steps = kalman_filter(model) if filter_steps is None else filter_steps
    a, q = model.a_coef, model.q_var
    n = len(steps)
    out = np.empty((size, n))
    last = steps[n - 1]
    out[:, n - 1] = last.filt_mean + math.sqrt(last.filt_var) * rng.standard_normal(size)
    for p in range(n - 2, -1, -1):
        st = steps[p]
        pred_var_next = a * a * st.filt_var + q
        pred_mean_next = a * st.filt_mean
        J = st.filt_var * a / pred_var_next
        cond_mean = st.filt_mean + J * (out[:, p + 1] - pred_mean_next)
        cond_var = st.filt_var - J * J * pred_var_next
        out[:, p] = cond_mean + math.sqrt(max(cond_var, 0.0)) * rng.standard_normal(size)
    return out


# ---------------------------------------------------------------------------
# atomized pseudo-marginal (PMMH) kernel


@dataclass(frozen=True)
class PmmhState:
    """A point of the extended parameter space: (theta, w), or the atom
    when theta is None."""

    theta: object
    w: float


@dataclass
class PmmhSettings:
    """Configuration of the atomized PMMH kernel.

    theta = (theta1..theta4) parameterizes the latent linear Gaussian
    model via transitions N(theta1 z, theta2) and emissions
    N(theta3 z, theta4).  The random-walk proposal has scale proposal_sd
    per coordinate; atom moves propose from N(theta_star, reentry_sd^2),
    which must be wide enough to cover the posterior bulk; the prior is
    centred normal with scale prior_sd.
    """

    observations: list
    n_particles: int = 256
    theta_star: tuple = (0.9, 1.0, 1.0, 1.0)
    proposal_sd: float = 0.1
    reentry_sd: float = 0.5
    prior_sd: float = 1.0
    m0: float = 0.0
    v0: float = 1.0
    atom_w: float = None  # defaults to prior(theta_star)*w(theta_star)/q(theta_star|theta_star)
    exact_likelihood: bool = False  # Kalman-exact w, for degenerate-case tests


class AtomizedPmmhKernel(AtomicKernel):
    """Metropolis-Hastings kernel on (theta, w) with an artificial atom.

    From a regular state the proposal mixes, with weight 1/2 each, a
    random-walk parameter move (with a fresh likelihood estimate) and a
    jump to the atom; from the atom it proposes theta ~ q(theta_star, .)
    with a fresh estimate.  Acceptance ratios follow from the target
    density 0.5 * prior(theta) * w off the atom and 0.5 * atom_w at it.
    """

    def __init__(self, settings, rng):
        self.settings = settings
        if settings.atom_w is None:
            theta_star = np.asarray(settings.theta_star, dtype=float)
            w_star = self._likelihood(theta_star, rng)
            if w_star is None:
                raise ConfigurationError("theta_star gives an invalid model")
            # balance the atom's target mass against the continuous part so
            # that jumps near theta_star have O(1) acceptance probability:
            # the re-entry ratio prior(t')w'/(atom_w q(t'|t*)) is then ~1
            settings.atom_w = w_star * math.exp(
                self._log_prior(theta_star) - self._log_q(theta_star, theta_star)
            )
        if settings.atom_w <= 0.0:
            raise ConfigurationError(f"atom_w={settings.atom_w} must be positive")
        atom = PmmhState(theta=None, w=settings.atom_w)
        super().__init__(sample=self._step, atom=atom, is_atom=lambda x: x.theta is None)

    def _model(self, theta):
        return LinearGaussianModel(
            a_coef=theta[0], q_var=theta[1], c_coef=theta[2], r_var=theta[3],
            observations=self.settings.observations,
            m0=self.settings.m0, v0=self.settings.v0,
        )

    def _likelihood(self, theta, rng):
        """One draw of the likelihood coordinate w at theta (None if invalid)."""
        if theta[1] <= 0.0 or theta[3] <= 0.0:
            return None
        model = self._model(theta)
        if self.settings.exact_likelihood:
            return math.exp(sum(s.log_increment for s in kalman_filter(model)))
        v = run_smc(model.to_fk(), self.settings.n_particles, rng)
        return math.exp(estimate_log_nc(v))

    def _log_prior(self, theta):
        s = self.settings.prior_sd
        return float(np.sum(-0.5 * (theta / s) ** 2 - math.log(s) - _LOG_SQRT_2PI))

    def _log_q(self, center, theta):
        s = self.settings.reentry_sd
        d = (theta - np.asarray(center)) / s
        return float(np.sum(-0.5 * d * d - math.log(s) - _LOG_SQRT_2PI))

    def _step(self, x, rng):
        s = self.settings
        if x.theta is None:
            # re-entry: theta' ~ q(theta_star, .), w' fresh
            theta_p = np.asarray(s.theta_star) + s.reentry_sd * rng.standard_normal(4)
            w_p = self._likelihood(theta_p, rng)
            if w_p is None or w_p <= 0.0:
                return x
            log_num = math.log(0.5) + self._log_prior(theta_p) + math.log(w_p) + math.log(0.5)
            log_den = math.log(0.5 * s.atom_w) + self._log_q(s.theta_star, theta_p)
            if math.log(1.0 - rng.random()) < log_num - log_den:
                return PmmhState(theta=theta_p, w=w_p)
            return x
        if rng.random() < 0.5:
            # propose the atom
            log_num = math.log(0.5 * s.atom_w) + self._log_q(s.theta_star, x.theta)
            log_den = math.log(0.5) + self._log_prior(x.theta) + math.log(x.w) + math.log(0.5)
            if math.log(1.0 - rng.random()) < log_num - log_den:
                return self.atom
            return x
        # random-walk parameter move; symmetric proposal terms cancel
        theta_p = x.theta + s.proposal_sd * rng.standard_normal(4)
        w_p = self._likelihood(theta_p, rng)
        if w_p is None or w_p <= 0.0:
            return x
        log_ratio = (
            self._log_prior(theta_p) + math.log(w_p)
            - self._log_prior(x.theta) - math.log(x.w)
        )
        if math.log(1.0 - rng.random()) < log_ratio:
            return PmmhState(theta=theta_p, w=w_p)
        return x


def build_atomized_pmmh(settings, rng):
    """Construct the atomized PMMH kernel (estimating atom_w if unset)."""
    return AtomizedPmmhKernel(settings, rng)
