"""Bernoulli-factory primitives.

Everything here manufactures exact coin flips with derived success
probabilities out of flips of a "p-coin" whose p is unknown:

* ``flip_scaled_coin`` -- Bernoulli(C*q) from a q-coin, valid when an upper
  bound ``bound_b`` on q is known with C*bound_b < 1.
* ``flip_one_minus_p_coin`` -- Bernoulli((1-p)/(1-eps)) from a p-coin with
  p >= beta > eps, by inverting flips and scaling with C = 1/(1-eps).
* ``flip_eps_over_p_coin`` -- Bernoulli(eps/p), the regeneration coin, as a
  race between an eps-coin and the complement of the coin above.
* ``sign_problem_estimate`` -- an a.s. nonnegative unbiased estimate of
  mu(phi) when phi takes both signs but mu(phi) >= delta > 0 is known.

All operations are pure functions of their inputs and the supplied numpy
Generator, and are exactly reproducible given the stream state.
"""

import math
from dataclasses import dataclass, field

from .errors import BudgetExceededError, ConfigurationError, ContractViolationError

DEFAULT_FLIP_BUDGET = 10**7
_REJECTION_BUDGET = 10**6


class CoinSource:
    """A source of i.i.d. Bernoulli(p) flips with unknown p.

    Parameters
    ----------
    flip_fn : callable(rng) -> {0, 1}
        Produces one flip.
    true_p : float, optional
        Ground-truth p, set only on synthetic coins used in tests.
    flip_block_fn : callable(k, rng) -> ndarray, optional
        Vectorized batch of k flips; falls back to a flip_fn loop.
    """

    def __init__(self, flip_fn, true_p=None, flip_block_fn=None):
        self._flip_fn = flip_fn
        self._flip_block_fn = flip_block_fn
        self.true_p = true_p
        self.flips_used = 0

    def flip(self, rng):
        """Draw one flip and advance the counter."""
        self.flips_used += 1
        return int(self._flip_fn(rng))

    def flip_block(self, k, rng):
        """Draw k flips at once (same law as k calls to flip)."""
        self.flips_used += int(k)
        if self._flip_block_fn is not None:
            return self._flip_block_fn(k, rng)
        return [int(self._flip_fn(rng)) for _ in range(k)]

    @classmethod
    def from_prob(cls, p):
        """Synthetic coin with known success probability p."""
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError(f"coin probability {p} outside [0, 1]")
        return cls(
            lambda rng: int(rng.random() < p),
            true_p=p,
            flip_block_fn=lambda k, rng: (rng.random(k) < p).astype("int64"),
        )


@dataclass
class FactoryConfig:
    """Parameters (beta, eps) of the regeneration factories.

    beta is the user's lower bound on inf_x p(x); eps in (0, beta) is the
    regeneration probability actually used.  eps defaults to beta/2.
    gamma_split is the escalation split of the scaled-coin factory.
    """

    beta: float
    eps: float = None
    gamma_split: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ConfigurationError(f"beta={self.beta} outside (0, 1]")
        if self.eps is None:
            self.eps = self.beta / 2.0
        if not 0.0 < self.eps < self.beta:
            raise ConfigurationError(f"need 0 < eps < beta, got eps={self.eps}, beta={self.beta}")
        if not 0.0 < self.gamma_split < 1.0:
            raise ConfigurationError(f"gamma_split={self.gamma_split} outside (0, 1)")


@dataclass
class SignProblemSpec:
    """A sign-problem expectation mu(phi) with known bounds.

    mu_sampler(rng) draws from mu; delta > 0 is a known lower bound on
    mu(phi); phi_sup is a finite bound on |phi|.
    """

    mu_sampler: object
    phi: object
    delta: float
    phi_sup: float

    def __post_init__(self):
        if not 0.0 < self.delta <= self.phi_sup:
            raise ConfigurationError(
                f"need 0 < delta <= phi_sup, got delta={self.delta}, phi_sup={self.phi_sup}"
            )


class _FlipBudget:
    """Mutable countdown of raw coin flips within one factory call."""

    __slots__ = ("limit", "used")

    def __init__(self, limit):
        self.limit = limit
        self.used = 0

    def spend(self):
        self.used += 1
        if self.used > self.limit:
            raise BudgetExceededError(self.limit, self.used, what="p-coin flips")


def _logistic_flip(coin, C, rng, budget):
    # Bernoulli(Cq/(1+Cq)) from the q-coin; terminates a.s. for any q.
    thresh = C / (1.0 + C)
    while True:
        if rng.random() >= thresh:
            return 0
        budget.spend()
        if coin.flip(rng):
            return 1


def flip_scaled_coin(coin, C, bound_b, rng, budget=DEFAULT_FLIP_BUDGET, gamma_split=0.5):
    """Flip a Bernoulli(C*q) coin built from flips of a q-coin.

    Requires q <= bound_b and C*bound_b < 1.  The walk below maintains the
    invariant that the eventual output is Bernoulli((Cq)^i): a logistic
    Bernoulli(Cq/(1+Cq)) success moves i down, a failure moves i up, since
    (Cq)^i = [Cq/(1+Cq)]*(Cq)^{i-1} + [1/(1+Cq)]*(Cq)^{i+1}.  Absorption at
    i=0 outputs 1.  The walk drifts upward, so it is capped at
    k = ceil(2.3/(gamma*eps_h)) with eps_h = 1 - C*bound_b; on hitting the
    cap we factor (Cq)^k = (1+gamma*eps_h)^{-k} * ((1+gamma*eps_h)*Cq)^k,
    pay the known first factor with a single uniform (killing the call with
    probability ~ 1-e^{-2.3}) and continue the walk with C scaled up and
    eps_h scaled down by 1-gamma.
    """
    if not 0.0 <= bound_b < 1.0:
        raise ConfigurationError(f"bound_b={bound_b} outside [0, 1)")
    if C <= 1.0 or C * bound_b >= 1.0:
        raise ConfigurationError(f"need C > 1 and C*bound_b < 1, got C={C}, bound_b={bound_b}")
    state = _FlipBudget(budget)
    eps_h = 1.0 - C * bound_b
    k = math.ceil(2.3 / (gamma_split * eps_h))
    i = 1
    while True:
        if i == 0:
            return 1
        if i == k:
            survive = math.exp(-k * math.log1p(gamma_split * eps_h))
            if rng.random() >= survive:
                return 0
            C *= 1.0 + gamma_split * eps_h
            eps_h *= 1.0 - gamma_split
            k = math.ceil(2.3 / (gamma_split * eps_h))
        i += 1 - 2 * _logistic_flip(coin, C, rng, state)


class _InvertedCoin(CoinSource):
    """View of a p-coin as a (1-p)-coin; flips also count against the base."""

    def __init__(self, base):
        super().__init__(
            lambda rng: 1 - base.flip(rng),
            true_p=None if base.true_p is None else 1.0 - base.true_p,
        )


def flip_one_minus_p_coin(coin, cfg, rng, cost=None, budget=DEFAULT_FLIP_BUDGET):
    """Flip a Bernoulli((1-p)/(1-eps)) coin from a p-coin with p >= beta.

    Inverts the coin (q = 1-p <= 1-beta) and scales by C = 1/(1-eps).
    If ``cost`` is supplied, its raw_flips counter is advanced by the number
    of p-coin flips consumed.
    """
    start = coin.flips_used
    bit = flip_scaled_coin(
        _InvertedCoin(coin),
        1.0 / (1.0 - cfg.eps),
        1.0 - cfg.beta,
        rng,
        budget=budget,
        gamma_split=cfg.gamma_split,
    )
    if cost is not None:
        cost.raw_flips += coin.flips_used - start
    return bit


def flip_eps_over_p_coin(coin, cfg, rng, cost=None, budget=DEFAULT_FLIP_BUDGET):
    """Flip a Bernoulli(eps/p) coin from a p-coin with p >= beta > eps.

    Race construction: alternately flip an eps-coin (stop with 1) and a
    (p-eps)/(1-eps)-coin, realized as the complement of
    flip_one_minus_p_coin (stop with 0).  If ``cost`` is supplied, its
    subcoin_flips counter is advanced per (1-p)/(1-eps)-coin invocation.
    """
    while True:
        if rng.random() < cfg.eps:
            return 1
        if cost is not None:
            cost.subcoin_flips += 1
        if not flip_one_minus_p_coin(coin, cfg, rng, cost=cost, budget=budget):
            return 0


def sign_problem_estimate(spec, rng, budget=DEFAULT_FLIP_BUDGET):
    """Unbiased, a.s. bounded estimate of mu(phi) for sign-changing phi.

    Draws xi ~ mu and an independent bit Y ~ Bernoulli(2q), where q is the
    negative-sign mass of the |phi|-biased law mu_{|phi|}; returns
    W = |phi(xi)|(1-Y), so E[W] = mu(|phi|)(1-2q) = mu(phi) and
    0 <= W <= phi_sup surely.  The q-coin is realized by rejection sampling
    from mu_{|phi|} with acceptance probability |phi|/phi_sup; the 2q-coin
    by flip_scaled_coin with C=2 and bound_b = (1 - delta/phi_sup)/2.
    """

    def checked_phi(x):
        v = spec.phi(x)
        if abs(v) > spec.phi_sup * (1.0 + 1e-12):
            raise ContractViolationError(f"|phi(x)| = {abs(v)} exceeds phi_sup = {spec.phi_sup}")
        return v

    def sign_flip(r):
        for _ in range(_REJECTION_BUDGET):
            v = checked_phi(spec.mu_sampler(r))
            if r.random() * spec.phi_sup < abs(v):
                return int(v < 0.0)
        raise BudgetExceededError(_REJECTION_BUDGET, _REJECTION_BUDGET, what="rejection draws")

    magnitude = abs(checked_phi(spec.mu_sampler(rng)))
    bound_b = 0.5 * (1.0 - spec.delta / spec.phi_sup)
    if bound_b == 0.0:
        y = 0  # delta = phi_sup forces phi >= 0 a.e.; the 2q-coin is degenerate
    else:
        y = flip_scaled_coin(CoinSource(sign_flip), 2.0, bound_b, rng, budget=budget)
    w = magnitude * (1 - y)
    if not 0.0 <= w <= spec.phi_sup * (1.0 + 1e-12):
        raise ContractViolationError(f"estimate {w} outside [0, {spec.phi_sup}]")
    return w


def constrained_unbiased_estimate(spec, a, b, c, rng, budget=DEFAULT_FLIP_BUDGET):
    """Unbiased estimate of mu(phi) confined to [b, b + max(b-a, c-b)].

    Requires a <= phi <= c pointwise and mu(phi) >= delta > b; applies
    sign_problem_estimate to phi - b and shifts the result back by b.
    """
    if spec.delta <= b:
        raise ConfigurationError(f"need delta > b, got delta={spec.delta}, b={b}")
    if not a <= b <= c:
        raise ConfigurationError(f"need a <= b <= c, got a={a}, b={b}, c={c}")
    shifted = SignProblemSpec(
        mu_sampler=spec.mu_sampler,
        phi=lambda x: spec.phi(x) - b,
        delta=spec.delta - b,
        phi_sup=max(b - a, c - b),
    )
    return b + sign_problem_estimate(shifted, rng, budget=budget)
