"""Atomic regeneration: split-chain tours and the two perfect samplers.

A kernel with a singleton atom a satisfying Pi(x, {a}) >= beta > eps for all
x admits the mixture decomposition Pi = eps*delta_a + (1-eps)*Q_eps.  Both
samplers below output one exact draw from the invariant distribution:

* imputation: run the chain from the atom; whenever it lands on the atom,
  flip an eps/p(previous state)-coin to decide whether that arrival was a
  regeneration; on success, the state just before the arrival is returned.
* multigamma: draw the tour length N ~ Geometric(eps) directly, then take
  N-1 steps of the residual mixture, each choosing between the off-atom
  residual kernel and the atom via a (1-p)/(1-eps)-coin.

The p-coin at state x is realized lazily: each flip draws Y ~ Pi(x, .) and
reports whether Y is the atom.  Those draws are consumed by the factory and
never recycled as chain transitions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError, ConfigurationError
from .factory import CoinSource, flip_eps_over_p_coin, flip_one_minus_p_coin

DEFAULT_RESIDUAL_BUDGET = 10**6
DEFAULT_TOUR_BUDGET = 10**7


def _default_is_atom(atom):
    if isinstance(atom, np.ndarray):
        return lambda x: isinstance(x, np.ndarray) and x.shape == atom.shape and bool(
            np.array_equal(x, atom, equal_nan=True)
        )
    return lambda x: x == atom


class AtomicKernel:
    """A Markov kernel on a state space with a distinguished atom.

    Parameters
    ----------
    sample : callable(state, rng) -> state
        One draw from Pi(x, .).
    atom : state
        The atom a.
    is_atom : callable(state) -> bool, optional
        Atom membership test; defaults to structural equality with ``atom``.
    """

    def __init__(self, sample, atom, is_atom=None):
        self.sample = sample
        self.atom = atom
        self.is_atom = is_atom if is_atom is not None else _default_is_atom(atom)
        if not self.is_atom(atom):
            raise ConfigurationError("is_atom(atom) must be true")

    def p_coin(self, x, cost=None):
        """The Bernoulli(p(x)) coin realized by fresh draws from Pi(x, .)."""

        def flip(rng):
            if cost is not None:
                cost.raw_flips += 1
            return int(self.is_atom(self.sample(x, rng)))

        return CoinSource(flip)


@dataclass
class SampleCost:
    """Draw/flip counters attached to tours and perfect samples.

    kernel_draws counts Pi draws that advance or construct the chain,
    raw_flips counts Pi draws consumed as factory p-coin flips, and
    subcoin_flips counts (1-p)/(1-eps)-coin invocations.
    """

    kernel_draws: int = 0
    subcoin_flips: int = 0
    raw_flips: int = 0

    def add(self, other):
        self.kernel_draws += other.kernel_draws
        self.subcoin_flips += other.subcoin_flips
        self.raw_flips += other.raw_flips


@dataclass
class Tour:
    """One excursion of the split chain between regenerations."""

    states: list
    length: int
    cost: SampleCost = field(default_factory=SampleCost)


@dataclass
class PerfectSampleReport:
    """An exact draw from the invariant distribution, with its price tag."""

    sample: object
    algorithm: str
    cost: SampleCost = field(default_factory=SampleCost)
    diagnostics: object = None


def sample_residual(kernel, x, rng, budget=DEFAULT_RESIDUAL_BUDGET, cost=None):
    """Draw from the off-atom residual of Pi(x, .) by rejection.

    Returns the first draw from Pi(x, .) that is not the atom; expected
    draws are 1/(1 - p(x)).  Exceeding ``budget`` signals p(x) ~ 1.
    """
    for _ in range(budget):
        if cost is not None:
            cost.kernel_draws += 1
        y = kernel.sample(x, rng)
        if not kernel.is_atom(y):
            return y
    raise BudgetExceededError(budget, budget, what="residual rejection draws")


def perfect_sample_imputation(kernel, cfg, rng, tour_budget=DEFAULT_TOUR_BUDGET, cost=None):
    """One exact invariant draw by retrospective regeneration imputation.

    Runs the chain from the atom; each arrival at the atom from state x is
    declared a regeneration with probability eps/p(x) via the factory coin.
    The state just before the regenerating arrival is an exact draw.
    """
    total = SampleCost()
    x_prev = kernel.atom
    for _ in range(tour_budget):
        total.kernel_draws += 1
        x = kernel.sample(x_prev, rng)
        if kernel.is_atom(x):
            rho = flip_eps_over_p_coin(kernel.p_coin(x_prev, cost=total), cfg, rng, cost=total)
            if rho:
                if cost is not None:
                    cost.add(total)
                return PerfectSampleReport(sample=x_prev, algorithm="imputation", cost=total)
        x_prev = x
    raise BudgetExceededError(tour_budget, tour_budget, what="chain steps", context="imputation")


def perfect_sample_multigamma(kernel, cfg, rng, cost=None):
    """One exact invariant draw by direct simulation of the split mixture.

    N ~ Geometric(eps) by inversion; then N-1 steps, each flipping a
    (1-p)/(1-eps)-coin to choose the off-atom residual kernel over the
    atom.  The state after the last step is an exact draw.
    """
    total = SampleCost()
    u = 1.0 - rng.random()  # u in (0, 1]
    n_steps = 1 + int(math.floor(math.log(u) / math.log1p(-cfg.eps)))
    x = kernel.atom
    for _ in range(n_steps - 1):
        total.subcoin_flips += 1
        off_atom = flip_one_minus_p_coin(kernel.p_coin(x, cost=total), cfg, rng, cost=total)
        if off_atom:
            x = sample_residual(kernel, x, rng, cost=total)
        else:
            x = kernel.atom
    if cost is not None:
        cost.add(total)
    return PerfectSampleReport(sample=x, algorithm="multigamma", cost=total)


def simulate_tour(kernel, rng, budget=DEFAULT_TOUR_BUDGET):
    """Simulate one tour of the naturally split chain (s = p, nu = delta_a).

    Starts from the atom and draws from Pi until the atom is hit again;
    returns the visited states (ending with the atom).  Mean length is the
    reciprocal of the atom's stationary mass.
    """
    cost = SampleCost()
    states = []
    x = kernel.atom
    for _ in range(budget):
        cost.kernel_draws += 1
        x = kernel.sample(x, rng)
        states.append(x)
        if kernel.is_atom(x):
            return Tour(states=states, length=len(states), cost=cost)
    raise BudgetExceededError(budget, budget, what="chain steps", context="tour")
