"""Runtime validation of the beta <= inf_x p(x) assumption.

The perfect samplers never terminate wrongly -- a beta chosen above the
true atom-hit probability shows up as non-termination, not as bias.  These
tools turn that failure mode into measurable outcomes: a stopping-time
diagnostic on the p-coin average, its closed-form never-stop probability,
a total-variation bound for the clipped-coin chain actually simulated when
eps exceeds p somewhere, and an empirical lower confidence bound on p.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import beta as beta_dist

from .errors import ConfigurationError


@dataclass
class DiagnosticOutcome:
    """Result of one run of the stopping-time diagnostic."""

    stopped_at: object  # tau, or None when the budget ran out
    flips_used: int
    budget: int
    verdict: str  # "passed" | "budget_exceeded"


def default_diagnostic_budget(beta):
    """Default flip budget: an order of magnitude above the expected
    stopping time for p modestly above beta."""
    return math.ceil(50.0 * (1.0 - beta) / beta)


def run_beta_diagnostic(coin, beta, budget, rng):
    """Flip the coin until its running mean exceeds beta, or the budget ends.

    If the coin's p exceeds beta the stopping time tau is a.s. finite with
    E[tau] <= (1-beta)/(p-beta); if p < beta the diagnostic has positive
    probability of never stopping, which the budget converts into a
    ``budget_exceeded`` verdict.  flips_used reports the sequential
    stopping index even though flips are simulated in blocks internally.
    """
    if not 0.0 < beta < 1.0:
        raise ConfigurationError(f"beta={beta} outside (0, 1)")
    if budget < 1:
        raise ConfigurationError(f"budget={budget} must be >= 1")
    total = 0
    n = 0
    chunk = 1024
    while n < budget:
        m = min(chunk, budget - n)
        bits = np.asarray(coin.flip_block(m, rng))
        cums = total + np.cumsum(bits)
        hit = np.flatnonzero(cums > beta * np.arange(n + 1, n + m + 1))
        if hit.size:
            tau = n + int(hit[0]) + 1
            return DiagnosticOutcome(stopped_at=tau, flips_used=tau, budget=budget, verdict="passed")
        total = int(cums[-1])
        n += m
        chunk = min(chunk * 2, 1 << 17)
    return DiagnosticOutcome(stopped_at=None, flips_used=budget, budget=budget, verdict="budget_exceeded")


def prob_never_stop(p, m):
    """Probability the beta = 1/m diagnostic never stops, for p < 1/m.

    The stopping probability is p(m-1)/(1-p); this returns its complement.
    """
    if m < 2 or int(m) != m:
        raise ConfigurationError(f"m={m} must be an integer >= 2")
    if not 0.0 <= p < 1.0 / m:
        raise ConfigurationError(f"need 0 <= p < 1/m = {1.0 / m}, got p={p}")
    return 1.0 - p * (m - 1) / (1.0 - p)


def tv_sensitivity_bound(eps_true, eps_used):
    """Total-variation bound 1 - eps_true/eps_used between the target
    invariant law and the one of the eps-clipped chain actually simulated
    when eps_used exceeds the true uniform atom-hit bound.  Returns 0 when
    eps_used <= eps_true (the bound is vacuous)."""
    if eps_true <= 0.0:
        raise ConfigurationError(f"eps_true={eps_true} must be positive")
    if eps_used <= eps_true:
        return 0.0
    return 1.0 - eps_true / eps_used


def estimate_p_lower(kernel, probe_states, flips_per_state, rng, confidence=0.99):
    """Empirical lower confidence bound on min over probes of Pi(x, {a}).

    For each probe state, flips_per_state fresh draws from Pi(x, .) are
    tested for atom membership; a Clopper-Pearson lower bound at the given
    confidence is computed per state and the minimum returned.
    """
    probe_states = list(probe_states)
    if not probe_states:
        raise ConfigurationError("probe_states must be nonempty")
    if flips_per_state < 1:
        raise ConfigurationError(f"flips_per_state={flips_per_state} must be >= 1")
    lower = math.inf
    for x in probe_states:
        hits = sum(
            int(kernel.is_atom(kernel.sample(x, rng))) for _ in range(flips_per_state)
        )
        if hits == 0:
            lb = 0.0
        else:
            lb = float(beta_dist.ppf(1.0 - confidence, hits, flips_per_state - hits + 1))
        lower = min(lower, lb)
    return lower
