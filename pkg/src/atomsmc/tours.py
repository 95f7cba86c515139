"""Parallel simulation of i.i.d. split-chain tours.

Tours are mutually independent excursions between regenerations, so they
can be farmed out to a worker pool and stitched back together afterwards.
The core contract is scheduling invariance: tour i is a deterministic
function of (master_seed, i) alone, so the collection is byte-identical
for any worker count.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceededError, ConfigurationError
from .regen import DEFAULT_TOUR_BUDGET, simulate_tour
from .streams import substream


@dataclass
class TourCollection:
    """n_tours independent tours plus provenance and failure bookkeeping.

    tours[i] is the Tour for index i, or None if its budget ran out;
    failed_indices lists the latter.
    """

    tours: list
    master_seed: int
    worker_count: int
    failed_indices: list = field(default_factory=list)

    @property
    def n_failed(self):
        return len(self.failed_indices)

    def lengths(self):
        return np.array([t.length for t in self.tours if t is not None], dtype=np.int64)


def run_parallel_tours(kernel, n_tours, workers, master_seed, tour_budget=DEFAULT_TOUR_BUDGET):
    """Simulate n_tours independent tours on a pool of ``workers`` threads.

    Each tour runs on the substream derived from (master_seed, index); the
    result is identical for every workers value.  Budget-exceeded tours are
    recorded as failures rather than aborting the collection.
    """
    if n_tours < 1 or workers < 1:
        raise ConfigurationError(f"need n_tours >= 1 and workers >= 1, got {n_tours}, {workers}")

    def one(index):
        rng = substream(master_seed, index)
        try:
            return simulate_tour(kernel, rng, budget=tour_budget)
        except BudgetExceededError:
            return None

    if workers == 1:
        results = [one(i) for i in range(n_tours)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n_tours)))
    failed = [i for i, t in enumerate(results) if t is None]
    return TourCollection(
        tours=results, master_seed=master_seed, worker_count=workers, failed_indices=failed
    )


def stitch_tours(c, f, drop_failed=False):
    """Regenerative estimate of the stationary expectation of f.

    Concatenates tours in index order and returns sum of f over all states
    divided by the total length.  Failed tours are an error unless
    drop_failed is set.
    """
    if not c.tours:
        raise ConfigurationError("empty tour collection")
    if c.n_failed and not drop_failed:
        raise ConfigurationError(f"{c.n_failed} failed tours; pass drop_failed=True to skip them")
    num = 0.0
    den = 0
    for t in c.tours:
        if t is None:
            continue
        num += sum(f(s) for s in t.states)
        den += t.length
    if den == 0:
        raise ConfigurationError("no completed tours to stitch")
    return num / den


def max_tour_stats(c, geometric_eps=None):
    """Order statistics of the tour lengths, with analytic reference bounds.

    Reports max/mean/variance, the moment-based bound
    E[max] <= E[tau] + (n-1) * sqrt(Var[tau] / (2n-1)) evaluated from the
    empirical moments, and -- when the tour law is geometric with success
    probability ``geometric_eps`` -- the harmonic-sum bracket
    [H_n/lambda, 1 + H_n/lambda] with lambda = -log(1 - geometric_eps).
    """
    lengths = c.lengths()
    if lengths.size == 0:
        raise ConfigurationError("no completed tours")
    n = lengths.size
    mean = float(lengths.mean())
    var = float(lengths.var(ddof=1)) if n > 1 else 0.0
    stats = {
        "n_tours": int(n),
        "max": int(lengths.max()),
        "mean": mean,
        "variance": var,
        "moment_bound_on_mean_max": mean + (n - 1) * math.sqrt(var / (2 * n - 1)) if n > 1 else mean,
    }
    if geometric_eps is not None:
        if not 0.0 < geometric_eps < 1.0:
            raise ConfigurationError(f"geometric_eps={geometric_eps} outside (0, 1)")
        lam = -math.log1p(-geometric_eps)
        harmonic = float(np.sum(1.0 / np.arange(1, n + 1)))
        stats["geometric_lower"] = harmonic / lam
        stats["geometric_upper"] = 1.0 + harmonic / lam
    return stats
