"""Perfect simulation for uniformly ergodic Markov chains with a singleton atom.

Exact draws from invariant distributions via Bernoulli factories and atomic
regeneration, plus an SMC stack (iterated conditional SMC with an artificial
atom) for perfect simulation from Feynman-Kac path measures.
"""

from .errors import (
    BudgetExceededError,
    ConfigurationError,
    ContractViolationError,
    ParticleDeathError,
)
from .factory import (
    CoinSource,
    FactoryConfig,
    SignProblemSpec,
    constrained_unbiased_estimate,
    flip_eps_over_p_coin,
    flip_one_minus_p_coin,
    flip_scaled_coin,
    sign_problem_estimate,
)
from .regen import (
    AtomicKernel,
    PerfectSampleReport,
    SampleCost,
    Tour,
    perfect_sample_imputation,
    perfect_sample_multigamma,
    sample_residual,
    simulate_tour,
)
from .smc import (
    FeynmanKacModel,
    ParticleSystem,
    PickedPath,
    estimate_gamma_f,
    estimate_log_nc,
    estimate_pi_f,
    icsmc_step,
    pick_path,
    run_csmc,
    run_smc,
    self_normalized_unbiased,
    unbiased_pi_f_regen,
)
from .atomext import (
    ExtendedModel,
    TuningReport,
    bound_F_check,
    bound_F_m_step,
    bound_F_one_step,
    epsilon_N_bound,
    extend_model,
    mixture_weight_k,
    perfect_sample_path,
    rn_derivative_bound,
    tune_psi,
)
from .diagnostics import (
    DiagnosticOutcome,
    default_diagnostic_budget,
    estimate_p_lower,
    prob_never_stop,
    run_beta_diagnostic,
    tv_sensitivity_bound,
)
from .tours import (
    TourCollection,
    max_tour_stats,
    run_parallel_tours,
    stitch_tours,
)
from .streams import stream, substream

__version__ = "0.1.0"
