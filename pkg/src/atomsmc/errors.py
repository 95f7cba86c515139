"""Error types shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters more than the message text.
"""


class ConfigurationError(ValueError):
    """Invalid parameters or model configuration (CLI exit code 2)."""


class ParticleDeathError(RuntimeError):
    """All particle weights vanished at some SMC step (CLI exit code 3)."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"all particle weights zero at step {step}")


class BudgetExceededError(RuntimeError):
    """A flip/draw/tour budget ran out (CLI exit code 4).

    Usually the signature of a beta chosen above the true inf_x p(x): the
    factory then has positive probability of never terminating, and the
    budget converts that into a reportable outcome.
    """

    def __init__(self, budget, used, what="flips", context=None):
        self.budget = budget
        self.used = used
        self.what = what
        self.context = context
        msg = f"budget of {budget} {what} exceeded ({used} used)"
        if context is not None:
            msg += f" [{context}]"
        super().__init__(msg)


class DiagnosticFailureError(RuntimeError):
    """A requested diagnostic did not pass (CLI exit code 5)."""


class ContractViolationError(RuntimeError):
    """An asserted model invariant was observed to fail on real draws."""
