"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI maps it to an exit code.
"""


class QDelayError(Exception):
    category = "error"


class InvalidDimensionError(QDelayError, ValueError):
    category = "invalid-dimension"


class ObservablePatternError(QDelayError, ValueError):
    category = "observable-pattern"


class DimensionMismatchError(QDelayError, ValueError):
    category = "dimension-mismatch"


class InvalidStateError(QDelayError, ValueError):
    category = "invalid-state"


class ConditionViolationError(QDelayError):
    """A structural condition on the Hamiltonians failed.

    ``condition`` names the failing check (``"target-commutation"``,
    ``"target-equilibrium-uniqueness"`` or ``"mixed-equilibrium-uniqueness"``)
    and ``state`` holds the offending density matrix, if any.
    """

    category = "condition-violation"

    def __init__(self, condition, message, state=None):
        super().__init__(f"{condition}: {message}")
        self.condition = condition
        self.state = state


class NumericalBlowupError(QDelayError, FloatingPointError):
    category = "numerical-blowup"

    def __init__(self, message, step=None, fingerprint=None):
        if step is not None:
            message = f"{message} (step {step})"
        if fingerprint is not None:
            message = f"{message} [config {fingerprint}]"
        super().__init__(message)
        self.step = step
        self.fingerprint = fingerprint


class IntegrationDivergedError(NumericalBlowupError):
    category = "integration-diverged"


class InvalidDistanceError(QDelayError, ValueError):
    category = "invalid-distance"


class NotInitializedError(QDelayError, RuntimeError):
    category = "not-initialized"


class ContractError(QDelayError, ValueError):
    category = "contract"


class InfeasibleAtZeroError(QDelayError):
    category = "infeasible-at-zero"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PartialResultsError(QDelayError):
    category = "partial-results"

    def __init__(self, message, failed_seeds, summary=None):
        super().__init__(f"{message}; failed trajectories: {failed_seeds}")
        self.failed_seeds = list(failed_seeds)
        self.summary = summary


class UnknownPresetError(QDelayError, KeyError):
    category = "unknown-preset"

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown preset"


class ConfigError(QDelayError, ValueError):
    category = "config"
