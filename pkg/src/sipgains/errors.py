"""Exception hierarchy."""


class SipgainsError(Exception):
    """Base class for all library errors."""


class InvalidInputError(SipgainsError, ValueError):
    """Dimension mismatch, bad lengths or out-of-range arguments."""


class RolloutDiverged(SipgainsError):
    """A rollout produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class GradientFailure(SipgainsError):
    """Finite differencing hit a non-finite function value."""


class InvalidStart(SipgainsError):
    """Objective is non-finite at the (projected) starting point."""


class InconsistentScenario(SipgainsError):
    """A scenario violates its set memberships or the measurement history."""


class InconsistentHistory(SipgainsError):
    """Measurements are incompatible with the model and uncertainty sets."""


class SamplingStalled(SipgainsError):
    """Rejection sampling acceptance rate fell below the stall threshold."""


class SynthesisInfeasible(SipgainsError):
    """The discretized outer problem has no feasible policy."""

    def __init__(self, message: str, scenario_set=None):
        self.scenario_set = scenario_set
        super().__init__(message)


class ConfigError(SipgainsError):
    """Malformed or unknown configuration entries."""
