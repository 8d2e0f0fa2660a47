"""Exception types shared across the package."""


class PharaError(Exception):
    """Base class for all library errors."""


class BadDimension(PharaError):
    """Inputs have inconsistent or unsupported shapes."""


class DriftBelowRate(PharaError):
    """A risky asset's expected return does not exceed the riskless rate."""


class SingularVolatility(PharaError):
    """The volatility matrix is numerically singular."""


class BadTime(PharaError):
    """Time argument outside the valid range for the operation."""


class OutOfDomain(PharaError):
    """Wealth argument below the utility's domain."""


class IllegalCase(PharaError):
    """Parameter combination not covered by the piecewise-HARA template."""


class AtKink(PharaError):
    """Pointwise quantity requested exactly at a partition point."""


class NotPhara(PharaError):
    """A composition did not reduce to piecewise-HARA form."""


class UnboundedEnvelope(PharaError):
    """No finite concave majorant exists for the given function."""


class NoConvergence(PharaError):
    """An iterative routine failed to converge within its budget."""


class InfeasibleBudget(PharaError):
    """Initial wealth does not exceed the discounted domain floor."""


class UnboundedDemand(PharaError):
    """The budget equation has no root (malformed envelope)."""


class HeterogeneousRisk(PharaError):
    """The four-term split needs a single relative risk aversion level."""


class StepTooCoarse(PharaError):
    """Too few time steps for a meaningful forward simulation."""
