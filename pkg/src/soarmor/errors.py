"""Exception types shared across the package."""


class SoarmorError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SoarmorError):
    """Malformed or inconsistent run configuration."""


class ShapeError(SoarmorError):
    """Operands with incompatible dimensions."""


class InvalidIndex(SoarmorError):
    """Matrix index outside the declared dimensions."""


class SingularOperator(SoarmorError):
    """Sparse operator is structurally or numerically singular."""


class SingularReducedOperator(SoarmorError):
    """Reduced (dense) operator is singular at the requested wave number.

    Signals an unlucky ROM at this evaluation point; callers record the
    event and skip the sample rather than aborting.
    """


class EmptyNeumannBoundary(SoarmorError):
    """Boundary classification produced no Neumann edges."""


class NotClassified(SoarmorError):
    """Mesh boundary edges carry no labels yet."""


class BasisFull(SoarmorError):
    """Projection basis already spans the full state space."""


class DegenerateDenominator(SoarmorError):
    """A transfer value in an estimator denominator is (numerically) zero."""


class InsufficientData(SoarmorError):
    """Too few valid samples to perform the requested fit."""


class EmptyResult(SoarmorError):
    """Result table has no rows to emit."""


class DuplicateProbeWarning(UserWarning):
    """Two measurement points resolved to the same mesh node."""
