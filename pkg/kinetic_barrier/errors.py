"""
Exception hierarchy shared by every kinetic_barrier module.

The command line front end maps these to exit codes: configuration and domain
problems exit with 2, anything under NumericalFailure exits with 3.
"""


class KineticBarrierError(Exception):
    """Base class for all errors raised by the toolkit."""


class ConfigError(KineticBarrierError):
    """A configuration file or environment variable could not be used."""


class OutOfRange(KineticBarrierError):
    """
    A parameter lies outside its admissible range.

    Attributes:
        field (str): Name of the offending parameter, e.g. "gamma".
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DomainError(KineticBarrierError):
    """A formula was evaluated outside the domain it was designed for."""


class UnsupportedDimension(KineticBarrierError):
    """Quadrature paths only exist for d in {2, 3}."""


class PreconditionViolated(KineticBarrierError):
    """The configuration does not satisfy the hypotheses of the checked estimate."""


class WrongRegime(KineticBarrierError):
    """The kernel regime (hard, soft, ...) does not admit the requested quantity."""


class NoCore(KineticBarrierError):
    """No mass core was found on the threshold/radius ladder."""


class EmptyCone(KineticBarrierError):
    """No direction passed the non-degeneracy threshold."""


class DegeneratePair(KineticBarrierError):
    """Two velocities are too close for the Carleman kernel to be evaluated."""


class SingularTime(KineticBarrierError):
    """A singular time schedule was evaluated at t = 0."""


class SingularAngle(KineticBarrierError):
    """The angular kernel was evaluated at the grazing angle theta = 0."""


class NumericalFailure(KineticBarrierError):
    """Base class for failures of the numerical machinery itself."""


class QuadratureNonConvergence(NumericalFailure):
    """A quadrature did not reach its error target within the evaluation budget."""


class PVDivergence(NumericalFailure):
    """Principal value shell sums failed the Cauchy criterion."""


class BlowUp(NumericalFailure):
    """The solver produced non-finite or absurdly large values."""


class CalibrationFailed(NumericalFailure):
    """A calibration ladder was exhausted without meeting its criterion."""
