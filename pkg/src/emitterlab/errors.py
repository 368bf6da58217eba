"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
1 I/O, 2 validation, 3 numerical failure, 4 dimension cap.
"""


class EmitterLabError(Exception):
    exit_code = 3


class ModelIOError(EmitterLabError):
    exit_code = 1


class ValidationError(EmitterLabError, ValueError):
    exit_code = 2


class NumericalError(EmitterLabError, ArithmeticError):
    exit_code = 3


# matter model
class NonHermitianCouplings(ValidationError):
    def __init__(self, pair, deviation):
        self.pair = pair
        self.deviation = deviation
        super().__init__(
            f"couplings {pair[0]}->{pair[1]} and {pair[1]}->{pair[0]} are not "
            f"Hermitian conjugates (max deviation {deviation:.3e})"
        )


class DegenerateGround(ValidationError):
    pass


class UnsortedEnergies(ValidationError):
    pass


class ZeroMomentum(ValidationError):
    pass


class TableDomainError(ValidationError):
    pass


# quadrature
class NonPositiveRadius(ValidationError):
    pass


class PoleTooCloseToOrigin(ValidationError):
    pass


class ConvergenceFailure(NumericalError):
    def __init__(self, message, estimate=None, certificate=None):
        self.estimate = estimate
        self.certificate = certificate
        super().__init__(message)


# generator / semigroup / approximations
QuadratureFailure = ConvergenceFailure


class ShapeMismatch(ValidationError):
    pass


class FgrViolated(NumericalError):
    pass


class ConvolutionQuadratureFailure(NumericalError):
    pass


class EqualLevels(ValidationError):
    pass


# oracle
class DimensionCap(EmitterLabError):
    exit_code = 4


class InvalidGrid(ValidationError):
    pass


class PropagationToleranceExceeded(NumericalError):
    pass
