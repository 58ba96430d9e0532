"""Exception hierarchy shared by the dynvhc modules."""


class DynVhcError(Exception):
    """Base class for every error raised by this package."""


class EvaluationError(DynVhcError, ValueError):
    """A model function returned non-finite values."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class ConditioningError(DynVhcError, ArithmeticError):
    """A linear solve was attempted on an ill-conditioned matrix."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class RegularityError(DynVhcError, ArithmeticError):
    """The constraint is not regular at the queried point."""

    def __init__(self, message, theta=None, s=None, condition=None):
        super().__init__(message)
        self.theta = theta
        self.s = s
        self.condition = condition


class IntervalError(DynVhcError, ValueError):
    """The translation parameter left its certified interval."""


class ClassificationError(DynVhcError, ValueError):
    """The energy level does not describe a supported closed orbit."""


class OutOfTubeError(DynVhcError, ValueError):
    """A state is too far from the curve or orbit for the retraction."""

    def __init__(self, message, distance=None):
        super().__init__(message)
        self.distance = distance


class NonTransversalityError(DynVhcError, ArithmeticError):
    """The drift is (numerically) orthogonal to the orbit tangent."""


class ImplicitizationError(DynVhcError, ValueError):
    """The implicit orbit description has a rank-deficient Jacobian."""


class IntegrationError(DynVhcError, ArithmeticError):
    """An integration produced non-finite values."""


class StabilizabilityError(DynVhcError, ArithmeticError):
    """The periodic pair has no stabilizing Riccati solution."""


class ConjugatePointError(DynVhcError, ArithmeticError):
    """The propagated Hamiltonian subspace lost its graph form."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class FingerprintError(DynVhcError, ValueError):
    """A gain file was designed for a different scenario."""


class SimulationAborted(DynVhcError, RuntimeError):
    """A closed-loop run stopped early; carries the partial trajectory."""

    def __init__(self, message, time, trajectory=None, cause=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory
        self.cause = cause
