"""Exception hierarchy shared by all modules."""


class TwistBilayerError(Exception):
    """Base class for every error raised by the package."""


class InvalidIndexError(TwistBilayerError, ValueError):
    """Commensurate (m, n) indices outside the admissible range."""


class ConsistencyError(TwistBilayerError):
    """Constructed object disagrees with its closed-form count."""


class CapacityError(TwistBilayerError):
    """Requested lattice or operator exceeds the configured budget."""


class SingularParameterError(TwistBilayerError, ValueError):
    """Parameters hit a singular point (e.g. zero detuning)."""


class ShallowTrapError(TwistBilayerError, ValueError):
    """Trap depth does not exceed the recoil energy."""


class NumericalError(TwistBilayerError):
    """Eigensolver failure or non-finite input."""


class BracketError(TwistBilayerError, ValueError):
    """Search interval does not bracket a sign change."""


class IntegratorAccuracyError(TwistBilayerError):
    """Time propagation violated its norm contract."""


class NotInGapError(TwistBilayerError, ValueError):
    """Emitter frequency lies inside a bath band."""
