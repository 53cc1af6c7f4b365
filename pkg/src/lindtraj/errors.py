"""Exception hierarchy.

Three roots map onto the CLI exit codes: :class:`ConfigError` (bad input
files), :class:`ModelBuildError` (invalid physical parameters) and
:class:`SimulationError` (anything raised while evolving states).
"""


class LindtrajError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(LindtrajError):
    """A configuration file could not be parsed or validated."""

    def __init__(self, message, *, section=None, field=None, line=None):
        self.section = section
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if section is not None:
            where.append(f"[{section}]")
        if field is not None:
            where.append(field)
        prefix = " ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ModelBuildError(LindtrajError, ValueError):
    pass


class InvalidEtaError(ModelBuildError):
    pass


class TooFewSitesError(ModelBuildError):
    pass


class SimulationError(LindtrajError):
    pass


# linear algebra
class LinalgError(SimulationError, ValueError):
    pass


class NotHermitianError(LinalgError):
    pass


class NegativeEigenvalueError(LinalgError):
    pass


class NonSquareError(LinalgError):
    pass


class DimMismatchError(LinalgError):
    pass


# dilation / trajectories
class TimestepTooLargeError(SimulationError, ValueError):
    """``gamma * dt * ||L||^2 > 1``: the square-root blocks stop being PSD."""


class EtaMismatchError(SimulationError, ValueError):
    """A scheme that needs eta == 0 (or eta == 1) got something else."""


class DeadTrajectoryError(SimulationError):
    pass


class ProbabilityUnderflowError(SimulationError):
    pass


class TrotterUnavailableError(SimulationError):
    pass


class AllTrajectoriesDiscardedError(SimulationError):
    pass


# exact solvers
class DimensionTooLargeError(SimulationError, ValueError):
    pass


class TraceDriftError(SimulationError):
    pass


# observables
class ObservableError(SimulationError, ValueError):
    pass


class NonHermitianObservableError(ObservableError):
    pass


class ImaginaryResidueError(ObservableError):
    pass


class AllZeroOccupationsError(ObservableError):
    pass


class OddChainError(ObservableError):
    pass


class DegenerateInputError(ObservableError):
    pass
