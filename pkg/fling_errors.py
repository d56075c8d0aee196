"""
fling_errors - Exception hierarchy for the fling-to-goal suite

Every error raised on purpose by the suite derives from FlingError. Each
family carries the exit code the command-line entry point returns for it.
"""


class FlingError(Exception):
    """Base class for all suite errors."""

    exit_code = 1


class ConfigurationError(FlingError, ValueError):
    """Unknown config key, unknown scenario kind or inconsistent setup."""

    exit_code = 2


class DataError(FlingError):
    """Missing dataset, malformed trajectory file or version mismatch."""

    exit_code = 3


class ModelError(FlingError):
    """Shape mismatch in the dynamics network or an incompatible checkpoint."""

    exit_code = 4


class TrainingError(ModelError):
    """Non-finite loss during training."""

    def __init__(self, message, batch_index=None):
        super().__init__(message)
        self.batch_index = batch_index


class SimulationError(FlingError):
    exit_code = 5


class SimulationDivergedError(SimulationError):
    """NaN or Inf in the ground-truth simulator."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class RolloutDivergedError(SimulationError):
    """Learned rollout left the plausible workspace."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class InvalidQueryError(SimulationError, ValueError):
    """Nearest-surface query from inside a solid."""


class DegeneratePlaneError(SimulationError, ValueError):
    """Start and goal midpoints coincide in horizontal projection."""


class PlanError(SimulationError, ValueError):
    """Operation on a fling plan outside its valid step range."""


class ControllerError(FlingError):
    """Every candidate rollout of a controller stage failed."""

    exit_code = 6
