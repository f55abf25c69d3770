"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid, missing, or unknown configuration key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


class CheckpointError(ValueError):
    """Base class for checkpoint load failures."""


class VersionMismatchError(CheckpointError):
    """Checkpoint format version is not supported."""


class UnknownArrayError(CheckpointError):
    """Checkpoint contains an array name the loader does not recognize."""


class ArrayLengthError(CheckpointError):
    """A named checkpoint array has the wrong number of entries."""


class InfeasibleScheduleError(ValueError):
    """A timestep grid cannot be represented by the stick-breaking logits."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, iteration: int, message: str):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")


class DegenerateFitError(ValueError):
    """Order estimation impossible, e.g. observed errors are zero."""
