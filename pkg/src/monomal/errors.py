"""Exception types shared across the toolkit."""


class ParameterError(ValueError):
    """An argument violates an operation's precondition."""


class FormatError(ValueError):
    """An on-disk artifact (dataset, feature space, model) is malformed."""


class SplitError(ValueError):
    """A requested train/test split would starve one side of a label."""


class TrainingError(RuntimeError):
    """Training diverged or otherwise could not complete."""


class ConfigError(ValueError):
    """An experiment config file is invalid or inconsistent."""
