"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or spec object."""


class ShapeError(ValueError):
    """Array dimensions do not match the model or dataset."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class TrainingDivergence(RuntimeError):
    """Non-finite loss or gradient during training."""
