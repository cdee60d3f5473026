class DimensionError(ValueError):
    """Shapes or sizes violate an operation's preconditions."""


class ContractError(RuntimeError):
    """A caller broke an operation's contract (non-scalar root, missing grad, ...)."""


class ConfigError(ValueError):
    pass


class IncompatibleError(ValueError):
    """Artifacts built by different extractors or format versions were mixed."""


class CheckpointError(ValueError):
    pass


class TrainingError(RuntimeError):
    """A loss went non-finite during training."""


class InputError(ValueError):
    """A dataset or file on disk does not have the expected layout."""
