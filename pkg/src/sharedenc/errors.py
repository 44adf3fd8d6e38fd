"""Exception types raised across the package."""


class SharedEncError(Exception):
    """Base class for all package errors."""


class ShapeError(SharedEncError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(SharedEncError, ValueError):
    """An input lies outside an operation's mathematical domain."""


class ContractError(SharedEncError, RuntimeError):
    """A call violated a documented precondition (e.g. backward on a non-scalar)."""


class ConfigError(SharedEncError, ValueError):
    """Invalid model, training, or experiment configuration."""


class InputError(SharedEncError, ValueError):
    """Invalid data passed to an embedder, generator, or metric."""


class CheckpointError(SharedEncError, IOError):
    """A checkpoint file is missing, truncated, or corrupt."""


class DivergenceError(SharedEncError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss!r}) at step {step}")
        self.step = step
        self.loss = loss
