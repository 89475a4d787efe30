"""Exception hierarchy. ``exit_code`` is what the CLI returns for each."""


class SnacFlowError(Exception):
    exit_code = 2


class ShapeError(SnacFlowError, ValueError):
    pass


class ConfigError(SnacFlowError, ValueError):
    pass


class NonFiniteError(SnacFlowError, ArithmeticError):
    exit_code = 3


class DivergenceError(NonFiniteError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, step: int, last_finite_loss: float | None, cause: str = ""):
        self.step = step
        self.last_finite_loss = last_finite_loss
        msg = f"training diverged at step {step} (last finite loss: {last_finite_loss})"
        if cause:
            msg += f": {cause}"
        super().__init__(msg)
