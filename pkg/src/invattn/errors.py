"""Exception types shared across the package."""


class InvariantViolation(RuntimeError):
    """A mathematical invariant the library promises was observed broken."""


class NonFiniteError(ValueError):
    """NaN or Inf where finite values are required."""


class DivergenceError(RuntimeError):
    """Fixed-point iteration produced non-finite values."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class PpmParseError(ValueError):
    """Malformed PPM input; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
