class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


class SvdConvergenceError(RuntimeError):
    def __init__(self, sweeps):
        super().__init__(f"Jacobi SVD did not converge within {sweeps} sweeps")
        self.sweeps = sweeps


class ShapeDriftError(ValueError):
    """Score fields changed shape where they must stay aligned."""
