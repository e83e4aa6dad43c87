"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument violates a documented precondition (dimension mismatch,
    missing frozen point, inconsistent grids, out-of-range parameter)."""


class DegenerateSymbolError(RuntimeError):
    """The symbol vanishes (below threshold) somewhere on the unit sphere,
    so the two-sided ellipticity sandwich cannot be certified."""

    def __init__(self, message, argmin=None, value=None):
        super().__init__(message)
        self.argmin = argmin
        self.value = value


class SingularMultiplierError(RuntimeError):
    """A Fourier multiplier is singular at a nonzero lattice frequency."""

    def __init__(self, message, frequency=None):
        super().__init__(message)
        self.frequency = frequency


class DivergenceError(RuntimeError):
    """The fixed-point iteration for variable coefficients is not contractive
    (oscillation too large), either by the upfront operator-norm estimate or
    by observed expansion over consecutive iterates."""

    def __init__(self, message, trace=None, estimate=None):
        super().__init__(message)
        self.trace = tuple(trace) if trace is not None else ()
        self.estimate = estimate


class ToleranceError(RuntimeError):
    """A computation finished but missed its configured tolerance."""
