"""
Exceptions raised by the laboratory.
Every error carries a human readable detail and the exit status
the command line front-end reports for it.
"""

from typing import Any


# Base class for all laboratory errors
class LabError(Exception):
    exit_code: int = 2

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# Bad input: rejected before any computation starts
class ConfigurationError(LabError, ValueError):
    exit_code = 1


class ZeroModeError(ConfigurationError):
    def __init__(self, detail: str = "zero mode excluded by renormalization"):
        super().__init__(detail)


class UnsupportedDimensionError(ConfigurationError):
    def __init__(self, dim: int):
        super().__init__(f"Dimension d={dim} is not supported (expected 1, 2 or 3).")
        self.dim = dim


# The computation itself failed (expected outside the well-posed regime)
class ComputationError(LabError):
    exit_code = 2


class NonContractionError(ComputationError):
    def __init__(
        self,
        alpha: float,
        N: int,
        T: float,
        seed: int,
        ratios: list[float],
    ):
        super().__init__(
            f"no contraction at this (alpha, N, T, seed) = "
            f"({alpha}, {N}, {T}, {seed}); last ratios {ratios[-3:]}"
        )
        self.alpha = alpha
        self.N = N
        self.T = T
        self.seed = seed
        self.ratios = ratios


class BlowUpError(ComputationError):
    def __init__(self, time: float, amplitude: float):
        super().__init__(
            f"amplitude {amplitude:.3e} exceeded the blow-up guard at t={time:.6g}"
        )
        self.time = time
        self.amplitude = amplitude


class PowerIterationError(ComputationError):
    def __init__(self, iterations: int, last_iterate: Any, residual: float):
        super().__init__(
            f"power iteration did not converge after {iterations} iterations "
            f"(residual {residual:.3e})"
        )
        self.iterations = iterations
        self.last_iterate = last_iterate
        self.residual = residual


class BudgetExceededError(ComputationError):
    def __init__(self, requested: int, budget: int):
        super().__init__(
            f"enumeration of {requested} candidates exceeds the budget of {budget}"
        )
        self.requested = requested
        self.budget = budget
