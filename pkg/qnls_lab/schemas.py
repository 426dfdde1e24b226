"""
Pydantic schemas for run configurations and sweep records.
They are used for validation before dispatch and for serialization of results.
"""

import math
from enum import Enum

from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from typing_extensions import Self

from qnls_lab.counting import CountingCase
from qnls_lab.lattice import SUPPORTED_DIMENSIONS, Nonlinearity
from qnls_lab.random_field import SEED_LIMIT


class Subcommand(str, Enum):
    SAMPLE = "sample"
    SECOND_ITERATE = "second-iterate"
    VARIANCE_SCAN = "variance-scan"
    RESONANT_SUM = "resonant-sum"
    COUNTING_CHECK = "counting-check"
    TENSOR_CHECK = "tensor-check"
    SOLVE = "solve"
    CONVERGE = "converge"
    SCALING = "scaling"
    TIGHTNESS = "tightness"


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


class Statistic(str, Enum):
    EXACT_VARIANCE = "exact_variance"
    MC_MEAN = "mc_mean"
    RESONANT_SUM = "resonant_sum"
    PZ_FRACTION = "pz_fraction"


EXACT_STATISTICS = (Statistic.EXACT_VARIANCE, Statistic.RESONANT_SUM)

# Subcommands that need a nonzero frequency n
FREQUENCY_COMMANDS = (
    Subcommand.SECOND_ITERATE,
    Subcommand.VARIANCE_SCAN,
    Subcommand.RESONANT_SUM,
    Subcommand.TIGHTNESS,
)

DEFAULT_ALPHA = 0.75

RECORD_HEADER = ("alpha", "N", "t", "n1", "n2", "statistic", "value", "samples", "seed")


def _as_list(val):
    if val is None or isinstance(val, (list, tuple)):
        return val
    if isinstance(val, str):
        return [p for p in val.split(",") if p.strip() != ""]
    return [val]


# Configuration of one command line run
class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subcommand: Subcommand
    alpha: list[float] | None = None
    N: list[int] | None = None
    t: float = 1.0
    T: float = 0.01
    n: tuple[int, ...] = (1, 0)
    seed: int = 0
    seed_count: int = 1
    samples: int = 10_000
    output_path: str | None = None
    format: OutputFormat = OutputFormat.CSV
    nonlinearity: Nonlinearity = Nonlinearity.ABS2
    dim: int = 2
    case: CountingCase | None = None
    epsilon: float = 0.1
    m: int = 0
    trials: int = 100
    tol: float | None = None
    max_iter: int = 50
    nodes: int = 64
    probe: bool = False
    jobs: int | None = None
    store: str | None = None

    # Comma lists and scalars are both accepted for sweep axes
    @field_validator("alpha", "N", mode="before")
    @classmethod
    def split_sweep(cls, val):
        return _as_list(val)

    @field_validator("n", mode="before")
    @classmethod
    def split_frequency(cls, val):
        if isinstance(val, str):
            try:
                return tuple(int(p) for p in val.split(",") if p.strip() != "")
            except ValueError as exc:
                raise ValueError(f"Cannot parse frequency {val!r}.") from exc
        return val

    @field_validator("n")
    @classmethod
    def validate_frequency(cls, val: tuple[int, ...]) -> tuple[int, ...]:
        if len(val) not in SUPPORTED_DIMENSIONS:
            raise ValueError(f"Frequency must have 1 to 3 components, got {len(val)}.")
        return val

    @field_validator("N")
    @classmethod
    def validate_truncation(cls, val: list[int] | None) -> list[int] | None:
        if val is None:
            return val
        if not val:
            raise ValueError("At least one truncation N is required.")
        if any(N < 1 for N in val):
            raise ValueError("Truncations must satisfy N >= 1.")
        return val

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, val: list[float] | None) -> list[float] | None:
        if val is None:
            return val
        if not val:
            raise ValueError("At least one alpha is required.")
        if any(not math.isfinite(a) for a in val):
            raise ValueError("alpha must be finite.")
        return val

    @field_validator("samples", "seed_count", "nodes", "max_iter")
    @classmethod
    def validate_positive(cls, val: int) -> int:
        if val < 1:
            raise ValueError("Value must be >= 1.")
        return val

    @field_validator("tol", "epsilon")
    @classmethod
    def validate_tolerance(cls, val: float | None) -> float | None:
        if val is not None and not val > 0:
            raise ValueError("Value must be > 0.")
        return val

    @field_validator("dim")
    @classmethod
    def validate_dimension(cls, val: int) -> int:
        if val not in SUPPORTED_DIMENSIONS:
            raise ValueError(f"Dimension must be one of {SUPPORTED_DIMENSIONS}.")
        return val

    @field_validator("seed")
    @classmethod
    def validate_seed(cls, val: int) -> int:
        if not 0 <= val < SEED_LIMIT:
            raise ValueError("Seed must be a 64-bit unsigned integer.")
        return val

    @field_validator("jobs")
    @classmethod
    def validate_jobs(cls, val: int | None) -> int | None:
        if val is not None and val < 1:
            raise ValueError("jobs must be >= 1.")
        return val

    # Cross-field rules
    @model_validator(mode="after")
    def check_subcommand(self) -> Self:
        if self.subcommand in FREQUENCY_COMMANDS and not any(self.n):
            raise ValueError("zero mode excluded by renormalization")
        if self.subcommand in FREQUENCY_COMMANDS and len(self.n) != 2:
            raise ValueError("Scan records hold two-dimensional frequencies n = (n1, n2).")
        if self.subcommand in (Subcommand.SOLVE, Subcommand.CONVERGE) and not self.T > 0:
            raise ValueError(f"{self.subcommand.value} needs T > 0.")
        if self.subcommand is Subcommand.TENSOR_CHECK and self.probe and self.trials < 100:
            raise ValueError("The random tensor probe needs at least 100 trials.")
        if self.seed + self.seed_count > SEED_LIMIT:
            raise ValueError("Seed range exceeds 64 bits.")
        return self

    @property
    def alphas(self) -> list[float]:
        return self.alpha if self.alpha is not None else [DEFAULT_ALPHA]

    def echo(self) -> dict:
        # Config echo embedded in output files; run-local fields left out
        return self.model_dump(mode="json", exclude={"jobs", "store", "output_path"})


# One row of a parameter sweep
class ScanRecord(BaseModel):
    model_config = ConfigDict(from_attributes=True, extra="forbid")

    alpha: float
    N: int
    t: float
    n1: int
    n2: int
    statistic: Statistic
    value: float
    samples: int
    seed: int

    @field_validator("N")
    @classmethod
    def validate_truncation(cls, val: int) -> int:
        if val < 1:
            raise ValueError("N must be >= 1.")
        return val

    @model_validator(mode="after")
    def check_statistic(self) -> Self:
        if self.statistic in EXACT_STATISTICS and self.samples != 0:
            raise ValueError("Exact statistics carry samples = 0.")
        if self.statistic not in EXACT_STATISTICS and self.samples < 1:
            raise ValueError("Sampled statistics need samples >= 1.")
        if not math.isfinite(self.value):
            raise ValueError("Value must be finite.")
        if self.statistic is not Statistic.PZ_FRACTION and self.value < 0:
            raise ValueError("Variance-type statistics are non-negative.")
        return self

    def as_row(self) -> tuple:
        return (
            self.alpha,
            self.N,
            self.t,
            self.n1,
            self.n2,
            self.statistic,
            self.value,
            self.samples,
            self.seed,
        )
