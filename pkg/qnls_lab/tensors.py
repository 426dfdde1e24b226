"""
The base tensor h^m_{n n1 n2} = 1{n - n1 + n2 = 0} 1{|n|^2 - |n1|^2 + |n2|^2 = m},
its partitioned operator norms and the checks built on them.

A tensor is stored by its support: an int64 array of shape (K, 3, 2)
holding the triples (n, n1, n2) in lexicographic order, and one value per
triple. The norm ||h||_{n_B -> n_C} is the largest singular value of the
unfolding with rows indexed by the output axes C and columns by the input
axes B.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse

from qnls_lab.counting import log_slope
from qnls_lab.errors import BudgetExceededError, ConfigurationError, PowerIterationError
from qnls_lab.lattice import ball_points, bracket_power, dyadic_scales, line_points
from qnls_lab.random_field import unimodular_table
from qnls_lab.sweeps import run_cells

logger = logging.getLogger(__name__)

CANDIDATE_BUDGET = 10**7
DENSE_LIMIT = 500
MAX_ITER = 500
BLOCK_SIZE = 8
STAGNATION_WINDOW = 50
RITZ_WINDOW = 10
RITZ_RESIDUAL = 1e-2
QUANTILE_LEVELS = (0.01, 0.1, 0.5, 0.9, 0.99)

ESTIMATE_HEADER = ("estimate", "N", "N1", "N2", "m", "lhs", "rhs", "ratio")


class Axis(str, Enum):
    N = "n"
    N1 = "n1"
    N2 = "n2"


AXES = (Axis.N, Axis.N1, Axis.N2)


@dataclass(frozen=True)
class Partition:
    input_axes: frozenset[Axis]
    output_axes: frozenset[Axis]

    def __post_init__(self):
        inputs = frozenset(Axis(a) for a in self.input_axes)
        outputs = frozenset(Axis(a) for a in self.output_axes)
        if inputs & outputs:
            raise ConfigurationError("Partition input and output axes overlap.")
        if inputs | outputs != frozenset(AXES):
            raise ConfigurationError("Partition must cover n, n1 and n2.")
        object.__setattr__(self, "input_axes", inputs)
        object.__setattr__(self, "output_axes", outputs)

    @classmethod
    def parse(cls, text: str) -> "Partition":
        # "n1->n,n2"
        left, _, right = text.partition("->")
        inputs = [a.strip() for a in left.split(",") if a.strip()]
        outputs = [a.strip() for a in right.split(",") if a.strip()]
        return cls(frozenset(inputs), frozenset(outputs))

    def transposed(self) -> "Partition":
        return Partition(self.output_axes, self.input_axes)

    def __str__(self) -> str:
        inputs = ",".join(a.value for a in AXES if a in self.input_axes)
        outputs = ",".join(a.value for a in AXES if a in self.output_axes)
        return f"{inputs}->{outputs}"


@dataclass(frozen=True)
class AxisSupport:
    radius: int
    center: tuple[int, int] = (0, 0)
    shell: bool = False
    exclude_zero: bool = False

    def mask(self, points: np.ndarray) -> np.ndarray:
        offset = points - np.asarray(self.center, dtype=np.int64)
        sq = np.einsum("ij,ij->i", offset, offset)
        r2 = self.radius * self.radius
        if self.shell:
            # R/2 < <n - c> <= R, the DYADIC_SHELL rule of truncation_set
            keep = (4 * (1 + sq) > r2) & (1 + sq <= r2)
        else:
            keep = sq <= r2
        if self.exclude_zero:
            keep &= np.any(points != 0, axis=1)
        return keep


@dataclass(frozen=True)
class SupportSpec:
    n: AxisSupport
    n1: AxisSupport
    n2: AxisSupport
    no_pairing: bool = False
    # Optional cuts |n - n1| <= gap and ||n|^2 - |n1|^2| <= energy_gap
    gap: float | None = None
    energy_gap: float | None = None

    @classmethod
    def balls(
        cls,
        N: int,
        N1: int,
        N2: int,
        exclude_zero_n: bool = False,
        exclude_zero_n2: bool = False,
        no_pairing: bool = False,
    ) -> "SupportSpec":
        return cls(
            AxisSupport(N, exclude_zero=exclude_zero_n),
            AxisSupport(N1),
            AxisSupport(N2, exclude_zero=exclude_zero_n2),
            no_pairing=no_pairing,
        )


@dataclass(frozen=True)
class SparseTensor3:
    support: np.ndarray
    values: np.ndarray
    m: int | None = None

    def __post_init__(self):
        if self.support.ndim != 3 or self.support.shape[1:] != (3, 2):
            raise ConfigurationError("Tensor support must have shape (K, 3, 2).")
        if self.support.shape[0] != self.values.shape[0]:
            raise ConfigurationError("Tensor support and values do not match.")
        n, n1, n2 = self.support[:, 0], self.support[:, 1], self.support[:, 2]
        if np.any(n - n1 + n2 != 0):
            raise ConfigurationError("Tensor support violates n - n1 + n2 = 0.")
        if self.m is not None and self.support.shape[0]:
            phase = (
                np.einsum("ij,ij->i", n, n)
                - np.einsum("ij,ij->i", n1, n1)
                + np.einsum("ij,ij->i", n2, n2)
            )
            if np.any(phase != self.m):
                raise ConfigurationError(f"Tensor support leaves the resonance m={self.m}.")

    @property
    def nnz(self) -> int:
        return int(self.support.shape[0])

    def triples(self) -> set[tuple[tuple[int, int], ...]]:
        return {tuple(tuple(int(c) for c in f) for f in t) for t in self.support}

    def scaled(self, weights: np.ndarray) -> "SparseTensor3":
        return SparseTensor3(self.support, self.values * weights, self.m)


@dataclass(frozen=True)
class EstimateRow:
    estimate: str
    N: int
    N1: int
    N2: int
    m: int
    lhs: float
    rhs: float
    schur: float | None = None

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs

    def as_row(self) -> tuple:
        return (self.estimate, self.N, self.N1, self.N2, self.m, self.lhs, self.rhs, self.ratio)


@dataclass(frozen=True)
class DeterministicReport:
    rows: list[EstimateRow]
    duality_error: float
    slopes: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ProbeReport:
    M: int
    trials: int
    median_ratio: float
    quantiles: dict[float, float]
    deterministic_norm: float
    ratios: np.ndarray = field(repr=False)


@dataclass
class ProbeScan:
    alpha: float
    reports: list[ProbeReport]
    slope: float
    failures: dict[int, str] = field(default_factory=dict)


def _empty_tensor(m: int | None) -> SparseTensor3:
    return SparseTensor3(np.empty((0, 3, 2), dtype=np.int64), np.empty(0), m)


def build_base_tensor(m: int, support_spec: SupportSpec) -> SparseTensor3:
    """
    Indicator tensor h^m restricted to the support specification.
    For each n2 the resonance -2 n.n2 = m puts n on a line, so only lattice
    points on those lines are enumerated.
    Args:
        m (int): resonance value.
        support_spec (SupportSpec): balls or shells per axis and filters.
    Returns:
        SparseTensor3: values 1.0 on the support, lexicographic triples.
    """
    if m % 2:
        return _empty_tensor(m)
    level = -m // 2
    spec = support_spec
    ns, n2s = [], []
    candidates = 0
    for n2 in ball_points(spec.n2.radius, spec.n2.center):
        if not n2.any():
            if level != 0:
                continue
            n = ball_points(spec.n.radius, spec.n.center)
        else:
            n = line_points(n2, level, spec.n.center, spec.n.radius)
        candidates += n.shape[0]
        if candidates > CANDIDATE_BUDGET:
            raise BudgetExceededError(candidates, CANDIDATE_BUDGET)
        ns.append(n)
        n2s.append(np.broadcast_to(n2, n.shape))
    if not ns:
        return _empty_tensor(m)
    n = np.concatenate(ns)
    n2 = np.concatenate(n2s)
    n1 = n + n2
    keep = spec.n.mask(n) & spec.n1.mask(n1) & spec.n2.mask(n2)
    if spec.no_pairing:
        keep &= np.any(n1 != n2, axis=1)
    if spec.gap is not None:
        keep &= np.einsum("ij,ij->i", n2, n2) <= spec.gap**2
    if spec.energy_gap is not None:
        energy = np.einsum("ij,ij->i", n, n) - np.einsum("ij,ij->i", n1, n1)
        keep &= np.abs(energy) <= spec.energy_gap
    support = np.stack([n[keep], n1[keep], n2[keep]], axis=1)
    flat = support.reshape(support.shape[0], -1)
    support = support[np.lexsort(flat.T[::-1])]
    return SparseTensor3(support, np.ones(support.shape[0]), m)


def _axis_index(support: np.ndarray, axes: Iterable[Axis]) -> tuple[np.ndarray, int]:
    columns = [AXES.index(a) for a in AXES if a in set(axes)]
    if not columns:
        return np.zeros(support.shape[0], dtype=np.int64), 1
    keys = support[:, columns, :].reshape(support.shape[0], -1)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse.reshape(-1), unique.shape[0]


def unfold(tensor: SparseTensor3, partition: Partition) -> scipy.sparse.csr_matrix:
    # Rows: output-axes index, columns: input-axes index
    rows, n_rows = _axis_index(tensor.support, partition.output_axes)
    cols, n_cols = _axis_index(tensor.support, partition.input_axes)
    return scipy.sparse.csr_matrix((tensor.values, (rows, cols)), shape=(n_rows, n_cols))


def frobenius_norm(tensor: SparseTensor3) -> float:
    return float(np.sqrt(np.sum(np.abs(tensor.values) ** 2)))


def _random_block(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))


def matrix_operator_norm(
    matrix: scipy.sparse.spmatrix,
    tol: float = 1e-8,
    max_iter: int = MAX_ITER,
    block: int = BLOCK_SIZE,
    seed: int = 0,
) -> float:
    """
    Largest singular value by block power iteration on the normal operator
    with a Rayleigh-Ritz step on the block. Stops when the top Ritz vector
    has relative residual <= tol, or when the top Ritz value has moved by
    at most tol for RITZ_WINDOW consecutive steps with a residual below
    RITZ_RESIDUAL.
    Args:
        matrix (sparse matrix): the operator.
        tol (float): relative tolerance, > 0.
        max_iter (int): iteration cap.
        block (int): block width.
        seed (int): seed of the start block.
    Returns:
        float: the operator norm.
    """
    if tol <= 0:
        raise ConfigurationError(f"Tolerance must be positive, got {tol}.")
    matrix = scipy.sparse.csr_matrix(matrix)
    if matrix.nnz == 0:
        return 0.0
    if matrix.shape[1] > matrix.shape[0]:
        matrix = matrix.conj().T.tocsr()
    adjoint = matrix.conj().T.tocsr()
    rng = np.random.default_rng(seed)
    width = min(block, matrix.shape[1])
    x = _random_block(rng, matrix.shape[1], width)

    sigma_prev = 0.0
    stable = 0
    best, best_at, restarted = math.inf, 0, False
    residual = math.inf
    for iteration in range(1, max_iter + 1):
        q, _ = np.linalg.qr(adjoint @ (matrix @ x))
        y = matrix @ q
        eigvals, eigvecs = np.linalg.eigh(y.conj().T @ y)
        order = np.argsort(eigvals)[::-1]
        eigvals, x = eigvals[order], q @ eigvecs[:, order]
        top = max(float(eigvals[0]), 0.0)
        if top == 0.0:
            return 0.0
        sigma = math.sqrt(top)
        v = x[:, 0]
        residual = float(np.linalg.norm(adjoint @ (matrix @ v) - top * v)) / top
        change = abs(sigma - sigma_prev) / sigma
        stable = stable + 1 if change <= tol else 0
        if residual <= tol or (residual <= math.sqrt(tol) and change <= tol):
            logger.debug("Power iteration converged in %d steps (residual %.2e)", iteration, residual)
            return sigma
        if stable >= RITZ_WINDOW and residual <= RITZ_RESIDUAL:
            # Clustered top of the spectrum: the Ritz value settles before its vector does
            logger.debug(
                "Ritz value settled after %d steps (vector residual %.2e)", iteration, residual
            )
            return sigma
        if residual < 0.99 * best:
            best, best_at = residual, iteration
        elif iteration - best_at >= STAGNATION_WINDOW and not restarted:
            logger.debug("Power iteration stagnated at step %d; restarting half the block", iteration)
            keep = width - width // 2
            x = np.hstack([x[:, :keep], _random_block(rng, matrix.shape[1], width // 2)])
            restarted, best_at = True, iteration
        sigma_prev = sigma
    raise PowerIterationError(max_iter, x[:, 0], residual)


def operator_norm(
    tensor: SparseTensor3,
    partition: Partition,
    tol: float = 1e-8,
    max_iter: int = MAX_ITER,
    seed: int = 0,
) -> float:
    """
    ||h||_{n_B -> n_C} for the partition (B, C).
    An empty input or output side gives the Frobenius norm.
    """
    if tol <= 0:
        raise ConfigurationError(f"Tolerance must be positive, got {tol}.")
    if tensor.nnz == 0:
        return 0.0
    if not partition.input_axes or not partition.output_axes:
        return frobenius_norm(tensor)
    return matrix_operator_norm(unfold(tensor, partition), tol, max_iter, seed=seed)


def dense_operator_norm(tensor: SparseTensor3, partition: Partition) -> float:
    # Dense SVD of the unfolding; reference for small supports
    if tensor.nnz > DENSE_LIMIT:
        raise BudgetExceededError(tensor.nnz, DENSE_LIMIT)
    if tensor.nnz == 0:
        return 0.0
    return float(np.linalg.norm(unfold(tensor, partition).toarray(), 2))


def schur_bound(tensor: SparseTensor3, partition: Partition) -> float:
    """
    Schur test bound: (max row mass)^{1/2} (max column mass)^{1/2} of the unfolding.
    """
    values = np.asarray(tensor.values)
    if np.iscomplexobj(values):
        if np.any(values.imag != 0):
            raise ConfigurationError("schur_bound needs nonnegative real entries.")
        values = values.real
    if np.any(values < 0):
        raise ConfigurationError("schur_bound needs nonnegative real entries.")
    if tensor.nnz == 0:
        return 0.0
    matrix = unfold(SparseTensor3(tensor.support, values, tensor.m), partition)
    row_mass = float(np.max(matrix.sum(axis=1)))
    col_mass = float(np.max(matrix.sum(axis=0)))
    return math.sqrt(row_mass * col_mass)


# name -> (partition, exclude zero n, exclude zero n2); None means the Frobenius norm
ESTIMATES: dict[str, tuple[str | None, bool, bool]] = {
    "012": (None, False, False),
    "1-02": ("n1->n,n2", False, False),
    "2-01": ("n2->n,n1", False, True),
    "0-12": ("n->n1,n2", True, False),
}


def estimate_bound(estimate: str, N: int, N1: int, N2: int, epsilon: float) -> float:
    if estimate == "012":
        return math.sqrt(N1 * N2) * max(N1, N2) ** epsilon
    if estimate == "1-02":
        return max(N, N2) ** epsilon
    if estimate == "2-01":
        return math.sqrt(min(N, N1))
    if estimate == "0-12":
        return math.sqrt(min(N1, N2))
    raise ConfigurationError(f"Unknown estimate {estimate!r}.")


def verify_deterministic_estimates(
    N: int,
    N1: int,
    N2: int,
    m: int = 0,
    epsilon: float = 0.1,
    tol: float = 1e-8,
) -> DeterministicReport:
    """
    The four base tensor estimates on balls of radii N, N1, N2 at the origin.
    Args:
        N, N1, N2 (int): ball radii.
        m (int): resonance value.
        epsilon (float): exponent of the divisor-type loss.
        tol (float): power iteration tolerance.
    Returns:
        DeterministicReport: one row per estimate with the left-hand norm,
        the right-hand bound and the Schur bound; duality_error is the
        largest relative gap between a norm and its transposed norm.
    """
    rows = []
    duality_error = 0.0
    for name, (partition_text, zero_n, zero_n2) in ESTIMATES.items():
        tensor = build_base_tensor(m, SupportSpec.balls(N, N1, N2, zero_n, zero_n2))
        rhs = estimate_bound(name, N, N1, N2, epsilon)
        if partition_text is None:
            rows.append(EstimateRow(name, N, N1, N2, m, frobenius_norm(tensor), rhs))
            continue
        partition = Partition.parse(partition_text)
        lhs = operator_norm(tensor, partition, tol)
        dual = operator_norm(tensor, partition.transposed(), tol)
        if lhs > 0:
            duality_error = max(duality_error, abs(lhs - dual) / lhs)
        rows.append(EstimateRow(name, N, N1, N2, m, lhs, rhs, schur_bound(tensor, partition)))
        logger.debug("Estimate %s at (%d, %d, %d): %.6g <= C * %.6g", name, N, N1, N2, lhs, rhs)
    return DeterministicReport(rows, duality_error)


def deterministic_estimates_scan(
    scales: Sequence[tuple[int, int, int]] | None = None,
    m: int = 0,
    epsilon: float = 0.1,
    tol: float = 1e-8,
) -> DeterministicReport:
    # All four estimates across scales, with the log-log slope of each ratio
    if scales is None:
        scales = [(r, r, r) for r in dyadic_scales(4, 32)]
    rows: list[EstimateRow] = []
    duality_error = 0.0
    for N, N1, N2 in scales:
        report = verify_deterministic_estimates(N, N1, N2, m, epsilon, tol)
        rows.extend(report.rows)
        duality_error = max(duality_error, report.duality_error)
        logger.info("Deterministic estimates done at (%d, %d, %d)", N, N1, N2)
    slopes = {
        name: log_slope(
            [max(r.N, r.N1, r.N2) for r in rows if r.estimate == name],
            [r.ratio for r in rows if r.estimate == name],
        )
        for name in ESTIMATES
    }
    return DeterministicReport(rows, duality_error, slopes)


def probe_support(M: int, free_outputs: bool = False, window: int = 4) -> SupportSpec:
    # Balls of radius M; the free variant lets n, n1 range over a window of radius window*M
    if not free_outputs:
        return SupportSpec.balls(M, M, M, no_pairing=True)
    outer = AxisSupport(window * M)
    return SupportSpec(outer, outer, AxisSupport(M), no_pairing=True, gap=M, energy_gap=float(M) ** 10)


def random_tensor_probe(
    m: int,
    support_spec: SupportSpec | None = None,
    alpha: float = 0.0,
    M: int = 8,
    trials: int = 100,
    seed: int = 0,
    free_outputs: bool = False,
    tol: float = 1e-8,
) -> ProbeReport:
    """
    Distribution of ||H||_{n -> n1} / max over partitions of the weighted
    base tensor, where H_{n n1} = sum_{n2} h^m <n2>^{alpha-1} conj(eta_{n2})
    and eta are the unimodular factors of the Gaussians, one draw per trial.
    Args:
        m (int): resonance value.
        support_spec (SupportSpec | None): support, probe_support(M) by default.
        alpha (float): roughness parameter.
        M (int): dyadic scale.
        trials (int): number of draws, >= 100.
        seed (int): seed of the first draw; trial i uses seed + i.
        free_outputs (bool): use the window variant of probe_support.
        tol (float): power iteration tolerance.
    Returns:
        ProbeReport: median ratio and quantiles.
    """
    if trials < 100:
        raise ConfigurationError(f"random_tensor_probe needs at least 100 trials, got {trials}.")
    spec = support_spec if support_spec is not None else probe_support(M, free_outputs)
    tensor = build_base_tensor(m, spec)
    if tensor.nnz == 0:
        raise ConfigurationError("random_tensor_probe on an empty support.")
    weighted = tensor.scaled(bracket_power(tensor.support[:, 2], alpha - 1.0))
    deterministic = max(
        operator_norm(weighted, Partition.parse("n->n1,n2"), tol),
        operator_norm(weighted, Partition.parse("n,n2->n1"), tol),
    )

    rows, n_rows = _axis_index(tensor.support, [Axis.N1])
    cols, n_cols = _axis_index(tensor.support, [Axis.N])
    modes, which = np.unique(tensor.support[:, 2], axis=0, return_inverse=True)
    which = which.reshape(-1)
    ratios = np.empty(trials)
    for trial in range(trials):
        eta = unimodular_table([seed + trial], modes)[0]
        entries = weighted.values * np.conj(eta[which])
        H = scipy.sparse.csr_matrix((entries, (rows, cols)), shape=(n_rows, n_cols))
        ratios[trial] = matrix_operator_norm(H, tol, seed=trial) / deterministic
    quantiles = dict(zip(QUANTILE_LEVELS, np.quantile(ratios, QUANTILE_LEVELS).tolist()))
    return ProbeReport(M, trials, float(np.median(ratios)), quantiles, deterministic, ratios)


def probe_cell(
    M: int,
    m: int,
    alpha: float,
    trials: int,
    seed: int,
    free_outputs: bool,
    tol: float,
) -> ProbeReport:
    return random_tensor_probe(m, None, alpha, M, trials, seed, free_outputs, tol)


def random_tensor_scan(
    m: int,
    alpha: float,
    scales: Sequence[int],
    trials: int = 100,
    seed: int = 0,
    free_outputs: bool = False,
    tol: float = 1e-8,
    jobs: int | None = 1,
) -> ProbeScan:
    """
    Probe at each scale M and fit the log-log slope of the median ratio against M.
    A scale whose power iteration fails is recorded in failures and left out of the fit.
    """
    cells = [(M, m, alpha, trials, seed, free_outputs, tol) for M in scales]
    results = run_cells(probe_cell, cells, jobs)
    reports = [r.value for r in results if not r.failed]
    failures = {r.key[0]: r.error for r in results if r.failed}
    slope = log_slope([r.M for r in reports], [r.median_ratio for r in reports])
    logger.info("Probe scan at alpha=%g: slope %.4f over M=%s", alpha, slope, [r.M for r in reports])
    return ProbeScan(alpha, reports, slope, failures)
