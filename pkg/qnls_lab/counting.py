"""
Exhaustive lattice counts behind the bilinear estimates.

A tuple (n, n1, n2) of Z^2 frequencies is counted when n - n1 + n2 = 0,
|n|^2 - |n1|^2 + |n2|^2 = m (equivalently -2 n.n2 = m), each frequency
lies in its ball and the case's fixed frequency takes its prescribed value:

    case I    nothing fixed           bound N1 N2 max(N1, N2)^eps
    case II   n1 fixed                bound max(N, N2)^eps
    case III  n2 fixed, n2 != 0       bound min(N, N1)
    case IV   n fixed, n != 0         bound min(N1, N2)
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np
import scipy.signal

from qnls_lab.errors import BudgetExceededError, ConfigurationError
from qnls_lab.lattice import ball_points, dyadic_scales, line_points

logger = logging.getLogger(__name__)

PAIR_BUDGET = 10**8
NAIVE_BUDGET = 10**7
CHUNK = 512
DEFAULT_EPSILON = 0.1

COUNTING_HEADER = ("case", "m", "N", "N1", "N2", "count", "bound", "ratio")


class CountingCase(str, Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"


Point = tuple[int, int]


@dataclass(frozen=True)
class CountingQuery:
    case: CountingCase
    m: int
    N: int
    N1: int
    N2: int
    c: Point = (0, 0)
    c1: Point = (0, 0)
    c2: Point = (0, 0)
    fixed_point: Point | None = None

    def __post_init__(self):
        object.__setattr__(self, "case", CountingCase(self.case))
        for name in ("c", "c1", "c2"):
            object.__setattr__(self, name, _point(getattr(self, name)))
        if self.fixed_point is not None:
            object.__setattr__(self, "fixed_point", _point(self.fixed_point))
        if min(self.N, self.N1, self.N2) < 1:
            raise ConfigurationError("Ball radii N, N1, N2 must be >= 1.")
        if self.case is CountingCase.I:
            return
        if self.fixed_point is None:
            raise ConfigurationError(f"Case {self.case.value} needs a fixed frequency.")
        if self.case is CountingCase.III and self.fixed_point == (0, 0):
            raise ConfigurationError("n2 = 0 excluded")
        if self.case is CountingCase.IV and self.fixed_point == (0, 0):
            raise ConfigurationError("n = 0 excluded")


@dataclass(frozen=True)
class CountingRow:
    case: CountingCase
    m: int
    N: int
    N1: int
    N2: int
    count: int
    bound: float

    @property
    def ratio(self) -> float:
        return self.count / self.bound

    def as_row(self) -> tuple:
        return (self.case, self.m, self.N, self.N1, self.N2, self.count, self.bound, self.ratio)


@dataclass(frozen=True)
class CountingAudit:
    case: CountingCase
    epsilon: float
    max_ratio: float
    slope: float
    table: list[CountingRow] = field(default_factory=list)


def _point(value: Sequence[int]) -> Point:
    return (int(value[0]), int(value[1]))


def _in_ball(points: np.ndarray, center: Point, radius: int) -> np.ndarray:
    offset = points - np.asarray(center, dtype=np.int64)
    return np.einsum("...i,...i->...", offset, offset) <= radius * radius


def _contains(center: Point, radius: int, point: Point) -> bool:
    return (point[0] - center[0]) ** 2 + (point[1] - center[1]) ** 2 <= radius * radius


def counting_bound(case: CountingCase, N: int, N1: int, N2: int, epsilon: float) -> float:
    case = CountingCase(case)
    if case is CountingCase.I:
        return N1 * N2 * max(N1, N2) ** epsilon
    if case is CountingCase.II:
        return max(N, N2) ** epsilon
    if case is CountingCase.III:
        return float(min(N, N1))
    return float(min(N1, N2))


def admissible_pairs(q: CountingQuery) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    # Chunks of admissible (n, n2); n1 = n + n2 is implied
    f = q.fixed_point
    if q.case is CountingCase.I:
        ns = ball_points(q.N, q.c)
        n2s = ball_points(q.N2, q.c2)
        if ns.shape[0] * n2s.shape[0] > PAIR_BUDGET:
            raise BudgetExceededError(ns.shape[0] * n2s.shape[0], PAIR_BUDGET)
        for start in range(0, ns.shape[0], CHUNK):
            n = ns[start : start + CHUNK, None, :]
            n1 = n + n2s[None, :, :]
            keep = _in_ball(n1, q.c1, q.N1)
            yield np.broadcast_to(n, n1.shape)[keep], np.broadcast_to(n2s, n1.shape)[keep]
        return
    fixed = np.asarray(f, dtype=np.int64)
    if q.case is CountingCase.II:
        if not _contains(q.c1, q.N1, f):
            return
        n2 = ball_points(q.N2, q.c2)
        n = fixed - n2
        keep = _in_ball(n, q.c, q.N)
        yield n[keep], n2[keep]
    elif q.case is CountingCase.III:
        if not _contains(q.c2, q.N2, f):
            return
        n = ball_points(q.N, q.c)
        keep = _in_ball(n + fixed, q.c1, q.N1)
        yield n[keep], np.broadcast_to(fixed, n[keep].shape)
    else:
        if not _contains(q.c, q.N, f):
            return
        n2 = ball_points(q.N2, q.c2)
        keep = _in_ball(n2 + fixed, q.c1, q.N1)
        yield np.broadcast_to(fixed, n2[keep].shape), n2[keep]


def phase_histogram(q: CountingQuery) -> dict[int, int]:
    """
    Number of admissible tuples for every achievable phase value at once.
    The m of the query is ignored.
    Returns:
        dict: m -> count, sorted by m, zero counts omitted.
    """
    totals: dict[int, int] = {}
    for n, n2 in admissible_pairs(q):
        if n.shape[0] == 0:
            continue
        m = -2 * np.einsum("ij,ij->i", n, n2)
        values, counts = np.unique(m, return_counts=True)
        for value, count in zip(values.tolist(), counts.tolist()):
            totals[value] = totals.get(value, 0) + count
    return dict(sorted(totals.items()))


def count_tuples(q: CountingQuery) -> int:
    """
    Exact number of tuples for the query.
    Every case reduces to lattice points on a line n.n2 = -m/2 (or, with
    n1 fixed, on a circle), which are enumerated directly.
    """
    if q.m % 2:
        return 0
    level = -q.m // 2
    f = q.fixed_point
    if q.case is CountingCase.I:
        total = 0
        for n2 in ball_points(q.N2, q.c2):
            n2 = (int(n2[0]), int(n2[1]))
            if n2 == (0, 0):
                if level == 0:
                    n = ball_points(q.N, q.c)
                    total += int(np.count_nonzero(_in_ball(n, q.c1, q.N1)))
                continue
            n = line_points(n2, level, q.c, q.N)
            total += int(np.count_nonzero(_in_ball(n + np.asarray(n2), q.c1, q.N1)))
        return total
    if q.case is CountingCase.II:
        if not _contains(q.c1, q.N1, f):
            return 0
        # |2 n2 - n1|^2 = 2m + |n1|^2, a circle; scan its points in the n2 ball
        n2 = ball_points(q.N2, q.c2)
        on_circle = np.einsum("ij,ij->i", n2, n2) - n2 @ np.asarray(f) == q.m // 2
        n = np.asarray(f) - n2[on_circle]
        return int(np.count_nonzero(_in_ball(n, q.c, q.N)))
    if q.case is CountingCase.III:
        if not _contains(q.c2, q.N2, f):
            return 0
        n = line_points(f, level, q.c, q.N)
        return int(np.count_nonzero(_in_ball(n + np.asarray(f), q.c1, q.N1)))
    if not _contains(q.c, q.N, f):
        return 0
    n2 = line_points(f, level, q.c2, q.N2)
    return int(np.count_nonzero(_in_ball(n2 + np.asarray(f), q.c1, q.N1)))


def count_tuples_naive(q: CountingQuery) -> int:
    # Triple loop over the three balls; reference for small radii
    ns = ball_points(q.N, q.c)
    n1s = ball_points(q.N1, q.c1)
    n2s = ball_points(q.N2, q.c2)
    size = ns.shape[0] * n1s.shape[0] * n2s.shape[0]
    if size > NAIVE_BUDGET:
        raise BudgetExceededError(size, NAIVE_BUDGET)
    sq1 = np.einsum("ij,ij->i", n1s, n1s)
    sq2 = np.einsum("ij,ij->i", n2s, n2s)
    total = 0
    for n in ns:
        if q.case is CountingCase.IV and tuple(n) != q.fixed_point:
            continue
        closes = np.all(n[None, None, :] - n1s[:, None, :] + n2s[None, :, :] == 0, axis=2)
        resonant = int(n @ n) - sq1[:, None] + sq2[None, :] == q.m
        keep = closes & resonant
        if q.case is CountingCase.II:
            keep &= np.all(n1s == np.asarray(q.fixed_point), axis=1)[:, None]
        if q.case is CountingCase.III:
            keep &= np.all(n2s == np.asarray(q.fixed_point), axis=1)[None, :]
        total += int(np.count_nonzero(keep))
    return total


def convolution_count(
    N: int,
    N1: int,
    N2: int,
    c: Point = (0, 0),
    c1: Point = (0, 0),
    c2: Point = (0, 0),
) -> int:
    """
    Number of (n, n1, n2) with n - n1 + n2 = 0 in the three balls, with no
    phase condition: the sum over n1 of the convolution of the n and n2
    ball indicators.
    """
    def indicator(radius: int, center: Point) -> tuple[np.ndarray, np.ndarray]:
        axis = np.arange(-radius, radius + 1)
        grid = (axis[:, None] ** 2 + axis[None, :] ** 2 <= radius * radius).astype(np.int64)
        return grid, np.asarray(center) - radius

    a, origin_a = indicator(N, _point(c))
    b, origin_b = indicator(N2, _point(c2))
    sums = np.rint(scipy.signal.convolve(a, b, method="direct")).astype(np.int64)
    origin = origin_a + origin_b
    n1 = ball_points(N1, _point(c1)) - origin
    inside = np.all((n1 >= 0) & (n1 < np.asarray(sums.shape)), axis=1)
    n1 = n1[inside]
    return int(sums[n1[:, 0], n1[:, 1]].sum())


def _gaussian(value) -> Point:
    if isinstance(value, complex):
        return (int(value.real), int(value.imag))
    if isinstance(value, int):
        return (value, 0)
    return _point(value)


def gaussian_divisor_count(m, a0, b0, M1: float, M2: float) -> int:
    """
    Number of Gaussian-integer factorisations m = a b with |a - a0| <= M1
    and |b - b0| <= M2.
    Args:
        m: nonzero Gaussian integer (complex, int or (re, im) pair).
        a0, b0: box centres.
        M1, M2 (float): box radii.
    Returns:
        int: the number of pairs (a, b).
    """
    mr, mi = _gaussian(m)
    if mr == 0 and mi == 0:
        raise ConfigurationError("m = 0 has infinitely many factorisations.")
    a0, b0 = _gaussian(a0), _gaussian(b0)
    a = ball_points(math.ceil(M1), a0)
    offset = a - np.asarray(a0)
    a = a[np.einsum("ij,ij->i", offset, offset) <= M1 * M1]
    norm = np.einsum("ij,ij->i", a, a)
    a, norm = a[norm > 0], norm[norm > 0]
    # m / a = m conj(a) / |a|^2
    re = mr * a[:, 0] + mi * a[:, 1]
    im = mi * a[:, 0] - mr * a[:, 1]
    divides = (re % norm == 0) & (im % norm == 0)
    b = np.stack([re[divides] // norm[divides], im[divides] // norm[divides]], axis=1)
    offset = b - np.asarray(b0)
    return int(np.count_nonzero(np.einsum("ij,ij->i", offset, offset) <= M2 * M2))


def center_grid(N: int, N1: int, N2: int) -> list[tuple[Point, Point, Point]]:
    # Ball centres scanned by the audits: all at the origin, then shifted by half radii
    return [
        ((0, 0), (0, 0), (0, 0)),
        ((N // 2, 0), (N1 // 2, N1 // 2), (0, -(N2 // 2))),
    ]


def default_fixed_point(case: CountingCase, c: Point, c1: Point, c2: Point) -> Point | None:
    case = CountingCase(case)
    if case is CountingCase.I:
        return None
    if case is CountingCase.II:
        return c1
    center = c2 if case is CountingCase.III else c
    return center if center != (0, 0) else (1, 0)


def worst_case_row(case: CountingCase, N: int, N1: int, N2: int, epsilon: float) -> CountingRow:
    """
    Largest count over every achievable m and every centre configuration
    of center_grid, with the matching bound.
    """
    best: CountingRow | None = None
    bound = counting_bound(case, N, N1, N2, epsilon)
    for c, c1, c2 in center_grid(N, N1, N2):
        q = CountingQuery(case, 0, N, N1, N2, c, c1, c2, default_fixed_point(case, c, c1, c2))
        for m, count in phase_histogram(q).items():
            if best is None or count > best.count:
                best = CountingRow(CountingCase(case), m, N, N1, N2, count, bound)
    if best is None:
        best = CountingRow(CountingCase(case), 0, N, N1, N2, 0, bound)
    return best


def log_slope(x: Sequence[float], y: Sequence[float]) -> float:
    # Least-squares slope of log y against log x, positive y only
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = y > 0
    if np.count_nonzero(keep) < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def audit_counting_bound(
    case: CountingCase,
    epsilon: float = DEFAULT_EPSILON,
    scales: Sequence[tuple[int, int, int]] | None = None,
) -> CountingAudit:
    """
    Ratio of worst-case counts to the case's bound across scales.
    Args:
        case (CountingCase): which count.
        epsilon (float): exponent of the divisor-type loss.
        scales (sequence | None): (N, N1, N2) triples, diagonal dyadic 2..32 by default.
    Returns:
        CountingAudit: the rows, their maximal ratio and the log-log slope
        of the ratio against max(N, N1, N2).
    """
    case = CountingCase(case)
    if scales is None:
        scales = [(r, r, r) for r in dyadic_scales(2, 32)]
    table = []
    for N, N1, N2 in scales:
        row = worst_case_row(case, N, N1, N2, epsilon)
        logger.info("Case %s at (%d, %d, %d): count %d at m=%d", case.value, N, N1, N2, row.count, row.m)
        table.append(row)
    slope = log_slope([max(r.N, r.N1, r.N2) for r in table], [r.ratio for r in table])
    return CountingAudit(case, epsilon, max(r.ratio for r in table), slope, table)
