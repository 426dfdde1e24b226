"""
Frequency-lattice primitives shared by every other module:
Japanese brackets, phase functions, truncation sets, dyadic shells
and lattice points on lines.

Lattice point sets are returned as int64 arrays of shape (K, d),
enumerated in lexicographic order so that seeded sampling and
compensated sums are independent of the truncation.
"""

import math
from enum import Enum
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from qnls_lab.errors import ConfigurationError, UnsupportedDimensionError

INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1
SUPPORTED_DIMENSIONS = (1, 2, 3)


class Nonlinearity(str, Enum):
    ABS2 = "abs2"
    SQUARE = "square"
    CONJ_SQUARE = "conj_square"


class TruncationMode(str, Enum):
    EUCLIDEAN = "euclidean"
    DYADIC_SHELL = "dyadic_shell"


# A Fourier mode n = (n1, n2) of the 2D torus
class FrequencyIndex(NamedTuple):
    n1: int
    n2: int


def frequency(*components: int) -> tuple[int, ...]:
    """
    Validate lattice components and return them as a tuple.
    Args:
        components (int): one to three integer components.
    Returns:
        tuple: the frequency, a FrequencyIndex in two dimensions.
    """
    if len(components) not in SUPPORTED_DIMENSIONS:
        raise UnsupportedDimensionError(len(components))
    values = []
    for c in components:
        if int(c) != c:
            raise ConfigurationError(f"Frequency component {c!r} is not an integer.")
        if not INT32_MIN <= int(c) <= INT32_MAX:
            raise ConfigurationError(f"Frequency component {c} is outside 32-bit range.")
        values.append(int(c))
    if len(values) == 2:
        return FrequencyIndex(*values)
    return tuple(values)


def parse_frequency(text: str) -> tuple[int, ...]:
    # "1,0" -> FrequencyIndex(1, 0)
    try:
        parts = [int(p) for p in text.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise ConfigurationError(f"Cannot parse frequency {text!r}.") from exc
    return frequency(*parts)


def check_dimension(dim: int) -> int:
    if dim not in SUPPORTED_DIMENSIONS:
        raise UnsupportedDimensionError(dim)
    return dim


def norm_squared(n: Sequence[int]) -> int:
    return sum(int(c) * int(c) for c in n)


def dot(a: Sequence[int], b: Sequence[int]) -> int:
    return sum(int(x) * int(y) for x, y in zip(a, b, strict=True))


def bracket(n):
    """
    Japanese bracket <n> = (1 + |n|^2)^(1/2).
    Accepts a single frequency or an array of shape (..., d).
    """
    arr = np.asarray(n)
    if arr.ndim <= 1:
        return math.sqrt(1 + norm_squared(arr.reshape(-1).tolist()))
    sq = np.einsum("...i,...i->...", arr, arr).astype(np.float64)
    return np.sqrt(1.0 + sq)


def bracket_power(modes: np.ndarray, exponent: float) -> np.ndarray:
    # <n>^exponent for an array of modes, computed as (1 + |n|^2)^(exponent/2)
    sq = np.einsum("...i,...i->...", modes, modes).astype(np.float64)
    return np.power(1.0 + sq, 0.5 * exponent)


def phase(
    nonlinearity: Nonlinearity,
    n: Sequence[int],
    n1: Sequence[int],
    n2: Sequence[int],
) -> int:
    """
    Resonance function of a quadratic interaction, in exact integers.
    Args:
        nonlinearity (Nonlinearity): ABS2 for |u|^2, SQUARE for u^2,
            CONJ_SQUARE for conj(u)^2.
        n (sequence): outgoing frequency.
        n1 (sequence): first incoming frequency.
        n2 (sequence): second incoming frequency.
    Returns:
        int: the phase value m.
    """
    nonlinearity = Nonlinearity(nonlinearity)
    if nonlinearity is Nonlinearity.ABS2:
        if any(a - b + c != 0 for a, b, c in zip(n, n1, n2, strict=True)):
            raise ConfigurationError(
                f"ABS2 phase needs n - n1 + n2 = 0, got n={tuple(n)}, "
                f"n1={tuple(n1)}, n2={tuple(n2)}."
            )
        return norm_squared(n) - norm_squared(n1) + norm_squared(n2)
    if nonlinearity is Nonlinearity.SQUARE:
        return -2 * dot(n1, n2)
    return norm_squared(n) + norm_squared(n1) + norm_squared(n2)


@lru_cache(maxsize=64)
def _cube(N: int, dim: int) -> np.ndarray:
    axes = [np.arange(-N, N + 1, dtype=np.int64)] * dim
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return grid.reshape(-1, dim)


@lru_cache(maxsize=64)
def _truncation_set(N: int, mode: TruncationMode, dim: int) -> np.ndarray:
    cube = _cube(N, dim)
    sq = np.einsum("ij,ij->i", cube, cube)
    if mode is TruncationMode.EUCLIDEAN:
        mask = sq <= N * N
    else:
        # N/2 < <n> <= N, compared in integers
        mask = (4 * (1 + sq) > N * N) & (1 + sq <= N * N)
    points = cube[mask]
    points.setflags(write=False)
    return points


def truncation_set(
    N: int,
    mode: TruncationMode = TruncationMode.EUCLIDEAN,
    dim: int = 2,
) -> np.ndarray:
    """
    Lattice points of a truncation, in lexicographic order.
    Args:
        N (int): truncation parameter, N >= 1.
        mode (TruncationMode): EUCLIDEAN gives {|n| <= N},
            DYADIC_SHELL gives {N/2 < <n> <= N}.
        dim (int): lattice dimension (1, 2 or 3).
    Returns:
        ndarray: read-only int64 array of shape (K, dim).
    """
    if N < 1:
        raise ConfigurationError(f"Truncation N must be >= 1, got {N}.")
    check_dimension(dim)
    return _truncation_set(int(N), TruncationMode(mode), dim)


def ball_points(radius: int, center: Sequence[int] = (0, 0)) -> np.ndarray:
    # Closed ball {|x - center| <= radius}, lexicographic
    center_arr = np.asarray(center, dtype=np.int64)
    if radius < 0:
        return np.empty((0, center_arr.size), dtype=np.int64)
    if radius == 0:
        return center_arr.reshape(1, -1).copy()
    return truncation_set(int(radius), TruncationMode.EUCLIDEAN, center_arr.size) + center_arr


def lattice_count(N: int) -> int:
    # Gauss circle count of {|n| <= N} in two dimensions
    total = 1 + 4 * N
    for i in range(1, N + 1):
        total += 4 * math.isqrt(N * N - i * i)
    return total


def dense_index(modes: np.ndarray, N: int) -> tuple[np.ndarray, ...]:
    # Index tuple into a (2N+1)^d array whose centre is the zero mode
    return tuple((modes + N).T)


def _extended_gcd(a: int, b: int) -> tuple[int, int, int]:
    # a*x + b*y = g with g >= 0
    old_r, r = a, b
    old_x, x = 1, 0
    old_y, y = 0, 1
    while r != 0:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_x, x = x, old_x - q * x
        old_y, y = y, old_y - q * y
    if old_r < 0:
        old_r, old_x, old_y = -old_r, -old_x, -old_y
    return old_r, old_x, old_y


def line_points(
    normal: Sequence[int],
    level: int,
    center: Sequence[int],
    radius: float,
) -> np.ndarray:
    """
    All x in Z^2 with normal . x = level and |x - center| <= radius.
    Args:
        normal (sequence): nonzero integer normal vector (a, b).
        level (int): right-hand side of the linear equation.
        center (sequence): centre of the ball.
        radius (float): radius of the ball.
    Returns:
        ndarray: int64 array of shape (P, 2), lexicographic.
    """
    a, b = int(normal[0]), int(normal[1])
    if a == 0 and b == 0:
        raise ConfigurationError("line_points needs a nonzero normal vector.")
    empty = np.empty((0, 2), dtype=np.int64)
    g, x, y = _extended_gcd(a, b)
    if level % g != 0 or radius < 0:
        return empty
    scale = level // g
    px, py = x * scale, y * scale
    dx, dy = b // g, -a // g
    cx, cy = int(center[0]), int(center[1])

    # Move the base point next to the centre before going to floats
    length_sq = dx * dx + dy * dy
    shift = round(-((px - cx) * dx + (py - cy) * dy) / length_sq)
    px, py = px + shift * dx, py + shift * dy

    ox, oy = px - cx, py - cy
    half_b = ox * dx + oy * dy
    c_term = ox * ox + oy * oy - radius * radius
    disc = half_b * half_b - length_sq * c_term
    if disc < 0:
        return empty
    root = math.sqrt(disc)
    s_lo = math.floor((-half_b - root) / length_sq) - 1
    s_hi = math.ceil((-half_b + root) / length_sq) + 1
    s = np.arange(s_lo, s_hi + 1, dtype=np.int64)
    points = np.stack([px + s * dx, py + s * dy], axis=1)
    offset = points - np.array([cx, cy], dtype=np.int64)
    inside = np.einsum("ij,ij->i", offset, offset) <= radius * radius
    points = points[inside]
    order = np.lexsort((points[:, 1], points[:, 0]))
    return points[order]


def dyadic_scales(smallest: int, largest: int) -> list[int]:
    scales = []
    scale = smallest
    while scale <= largest:
        scales.append(scale)
        scale *= 2
    return scales
