"""
Reproducible Gaussian random initial data, its free evolution and
Sobolev norms.

The complex Gaussian g_n is generated by a counter-based procedure keyed
by (master_seed, n), so a draw never depends on the truncation N, on
the enumeration order or on which worker produced it:

1. h = mix(seed + G); for each of three components c_i of n (missing
   components are 0): h = mix(h ^ mix(c_i + (i + 1) * G)), where c_i is
   taken as its 64-bit two's complement and G = 0x9E3779B97F4A7C15.
2. b_j = mix(h + j * G) for j = 1, 2, and u_j = ((b_j >> 11) + 1) / 2^53,
   so u_j lies in (0, 1].
3. g_n = sqrt(-ln u_1) * exp(2 pi i u_2) (Box-Muller in polar form).

mix is the SplitMix64 finaliser; all arithmetic is modulo 2^64. Real and
imaginary parts are independent N(0, 1/2), so E|g_n|^2 = 1.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft

from qnls_lab.errors import ConfigurationError
from qnls_lab.lattice import (
    TruncationMode,
    bracket_power,
    check_dimension,
    dense_index,
    truncation_set,
)
from qnls_lab.outputs import read_csv_rows, write_csv

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
MIX_2 = np.uint64(0x94D049BB133111EB)
KEY_COMPONENTS = 3
SEED_LIMIT = 2**64

FIELD_HEADER = ("n1", "n2", "re", "im")


@dataclass(frozen=True)
class GaussianSeed:
    master_seed: int

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < SEED_LIMIT:
            raise ConfigurationError(
                f"Seed {self.master_seed} is not a 64-bit unsigned integer."
            )


def seed_value(seed: "GaussianSeed | int") -> int:
    if isinstance(seed, GaussianSeed):
        return int(seed.master_seed)
    return int(GaussianSeed(int(seed)).master_seed)


@dataclass(frozen=True)
class SpectralField:
    """
    Fourier coefficients on the truncation {|n| <= N}.
    modes is the lexicographic truncation set, amplitudes[i] belongs to modes[i].
    """

    truncation: int
    modes: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.modes.ndim != 2 or self.modes.shape[0] != self.amplitudes.shape[0]:
            raise ConfigurationError("modes and amplitudes do not match.")
        sq = np.einsum("ij,ij->i", self.modes, self.modes)
        if np.any(sq > self.truncation**2):
            raise ConfigurationError(
                f"Field has frequencies outside |n| <= {self.truncation}."
            )
        if np.unique(self.modes, axis=0).shape[0] != self.modes.shape[0]:
            raise ConfigurationError("Field has duplicate frequencies.")

    @property
    def dim(self) -> int:
        return self.modes.shape[1]

    def amplitude(self, n: Sequence[int]) -> complex:
        hits = np.flatnonzero(np.all(self.modes == np.asarray(n), axis=1))
        return complex(self.amplitudes[hits[0]]) if hits.size else 0j

    def as_dict(self) -> dict[tuple[int, ...], complex]:
        return {
            tuple(int(c) for c in mode): complex(a)
            for mode, a in zip(self.modes, self.amplitudes)
        }

    def to_dense(self) -> np.ndarray:
        # (2N+1)^d array, zero mode in the centre
        N = self.truncation
        dense = np.zeros((2 * N + 1,) * self.dim, dtype=np.complex128)
        dense[dense_index(self.modes, N)] = self.amplitudes
        return dense


def zero_field(N: int, dim: int = 2) -> SpectralField:
    modes = truncation_set(N, TruncationMode.EUCLIDEAN, dim)
    return SpectralField(N, modes, np.zeros(modes.shape[0], dtype=np.complex128))


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * MIX_1
    z = (z ^ (z >> np.uint64(27))) * MIX_2
    return z ^ (z >> np.uint64(31))


def _uniform_pair(seeds: np.ndarray, modes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    seeds_u = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    modes = np.atleast_2d(np.asarray(modes, dtype=np.int64))
    if modes.shape[1] > KEY_COMPONENTS:
        raise ConfigurationError("Frequencies with more than three components.")
    padded = np.zeros((modes.shape[0], KEY_COMPONENTS), dtype=np.int64)
    padded[:, : modes.shape[1]] = modes
    components = padded.astype(np.uint64)

    with np.errstate(over="ignore"):
        h = _mix(seeds_u + GOLDEN)[:, None]
        for i in range(KEY_COMPONENTS):
            salt = _mix(components[:, i] + np.uint64(i + 1) * GOLDEN)
            h = _mix(h ^ salt[None, :])
        bits_1 = _mix(h + GOLDEN)
        bits_2 = _mix(h + np.uint64(2) * GOLDEN)
    scale = 2.0**-53
    u_1 = ((bits_1 >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * scale
    u_2 = ((bits_2 >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * scale
    return u_1, u_2


def gaussian_table(seeds: Sequence[int] | np.ndarray, modes: np.ndarray) -> np.ndarray:
    """
    Complex Gaussians g_n for every (seed, mode) pair.
    Args:
        seeds (array): S master seeds.
        modes (ndarray): K frequencies, shape (K, d).
    Returns:
        ndarray: complex128 array of shape (S, K).
    """
    u_1, u_2 = _uniform_pair(seeds, modes)
    return np.sqrt(-np.log(u_1)) * np.exp(2j * np.pi * u_2)


def unimodular_table(seeds: Sequence[int] | np.ndarray, modes: np.ndarray) -> np.ndarray:
    # eta_n = g_n / |g_n| of the same draws
    _, u_2 = _uniform_pair(seeds, modes)
    return np.exp(2j * np.pi * u_2)


def sample_gaussian(seed: GaussianSeed | int, n: Sequence[int]) -> complex:
    return complex(gaussian_table([seed_value(seed)], np.asarray([n]))[0, 0])


def sample_data(
    seed: GaussianSeed | int,
    alpha: float,
    N: int,
    dim: int = 2,
) -> SpectralField:
    """
    Random initial data g_n / <n>^(1 - alpha) on {|n| <= N}.
    Args:
        seed (GaussianSeed | int): master seed.
        alpha (float): roughness parameter.
        N (int): truncation, N >= 1.
        dim (int): lattice dimension.
    Returns:
        SpectralField: the sampled data.
    """
    check_dimension(dim)
    modes = truncation_set(N, TruncationMode.EUCLIDEAN, dim)
    g = gaussian_table([seed_value(seed)], modes)[0]
    return SpectralField(N, modes, g * bracket_power(modes, alpha - 1.0))


def linear_flow(field: SpectralField, t: float) -> SpectralField:
    # e^{it Delta}: multiply by e^{-it|n|^2}
    sq = np.einsum("ij,ij->i", field.modes, field.modes)
    return SpectralField(field.truncation, field.modes, field.amplitudes * np.exp(-1j * t * sq))


def sobolev_norm(field: SpectralField, s: float) -> float:
    # (sum <n>^{2s} |u(n)|^2)^{1/2}, (2 pi) factors dropped
    weights = bracket_power(field.modes, 2.0 * s)
    return float(np.sqrt(np.sum(weights * np.abs(field.amplitudes) ** 2)))


def restrict(field: SpectralField, N: int) -> SpectralField:
    if N > field.truncation:
        raise ConfigurationError(f"Cannot restrict N={field.truncation} to larger N={N}.")
    sq = np.einsum("ij,ij->i", field.modes, field.modes)
    keep = sq <= N * N
    return SpectralField(N, field.modes[keep], field.amplitudes[keep])


def embed(field: SpectralField, N: int) -> SpectralField:
    if N < field.truncation:
        raise ConfigurationError(f"Cannot embed N={field.truncation} into smaller N={N}.")
    modes = truncation_set(N, TruncationMode.EUCLIDEAN, field.dim)
    dense = np.zeros((2 * N + 1,) * field.dim, dtype=np.complex128)
    dense[dense_index(field.modes, N)] = field.amplitudes
    return SpectralField(N, modes, dense[dense_index(modes, N)])


def to_physical(field: SpectralField, size: int) -> np.ndarray:
    """
    Values u(x_j) = sum_n u(n) e^{i n.x_j} on a uniform size x size grid.
    size must exceed 2N so that no two modes share a grid frequency.
    """
    if field.dim != 2:
        raise ConfigurationError("to_physical supports two-dimensional fields only.")
    if size <= 2 * field.truncation:
        raise ConfigurationError(f"Grid size {size} is too small for N={field.truncation}.")
    grid = np.zeros((size, size), dtype=np.complex128)
    grid[field.modes[:, 0] % size, field.modes[:, 1] % size] = field.amplitudes
    return scipy.fft.ifft2(grid, norm="forward")


def write_field_csv(field: SpectralField, path: str | Path, meta: dict | None = None) -> Path:
    rows = (
        (int(mode[0]), int(mode[1]), float(a.real), float(a.imag))
        for mode, a in zip(field.modes, field.amplitudes)
    )
    return write_csv(path, FIELD_HEADER, rows, meta)


def read_field_csv(path: str | Path, N: int | None = None) -> SpectralField:
    rows = read_csv_rows(path)
    if not rows:
        raise ConfigurationError(f"Field file {path} has no modes.")
    modes = np.array([[int(r["n1"]), int(r["n2"])] for r in rows], dtype=np.int64)
    amplitudes = np.array([complex(float(r["re"]), float(r["im"])) for r in rows])
    if N is None:
        N = int(np.ceil(np.sqrt(np.max(np.einsum("ij,ij->i", modes, modes)))))
    return SpectralField(max(N, 1), modes, amplitudes)
