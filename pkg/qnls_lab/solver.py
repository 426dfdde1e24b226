"""
Solvers for the renormalized quadratic NLS

    i du/dt + Laplacian u = |u|^2 - mean(|u|^2)

on the two-dimensional torus with truncated Gaussian data. In Fourier
variables du(n)/dt = -i|n|^2 u(n) - i F(|u|^2)(n), and the Duhamel form is

    u(t) = e^{-it|n|^2} u(0) - i int_0^t e^{-i(t-t')|n|^2} F(|u|^2)(t') dt'.

solve_v iterates the Duhamel map for the remainder v of u = z + v, with z
the free evolution of the data; solve_u_truncated integrates u directly
with an integrating-factor Runge-Kutta scheme.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft
import scipy.integrate

from qnls_lab.errors import (
    BlowUpError,
    ComputationError,
    ConfigurationError,
    NonContractionError,
)
from qnls_lab.lattice import TruncationMode, bracket_power, dense_index, truncation_set
from qnls_lab.outputs import write_csv
from qnls_lab.random_field import (
    GaussianSeed,
    SpectralField,
    embed,
    restrict,
    sample_data,
    seed_value,
)

logger = logging.getLogger(__name__)

DEFAULT_PAD_FACTOR = 4
DEFAULT_NODES = 64
DEFAULT_T = 0.01
MONITOR_EXPONENT = 0.1
BLOW_UP_GUARD = 1e12
FRAME_CHUNK = 8
DIVERGENCE_STREAK = 3

TRAJECTORY_HEADER = ("t", "n1", "n2", "re", "im")
STUDY_HEADER = ("alpha", "N", "T", "s", "distance", "iterations", "converged")


@dataclass(frozen=True)
class TrajectoryField:
    """
    Fourier coefficients on a uniform time grid.
    amplitudes[j, i] is the coefficient of modes[i] at times[j].
    """

    times: np.ndarray
    truncation: int
    modes: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape != (self.times.shape[0], self.modes.shape[0]):
            raise ConfigurationError("Trajectory amplitudes do not match times and modes.")
        if self.times.shape[0] > 2:
            steps = np.diff(self.times)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
                raise ConfigurationError("Trajectory time grid is not uniform.")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.shape[0] > 1 else 0.0

    @property
    def fields(self) -> list[SpectralField]:
        return [self.field(j) for j in range(self.times.shape[0])]

    def field(self, j: int) -> SpectralField:
        return SpectralField(self.truncation, self.modes, self.amplitudes[j])

    def with_amplitudes(self, amplitudes: np.ndarray) -> "TrajectoryField":
        return TrajectoryField(self.times, self.truncation, self.modes, amplitudes)

    def __add__(self, other: "TrajectoryField") -> "TrajectoryField":
        _check_same_grid(self, other)
        return self.with_amplitudes(self.amplitudes + other.amplitudes)


@dataclass(frozen=True)
class SolveDiagnostics:
    iteration_count: int
    contraction_ratios: list[float] = field(default_factory=list)
    final_residual: float = 0.0


@dataclass(frozen=True)
class StudyRow:
    alpha: float
    N: int
    T: float
    s: float
    distance: float | None
    iterations: int | None
    converged: bool

    def as_row(self) -> tuple:
        return (self.alpha, self.N, self.T, self.s, self.distance, self.iterations, self.converged)


def _check_same_grid(a: TrajectoryField, b: TrajectoryField):
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise ConfigurationError("Trajectories live on different time grids.")
    if a.truncation != b.truncation or not np.array_equal(a.modes, b.modes):
        raise ConfigurationError("Trajectories have different truncations.")


def padded_size(N: int, pad_factor: int = DEFAULT_PAD_FACTOR) -> int:
    # Grid side L > 3N, so products of band-N fields do not wrap into |n| <= N
    if pad_factor < 3:
        raise ConfigurationError(f"pad_factor must be >= 3, got {pad_factor}.")
    return scipy.fft.next_fast_len(pad_factor * N + 1)


def _nonlinearity_frames(
    modes: np.ndarray,
    N: int,
    amplitudes: np.ndarray,
    pad_factor: int = DEFAULT_PAD_FACTOR,
) -> np.ndarray:
    L = padded_size(N, pad_factor)
    ix, iy = modes[:, 0] % L, modes[:, 1] % L
    out = np.empty_like(amplitudes)
    for start in range(0, amplitudes.shape[0], FRAME_CHUNK):
        frames = amplitudes[start : start + FRAME_CHUNK]
        grid = np.zeros((frames.shape[0], L, L), dtype=np.complex128)
        grid[:, ix, iy] = frames
        physical = scipy.fft.ifft2(grid, norm="forward")
        spectrum = scipy.fft.fft2(np.abs(physical) ** 2, norm="forward")
        out[start : start + FRAME_CHUNK] = spectrum[:, ix, iy]
    out[:, ~np.any(modes != 0, axis=1)] = 0.0
    return out


def nonlinearity(u: SpectralField, pad_factor: int = DEFAULT_PAD_FACTOR) -> SpectralField:
    """
    F(|u|^2 - mean |u|^2) on |n| <= N by a zero-padded transform.
    Args:
        u (SpectralField): two-dimensional field.
        pad_factor (int): grid side is next_fast_len(pad_factor * N + 1), pad_factor >= 3.
    Returns:
        SpectralField: same truncation, zero mode set to 0.
    """
    if u.dim != 2:
        raise ConfigurationError("nonlinearity supports two-dimensional fields only.")
    values = _nonlinearity_frames(u.modes, u.truncation, u.amplitudes[None, :], pad_factor)
    return SpectralField(u.truncation, u.modes, values[0])


def convolution_direct(u: SpectralField) -> SpectralField:
    # sum over n1 - n2 = n of u(n1) conj(u(n2)), pair by pair
    N = u.truncation
    diffs = u.modes[:, None, :] - u.modes[None, :, :] + 2 * N
    products = u.amplitudes[:, None] * np.conj(u.amplitudes[None, :])
    dense = np.zeros((4 * N + 1, 4 * N + 1), dtype=np.complex128)
    np.add.at(dense, (diffs[..., 0].ravel(), diffs[..., 1].ravel()), products.ravel())
    values = dense[dense_index(u.modes, 2 * N)]
    values[~np.any(u.modes != 0, axis=1)] = 0.0
    return SpectralField(N, u.modes, values)


def time_grid(T: float, nodes: int, backward: bool = False) -> np.ndarray:
    if T <= 0:
        raise ConfigurationError(f"T must be positive, got {T}.")
    if nodes < 2:
        raise ConfigurationError(f"Need at least 2 time steps, got {nodes}.")
    times = np.linspace(0.0, T, nodes + 1)
    return -times if backward else times


def linear_trajectory(field: SpectralField, times: np.ndarray) -> TrajectoryField:
    # z(t) = e^{-it|n|^2} z(0) at every grid time
    times = np.asarray(times, dtype=np.float64)
    sq = np.einsum("ij,ij->i", field.modes, field.modes)
    amplitudes = field.amplitudes[None, :] * np.exp(-1j * np.outer(times, sq))
    return TrajectoryField(times, field.truncation, field.modes, amplitudes)


def _propagators(trajectory: TrajectoryField) -> np.ndarray:
    sq = np.einsum("ij,ij->i", trajectory.modes, trajectory.modes)
    return np.exp(1j * np.outer(trajectory.times, sq))


def duhamel_map(
    z_traj: TrajectoryField,
    v_traj: TrajectoryField,
    s_exponent: float = MONITOR_EXPONENT,
    pad_factor: int = DEFAULT_PAD_FACTOR,
) -> TrajectoryField:
    """
    Gamma[v](t_j) = -i int_0^{t_j} e^{-i(t_j - t')|n|^2} F(|z + v|^2 - mean)(t') dt'.
    The propagator is applied exactly per frequency and node, only
    e^{it'|n|^2} F(...)(t') is integrated, by the cumulative trapezoid rule.
    """
    _check_same_grid(z_traj, v_traj)
    forcing = _nonlinearity_frames(
        z_traj.modes, z_traj.truncation, z_traj.amplitudes + v_traj.amplitudes, pad_factor
    )
    rotation = _propagators(z_traj)
    integral = scipy.integrate.cumulative_trapezoid(
        rotation * forcing, x=z_traj.times, axis=0, initial=0
    )
    gamma = z_traj.with_amplitudes(-1j * np.conj(rotation) * integral)
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug("Duhamel map: sup H^%g size %.6e", s_exponent, sup_norm(gamma, s_exponent))
    return gamma


def sup_norm(trajectory: TrajectoryField, s: float) -> float:
    weights = bracket_power(trajectory.modes, 2.0 * s)
    return float(np.sqrt(np.max(np.abs(trajectory.amplitudes) ** 2 @ weights)))


def solve_v(
    alpha: float,
    N: int,
    seed: GaussianSeed | int,
    T: float = DEFAULT_T,
    s_exponent: float = MONITOR_EXPONENT,
    tol: float = 1e-10,
    max_iter: int = 50,
    nodes: int = DEFAULT_NODES,
    pad_factor: int = DEFAULT_PAD_FACTOR,
    backward: bool = False,
    data: SpectralField | None = None,
) -> tuple[TrajectoryField, SolveDiagnostics]:
    """
    Fixed point of the Duhamel map for the remainder v, starting from v = 0.
    Args:
        alpha (float): roughness parameter.
        N (int): truncation of the data.
        seed (GaussianSeed | int): master seed of the data.
        T (float): length of the time interval, > 0.
        s_exponent (float): Sobolev exponent of the monitoring norm.
        tol (float): stop once the sup-in-time H^s step is <= tol.
        max_iter (int): iteration cap.
        nodes (int): number of time steps of the grid.
        pad_factor (int): dealiasing factor.
        backward (bool): solve on [-T, 0] instead of [0, T].
        data (SpectralField | None): replaces the sampled data when given.
    Returns:
        tuple: the v trajectory and its SolveDiagnostics.
    """
    if tol <= 0:
        raise ConfigurationError(f"tol must be positive, got {tol}.")
    if data is None:
        data = sample_data(seed, alpha, N)
    z = linear_trajectory(data, time_grid(T, nodes, backward))
    v = z.with_amplitudes(np.zeros_like(z.amplitudes))

    steps: list[float] = []
    ratios: list[float] = []
    with np.errstate(over="ignore", invalid="ignore"):
        for iteration in range(1, max_iter + 1):
            update = duhamel_map(z, v, s_exponent, pad_factor)
            step = sup_norm(update.with_amplitudes(update.amplitudes - v.amplitudes), s_exponent)
            v = update
            if not math.isfinite(step):
                raise NonContractionError(alpha, N, T, seed_value(seed), ratios)
            if steps and steps[-1] > 0 and step > 0:
                ratios.append(step / steps[-1])
            steps.append(step)
            logger.debug("Picard step %d: %.3e", iteration, step)
            if step <= tol:
                diagnostics = SolveDiagnostics(iteration, ratios, step)
                if ratios and max(ratios) >= 1.0:
                    raise NonContractionError(alpha, N, T, seed_value(seed), ratios)
                return v, diagnostics
            if len(ratios) >= DIVERGENCE_STREAK and min(ratios[-DIVERGENCE_STREAK:]) >= 1.0:
                break
    raise NonContractionError(alpha, N, T, seed_value(seed), ratios)


def solve_u_truncated(
    alpha: float,
    N: int,
    seed: GaussianSeed | int,
    T: float,
    dt: float,
    pad_factor: int = DEFAULT_PAD_FACTOR,
    backward: bool = False,
    nonlinear: bool = True,
    data: SpectralField | None = None,
) -> TrajectoryField:
    """
    Integrating-factor RK4 for the truncated equation.
    The scheme advances w = e^{it|n|^2} u, for which the dispersion is
    exact: dw/dt = -i e^{it|n|^2} F(|u|^2 - mean)(t).
    Args:
        alpha (float): roughness parameter.
        N (int): truncation.
        seed (GaussianSeed | int): master seed of the data.
        T (float): final time, > 0.
        dt (float): step, dt <= T / 16; rounded down so steps divide T.
        pad_factor (int): dealiasing factor.
        backward (bool): integrate towards -T.
        nonlinear (bool): with False only the free evolution remains.
        data (SpectralField | None): replaces the sampled data when given.
    Returns:
        TrajectoryField: u at every step.
    """
    if T <= 0 or dt <= 0:
        raise ConfigurationError("T and dt must be positive.")
    if dt > T / 16:
        raise ConfigurationError(f"dt={dt} exceeds T/16 = {T / 16}.")
    if data is None:
        data = sample_data(seed, alpha, N)
    steps = math.ceil(T / dt - 1e-9)
    times = time_grid(T, steps, backward)
    h = float(times[1] - times[0])
    modes, N = data.modes, data.truncation
    sq = np.einsum("ij,ij->i", modes, modes)

    def rhs(t: float, w: np.ndarray) -> np.ndarray:
        if not nonlinear:
            return np.zeros_like(w)
        u = np.exp(-1j * t * sq) * w
        forcing = _nonlinearity_frames(modes, N, u[None, :], pad_factor)[0]
        return -1j * np.exp(1j * t * sq) * forcing

    amplitudes = np.empty((times.shape[0], modes.shape[0]), dtype=np.complex128)
    amplitudes[0] = data.amplitudes
    w = data.amplitudes.astype(np.complex128)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(steps):
            t = float(times[j])
            k1 = rhs(t, w)
            k2 = rhs(t + h / 2, w + h / 2 * k1)
            k3 = rhs(t + h / 2, w + h / 2 * k2)
            k4 = rhs(t + h, w + h * k3)
            w = w + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            peak = float(np.max(np.abs(w)))
            if not math.isfinite(peak) or peak > BLOW_UP_GUARD:
                raise BlowUpError(float(times[j + 1]), peak)
            amplitudes[j + 1] = np.exp(-1j * times[j + 1] * sq) * w
    return TrajectoryField(times, N, modes, amplitudes)


def discrete_residual(
    z_traj: TrajectoryField,
    v_traj: TrajectoryField,
    pad_factor: int = DEFAULT_PAD_FACTOR,
) -> float:
    """
    Sup over interior grid times of the L^2 size of
    (w_{j+1} - w_{j-1}) / (2 dt) + i e^{it_j|n|^2} F(|u_j|^2 - mean)
    with u = z + v and w = e^{it|n|^2} u; O(dt^2) for a trapezoid fixed point.
    """
    _check_same_grid(z_traj, v_traj)
    if z_traj.times.shape[0] < 3:
        raise ConfigurationError("discrete_residual needs at least three grid times.")
    u = z_traj.amplitudes + v_traj.amplitudes
    rotation = _propagators(z_traj)
    w = rotation * u
    forcing = rotation * _nonlinearity_frames(z_traj.modes, z_traj.truncation, u, pad_factor)
    derivative = (w[2:] - w[:-2]) / (2.0 * z_traj.dt)
    residual = derivative + 1j * forcing[1:-1]
    return float(np.sqrt(np.max(np.sum(np.abs(residual) ** 2, axis=1))))


def _on_truncation(trajectory: TrajectoryField, N: int) -> np.ndarray:
    modes = truncation_set(N, TruncationMode.EUCLIDEAN, 2)
    dense = np.zeros((trajectory.times.shape[0], 2 * N + 1, 2 * N + 1), dtype=np.complex128)
    index = dense_index(trajectory.modes, N)
    dense[:, index[0], index[1]] = trajectory.amplitudes
    mode_index = dense_index(modes, N)
    return dense[:, mode_index[0], mode_index[1]]


def trajectory_distance(a: TrajectoryField, b: TrajectoryField, s: float) -> float:
    """
    sup over common grid times of ||a - b||_{H^s}.
    The coarser time grid must be contained in the finer one; the smaller
    truncation is embedded into the larger.
    """
    coarse, fine = (a, b) if a.times.shape[0] <= b.times.shape[0] else (b, a)
    if fine.dt == 0.0:
        raise ConfigurationError("trajectory_distance needs at least two grid times.")
    index = np.rint(coarse.times / fine.dt).astype(np.int64)
    if np.any(index < 0) or np.any(index >= fine.times.shape[0]) or not np.allclose(
        fine.times[np.clip(index, 0, fine.times.shape[0] - 1)], coarse.times, rtol=1e-9, atol=0.0
    ):
        raise ConfigurationError("Trajectory time grids are not nested.")
    N = max(a.truncation, b.truncation)
    coarse_amplitudes = _on_truncation(coarse, N)
    fine_amplitudes = _on_truncation(fine, N)[index]
    weights = bracket_power(truncation_set(N, TruncationMode.EUCLIDEAN, 2), 2.0 * s)
    squared = np.abs(coarse_amplitudes - fine_amplitudes) ** 2 @ weights
    return float(np.sqrt(np.max(squared)))


def _full_solution(
    alpha: float,
    N: int,
    seed,
    T: float,
    tol: float,
    nodes: int,
    data: SpectralField | None,
) -> tuple[TrajectoryField, SolveDiagnostics]:
    if data is None:
        data = sample_data(seed, alpha, N)
    elif data.truncation >= N:
        data = restrict(data, N)
    else:
        data = embed(data, N)
    v, diagnostics = solve_v(alpha, N, seed, T, tol=tol, nodes=nodes, data=data)
    return linear_trajectory(data, v.times) + v, diagnostics


def check_dyadic(N_list: Sequence[int]) -> list[int]:
    N_list = [int(N) for N in N_list]
    if not N_list or N_list[0] < 1:
        raise ConfigurationError("N_list must start at N >= 1.")
    if any(b != 2 * a for a, b in zip(N_list, N_list[1:])):
        raise ConfigurationError(f"N_list must be ascending dyadic, got {N_list}.")
    return N_list


def convergence_study(
    alpha: float,
    seed: GaussianSeed | int,
    N_list: Sequence[int],
    T: float = DEFAULT_T,
    s_measure: float | None = None,
    tol: float = 1e-10,
    nodes: int = DEFAULT_NODES,
    data: SpectralField | None = None,
) -> list[StudyRow]:
    """
    d(N) = sup_t ||u_{2N} - u_N||_{H^s} for coupled data, u_N = z_N + v_N.
    Args:
        alpha (float): roughness parameter.
        seed (GaussianSeed | int): master seed shared by every N.
        N_list (sequence): ascending dyadic truncations.
        T (float): time interval length.
        s_measure (float | None): Sobolev exponent, -alpha - 0.1 by default.
        tol (float): fixed point tolerance.
        nodes (int): time steps per solve.
        data (SpectralField | None): replaces the sampled data when given.
    Returns:
        list: one StudyRow per N; failed solves give converged=False rows
        without a distance.
    """
    N_list = check_dyadic(N_list)
    s = -alpha - 0.1 if s_measure is None else s_measure
    solutions: dict[int, TrajectoryField | None] = {}
    iterations: dict[int, int | None] = {}
    for N in N_list + [2 * N_list[-1]]:
        try:
            solutions[N], diagnostics = _full_solution(alpha, N, seed, T, tol, nodes, data)
            iterations[N] = diagnostics.iteration_count
        except ComputationError as exc:
            logger.warning("Solve failed at N=%d: %s", N, exc.detail)
            solutions[N], iterations[N] = None, None
    rows = []
    for N in N_list:
        low, high = solutions[N], solutions[2 * N]
        if low is None or high is None:
            rows.append(StudyRow(alpha, N, T, s, None, iterations[N], False))
            continue
        rows.append(StudyRow(alpha, N, T, s, trajectory_distance(high, low, s), iterations[N], True))
    return rows


def log2_decrements(rows: Sequence[StudyRow]) -> list[float | None]:
    # log2(d(N) / d(2N)) for consecutive rows
    out = []
    for low, high in zip(rows, rows[1:]):
        if low.distance and high.distance:
            out.append(math.log2(low.distance / high.distance))
        else:
            out.append(None)
    return out


def is_monotone(rows: Sequence[StudyRow]) -> bool:
    distances = [r.distance for r in rows]
    if any(d is None for d in distances):
        return False
    return all(b < a for a, b in zip(distances, distances[1:]))


def monotone_fraction(studies: Sequence[Sequence[StudyRow]]) -> float:
    # Fraction of seeds whose d(N) is strictly decreasing
    if not studies:
        raise ConfigurationError("monotone_fraction needs at least one study.")
    return sum(is_monotone(rows) for rows in studies) / len(studies)


def write_trajectory_csv(trajectory: TrajectoryField, path: str | Path, meta: dict | None = None) -> Path:
    rows = (
        (float(t), int(mode[0]), int(mode[1]), float(a.real), float(a.imag))
        for t, frame in zip(trajectory.times, trajectory.amplitudes)
        for mode, a in zip(trajectory.modes, frame)
    )
    return write_csv(path, TRAJECTORY_HEADER, rows, meta)
