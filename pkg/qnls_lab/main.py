"""
Command line front-end: one subcommand per scan or check.

Flags are parsed into a dict, a JSON file given with --config overrides
them, and the merged dict is validated as a RunConfig before anything is
computed. Exit status 0 on success, 1 on invalid input, 2 when the
computation itself fails; the detail goes to stderr.
"""

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from pydantic import ValidationError

from qnls_lab import __version__
from qnls_lab.counting import COUNTING_HEADER, CountingCase, log_slope, worst_case_row
from qnls_lab.database import make_session_factory, store_records
from qnls_lab.errors import ConfigurationError, LabError
from qnls_lab.lattice import Nonlinearity, dyadic_scales
from qnls_lab.log import configure_logging
from qnls_lab.outputs import provenance, write_csv, write_json, write_meta
from qnls_lab.picard import (
    divergence_verdict,
    kernel_constant,
    resonant_line_sum,
    scaling_critical,
    scaling_exponent_audit,
    second_iterate_samples,
    tightness_test,
    variance_exact,
)
from qnls_lab.random_field import FIELD_HEADER, sample_data, write_field_csv
from qnls_lab.schemas import (
    RECORD_HEADER,
    OutputFormat,
    RunConfig,
    ScanRecord,
    Statistic,
    Subcommand,
)
from qnls_lab.solver import (
    STUDY_HEADER,
    TRAJECTORY_HEADER,
    convergence_study,
    linear_trajectory,
    monotone_fraction,
    solve_v,
    write_trajectory_csv,
)
from qnls_lab.sweeps import run_cells
from qnls_lab.tensors import (
    ESTIMATE_HEADER,
    ESTIMATES,
    random_tensor_scan,
    verify_deterministic_estimates,
)

logger = logging.getLogger(__name__)

OUTPUT_DIR_VARIABLE = "QNLS_LAB_OUTPUT_DIR"
RUN_LOCAL_FLAGS = ("config", "verbose", "quiet")

# Per-subcommand defaults for the flags whose sensible value depends on the scan
DEFAULT_N = {
    Subcommand.SAMPLE: [16],
    Subcommand.SECOND_ITERATE: [16],
    Subcommand.VARIANCE_SCAN: [64, 128, 256, 512],
    Subcommand.RESONANT_SUM: [64, 128, 256, 512],
    Subcommand.COUNTING_CHECK: dyadic_scales(2, 32),
    Subcommand.TENSOR_CHECK: dyadic_scales(4, 16),
    Subcommand.SOLVE: [16],
    Subcommand.CONVERGE: [8, 16, 32],
    Subcommand.TIGHTNESS: [32],
}
DEFAULT_TOL = {Subcommand.TENSOR_CHECK: 1e-8}
SOLVER_TOL = 1e-10


class LabArgumentParser(argparse.ArgumentParser):
    # Parse errors are configuration errors (exit 1), not argparse's exit 2
    def error(self, message: str):
        raise ConfigurationError(f"{self.prog}: {message}")


def _common_flags() -> argparse.ArgumentParser:
    common = LabArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--alpha", help="roughness parameter, comma list for sweeps")
    common.add_argument("--N", help="truncation, comma list for sweeps")
    common.add_argument("--t", type=float, help="time of the second iterate")
    common.add_argument("--T", type=float, help="length of the solver time interval")
    common.add_argument("--n", help="frequency as a comma pair, e.g. 1,0")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--seed-count", type=int, dest="seed_count", help="consecutive seeds")
    common.add_argument("--samples", type=int, help="Monte Carlo sample count")
    common.add_argument("-o", "--output", dest="output_path", help="output file")
    common.add_argument("--format", choices=[f.value for f in OutputFormat])
    common.add_argument("--nonlinearity", choices=[x.value for x in Nonlinearity])
    common.add_argument("--dim", type=int, help="torus dimension")
    common.add_argument("--case", choices=[c.value for c in CountingCase])
    common.add_argument("--epsilon", type=float, help="exponent of the divisor-type loss")
    common.add_argument("--m", type=int, help="resonance value")
    common.add_argument("--trials", type=int, help="random tensor draws")
    common.add_argument("--tol", type=float, help="iteration tolerance")
    common.add_argument("--max-iter", type=int, dest="max_iter", help="Picard iteration cap")
    common.add_argument("--nodes", type=int, help="time steps of the solver grid")
    common.add_argument("--probe", action="store_true", default=None, help="random tensor probe")
    common.add_argument("--jobs", type=int, help="worker processes for sweeps")
    common.add_argument("--store", help="SQLAlchemy URL receiving scan records")
    common.add_argument("--config", help="JSON file whose keys override the flags")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")
    return common


def build_parser() -> LabArgumentParser:
    parser = LabArgumentParser(
        prog="qnls-lab",
        description="Numerical laboratory for the 2D quadratic NLS with Gaussian random data.",
        allow_abbrev=False,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    common = _common_flags()
    for command in Subcommand:
        subparsers.add_parser(command.value, parents=[common], allow_abbrev=False)
    return parser


def _load_overrides(path: str) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"Cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"Config file {path} must hold a JSON object.")
    return data


def validate_config(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigurationError(details) from exc


def parse_config(argv: Sequence[str] | None = None) -> tuple[RunConfig, int]:
    """
    Parse flags and the optional JSON override file.
    Returns:
        tuple: the validated RunConfig and the logging verbosity.
    """
    args = build_parser().parse_args(argv)
    flags = vars(args)
    verbosity = -1 if flags["quiet"] else flags["verbose"]
    data = {k: v for k, v in flags.items() if v is not None and k not in RUN_LOCAL_FLAGS}
    if flags["config"]:
        data.update(_load_overrides(flags["config"]))
    return validate_config(data), verbosity


# Output helpers


def output_path(config: RunConfig) -> Path:
    if config.output_path:
        return Path(config.output_path)
    directory = Path(os.environ.get(OUTPUT_DIR_VARIABLE, "."))
    return directory / f"{config.subcommand.value}.{config.format.value}"


def _json_value(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_table(
    config: RunConfig,
    header: Sequence[str],
    rows: Sequence[Sequence[Any]],
    meta: dict[str, Any],
    csv_writer: Callable[[Path], Path] | None = None,
) -> Path:
    """
    Write a result table in the configured format, with its sidecar.
    csv_writer replaces the generic CSV writer when the producing module has one.
    """
    path = output_path(config)
    if config.format is OutputFormat.JSON:
        payload = {
            "header": list(header),
            "rows": [[_json_value(v) for v in row] for row in rows],
        }
        write_json(path, payload, meta)
    elif csv_writer is not None:
        csv_writer(path)
    else:
        write_csv(path, header, rows, meta)
    write_meta(path, meta)
    logger.info("Wrote %s", path)
    return path


def _truncations(config: RunConfig) -> list[int]:
    return config.N if config.N is not None else DEFAULT_N[config.subcommand]


def _single(config: RunConfig) -> tuple[float, int]:
    alphas, truncations = config.alphas, _truncations(config)
    if len(alphas) != 1 or len(truncations) != 1:
        raise ConfigurationError(f"{config.subcommand.value} takes a single alpha and N.")
    return alphas[0], truncations[0]


def _seeds(seed: int, count: int) -> np.ndarray:
    return np.array([seed + i for i in range(count)], dtype=np.uint64)


def _record(alpha, N, t, n, statistic, value, samples=0, seed=0) -> ScanRecord:
    return ScanRecord(
        alpha=alpha,
        N=N,
        t=t,
        n1=n[0],
        n2=n[1],
        statistic=statistic,
        value=value,
        samples=samples,
        seed=seed,
    )


def _store(config: RunConfig, records: list[ScanRecord]):
    if not config.store:
        return
    inserted, duplicates = store_records(make_session_factory(config.store), records)
    logger.info("Stored %d records (%d duplicates skipped)", inserted, duplicates)


def _report_failures(results) -> None:
    failed = [r for r in results if r.failed]
    if failed:
        logger.warning("%d of %d sweep cells failed", len(failed), len(results))


# Sweep cells, top-level so that worker processes can import them


def variance_cell(alpha: float, N: int, t: float, n: tuple, constant: float) -> ScanRecord:
    value = variance_exact(alpha, N, t, n, constant)
    return _record(alpha, N, t, n, Statistic.EXACT_VARIANCE, value)


def resonant_cell(alpha: float, N: int, t: float, n: tuple, constant: float) -> ScanRecord:
    value = resonant_line_sum(alpha, N, t, n, constant)
    return _record(alpha, N, t, n, Statistic.RESONANT_SUM, value)


def second_iterate_cell(
    alpha: float, N: int, t: float, n: tuple, seed: int, samples: int, constant: float
) -> list[ScanRecord]:
    values = second_iterate_samples(alpha, N, t, n, _seeds(seed, samples))
    mean = float(np.mean(np.abs(values) ** 2))
    return [
        _record(alpha, N, t, n, Statistic.MC_MEAN, mean, samples, seed),
        variance_cell(alpha, N, t, n, constant),
    ]


def tightness_cell(alpha: float, N: int, t: float, n: tuple, seed: int, samples: int):
    return tightness_test(second_iterate_samples(alpha, N, t, n, _seeds(seed, samples)))


# Subcommand handlers


def run_sample(config: RunConfig, meta: dict) -> Path:
    alpha, N = _single(config)
    field = sample_data(config.seed, alpha, N)
    rows = [
        (int(mode[0]), int(mode[1]), float(a.real), float(a.imag))
        for mode, a in zip(field.modes, field.amplitudes)
    ]
    return write_table(
        config, FIELD_HEADER, rows, meta, lambda path: write_field_csv(field, path, meta)
    )


def _record_sweep(config: RunConfig, meta: dict, function: Callable, cells: list[tuple]) -> Path:
    results = run_cells(function, cells, config.jobs)
    _report_failures(results)
    records: list[ScanRecord] = []
    for result in results:
        if result.failed:
            continue
        records.extend(result.value if isinstance(result.value, list) else [result.value])
    _store(config, records)
    return write_table(config, RECORD_HEADER, [r.as_row() for r in records], meta)


def run_variance_scan(config: RunConfig, meta: dict) -> Path:
    constant = meta["kernel_constant"]
    cells = [
        (alpha, N, config.t, tuple(config.n), constant)
        for alpha in config.alphas
        for N in _truncations(config)
    ]
    return _record_sweep(config, meta, variance_cell, cells)


def run_resonant_sum(config: RunConfig, meta: dict) -> Path:
    constant = meta["kernel_constant"]
    cells = [
        (alpha, N, config.t, tuple(config.n), constant)
        for alpha in config.alphas
        for N in _truncations(config)
    ]
    return _record_sweep(config, meta, resonant_cell, cells)


def run_second_iterate(config: RunConfig, meta: dict) -> Path:
    constant = meta["kernel_constant"]
    cells = [
        (alpha, N, config.t, tuple(config.n), config.seed, config.samples, constant)
        for alpha in config.alphas
        for N in _truncations(config)
    ]
    return _record_sweep(config, meta, second_iterate_cell, cells)


def run_tightness(config: RunConfig, meta: dict) -> Path:
    n = tuple(config.n)
    cells = [
        (alpha, N, config.t, n, config.seed, config.samples)
        for alpha in config.alphas
        for N in _truncations(config)
    ]
    results = run_cells(tightness_cell, cells, config.jobs)
    _report_failures(results)
    records = []
    reports = []
    for result in results:
        if result.failed:
            continue
        alpha, N, t = result.key[:3]
        report = result.value
        fraction = report.empirical_fraction
        records.append(
            _record(alpha, N, t, n, Statistic.PZ_FRACTION, fraction, report.samples, config.seed)
        )
        reports.append({"alpha": alpha, "N": N, "t": t, "n": list(n), **asdict(report)})
        print(f"alpha={alpha:g} N={N}: fraction {report.empirical_fraction:.4f} pass={report.passed}")
    _store(config, records)
    if config.format is OutputFormat.JSON:
        path = output_path(config)
        write_json(path, {"reports": reports}, meta)
        write_meta(path, meta)
        logger.info("Wrote %s", path)
        return path
    return write_table(config, RECORD_HEADER, [r.as_row() for r in records], meta)


def run_counting_check(config: RunConfig, meta: dict) -> Path:
    cases = [config.case] if config.case is not None else list(CountingCase)
    cells = [(case, R, R, R, config.epsilon) for case in cases for R in _truncations(config)]
    results = run_cells(worst_case_row, cells, config.jobs)
    _report_failures(results)
    rows = [r.value for r in results if not r.failed]
    for case in cases:
        table = [row for row in rows if row.case is case]
        if not table:
            continue
        slope = log_slope([row.N for row in table], [row.ratio for row in table])
        print(f"case {case.value}: max ratio {max(r.ratio for r in table):.4f}, slope {slope:.4f}")
    return write_table(config, COUNTING_HEADER, [row.as_row() for row in rows], meta)


def run_tensor_check(config: RunConfig, meta: dict) -> Path:
    tol = config.tol if config.tol is not None else DEFAULT_TOL[Subcommand.TENSOR_CHECK]
    if config.probe:
        reports, scans = [], []
        for alpha in config.alphas:
            scan = random_tensor_scan(
                config.m, alpha, _truncations(config), config.trials, config.seed, tol=tol, jobs=config.jobs
            )
            for report in scan.reports:
                reports.append(
                    {
                        "M": report.M,
                        "alpha": alpha,
                        "trials": report.trials,
                        "median_ratio": report.median_ratio,
                        "quantiles": [[q, v] for q, v in report.quantiles.items()],
                        "deterministic_norm": report.deterministic_norm,
                    }
                )
                print(f"M={report.M} alpha={alpha:g}: median ratio {report.median_ratio:.4f}")
            for M, error in scan.failures.items():
                reports.append({"M": M, "alpha": alpha, "error": error})
            scans.append({"alpha": alpha, "slope": _json_value(scan.slope), "failed": sorted(scan.failures)})
            print(f"alpha={alpha:g}: slope {scan.slope:.4f}")
        path = output_path(config).with_suffix(".json")
        write_json(path, {"probes": reports, "slopes": scans}, meta)
        write_meta(path, meta)
        logger.info("Wrote %s", path)
        return path

    cells = [(R, R, R, config.m, config.epsilon, tol) for R in _truncations(config)]
    results = run_cells(verify_deterministic_estimates, cells, config.jobs)
    _report_failures(results)
    rows = [row for r in results if not r.failed for row in r.value.rows]
    for name in ESTIMATES:
        table = [row for row in rows if row.estimate == name]
        if table:
            slope = log_slope([row.N for row in table], [row.ratio for row in table])
            print(f"estimate {name}: max ratio {max(r.ratio for r in table):.4f}, slope {slope:.4f}")
    return write_table(config, ESTIMATE_HEADER, [row.as_row() for row in rows], meta)


def run_solve(config: RunConfig, meta: dict) -> Path:
    alpha, N = _single(config)
    tol = config.tol if config.tol is not None else SOLVER_TOL
    data = sample_data(config.seed, alpha, N)
    v, diagnostics = solve_v(
        alpha,
        N,
        config.seed,
        config.T,
        tol=tol,
        max_iter=config.max_iter,
        nodes=config.nodes,
        data=data,
    )
    u = linear_trajectory(data, v.times) + v
    logger.info(
        "Converged in %d iterations, largest contraction ratio %.3g",
        diagnostics.iteration_count,
        max(diagnostics.contraction_ratios, default=0.0),
    )
    rows = [
        (float(t), int(mode[0]), int(mode[1]), float(a.real), float(a.imag))
        for t, frame in zip(u.times, u.amplitudes)
        for mode, a in zip(u.modes, frame)
    ]
    return write_table(
        config, TRAJECTORY_HEADER, rows, meta, lambda path: write_trajectory_csv(u, path, meta)
    )


def run_converge(config: RunConfig, meta: dict) -> Path:
    tol = config.tol if config.tol is not None else SOLVER_TOL
    N_list = tuple(_truncations(config))
    cells = [
        (alpha, seed, N_list, config.T, None, tol, config.nodes)
        for alpha in config.alphas
        for seed in range(config.seed, config.seed + config.seed_count)
    ]
    results = run_cells(convergence_study, cells, config.jobs)
    _report_failures(results)
    studies = [r.value for r in results if not r.failed]
    if studies:
        print(f"monotone fraction {monotone_fraction(studies):.3f} over {len(studies)} studies")
    rows = [row.as_row() for study in studies for row in study]
    return write_table(config, STUDY_HEADER, rows, meta)


def run_scaling(config: RunConfig, meta_factory: Callable[[], dict]) -> Path | None:
    critical = scaling_critical(config.nonlinearity, config.dim)
    print(f"{critical:g}")
    verdicts = []
    for alpha in config.alpha or []:
        verdict = divergence_verdict(alpha, config.dim, config.nonlinearity)
        print(f"alpha={alpha:g}: {verdict.verdict.value} (threshold {verdict.threshold_used:g})")
        entry = {"alpha": alpha, "verdict": verdict.verdict.value, "threshold": verdict.threshold_used}
        if config.N is not None and config.dim == 2:
            entry["shell_rates"] = {}
            for N in config.N:
                rate = scaling_exponent_audit(alpha, N)
                entry["shell_rates"][str(N)] = rate
                print(f"alpha={alpha:g} N={N}: shell sum rate {rate:.4f}")
        verdicts.append(entry)
    if not config.output_path:
        return None
    path = Path(config.output_path)
    meta = meta_factory()
    write_json(path, {"critical_regularity": critical, "verdicts": verdicts}, meta)
    write_meta(path, meta)
    return path


HANDLERS: dict[Subcommand, Callable[[RunConfig, dict], Path]] = {
    Subcommand.SAMPLE: run_sample,
    Subcommand.SECOND_ITERATE: run_second_iterate,
    Subcommand.VARIANCE_SCAN: run_variance_scan,
    Subcommand.RESONANT_SUM: run_resonant_sum,
    Subcommand.COUNTING_CHECK: run_counting_check,
    Subcommand.TENSOR_CHECK: run_tensor_check,
    Subcommand.SOLVE: run_solve,
    Subcommand.CONVERGE: run_converge,
    Subcommand.TIGHTNESS: run_tightness,
}


def dispatch(config: RunConfig) -> Path | None:
    """
    Run the configured subcommand.
    Returns:
        Path | None: the written output file, None when nothing was written.
    """

    def meta() -> dict:
        return provenance(config.echo(), kernel_constant())

    if config.subcommand is Subcommand.SCALING:
        return run_scaling(config, meta)
    return HANDLERS[config.subcommand](config, meta())


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config, verbosity = parse_config(argv)
        configure_logging(verbosity)
        dispatch(config)
    except LabError as exc:
        print(f"error: {exc.detail}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
