"""
Parallel evaluation of independent sweep cells.

A cell is a hashable, sortable key; the cell function must be a picklable
top-level callable. Per-cell computational failures are recorded instead of
aborting the sweep, and results come back in key order whatever the
scheduling was.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Callable, Hashable, Sequence

from qnls_lab.errors import ComputationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CellResult:
    key: Hashable
    value: Any = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def default_jobs() -> int:
    return os.cpu_count() or 1


def _evaluate(function: Callable, key) -> CellResult:
    try:
        return CellResult(key, function(*key))
    except ComputationError as exc:
        return CellResult(key, error=exc.detail)


def run_cells(
    function: Callable,
    cells: Sequence[tuple],
    jobs: int | None = None,
) -> list[CellResult]:
    """
    Evaluate function(*cell) for every cell.
    Args:
        function (callable): top-level function taking the cell components.
        cells (sequence): argument tuples, one per cell.
        jobs (int | None): worker processes; 1 runs inline, None uses every core.
    Returns:
        list: CellResult per cell, sorted by cell key.
    """
    cells = list(dict.fromkeys(cells))
    jobs = default_jobs() if jobs is None else jobs
    jobs = min(jobs, len(cells)) or 1
    results = []
    if jobs == 1:
        for key in cells:
            results.append(_evaluate(function, key))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = {executor.submit(_evaluate, function, key): key for key in cells}
            for future in as_completed(futures):
                results.append(future.result())
    for result in results:
        if result.failed:
            logger.warning("Cell %s failed: %s", result.key, result.error)
        else:
            logger.debug("Cell %s done", result.key)
    return sorted(results, key=lambda r: r.key)
