"""
Writers for the CSV and JSON result files.

CSV files start with '#' provenance lines (config echo, kernel constant,
package version) followed by a header row; reals carry 17 significant
digits. Timestamps only ever go to the '<output>.meta.json' sidecar, so
identical runs give byte-identical data files.
"""

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

from qnls_lab import __version__


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return format(value, ".17g")
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def provenance(config: dict[str, Any], kernel_constant: float | None) -> dict[str, Any]:
    # Block embedded in every output file
    return {
        "config": config,
        "kernel_constant": kernel_constant,
        "version": __version__,
    }


def write_csv(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    meta: dict[str, Any] | None = None,
) -> Path:
    """
    Write rows under a header, preceded by provenance comment lines.
    Args:
        path (str | Path): destination file.
        header (sequence): column names.
        rows (iterable): one sequence of values per row.
        meta (dict | None): provenance block from provenance().
    Returns:
        Path: the written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        if meta is not None:
            handle.write(f"# config: {json.dumps(meta['config'], sort_keys=True)}\n")
            handle.write(f"# kernel_constant: {format_value(meta['kernel_constant'])}\n")
            handle.write(f"# version: {meta['version']}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv_rows(path: str | Path) -> list[dict[str, str]]:
    # Rows as dicts, provenance lines skipped
    with Path(path).open(encoding="utf-8") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_json(path: str | Path, payload: dict[str, Any], meta: dict[str, Any] | None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = dict(payload)
    if meta is not None:
        document["provenance"] = meta
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_meta(path: str | Path, meta: dict[str, Any]) -> Path:
    # Sidecar with the only non-deterministic field
    path = Path(path)
    sidecar = path.with_name(path.name + ".meta.json")
    document = dict(meta)
    document["timestamp"] = datetime.now(timezone.utc).isoformat()
    sidecar.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar
