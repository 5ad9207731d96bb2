"""CSV ingestion and output helpers."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats


class DataError(ValueError):
    """Malformed or unusable input data."""


def _read_rows(path) -> tuple:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(x.strip() for x in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}: line {lineno} has {len(r)} fields, expected {len(header)}")
    return header, body


def _parse_float(text: str, where: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise DataError(f"{where}: {text!r} is not a number") from None
    if not math.isfinite(x):
        raise DataError(f"{where}: value {text!r} is missing or not finite")
    return x


def rank_transform(X) -> np.ndarray:
    """Column-wise normalized ranks, ``rank / (n + 1)``."""
    X = np.asarray(X, dtype=float)
    return stats.rankdata(X, axis=0) / (X.shape[0] + 1.0)


def read_matrix_csv(path, rank: bool = False, min_rows: int = 2) -> tuple:
    """Read a numeric CSV with a header; returns ``(names, data)``.

    Without ``rank`` every value must lie strictly inside (0, 1).
    """
    header, body = _read_rows(path)
    X = np.empty((len(body), len(header)))
    for i, r in enumerate(body):
        for j, x in enumerate(r):
            X[i, j] = _parse_float(x.strip(), f"{path}: line {i + 2}, column {header[j]!r}")
    if X.shape[0] < min_rows:
        raise DataError(f"{path}: need at least {min_rows} rows")
    if X.shape[1] < 2:
        raise DataError(f"{path}: need at least two columns")
    for j, name in enumerate(header):
        if np.ptp(X[:, j]) == 0:
            raise DataError(f"{path}: column {name!r} is constant")
    if rank:
        X = rank_transform(X)
    else:
        bad = np.argwhere((X <= 0) | (X >= 1))
        if bad.size:
            i, j = bad[0]
            raise DataError(f"{path}: line {i + 2}, column {header[j]!r}: value {X[i, j]!r} "
                            "outside (0, 1); use --rank-transform for raw data")
    return header, X


def read_prices_csv(path) -> tuple:
    """Read ``date, asset1, asset2, ...`` adjusted closes; returns ``(dates, names, prices)``."""
    header, body = _read_rows(path)
    if len(header) < 3:
        raise DataError(f"{path}: need a date column and at least two assets")
    dates = [r[0].strip() for r in body]
    P = np.empty((len(body), len(header) - 1))
    problems = []
    for i, r in enumerate(body):
        for j, x in enumerate(r[1:]):
            try:
                P[i, j] = _parse_float(x.strip(), "")
            except DataError:
                problems.append(f"line {i + 2} ({dates[i]}), column {header[j + 1]!r}")
                P[i, j] = math.nan
    if problems:
        shown = "; ".join(problems[:10]) + ("; ..." if len(problems) > 10 else "")
        raise DataError(f"{path}: {len(problems)} missing or invalid prices: {shown}")
    if np.any(P <= 0):
        i, j = np.argwhere(P <= 0)[0]
        raise DataError(f"{path}: line {i + 2}, column {header[j + 1]!r}: prices must be positive")
    return dates, header[1:], P


def fmt(x: float) -> str:
    """Shortest round-tripping decimal representation."""
    return repr(float(x))


def write_matrix_csv(path, names: Sequence[str], X) -> None:
    X = np.asarray(X, dtype=float)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names))
        for row in X:
            w.writerow([fmt(x) for x in row])


def write_rows_csv(path, fieldnames: Sequence[str], rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (fmt(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


__all__ = [
    "DataError", "rank_transform", "read_matrix_csv", "read_prices_csv", "write_matrix_csv",
    "write_rows_csv", "write_json", "fmt",
]
