"""CSV and JSON artifacts: trajectories, measurements, estimates, reports.

CSV files carry a header row and write floats with ``repr`` so values
round-trip exactly and repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from gptrack.exceptions import DataError
from gptrack.kinematics import STATE_FIELDS, MeasurementSet

TRAJECTORY_COLUMNS = ("t", "k") + STATE_FIELDS
MEASUREMENT_COLUMNS = ("t", "kappa", "r", "bearing", "origin")
ESTIMATE_COLUMNS = ("t", "k", "xi_hat", "eta_hat", "dxi_hat", "deta_hat", "filter")
ASSOCIATION_COLUMNS = ("t", "k", "kappa", "p_a")


def _write_rows(path, header, rows) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path, header) -> list[dict]:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(got) != tuple(header):
            raise DataError(f"{path}:1: expected header {','.join(header)}, got {','.join(got)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, dict(zip(header, row))))
    return rows


def _num(path, lineno, value, kind=float):
    try:
        x = kind(value)
    except ValueError:
        raise DataError(f"{path}:{lineno}: cannot parse {value!r} as {kind.__name__}") from None
    if kind is float and not math.isfinite(x):
        raise DataError(f"{path}:{lineno}: non-finite value {value!r}")
    return x


def write_trajectory_csv(path, truth: np.ndarray) -> None:
    """``truth`` is ``(K, T, 6)`` or ``(T, 6)``."""
    truth = np.asarray(truth, dtype=float)
    truth = truth[None] if truth.ndim == 2 else truth
    rows = (
        [t, k, *(repr(float(x)) for x in truth[k, t])]
        for t in range(truth.shape[1]) for k in range(truth.shape[0])
    )
    _write_rows(path, TRAJECTORY_COLUMNS, rows)


def read_trajectory_csv(path) -> np.ndarray:
    """Inverse of ``write_trajectory_csv``; returns ``(K, T, 6)``."""
    rows = _read_rows(path, TRAJECTORY_COLUMNS)
    if not rows:
        raise DataError(f"{path}: no trajectory rows")
    cells = {}
    for lineno, r in rows:
        t, k = _num(path, lineno, r["t"], int), _num(path, lineno, r["k"], int)
        if t < 0 or k < 0:
            raise DataError(f"{path}:{lineno}: negative index")
        if (t, k) in cells:
            raise DataError(f"{path}:{lineno}: duplicate row for t={t}, k={k}")
        cells[(t, k)] = [_num(path, lineno, r[f]) for f in STATE_FIELDS]
    T = max(t for t, _ in cells) + 1
    K = max(k for _, k in cells) + 1
    if len(cells) != T * K:
        raise DataError(f"{path}: expected {T * K} rows for T={T}, K={K}, got {len(cells)}")
    out = np.empty((K, T, 6))
    for (t, k), vals in cells.items():
        out[k, t] = vals
    return out


def write_measurements_csv(path, sets) -> None:
    rows = []
    for ms in sets:
        origin = ms.origin if ms.origin is not None else np.full(len(ms), -1)
        for kappa, (z, o) in enumerate(zip(ms.z, origin)):
            rows.append([ms.t, kappa, repr(float(z[0])), repr(float(z[1])), int(o)])
    _write_rows(path, MEASUREMENT_COLUMNS, rows)


def read_measurements_csv(path, T: int | None = None) -> list[MeasurementSet]:
    """Measurement sets for ``t = 0 .. T-1``; steps without rows are empty.

    ``T`` defaults to one past the last time index present.
    """
    rows = _read_rows(path, MEASUREMENT_COLUMNS)
    by_t: dict[int, list] = {}
    for lineno, r in rows:
        t = _num(path, lineno, r["t"], int)
        if t < 0:
            raise DataError(f"{path}:{lineno}: negative time index")
        rng_ = _num(path, lineno, r["r"])
        if rng_ < 0:
            raise DataError(f"{path}:{lineno}: negative range")
        by_t.setdefault(t, []).append(
            (_num(path, lineno, r["kappa"], int), rng_, _num(path, lineno, r["bearing"]),
             _num(path, lineno, r["origin"], int))
        )
    last = max(by_t) + 1 if by_t else 0
    if T is None:
        T = last
    elif last > T:
        raise DataError(f"{path}: measurements reach t={last - 1} beyond T={T}")
    sets = []
    for t in range(T):
        entries = sorted(by_t.get(t, []))
        z = np.array([(e[1], e[2]) for e in entries], dtype=float).reshape(-1, 2)
        origin = np.array([e[3] for e in entries], dtype=int)
        sets.append(MeasurementSet(t=t, z=z, origin=origin))
    return sets


def write_estimates_csv(path, out) -> None:
    est = out.estimates
    rows = (
        [t, k, *(repr(float(x)) for x in est[t, k]), out.filter]
        for t in range(est.shape[0]) for k in range(est.shape[1])
    )
    _write_rows(path, ESTIMATE_COLUMNS, rows)


def read_estimates_csv(path) -> tuple[np.ndarray, str]:
    """``(estimates (T, K, 4), filter name)``."""
    rows = _read_rows(path, ESTIMATE_COLUMNS)
    if not rows:
        raise DataError(f"{path}: no estimate rows")
    cells, filters = {}, set()
    for lineno, r in rows:
        t, k = _num(path, lineno, r["t"], int), _num(path, lineno, r["k"], int)
        cells[(t, k)] = [_num(path, lineno, r[c]) for c in ESTIMATE_COLUMNS[2:6]]
        filters.add(r["filter"])
    T = max(t for t, _ in cells) + 1
    K = max(k for _, k in cells) + 1
    if len(cells) != T * K:
        raise DataError(f"{path}: expected {T * K} rows for T={T}, K={K}, got {len(cells)}")
    out = np.empty((T, K, 4))
    for (t, k), vals in cells.items():
        out[t, k] = vals
    return out, ",".join(sorted(filters))


def write_association_csv(path, records) -> None:
    """``records`` yields ``(t, p_a)`` with ``p_a`` a ``(K, n+1)`` marginal matrix."""
    rows = []
    for t, p_a in records:
        for k in range(p_a.shape[0]):
            for kappa in range(p_a.shape[1]):
                rows.append([t, k, kappa, repr(float(p_a[k, kappa]))])
    _write_rows(path, ASSOCIATION_COLUMNS, rows)


def write_series_csv(path, columns, series) -> None:
    """Per-step table: a ``t`` column followed by one column per series."""
    series = [np.asarray(s, dtype=float) for s in series]
    T = len(series[0]) if series else 0
    rows = ([t, *(repr(float(s[t])) for s in series)] for t in range(T))
    _write_rows(path, ("t",) + tuple(columns), rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
