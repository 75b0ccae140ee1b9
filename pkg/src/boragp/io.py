"""CSV readers and writers for points, edges, predictions and factor dumps."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .errors import BoraError, NonFinite

log = logging.getLogger(__name__)


class CsvFormatError(BoraError, ValueError):
    pass


def _read_rows(path):
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    return header, rows


def read_points(path, require_value: bool = True):
    """Read ``x,y,value[,cov...]`` (or ``x,y[,cov...]`` for prediction sites).

    Returns ``(locations, values or None, covariates)``.  Duplicate
    locations keep their first occurrence and log a warning.
    """
    header, rows = _read_rows(path)
    if header[:2] != ["x", "y"]:
        raise CsvFormatError(f"{path}: header must start with x,y")
    has_value = len(header) > 2 and header[2] == "value"
    if require_value and not has_value:
        raise CsvFormatError(f"{path}: expected a 'value' column after x,y")
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float).reshape(len(rows), len(header))
    except ValueError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(data)):
        raise NonFinite(f"{path}: non-finite entries")
    locs = data[:, :2]
    _, first = np.unique(locs, axis=0, return_index=True)
    if len(first) < len(locs):
        keep = np.sort(first)
        log.warning("%s: dropped %d duplicate locations", path, len(locs) - len(keep))
        data, locs = data[keep], locs[keep]
    start = 3 if has_value else 2
    values = data[:, 2] if has_value else None
    return locs, values, data[:, start:]


def write_points(path, locations, values=None, covariates=None, value_name="value") -> None:
    locations = np.asarray(locations, dtype=float)
    cov = np.zeros((len(locations), 0)) if covariates is None else np.asarray(covariates).reshape(len(locations), -1)
    header = ["x", "y"] + ([value_name] if values is not None else []) + [f"cov{j + 1}" for j in range(cov.shape[1])]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i, (x, y) in enumerate(locations):
            row = [repr(float(x)), repr(float(y))]
            if values is not None:
                row.append(repr(float(values[i])))
            row.extend(repr(float(v)) for v in cov[i])
            wr.writerow(row)


EDGE_HEADER = ["target", "neighbor", "provenance", "distance"]


def write_edges(path, rows) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(EDGE_HEADER)
        for i, j, prov, d in rows:
            wr.writerow([i, j, prov, repr(float(d))])


def read_edges(path):
    header, rows = _read_rows(path)
    if header != EDGE_HEADER:
        raise CsvFormatError(f"{path}: expected header {','.join(EDGE_HEADER)}")
    return [(int(r[0]), int(r[1]), r[2], float(r[3])) for r in rows]


PREDICTION_HEADER = ["x", "y", "w_mean", "w_sd", "y_mean", "y_sd", "y_q025", "y_q975"]


def write_prediction(path, pred) -> None:
    cols = [pred.locations[:, 0], pred.locations[:, 1], pred.w_mean, pred.w_sd, pred.y_mean, pred.y_sd,
            pred.y_lower, pred.y_upper]
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(PREDICTION_HEADER)
        for row in zip(*cols):
            wr.writerow([repr(float(v)) for v in row])


def read_prediction(path) -> dict:
    header, rows = _read_rows(path)
    if header != PREDICTION_HEADER:
        raise CsvFormatError(f"{path}: expected header {','.join(PREDICTION_HEADER)}")
    arr = np.array([[float(c) for c in r] for r in rows], dtype=float).reshape(len(rows), len(header))
    return {name: arr[:, j] for j, name in enumerate(header)}


FACTOR_HEADER = ["node", "V_s", "neighbor", "weight"]


def write_factor_dump(path, factors) -> None:
    """One row per (node, neighbour); nodes without neighbours get one blank row."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(FACTOR_HEADER)
        for i, (idx, w) in enumerate(factors.weight_rows()):
            v = repr(float(factors.cond_var[i]))
            if len(idx) == 0:
                wr.writerow([i, v, "", ""])
            for j, a in zip(idx, w):
                wr.writerow([i, v, int(j), repr(float(a))])


def read_permutation(path) -> np.ndarray:
    """One integer per line (a header line ``index`` is allowed)."""
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if lines and not lines[0].lstrip("-").isdigit():
        lines = lines[1:]
    try:
        return np.array([int(v) for v in lines], dtype=np.int64)
    except ValueError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None
