"""Delimited text I/O for count matrices and numeric tables.

Count files put sample IDs in the first row and feature names in the first
column; every other cell is a non-negative integer.  Comma and tab
delimiters are both accepted and detected from the header line.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .exceptions import CountFileError
from .model import CountDatasetPair

__all__ = [
    "read_counts",
    "write_counts",
    "read_count_pair",
    "write_matrix",
    "write_table",
    "write_json",
]

CORNER = "feature"


def sniff_delimiter(header: str) -> str:
    """Tab if the header line contains one, otherwise comma."""
    return "\t" if "\t" in header else ","


def _parse_cell(token: str, path, line: int, col: int) -> int:
    tok = token.strip()
    where = f"{path}: line {line}, column {col}"
    if tok == "":
        raise CountFileError(f"{where}: empty cell")
    try:
        value = int(tok)
    except ValueError:
        try:
            f = float(tok)
        except ValueError:
            raise CountFileError(f"{where}: {tok!r} is not a number") from None
        if math.isnan(f):
            raise CountFileError(f"{where}: NaN is not a valid count")
        if not math.isfinite(f) or f != int(f):
            raise CountFileError(f"{where}: {tok!r} is not an integer count")
        value = int(f)
    if value < 0:
        raise CountFileError(f"{where}: negative count {value}")
    return value


def read_counts(path):
    """Read one count matrix.

    Returns
    -------
    counts : ndarray of int64, shape (D, N)
    feature_names : list of str
    sample_ids : list of str

    Raises
    ------
    CountFileError
        On ragged rows, non-integer, negative or NaN cells, duplicate
        names or an empty matrix.  Messages give the 1-based line and
        column of the offending cell.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            raise CountFileError(f"{path}: line 1: missing header row")
        delim = sniff_delimiter(header)
        fh.seek(0)
        rows = list(csv.reader(fh, delimiter=delim))
    samples = [s.strip() for s in rows[0][1:]]
    if not samples:
        raise CountFileError(f"{path}: line 1: header has no sample columns")
    if len(set(samples)) != len(samples):
        raise CountFileError(f"{path}: line 1: duplicate sample IDs")
    width = len(rows[0])
    names, values = [], []
    for line, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise CountFileError(
                f"{path}: line {line}: expected {width} fields, found {len(row)}")
        names.append(row[0].strip())
        values.append([_parse_cell(tok, path, line, col)
                       for col, tok in enumerate(row[1:], start=2)])
    if not values:
        raise CountFileError(f"{path}: no feature rows")
    if len(set(names)) != len(names):
        raise CountFileError(f"{path}: duplicate feature names")
    return np.array(values, dtype=np.int64), names, samples


def read_count_pair(path1, path2) -> CountDatasetPair:
    """Read two count files whose sample columns must agree."""
    y1, f1, s1 = read_counts(path1)
    y2, f2, s2 = read_counts(path2)
    if s1 != s2:
        raise CountFileError(
            f"sample IDs of {path1} and {path2} differ; the columns must match in order")
    return CountDatasetPair(y1, y2, feature_names_1=f1, feature_names_2=f2, sample_ids=s1)


def write_counts(path, counts, feature_names: Optional[Sequence[str]] = None,
                 sample_ids: Optional[Sequence[str]] = None) -> Path:
    counts = np.asarray(counts)
    d, n = counts.shape
    feature_names = feature_names or [f"f{i + 1}" for i in range(d)]
    sample_ids = sample_ids or [f"s{j + 1}" for j in range(n)]
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([CORNER, *sample_ids])
        for name, row in zip(feature_names, counts):
            writer.writerow([name, *(int(v) for v in row)])
    return path


def write_matrix(path, matrix, row_names=None, col_names=None) -> Path:
    """Real matrix with row and column labels, values written with ``repr``."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    r, c = matrix.shape
    row_names = row_names or [f"r{i + 1}" for i in range(r)]
    col_names = col_names or [f"c{j + 1}" for j in range(c)]
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["", *col_names])
        for name, row in zip(row_names, matrix):
            writer.writerow([name, *(repr(float(v)) for v in row)])
    return path


def write_table(path, columns: Sequence[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, obj) -> Path:
    """Sorted-key JSON with a trailing newline, stable across reruns."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable, allow_nan=True)
        fh.write("\n")
    return path
