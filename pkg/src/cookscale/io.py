"""CSV input and output.

Cross-sectional files carry the header ``y,x1,...,xp``; clustered files
``cluster,y,x1,...,xp``.  The intercept is an explicit column (all
ones) supplied by the user.  Writers emit shortest round-trip decimal
representations, so write-then-read is exact.
"""
from __future__ import annotations

import csv

import numpy as np

from .data import ClusteredData, CrossSectionData
from .deletion import SubsetIndex, make_subset
from .exceptions import ValidationError


def _read_rows(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return [h.strip() for h in header], rows


def _check_header(path: str, header: list[str], expected: list[str]) -> None:
    for name in expected:
        if name not in header:
            raise ValidationError(f"{path}: missing column {name!r}")
    if header != expected:
        raise ValidationError(
            f"{path}: header must be exactly {','.join(expected)}; got {','.join(header)}"
        )


def _covariate_names(header: list[str], after: int) -> list[str]:
    p = len(header) - after
    if p < 1:
        raise ValidationError("need at least one covariate column x1")
    return [f"x{j}" for j in range(1, p + 1)]


def _parse_float(path: str, cell: str, line: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ValidationError(f"{path}: non-numeric value {cell!r} on line {line}") from None


def read_cross_section(path: str) -> CrossSectionData:
    header, rows = _read_rows(path)
    _check_header(path, header, ["y"] + _covariate_names(header, 1))
    p = len(header) - 1
    y = np.empty(len(rows))
    X = np.empty((len(rows), p))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}: line {i + 2} has {len(row)} fields, expected {len(header)}")
        y[i] = _parse_float(path, row[0], i + 2)
        for j in range(p):
            X[i, j] = _parse_float(path, row[j + 1], i + 2)
    return CrossSectionData(y, X)


def _cluster_key(label: str):
    label = label.strip()
    try:
        return int(label)
    except ValueError:
        return label


def read_clustered(path: str) -> ClusteredData:
    header, rows = _read_rows(path)
    _check_header(path, header, ["cluster", "y"] + _covariate_names(header, 2))
    p = len(header) - 2
    labels = []
    y = np.empty(len(rows))
    X = np.empty((len(rows), p))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}: line {i + 2} has {len(row)} fields, expected {len(header)}")
        labels.append(_cluster_key(row[0]))
        y[i] = _parse_float(path, row[1], i + 2)
        for j in range(p):
            X[i, j] = _parse_float(path, row[j + 2], i + 2)
    # Clusters ordered by first appearance; rows regrouped if interleaved.
    seen: dict = {}
    for lab in labels:
        if lab not in seen:
            seen[lab] = []
    for i, lab in enumerate(labels):
        seen[lab].append(i)
    triples = [(lab, X[idx], y[idx]) for lab, idx in seen.items()]
    return ClusteredData.from_clusters(triples)


def write_cross_section(data: CrossSectionData, path: str) -> None:
    header = ["y"] + [f"x{j}" for j in range(1, data.p + 1)]
    lines = [",".join(header)]
    for i in range(data.n):
        cells = [repr(float(data.y[i]))] + [repr(float(v)) for v in data.X[i]]
        lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_clustered(data: ClusteredData, path: str) -> None:
    header = ["cluster", "y"] + [f"x{j}" for j in range(1, data.p + 1)]
    lines = [",".join(header)]
    for c, cid in enumerate(data.cluster_ids):
        sl = data.cluster_slice(c)
        for i in range(sl.start, sl.stop):
            cells = [str(cid), repr(float(data.y[i]))]
            cells += [repr(float(v)) for v in data.X[i]]
            lines.append(",".join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_subsets(path: str, data) -> list[SubsetIndex]:
    """One subset per line, comma separated.

    Rows are referenced by 0-based index for cross-sectional data and by
    cluster label for clustered data.  Blank lines and ``#`` comments are
    skipped.
    """
    subsets = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [part.strip() for part in line.split(",") if part.strip()]
            if not parts:
                raise ValidationError(f"{path}: line {lineno} names no units")
            if isinstance(data, ClusteredData):
                ids = [data.index_of(_cluster_key(part)) for part in parts]
            else:
                try:
                    ids = [int(part) for part in parts]
                except ValueError:
                    raise ValidationError(
                        f"{path}: line {lineno} has a non-integer row index"
                    ) from None
            subsets.append(make_subset(data, ids))
    if not subsets:
        raise ValidationError(f"{path}: no subsets")
    return subsets
