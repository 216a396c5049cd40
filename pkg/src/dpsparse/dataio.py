"""CSV ingestion for real data: header row, numeric cells, one named response column."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .regression import Dataset


class CsvParseError(ValueError):
    def __init__(self, path, line: int, message: str):
        self.path, self.line = str(path), line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class IngestInfo:
    n: int
    p: int
    columns: tuple
    target: str
    max_abs_x: float


def ingest_csv(path, target: str = "y") -> tuple[Dataset, IngestInfo]:
    """Load ``path`` with column ``target`` as the response and the rest as X.

    Raises :class:`CsvParseError` (naming the 1-based line) for ragged rows,
    non-numeric or non-finite cells, an empty file or a missing target column.
    ``max_abs_x`` is the empirical entrywise bound, reported to help pick c_x;
    using it as c_x leaks information about the data.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(path, 1, "empty file") from None
        header = [h.strip() for h in header]
        if target not in header:
            raise CsvParseError(path, 1, f"target column {target!r} not in header {header}")
        width = len(header)
        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != width:
                raise CsvParseError(path, line_no, f"expected {width} fields, found {len(rec)}")
            vals = []
            for name, cell in zip(header, rec):
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvParseError(path, line_no,
                                        f"non-numeric value {cell!r} in column {name!r}") from None
                if not math.isfinite(v):
                    raise CsvParseError(path, line_no,
                                        f"non-finite value {cell!r} in column {name!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise CsvParseError(path, 2, "no data rows")
    M = np.array(rows, dtype=float)
    t = header.index(target)
    X = np.delete(M, t, axis=1)
    y = M[:, t].copy()
    cols = tuple(h for i, h in enumerate(header) if i != t)
    info = IngestInfo(n=X.shape[0], p=X.shape[1], columns=cols, target=target,
                      max_abs_x=float(np.abs(X).max()) if X.size else 0.0)
    return Dataset(X, y), info
