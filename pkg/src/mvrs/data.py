"""In-memory dataset and CSV ingestion (header ``y,x1,...,xp``)."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .model import Family, check_response

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """``N`` observations: covariates ``z`` of shape ``(N, p)`` and response ``y``."""

    z: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        z = np.ascontiguousarray(self.z, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if z.shape[0] != y.shape[0]:
            raise InvalidInput(f"z has {z.shape[0]} rows but y has {y.shape[0]}")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise InvalidInput("dataset contains NaN or Inf")
        z.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    @property
    def d(self) -> int:
        return self.p + 1

    def take(self, idx) -> "Dataset":
        return Dataset(self.z[idx], self.y[idx])


def load_csv(path, family: Family | str | None = None) -> Dataset:
    """Read a dataset from CSV.

    The first row must be the header ``y,x1,...,xp``. Rows are parsed one at a
    time into a preallocated growable buffer, so peak memory stays close to the
    final dense matrix. Any malformed cell raises :class:`InvalidInput` naming its
    1-based data row (the header is not counted) and column.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInput(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "y":
            raise InvalidInput(f"{path}: header must start with 'y', got {header[:1]}")
        width = len(header)
        buf = np.empty((1024, width))
        n = 0
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise InvalidInput(f"{path}: row {row_no} has {len(row)} cells, expected {width}")
            if n == buf.shape[0]:
                buf = np.resize(buf, (2 * n, width))
            for col, cell in enumerate(row):
                try:
                    val = float(cell)
                except ValueError:
                    raise InvalidInput(
                        f"{path}: row {row_no}, column {col + 1} ({header[col]}): non-numeric cell {cell!r}"
                    ) from None
                if not math.isfinite(val):
                    raise InvalidInput(f"{path}: row {row_no}, column {col + 1} ({header[col]}): non-finite value")
                buf[n, col] = val
            n += 1
    if n == 0:
        raise InvalidInput(f"{path}: no data rows")
    buf = buf[:n]
    ds = Dataset(buf[:, 1:], buf[:, 0])
    if family is not None:
        check_response(ds.y, Family.parse(family))
    logger.info("loaded %s: N=%d, p=%d", path, ds.N, ds.p)
    return ds


def write_csv(dataset: Dataset, path) -> None:
    """Write ``dataset`` in the format :func:`load_csv` reads; floats round-trip exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x{j + 1}" for j in range(dataset.p)])
        for yi, zi in zip(dataset.y, dataset.z):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in zi])
