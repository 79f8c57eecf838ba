"""Data ingestion: the synthetic benchmark generator, CSV loading, preprocessing.

Two CSV layouts are supported.  "generic" expects a header row followed
by numeric rows with one or more input columns and the output in the last
column.  "maunaloa" reads the Scripps monthly in-situ CO2 export: lines
starting with a double quote are comments/headers, data rows are
comma-separated with the decimal date in column 4 and the CO2 level in
ppm in column 5, and -99.99 marks missing observations (see
docs/formats.md for the exact layout).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ValidationError
from .gp import Dataset

__all__ = [
    "generate_synthetic",
    "load_csv",
    "preprocess",
    "TransformRecord",
    "PREPROCESS_MODES",
]

MISSING_SENTINEL = -99.99


def generate_synthetic(seed: int = 0) -> Dataset:
    """The bundled 1-d benchmark: 35 noisy samples of x^2/2 + cos(pi x).

    25 inputs are uniform on [0, 5] and 10 more are uniform on
    [1.9, 2.1] (a dense cluster around the interpolation point); the
    observation noise is N(0, 0.01).  Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.uniform(0.0, 5.0, 25), rng.uniform(1.9, 2.1, 10)])
    y = x**2 / 2.0 + np.cos(np.pi * x) + rng.normal(0.0, 0.1, x.size)
    return Dataset(x[:, None], y)


def _parse_float(cell: str, path, line_no: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"{path}: line {line_no}: cannot parse {cell!r} as a number") from None


def load_csv(path, fmt: str = "generic") -> tuple[Dataset, dict]:
    """Load a dataset; returns (dataset, info) with row/drop counts."""
    if fmt == "generic":
        return _load_generic(path)
    if fmt == "maunaloa":
        return _load_maunaloa(path)
    raise ValidationError(f"unknown CSV format {fmt!r}")


def _load_generic(path) -> tuple[Dataset, dict]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if len(header) < 2:
            raise DataError(f"{path}: need at least one input column and one output column")
        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DataError(f"{path}: line {line_no}: expected {width} columns, got {len(row)}")
            rows.append([_parse_float(c, path, line_no) for c in row])
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, :-1], arr[:, -1]), {"rows": len(rows), "dropped": 0}


def _load_maunaloa(path) -> tuple[Dataset, dict]:
    xs, ys = [], []
    total = dropped = 0
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith('"'):
                continue
            cells = [c.strip() for c in stripped.split(",")]
            if len(cells) < 5:
                raise DataError(f"{path}: line {line_no}: expected at least 5 columns")
            date = _parse_float(cells[3], path, line_no)
            co2 = _parse_float(cells[4], path, line_no)
            total += 1
            if co2 == MISSING_SENTINEL:
                dropped += 1
                continue
            xs.append(date)
            ys.append(co2)
    if not xs:
        raise DataError(f"{path}: no usable rows after filtering missing values")
    return (
        Dataset(np.array(xs)[:, None], np.array(ys)),
        {"rows": total, "dropped": dropped},
    )


PREPROCESS_MODES = ("none", "log", "standardize", "log+standardize")


@dataclass(frozen=True)
class TransformRecord:
    """Invertible record of the output transform, for reporting in raw units."""

    mode: str
    log: bool = False
    center: float = 0.0
    scale: float = 1.0

    def apply(self, y):
        y = np.asarray(y, dtype=float)
        if self.log:
            y = np.log(y)
        return (y - self.center) / self.scale

    def invert(self, y):
        y = np.asarray(y, dtype=float) * self.scale + self.center
        return np.exp(y) if self.log else y

    def apply_scalar(self, v: float) -> float:
        return float(self.apply(np.array([v]))[0])

    def invert_scalar(self, v: float) -> float:
        return float(self.invert(np.array([v]))[0])

    def to_dict(self) -> dict:
        return {"mode": self.mode, "log": self.log,
                "center": float(self.center), "scale": float(self.scale)}


def preprocess(dataset: Dataset, mode: str) -> tuple[Dataset, TransformRecord]:
    """Transform the outputs; standardization uses the sample (N-1) deviation."""
    if mode not in PREPROCESS_MODES:
        raise ValidationError(f"unknown preprocessing mode {mode!r}")
    y = dataset.y.copy()
    use_log = mode in ("log", "log+standardize")
    if use_log:
        bad = np.nonzero(y <= 0.0)[0]
        if bad.size:
            raise DataError(f"log transform needs positive outputs; offending index {bad[0]}")
        y = np.log(y)
    center, scale = 0.0, 1.0
    if mode in ("standardize", "log+standardize"):
        center = float(np.mean(y))
        scale = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
        if scale <= 0.0:
            raise DataError("cannot standardize outputs with zero variance")
        y = (y - center) / scale
    record = TransformRecord(mode=mode, log=use_log, center=center, scale=scale)
    return Dataset(dataset.X, y), record
