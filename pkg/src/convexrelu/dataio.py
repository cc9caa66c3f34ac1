"""Dataset loading, saving, and synthetic teacher-network generation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Dataset", "DataFormatError", "load_csv", "save_csv", "synth_teacher"]


class DataFormatError(ValueError):
    """Raised when a CSV file cannot be parsed into a dataset."""


@dataclass
class Dataset:
    """A regression dataset: feature matrix ``X`` (n x d) and labels ``y`` (n,).

    Arrays are validated (finite, matching row counts) and frozen on
    construction; datasets are safe for concurrent reads.
    """

    X: np.ndarray
    y: np.ndarray
    name: str = ""
    rank_hint: int | None = None
    _rank_cache: int | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.float64))
        if X.ndim != 2:
            raise ValueError(f"X must be 2-d, got shape {X.shape}")
        if y.ndim != 1:
            raise ValueError(f"y must be 1-d, got shape {y.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite entries")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.rank_hint is not None and self.rank_hint > min(self.n, self.d):
            raise ValueError("rank_hint exceeds min(n, d)")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def rank(self) -> int:
        """Numerical rank of X (singular values above 1e-10 * largest)."""
        if self.rank_hint is not None:
            return self.rank_hint
        if self._rank_cache is None:
            if self.n == 0 or self.d == 0:
                object.__setattr__(self, "_rank_cache", 0)
            else:
                s = np.linalg.svd(self.X, compute_uv=False)
                tol = 1e-10 * (s[0] if s.size else 0.0)
                object.__setattr__(self, "_rank_cache", int(np.sum(s > tol)))
        return self._rank_cache


def _try_float(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv(path, label_column="last") -> Dataset:
    """Load a comma-separated numeric dataset.

    A single header row is auto-detected (first row with any non-numeric
    cell). ``label_column`` is ``"last"`` or a 0-based column index; the
    remaining columns form X.
    """
    with open(path, "r", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise DataFormatError(f"{path}: empty file")

    first = [_try_float(c) for c in rows[0]]
    has_header = any(v is None for v in first)
    data_rows = rows[1:] if has_header else rows
    if not data_rows:
        raise DataFormatError(f"{path}: no data rows after header")

    width = len(data_rows[0])
    if width < 2:
        raise DataFormatError(f"{path}: need at least 2 columns, got {width}")
    label = width - 1 if label_column == "last" else int(label_column)
    if not 0 <= label < width:
        raise DataFormatError(f"{path}: label column {label} out of range for width {width}")

    parsed = np.empty((len(data_rows), width))
    offset = 2 if has_header else 1
    for r, row in enumerate(data_rows):
        if len(row) != width:
            raise DataFormatError(
                f"{path}: row {r + offset} has {len(row)} cells, expected {width}"
            )
        for c, cell in enumerate(row):
            v = _try_float(cell)
            if v is None:
                raise DataFormatError(f"{path}: row {r + offset}, column {c + 1}: "
                                      f"cannot parse {cell!r} as a number")
            parsed[r, c] = v

    y = parsed[:, label]
    X = np.delete(parsed, label, axis=1)
    import os

    return Dataset(X=X, y=y, name=os.path.basename(str(path)))


def save_csv(ds: Dataset, path, header: list[str] | None = None) -> None:
    """Write a dataset as CSV (labels in the last column, 17 significant digits)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    if header is not None:
        writer.writerow(header)
    for i in range(ds.n):
        writer.writerow([f"{v:.17g}" for v in ds.X[i]] + [f"{ds.y[i]:.17g}"])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def synth_teacher(n, d, m1_teacher, K_teacher, seed, teacher=None) -> Dataset:
    """Generate a planted regression problem from a random teacher network.

    X rows are i.i.d. standard normal; y is the forward pass of a randomly
    initialized parallel three-layer ReLU network with ``K_teacher``
    sub-networks of hidden width ``m1_teacher``. Passing ``teacher``
    overrides the random network (used e.g. to plant a zero-output teacher).
    Bitwise reproducible for a fixed seed.
    """
    from .network import forward, random_params

    if min(n, d, m1_teacher, K_teacher) < 1:
        raise ValueError("all size arguments must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    if teacher is None:
        teacher = random_params(d, m1_teacher, K_teacher, rng)
    y = forward(teacher, X)
    return Dataset(X=X, y=y, name=f"synth-n{n}-d{d}-m{m1_teacher}-K{K_teacher}-s{seed}")
