"""Sparse records of observed matrix entries.

An ObservedMatrix is the pair (index set, values) of the revealed entries of
an m x n matrix, stored as coordinate triplets sorted by (row, col) so that
iteration order, and hence floating-point reductions, are reproducible.
Operations here are the masking projection, degree counting, degree-based
trimming of over-represented rows/columns, holdout splitting, and
MatrixMarket I/O.
"""

from __future__ import annotations

import dataclasses

import numpy as np

__all__ = [
    "ObservedMatrix",
    "DegreeProfile",
    "project",
    "degrees",
    "trim",
    "split_holdout",
    "read_coordinate",
    "write_coordinate",
    "read_dense",
    "write_dense",
]


@dataclasses.dataclass(frozen=True)
class ObservedMatrix:
    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    def __post_init__(self):
        if self.m <= 0 or self.n <= 0:
            raise ValueError(f"matrix shape must be positive, got {self.m}x{self.n}")
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        vals = np.asarray(self.vals, dtype=np.float64).ravel()
        if not (rows.size == cols.size == vals.size):
            raise ValueError("rows, cols, vals must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.m:
                raise ValueError("row index out of range")
            if cols.min() < 0 or cols.max() >= self.n:
                raise ValueError("column index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate entry at ({rows[k]}, {cols[k]})")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "vals", vals)

    @property
    def nnz(self) -> int:
        return int(self.vals.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    def to_dense(self) -> np.ndarray:
        """Dense array with zeros at unobserved positions."""
        out = np.zeros((self.m, self.n))
        out[self.rows, self.cols] = self.vals
        return out

    def mask(self) -> np.ndarray:
        """Boolean array, True where observed."""
        out = np.zeros((self.m, self.n), dtype=bool)
        out[self.rows, self.cols] = True
        return out

    def with_values(self, vals) -> "ObservedMatrix":
        """Same index set, different values."""
        return ObservedMatrix(self.m, self.n, self.rows, self.cols, vals)


@dataclasses.dataclass(frozen=True)
class DegreeProfile:
    row_degrees: np.ndarray
    col_degrees: np.ndarray


def project(mask: ObservedMatrix, dense: np.ndarray) -> ObservedMatrix:
    """Restrict a dense matrix to the index set of `mask`."""
    dense = np.asarray(dense, dtype=float)
    if dense.shape != (mask.m, mask.n):
        raise ValueError(f"expected shape {(mask.m, mask.n)}, got {dense.shape}")
    return mask.with_values(dense[mask.rows, mask.cols])


def degrees(obs: ObservedMatrix) -> DegreeProfile:
    """Per-row and per-column observation counts."""
    return DegreeProfile(
        row_degrees=np.bincount(obs.rows, minlength=obs.m),
        col_degrees=np.bincount(obs.cols, minlength=obs.n),
    )


def trim(obs: ObservedMatrix, factor: float = 2.0) -> ObservedMatrix:
    """Drop every entry in a row or column whose degree exceeds factor times
    the average degree.

    Thresholds are factor*|E|/m for rows and factor*|E|/n for columns, both
    computed on the input, with the average degree floored at 1 (a degree-1
    row is never over-represented, however sparse the set). Under a
    uniform-probability observation model the trim fires with vanishing
    probability; it guards against degree-skewed index sets that break
    spectral initialization.
    """
    if obs.nnz == 0:
        raise ValueError("cannot trim an empty observation set")
    deg = degrees(obs)
    row_thresh = factor * max(obs.nnz / obs.m, 1.0)
    col_thresh = factor * max(obs.nnz / obs.n, 1.0)
    keep = (deg.row_degrees[obs.rows] <= row_thresh) & (
        deg.col_degrees[obs.cols] <= col_thresh
    )
    return ObservedMatrix(obs.m, obs.n, obs.rows[keep], obs.cols[keep], obs.vals[keep])


def split_holdout(
    obs: ObservedMatrix, fraction: float, seed
) -> tuple[ObservedMatrix, ObservedMatrix]:
    """Disjoint (train, validation) partition with |validation| = round(fraction*|E|)."""
    if not 0 <= fraction < 1:
        raise ValueError(f"holdout fraction must be in [0,1), got {fraction}")
    n_val = int(round(fraction * obs.nnz))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(obs.nnz)
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    make = lambda idx: ObservedMatrix(
        obs.m, obs.n, obs.rows[idx], obs.cols[idx], obs.vals[idx]
    )
    return make(train_idx), make(val_idx)


# ---------------------------------------------------------------------------
# MatrixMarket I/O. Hand-rolled: duplicate coordinates must be a hard error
# and floats are printed with 17 significant digits so reruns are
# byte-identical.

_COORD_BANNER = "%%MatrixMarket matrix coordinate real general"
_ARRAY_BANNER = "%%MatrixMarket matrix array real general"


def _data_lines(path):
    with open(path, "r", encoding="ascii") as fh:
        banner = fh.readline().strip()
        body = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("%")]
    return banner, body


def write_coordinate(obs: ObservedMatrix, path) -> None:
    """Write 1-based coordinate MatrixMarket."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_COORD_BANNER + "\n")
        fh.write(f"{obs.m} {obs.n} {obs.nnz}\n")
        for i, j, v in zip(obs.rows, obs.cols, obs.vals):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def read_coordinate(path) -> ObservedMatrix:
    """Read 1-based coordinate MatrixMarket; duplicates are an error."""
    banner, body = _data_lines(path)
    fields = banner.lower().split()
    if fields[:1] != ["%%matrixmarket"] or fields[1:5] != [
        "matrix",
        "coordinate",
        "real",
        "general",
    ]:
        raise ValueError(f"unsupported MatrixMarket header: {banner!r}")
    m, n, nnz = (int(x) for x in body[0].split())
    if len(body) - 1 != nnz:
        raise ValueError(f"expected {nnz} entries, file has {len(body) - 1}")
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz)
    for k, line in enumerate(body[1:]):
        i, j, v = line.split()
        rows[k], cols[k], vals[k] = int(i) - 1, int(j) - 1, float(v)
    return ObservedMatrix(m, n, rows, cols, vals)


def write_dense(a: np.ndarray, path) -> None:
    """Write a dense matrix in array MatrixMarket (column-major values)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError("expected a 2-d array")
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_ARRAY_BANNER + "\n")
        fh.write(f"{a.shape[0]} {a.shape[1]}\n")
        for v in a.flatten(order="F"):
            fh.write(f"{v:.17g}\n")


def read_dense(path) -> np.ndarray:
    """Read an array-format MatrixMarket file."""
    banner, body = _data_lines(path)
    fields = banner.lower().split()
    if fields[:1] != ["%%matrixmarket"] or fields[1:5] != [
        "matrix",
        "array",
        "real",
        "general",
    ]:
        raise ValueError(f"unsupported MatrixMarket header: {banner!r}")
    m, n = (int(x) for x in body[0].split())
    vals = np.array([float(x) for x in body[1:]])
    if vals.size != m * n:
        raise ValueError(f"expected {m * n} values, file has {vals.size}")
    return vals.reshape((m, n), order="F")
