"""Compressed sparse row matrices for adjacency chains.

Implements just what the propagation pipeline needs: construction from edge
pairs, row normalization, CSR*CSR and CSR*dense products, and transposition.
All values are 64-bit floats. Products are accumulated row by row with a
sparse (concatenate, sort, segment-reduce) accumulator, never through a dense
intermediate, and the summation order inside every output row is fixed, so
results are bitwise reproducible for a given input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NegativeValue, ShapeMismatch, ValidationError


@dataclass(frozen=True)
class SparseRowMatrix:
    """CSR matrix with strictly increasing column indices inside each row.

    Attributes:
        n_rows, n_cols: matrix shape.
        row_offsets: int64 array of length n_rows + 1, monotone.
        col_indices: int64 array of length nnz, in [0, n_cols).
        values: float64 array of length nnz, all finite.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets",
                           np.ascontiguousarray(self.row_offsets, dtype=np.int64))
        object.__setattr__(self, "col_indices",
                           np.ascontiguousarray(self.col_indices, dtype=np.int64))
        object.__setattr__(self, "values",
                           np.ascontiguousarray(self.values, dtype=np.float64))
        self._validate()

    def _validate(self):
        if self.n_rows < 0 or self.n_cols < 0:
            raise ShapeMismatch(f"negative shape ({self.n_rows}, {self.n_cols})")
        off = self.row_offsets
        if off.shape != (self.n_rows + 1,):
            raise ValidationError("row_offsets must have length n_rows + 1")
        if off[0] != 0 or off[-1] != self.col_indices.size:
            raise ValidationError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(off) < 0):
            raise ValidationError("row_offsets must be monotone non-decreasing")
        if self.values.shape != self.col_indices.shape:
            raise ValidationError("values and col_indices must have equal length")
        nnz = self.col_indices.size
        if nnz:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols:
                raise ValidationError("column index out of [0, n_cols)")
            # strictly increasing inside each row: check neighbouring pairs
            # except those that straddle a row boundary
            d = np.diff(self.col_indices)
            inside = np.ones(nnz - 1, dtype=bool)
            bounds = off[1:-1]
            bounds = bounds[(bounds > 0) & (bounds < nnz)]
            inside[bounds - 1] = False
            if np.any(d[inside] <= 0):
                raise ValidationError("column indices must be strictly increasing per row")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("matrix values must be finite")

    # ------------------------------------------------------------------
    # constructors

    @classmethod
    def from_edge_pairs(cls, n_rows: int, n_cols: int, pairs,
                        duplicates: str = "error") -> "SparseRowMatrix":
        """Binary matrix with a 1.0 at every (row, col) pair.

        duplicates: "error" rejects repeated pairs, "union" collapses them.
        """
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size == 0:
            return cls(n_rows, n_cols, np.zeros(n_rows + 1, np.int64),
                       np.zeros(0, np.int64), np.zeros(0, np.float64))
        rows, cols = pairs[:, 0], pairs[:, 1]
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if np.any(dup):
            if duplicates == "union":
                keep = np.concatenate([[True], ~dup])
                rows, cols = rows[keep], cols[keep]
            else:
                i = int(np.flatnonzero(dup)[0])
                raise ValidationError(f"duplicate edge pair ({rows[i]}, {cols[i]})")
        offsets = np.zeros(n_rows + 1, np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, cols, np.ones(cols.size, np.float64))

    @classmethod
    def from_dense(cls, arr) -> "SparseRowMatrix":
        """CSR view of a dense array, dropping exact zeros."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatch("from_dense expects a 2-D array")
        rows, cols = np.nonzero(arr)
        offsets = np.zeros(arr.shape[0] + 1, np.int64)
        np.cumsum(np.bincount(rows, minlength=arr.shape[0]), out=offsets[1:])
        return cls(arr.shape[0], arr.shape[1], offsets,
                   cols.astype(np.int64), arr[rows, cols])

    @classmethod
    def identity(cls, n: int) -> "SparseRowMatrix":
        return cls(n, n, np.arange(n + 1, dtype=np.int64),
                   np.arange(n, dtype=np.int64), np.ones(n, np.float64))

    # ------------------------------------------------------------------
    # inspection

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.col_indices.size)

    def row_counts(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def row_sums(self) -> np.ndarray:
        out = np.zeros(self.n_rows, np.float64)
        starts = self.row_offsets[:-1]
        nonempty = starts < self.row_offsets[1:]
        if self.nnz:
            out[nonempty] = np.add.reduceat(self.values, starts[nonempty])
        return out

    def empty_rows(self) -> np.ndarray:
        return np.flatnonzero(self.row_counts() == 0)

    def stochastic_stats(self) -> tuple[float, float]:
        """(max |row sum - 1| over nonempty rows, min value); memoized.

        Instances are immutable, so the one-pass scan is paid once per
        matrix no matter how many propagation calls revalidate it.
        """
        cached = getattr(self, "_stochastic_stats", None)
        if cached is None:
            sums = self.row_sums()
            nonempty = self.row_counts() > 0
            dev = float(np.abs(sums[nonempty] - 1.0).max()) if nonempty.any() else 0.0
            low = float(self.values.min()) if self.nnz else 0.0
            cached = (dev, low)
            object.__setattr__(self, "_stochastic_stats", cached)
        return cached

    def is_row_stochastic(self, tol: float = 1e-12) -> bool:
        """Non-negative with every nonempty row summing to 1 within tol."""
        dev, low = self.stochastic_stats()
        return low >= 0.0 and dev <= tol

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols), np.float64)
        rows = np.repeat(np.arange(self.n_rows), self.row_counts())
        out[rows, self.col_indices] = self.values
        return out

    # ------------------------------------------------------------------
    # algebra

    def row_normalize(self) -> "SparseRowMatrix":
        """Scale every nonempty row to sum 1; empty rows stay empty.

        Raises NegativeValue if any entry is negative.
        """
        if self.nnz and self.values.min() < 0:
            i = int(np.argmin(self.values))
            raise NegativeValue(f"negative entry {self.values[i]} at data index {i}")
        sums = self.row_sums()
        safe = np.where(sums > 0, sums, 1.0)
        scaled = self.values / np.repeat(safe, self.row_counts())
        return SparseRowMatrix(self.n_rows, self.n_cols, self.row_offsets,
                               self.col_indices, scaled)

    def transpose(self) -> "SparseRowMatrix":
        order = np.argsort(self.col_indices, kind="stable")
        rows = np.repeat(np.arange(self.n_rows, dtype=np.int64), self.row_counts())
        offsets = np.zeros(self.n_cols + 1, np.int64)
        np.cumsum(np.bincount(self.col_indices, minlength=self.n_cols), out=offsets[1:])
        return SparseRowMatrix(self.n_cols, self.n_rows, offsets,
                               rows[order], self.values[order])

    def matmul(self, other: "SparseRowMatrix") -> "SparseRowMatrix":
        """Sparse product self @ other, row by row (Gustavson style).

        For each output row the contributing entries are concatenated,
        stably sorted by column, and segment-summed, so the accumulation
        order is a pure function of the operands.
        """
        if self.n_cols != other.n_rows:
            raise ShapeMismatch(
                f"cannot multiply {self.shape} by {other.shape}")
        out_offsets = np.zeros(self.n_rows + 1, np.int64)
        out_cols: list[np.ndarray] = []
        out_vals: list[np.ndarray] = []
        b_off, b_cols, b_vals = other.row_offsets, other.col_indices, other.values
        for i in range(self.n_rows):
            s, e = self.row_offsets[i], self.row_offsets[i + 1]
            if s == e:
                out_offsets[i + 1] = out_offsets[i]
                continue
            ks = self.col_indices[s:e]
            a = self.values[s:e]
            starts, ends = b_off[ks], b_off[ks + 1]
            lens = ends - starts
            total = int(lens.sum())
            if total == 0:
                out_offsets[i + 1] = out_offsets[i]
                continue
            block = np.repeat(np.arange(ks.size), lens)
            within = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
            idx = starts[block] + within
            cat_cols = b_cols[idx]
            cat_vals = b_vals[idx] * a[block]
            order = np.argsort(cat_cols, kind="stable")
            sc, sv = cat_cols[order], cat_vals[order]
            group = np.empty(total, dtype=bool)
            group[0] = True
            group[1:] = sc[1:] != sc[:-1]
            grp_starts = np.flatnonzero(group)
            out_cols.append(sc[grp_starts])
            out_vals.append(np.add.reduceat(sv, grp_starts))
            out_offsets[i + 1] = out_offsets[i] + grp_starts.size
        cols = (np.concatenate(out_cols) if out_cols
                else np.zeros(0, np.int64))
        vals = (np.concatenate(out_vals) if out_vals
                else np.zeros(0, np.float64))
        return SparseRowMatrix(self.n_rows, other.n_cols, out_offsets, cols, vals)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_cols,):
            raise ShapeMismatch(f"matvec expects shape ({self.n_cols},), got {x.shape}")
        out = np.zeros(self.n_rows, np.float64)
        if self.nnz:
            prod = self.values * x[self.col_indices]
            starts = self.row_offsets[:-1]
            nonempty = starts < self.row_offsets[1:]
            out[nonempty] = np.add.reduceat(prod, starts[nonempty])
        return out

    def matmul_dense(self, x: np.ndarray) -> np.ndarray:
        """Product self @ x for a dense (n_cols, d) matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != self.n_cols:
            raise ShapeMismatch(
                f"matmul_dense expects shape ({self.n_cols}, d), got {x.shape}")
        out = np.zeros((self.n_rows, x.shape[1]), np.float64)
        if self.nnz:
            prod = self.values[:, None] * x[self.col_indices]
            starts = self.row_offsets[:-1]
            nonempty = starts < self.row_offsets[1:]
            out[nonempty] = np.add.reduceat(prod, starts[nonempty], axis=0)
        return out

    def with_unit_diagonal_on_empty_rows(self) -> "SparseRowMatrix":
        """Square matrices only: put a lone 1.0 at (i, i) for every empty row i."""
        if self.n_rows != self.n_cols:
            raise ShapeMismatch("self-loop repair requires a square matrix")
        empty = self.empty_rows()
        if empty.size == 0:
            return self
        rows = np.concatenate([
            np.repeat(np.arange(self.n_rows, dtype=np.int64), self.row_counts()),
            empty,
        ])
        cols = np.concatenate([self.col_indices, empty])
        vals = np.concatenate([self.values, np.ones(empty.size, np.float64)])
        order = np.lexsort((cols, rows))
        offsets = np.zeros(self.n_rows + 1, np.int64)
        np.cumsum(np.bincount(rows, minlength=self.n_rows), out=offsets[1:])
        return SparseRowMatrix(self.n_rows, self.n_cols, offsets,
                               cols[order], vals[order])


def row_normalize(m: SparseRowMatrix) -> SparseRowMatrix:
    """Functional alias for SparseRowMatrix.row_normalize."""
    return m.row_normalize()
