"""Compressed sparse row matrices used by the graph kernels."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n_cols: int
    symmetric: bool = False

    def __post_init__(self):
        object.__setattr__(self, "indptr", np.ascontiguousarray(self.indptr, dtype=np.int64))
        object.__setattr__(self, "indices", np.ascontiguousarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "data", np.ascontiguousarray(self.data, dtype=np.float64))
        if self.indptr[-1] != len(self.indices) or len(self.indices) != len(self.data):
            raise ValueError("inconsistent CSR arrays")

    @property
    def n_rows(self):
        return len(self.indptr) - 1

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return len(self.indices)

    def row_ids(self):
        return self._rows

    def transpose_permutation(self):
        """Permutation ``perm`` such that ``data[perm]`` is the transpose's data."""
        return self._perm

    def transpose(self):
        if self.symmetric:
            return self
        return self._transposed

    @cached_property
    def _rows(self):
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.indptr))

    @cached_property
    def _perm(self):
        # sort by column, ties by row
        return np.lexsort((self._rows, self.indices))

    @cached_property
    def _transposed(self):
        perm = self._perm
        counts = np.bincount(self.indices, minlength=self.n_cols)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        return CsrMatrix(indptr, self._rows[perm], self.data[perm], self.n_rows)

    def to_dense(self):
        out = np.zeros(self.shape)
        np.add.at(out, (self.row_ids(), self.indices), self.data)
        return out

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n + 1), np.arange(n), np.ones(n), n, symmetric=True)
