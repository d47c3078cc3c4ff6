"""Matrix Market import/export for sparse matrices and dense blocks."""

from __future__ import annotations

import io
import os

import numpy as np
import scipy.io
import scipy.sparse as sp


def write_matrix_market(path, matrix, comment: str = ""):
    """Write a sparse matrix (coordinate format) or dense block (array format)."""
    if sp.issparse(matrix):
        matrix = sp.coo_array(matrix)
    else:
        matrix = np.asarray(matrix)
        if matrix.ndim == 1:
            matrix = matrix.reshape(-1, 1)
    scipy.io.mmwrite(os.fspath(path), matrix, comment=comment)


def read_matrix_market(path):
    """Read a Matrix Market file.

    Coordinate files come back as canonical CSR; array files as ndarrays.
    Symmetric/hermitian/skew storage is expanded to the full matrix.
    """
    out = scipy.io.mmread(os.fspath(path))
    if sp.issparse(out):
        out = sp.csr_array(out)
        out.sum_duplicates()
        out.sort_indices()
    return out


def matrix_market_bytes(matrix) -> bytes:
    """Serialize to Matrix Market in memory (deterministic byte stream)."""
    buf = io.BytesIO()
    if sp.issparse(matrix):
        matrix = sp.coo_array(matrix)
    scipy.io.mmwrite(buf, matrix)
    return buf.getvalue()
