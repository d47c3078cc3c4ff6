"""Sparse/dense linear algebra kernels: shifted operators, direct solves,
and stabilized orthonormalization.

Sparse matrices are scipy CSR arrays in canonical form (sorted, deduplicated
indices); dense blocks are plain ndarrays.  Direct solves go through a cached
SuperLU factorization with a fill-reducing column ordering, so a single
factorization serves all repeated applications of an inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidIndex, ShapeError, SingularOperator
from .system import SecondOrderSystem

#: Relative residual-norm threshold below which a candidate column counts as
#: numerically dependent on the basis and is deflated.
DEFLATION_TOL = 1e-10

#: Pivot magnitudes below PIVOT_TOL * max|A| are treated as singular.
PIVOT_TOL = 1e-14


def from_triplets(entries, nrows: int, ncols: int) -> sp.csr_array:
    """Build a real CSR matrix from (row, col, value) triplets.

    Duplicate (row, col) pairs are summed.  The result is in canonical form:
    sorted column indices within each row, no duplicate entries.
    """
    if entries:
        rows, cols, vals = (np.asarray(x) for x in zip(*entries))
    else:
        rows = cols = np.empty(0, dtype=np.int64)
        vals = np.empty(0, dtype=np.float64)
    if len(rows) and (rows.min() < 0 or rows.max() >= nrows
                      or cols.min() < 0 or cols.max() >= ncols):
        raise InvalidIndex(f"triplet index outside {nrows}x{ncols}")
    mat = sp.csr_array(
        sp.coo_array((vals.astype(np.float64), (rows, cols)), shape=(nrows, ncols))
    )
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def shifted_stiffness(sys: SecondOrderSystem, s0: complex) -> sp.csr_array:
    """Shifted stiffness s0^2 M + s0 D + K.

    At s0 = i*k this is exactly the frequency-response operator
    -k^2 M + i k D + K.
    """
    _check_system_dims(sys)
    out = sp.csr_array((s0 * s0) * sys.M + s0 * sys.D + sys.K, dtype=np.complex128)
    out.sum_duplicates()
    out.sort_indices()
    return out


def shifted_damping(sys: SecondOrderSystem, s0: complex) -> sp.csr_array:
    """Shifted damping 2 s0 M + D."""
    _check_system_dims(sys)
    out = sp.csr_array((2.0 * s0) * sys.M + sys.D, dtype=np.complex128)
    out.sum_duplicates()
    out.sort_indices()
    return out


def _check_system_dims(sys: SecondOrderSystem):
    if not (sys.M.shape == sys.D.shape == sys.K.shape):
        raise ShapeError(
            f"M, D, K shapes differ: {sys.M.shape}, {sys.D.shape}, {sys.K.shape}"
        )


@dataclass(frozen=True, eq=False)
class Factorization:
    """Direct sparse factorization handle, reusable for many solves.

    Solves are read-only on the handle and may run concurrently from
    multiple threads.
    """

    n: int
    perm_r: np.ndarray
    perm_c: np.ndarray
    condition_estimate: float
    _lu: spla.SuperLU = field(repr=False)

    def solve(self, b: np.ndarray, trans: str = "N") -> np.ndarray:
        return self._lu.solve(np.asarray(b), trans=trans)


def factorize(A, pivot_tol: float = PIVOT_TOL) -> Factorization:
    """LU-factorize a sparse complex (or real) square matrix.

    Uses SuperLU with COLAMD column ordering.  Raises ``SingularOperator``
    when the matrix is structurally singular or a pivot falls below
    ``pivot_tol * max|A|``.
    """
    A = sp.csc_matrix(A)
    nr, nc = A.shape
    if nr != nc:
        raise ShapeError(f"cannot factorize non-square {nr}x{nc} matrix")
    scale = np.abs(A.data).max() if A.nnz else 0.0
    if scale == 0.0:
        raise SingularOperator("matrix has no nonzero entries")
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:  # SuperLU reports exact zero pivots this way
        raise SingularOperator(str(exc)) from exc
    pivots = np.abs(lu.U.diagonal())
    if pivots.size < nr or pivots.min() < pivot_tol * scale:
        raise SingularOperator(
            f"pivot {pivots.min() if pivots.size else 0.0:.3e} below "
            f"{pivot_tol:.0e} * max|A| = {pivot_tol * scale:.3e}"
        )
    cond = _condest(A, lu)
    return Factorization(n=nr, perm_r=lu.perm_r.copy(), perm_c=lu.perm_c.copy(),
                         condition_estimate=cond, _lu=lu)


def _condest(A: sp.csc_matrix, lu: spla.SuperLU) -> float:
    """1-norm condition estimate ||A||_1 * est(||A^-1||_1)."""
    if A.shape[0] == 1:
        return 1.0
    inv = spla.LinearOperator(
        A.shape, dtype=np.complex128,
        matvec=lambda b: lu.solve(b.astype(np.complex128)),
        rmatvec=lambda b: lu.solve(b.astype(np.complex128), trans="H"),
    )
    norm_a = spla.norm(sp.csr_array(A), 1)
    return float(norm_a * spla.onenormest(inv))


def solve_block(F: Factorization, B) -> np.ndarray:
    """Solve against every column of a dense right-hand-side block."""
    B = B.toarray() if sp.issparse(B) else np.asarray(B)
    if B.shape[0] != F.n:
        raise ShapeError(f"rhs has {B.shape[0]} rows, factorization is {F.n}")
    return F.solve(B)


def orthonormalize_against(basis, candidate: np.ndarray,
                           deflation_tol: float = DEFLATION_TOL):
    """Orthonormalize a column against a basis with orthonormal columns.

    Modified Gram-Schmidt plus one full re-orthogonalization pass ("twice is
    enough").  Returns the unit-norm orthogonal column, or ``None`` when the
    projected residual drops below ``deflation_tol`` times the candidate's
    original norm (deflation).  A zero candidate deflates.

    ``basis`` may be a ``ProjectionBasis`` or a 2-d ndarray of columns.
    """
    V = getattr(basis, "matrix", basis)
    x = np.array(candidate, copy=True)
    if V is not None and V.shape[1] > 0:
        if V.shape[0] != x.shape[0]:
            raise ShapeError(f"candidate length {x.shape[0]} != basis rows {V.shape[0]}")
        x = x.astype(np.result_type(V.dtype, x.dtype), copy=False)
    norm0 = np.linalg.norm(x)
    if norm0 == 0.0:
        return None
    if V is not None and V.shape[1] > 0:
        for _ in range(2):  # MGS sweep, then one re-orthogonalization pass
            for i in range(V.shape[1]):
                v = V[:, i]
                x -= (np.vdot(v, x)) * v
    nrm = np.linalg.norm(x)
    if nrm < deflation_tol * norm0:
        return None
    return x / nrm
