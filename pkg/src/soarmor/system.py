"""Container for second-order dynamical systems (-k^2 M + i k D + K) p = B u."""

from __future__ import annotations

from dataclasses import dataclass, field

import scipy.sparse as sp

from .errors import ShapeError


@dataclass(frozen=True, eq=False)
class SecondOrderSystem:
    """Full-order model with sparse real system matrices.

    The frequency response at wave number ``k`` solves
    ``(-k^2 M + i k D + K) p = B u``, ``y = C p``.  All matrices are real;
    complex arithmetic enters only through the evaluation frequency and the
    input signal.  Instances are immutable and safe to share between threads.
    """

    M: sp.csr_array
    D: sp.csr_array
    K: sp.csr_array
    B: sp.csr_array
    C: sp.csr_array
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.M.shape[0]
        for name in ("M", "D", "K"):
            mat = getattr(self, name)
            if mat.shape != (n, n):
                raise ShapeError(f"{name} must be {n}x{n}, got {mat.shape}")
        if self.B.shape[0] != n:
            raise ShapeError(f"B must have {n} rows, got {self.B.shape}")
        if self.C.shape[1] != n:
            raise ShapeError(f"C must have {n} columns, got {self.C.shape}")

    @property
    def n(self) -> int:
        return self.M.shape[0]

    @property
    def p_in(self) -> int:
        return self.B.shape[1]

    @property
    def p_out(self) -> int:
        return self.C.shape[0]

    def transposed(self) -> "SecondOrderSystem":
        """System with transposed operators and swapped input/output maps.

        The input Krylov subspace of the transposed system is the output
        Krylov subspace of the original one.
        """
        return SecondOrderSystem(
            M=sp.csr_array(self.M.T),
            D=sp.csr_array(self.D.T),
            K=sp.csr_array(self.K.T),
            B=sp.csr_array(self.C.T),
            C=sp.csr_array(self.B.T),
            meta=dict(self.meta, transposed=True),
        )
