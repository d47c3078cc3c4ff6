"""Projection onto a basis, transfer-function evaluation, the moment oracle,
and the error/estimator quantities built from consecutive ROMs."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (DegenerateDenominator, ShapeError,
                     SingularReducedOperator)
from .linalg import factorize, shifted_damping, shifted_stiffness, solve_block
from .system import SecondOrderSystem

NORM_TWO = "two"
NORM_SUP = "sup"


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    """Dense projected system (-k^2 M + i k D + K acting on r coordinates)."""

    M: np.ndarray
    D: np.ndarray
    K: np.ndarray
    B: np.ndarray
    C: np.ndarray
    basis_hash: str = ""

    @property
    def r(self) -> int:
        return self.M.shape[0]

    @property
    def p_in(self) -> int:
        return self.B.shape[1]

    @property
    def p_out(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class TransferSample:
    """Transfer value at one wave number: a p_out x p_in complex block."""

    k: float
    value: np.ndarray
    source: str          # "fom" | "rom"
    order: int | None = None


@dataclass(frozen=True, eq=False)
class MomentSequence:
    """Leading moments about s0; entry l holds m_l = -(l-th Taylor coefficient)."""

    s0: complex
    blocks: list


@dataclass(frozen=True)
class ErrorSample:
    """True error and consecutive-ROM estimators at one wave number."""

    k: float
    norm: str
    E_true: float
    E_hat: float
    E_tilde: float
    abs_est: float
    abs_true: float
    norm_g: float
    norm_gr: float
    norm_gr1: float


def project(sys: SecondOrderSystem, basis) -> ReducedSystem:
    """One-sided projection M_r = V^H M V, B_r = V^H B, C_r = C V.

    ``basis`` is a ProjectionBasis or an (n, r) ndarray with orthonormal
    columns (the caller's obligation; not re-checked here).
    """
    V = np.asarray(getattr(basis, "matrix", basis))
    if V.ndim != 2 or V.shape[0] != sys.n:
        raise ShapeError(f"basis shape {V.shape} incompatible with n={sys.n}")
    Vh = V.conj().T
    h = hashlib.sha256()
    h.update(str(V.shape).encode())
    h.update(np.ascontiguousarray(V).tobytes())
    real_basis = not np.iscomplexobj(V)

    def congr(A):
        out = Vh @ (A @ V)
        return out.real.copy() if real_basis else out

    B_r = Vh @ sys.B.toarray()
    C_r = sys.C @ V
    if real_basis:
        B_r, C_r = B_r.real.copy(), C_r.real.copy()
    return ReducedSystem(M=congr(sys.M), D=congr(sys.D), K=congr(sys.K),
                         B=B_r, C=np.asarray(C_r), basis_hash=h.hexdigest())


def truncate(rom: ReducedSystem, r: int) -> ReducedSystem:
    """Leading r-dimensional ROM: the projection onto the first r basis columns."""
    if not 0 < r <= rom.r:
        raise ShapeError(f"cannot truncate order-{rom.r} ROM to r={r}")
    return ReducedSystem(M=rom.M[:r, :r], D=rom.D[:r, :r], K=rom.K[:r, :r],
                         B=rom.B[:r, :], C=rom.C[:, :r],
                         basis_hash=f"{rom.basis_hash}:r{r}")


def eval_fom(sys: SecondOrderSystem, k: float) -> TransferSample:
    """G(k) = C (-k^2 M + i k D + K)^{-1} B via one sparse direct solve."""
    if k <= 0:
        raise ValueError(f"wave number must be positive, got {k}")
    fact = factorize(shifted_stiffness(sys, 1j * k))
    sol = solve_block(fact, sys.B.toarray().astype(np.complex128))
    return TransferSample(k=float(k), value=np.asarray(sys.C @ sol), source="fom")


def eval_rom(rom: ReducedSystem, k: float) -> TransferSample:
    """G_r(k) from the dense reduced operator at wave number k."""
    if k <= 0:
        raise ValueError(f"wave number must be positive, got {k}")
    A = (-(k * k)) * rom.M + (1j * k) * rom.D + rom.K
    try:
        sol = np.linalg.solve(A, rom.B.astype(np.complex128))
    except np.linalg.LinAlgError as exc:
        raise SingularReducedOperator(f"reduced operator singular at k={k}") from exc
    value = rom.C @ sol
    if not np.isfinite(value).all():
        raise SingularReducedOperator(f"reduced operator degenerate at k={k}")
    return TransferSample(k=float(k), value=np.asarray(value), source="rom", order=rom.r)


def _moment_solver(system, s0: complex):
    """Pair (solve, operators) for the moment recurrence on a FOM or ROM."""
    if isinstance(system, SecondOrderSystem):
        fact = factorize(shifted_stiffness(system, s0))
        Dt = shifted_damping(system, s0)
        return (lambda rhs: fact.solve(rhs)), Dt, system.M, system.B.toarray(), system.C
    Kt = (s0 * s0) * system.M + s0 * system.D + system.K
    Dt = 2.0 * s0 * system.M + system.D
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lu = scipy.linalg.lu_factor(Kt.astype(np.complex128))
    if np.abs(np.diag(lu[0])).min() == 0.0 or not np.isfinite(lu[0]).all():
        raise SingularReducedOperator(f"reduced shifted stiffness singular at s0={s0}")
    return (lambda rhs: scipy.linalg.lu_solve(lu, rhs)), Dt, system.M, \
        system.B.astype(np.complex128), system.C


def moments(system, s0: complex, count: int) -> MomentSequence:
    """First ``count`` moments of a FOM or ROM about s0.

    Oracle recurrence on the solution blocks: X_0 = Kt^{-1} B,
    X_1 = -Kt^{-1} Dt X_0, X_l = -Kt^{-1} (Dt X_{l-1} + M X_{l-2}); the
    l-th Taylor coefficient of the transfer function is C X_l and the stored
    moment is its negative.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    solve, Dt, M, B, C = _moment_solver(system, s0)
    xs = [solve(B.astype(np.complex128))]
    for ell in range(1, count):
        rhs = Dt @ xs[-1]
        if ell >= 2:
            rhs = rhs + M @ xs[-2]
        xs.append(-solve(rhs))
    return MomentSequence(s0=s0, blocks=[-np.asarray(C @ x) for x in xs])


def block_norm(value: np.ndarray, norm: str = NORM_TWO) -> float:
    """Norm of a transfer block: vector 2-norm over entries, or max abs."""
    if norm == NORM_TWO:
        return float(np.linalg.norm(value))
    if norm == NORM_SUP:
        return float(np.abs(value).max())
    raise ValueError(f"unknown norm tag {norm!r}")


def error_sample(G_fom: TransferSample, G_r: TransferSample,
                 G_r1: TransferSample, norm: str = NORM_TWO) -> ErrorSample:
    """True relative error plus the consecutive-ROM estimators at one k.

    E_true = |G - G_r| / |G|, E_hat = |G_{r+1} - G_r| / |G_r|,
    E_tilde = |G_{r+1} - G_r| / |G_{r+1}|; the un-normalized difference
    |G_{r+1} - G_r| estimates the absolute error |G - G_r|.
    """
    ks = {G_fom.k, G_r.k, G_r1.k}
    if len(ks) != 1:
        raise ValueError(f"samples at different wave numbers: {sorted(ks)}")
    norm_g = block_norm(G_fom.value, norm)
    norm_gr = block_norm(G_r.value, norm)
    norm_gr1 = block_norm(G_r1.value, norm)
    if norm_g == 0.0 or norm_gr == 0.0 or norm_gr1 == 0.0:
        raise DegenerateDenominator(f"zero transfer norm at k={G_fom.k}")
    diff_est = block_norm(G_r1.value - G_r.value, norm)
    diff_true = block_norm(G_fom.value - G_r.value, norm)
    return ErrorSample(k=G_fom.k, norm=norm,
                       E_true=diff_true / norm_g,
                       E_hat=diff_est / norm_gr,
                       E_tilde=diff_est / norm_gr1,
                       abs_est=diff_est, abs_true=diff_true,
                       norm_g=norm_g, norm_gr=norm_gr, norm_gr1=norm_gr1)
