"""Orthonormal bases of second-order Krylov subspaces about one or more
expansion points.

Each expansion point k0 drives its own second-order Arnoldi recurrence with
the shifted operators at s0 = i*k0; the shared projection basis accumulates
the resulting directions (orthonormalized globally) under an interleaved or
sequential schedule.  The per-point recurrence keeps its own orthonormal
vectors plus the auxiliary second-level vectors, which keeps fresh Krylov
directions entering at full precision even after hundreds of steps; the raw
two-term recurrence is exposed separately as a span oracle for testing.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import BasisFull, ShapeError, SingularOperator, SoarmorError
from .linalg import (DEFLATION_TOL, factorize, orthonormalize_against,
                     shifted_damping, shifted_stiffness, solve_block)
from .system import SecondOrderSystem

SCHEDULE_INTERLEAVED = "interleaved"
SCHEDULE_SEQUENTIAL = "sequential"
MODE_COMPLEX = "complex"
MODE_REAL_SPLIT = "real-split"
SUBSPACE_INPUT = "input"
SUBSPACE_OUTPUT = "output"

#: Consecutive all-deflated steps after which a point's recurrence is
#: considered exhausted (its Krylov space is saturated).
_EXHAUSTION_SPREE = 10


@dataclass(frozen=True)
class ExpansionPlan:
    """Where and how the basis grows.

    ``wave_numbers`` are the expansion points k0 (1/m, positive, distinct),
    defining s0 = i*k0.  ``budgets`` (sequential schedule only) give the
    number of scheduling slots spent at each point, in listed order; the
    interleaved schedule spends one slot per point per round.  In real-split
    mode every complex direction contributes its real and imaginary parts as
    separate candidate columns.
    """

    wave_numbers: tuple
    schedule: str = SCHEDULE_INTERLEAVED
    budgets: tuple | None = None
    basis_mode: str = MODE_COMPLEX
    deflation_tol: float = DEFLATION_TOL
    subspace: str = SUBSPACE_INPUT

    def __post_init__(self):
        object.__setattr__(self, "wave_numbers", tuple(float(k) for k in self.wave_numbers))
        if self.budgets is not None:
            object.__setattr__(self, "budgets", tuple(int(b) for b in self.budgets))
        ks = self.wave_numbers
        if not ks:
            raise ValueError("need at least one expansion wave number")
        if any(k <= 0 for k in ks):
            raise ValueError(f"expansion wave numbers must be positive, got {ks}")
        if len(set(ks)) != len(ks):
            raise ValueError(f"expansion wave numbers must be distinct, got {ks}")
        if self.schedule not in (SCHEDULE_INTERLEAVED, SCHEDULE_SEQUENTIAL):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == SCHEDULE_SEQUENTIAL:
            if self.budgets is None or len(self.budgets) != len(ks):
                raise ValueError("sequential schedule needs one budget per expansion point")
            if any(b < 0 for b in self.budgets):
                raise ValueError(f"budgets must be nonnegative, got {self.budgets}")
        if self.basis_mode not in (MODE_COMPLEX, MODE_REAL_SPLIT):
            raise ValueError(f"unknown basis mode {self.basis_mode!r}")
        if self.subspace not in (SUBSPACE_INPUT, SUBSPACE_OUTPUT):
            raise ValueError(f"unknown subspace {self.subspace!r}")


@dataclass(frozen=True)
class ColumnTag:
    """Provenance of one basis column."""

    k0: float
    krylov_index: int
    part: str  # "complex" | "re" | "im"


class ProjectionBasis:
    """Growing block of orthonormal columns with per-column provenance."""

    def __init__(self, n: int, dtype=np.complex128):
        self.n = int(n)
        self.dtype = np.dtype(dtype)
        self._rows = np.empty((16, self.n), dtype=self.dtype)
        self._ncols = 0
        self.tags: list[ColumnTag] = []

    @property
    def ncols(self) -> int:
        return self._ncols

    @property
    def matrix(self) -> np.ndarray:
        """The (n, ncols) column block; a view, do not mutate."""
        return self._rows[: self._ncols].T

    def append(self, column: np.ndarray, tag: ColumnTag):
        if column.shape != (self.n,):
            raise ShapeError(f"column of length {column.shape} != ({self.n},)")
        if self._ncols == self._rows.shape[0]:
            grown = np.empty((2 * self._ncols, self.n), dtype=self.dtype)
            grown[: self._ncols] = self._rows[: self._ncols]
            self._rows = grown
        self._rows[self._ncols] = column
        self._ncols += 1
        self.tags.append(tag)

    def orthonormality_residual(self) -> float:
        """max |V^H V - I|; 0.0 for an empty basis."""
        if self._ncols == 0:
            return 0.0
        R = self._rows[: self._ncols]
        gram = R @ R.conj().T
        gram -= np.eye(self._ncols)
        return float(np.abs(gram).max())

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.matrix.shape).encode())
        h.update(np.ascontiguousarray(self._rows[: self._ncols]).tobytes())
        return h.hexdigest()

    def column_counts(self) -> dict:
        """Columns per expansion wave number, in first-seen order."""
        counts: dict = {}
        for tag in self.tags:
            counts[tag.k0] = counts.get(tag.k0, 0) + 1
        return counts


class _SoarChain:
    """Second-order Arnoldi recurrence at a single expansion point.

    Maintains internally orthonormal direction vectors ``q`` and the
    auxiliary second-level vectors ``p`` of the linearized recurrence
    q_new ~ A1 q_j + A2 p_j with A1 = -Kt^{-1} Dt, A2 = -Kt^{-1} M.
    """

    def __init__(self, fact, Dt, M, start: np.ndarray, tol: float):
        self.fact = fact
        self.Dt = Dt
        self.M = M
        self.start = start.astype(np.complex128)
        self.tol = tol
        self.q: list[np.ndarray] = []
        self.p: list[np.ndarray] = []
        self.exhausted = False
        self._spree = 0

    @property
    def depth(self) -> int:
        return len(self.q)

    def advance(self):
        """Next internal direction (unit norm), the zero vector on a
        deflated step, or ``None`` once the recurrence is exhausted."""
        if self.exhausted:
            return None
        if not self.q:
            nrm = np.linalg.norm(self.start)
            if nrm == 0.0:
                self.exhausted = True
                return None
            q0 = self.start / nrm
            self.q.append(q0)
            self.p.append(np.zeros_like(q0))
            return q0
        j = len(self.q) - 1
        r = -self.fact.solve(self.Dt @ self.q[j] + self.M @ self.p[j])
        norm0 = np.linalg.norm(r)
        t = np.zeros(j + 1, dtype=np.complex128)
        for _ in range(2):  # MGS + one re-orthogonalization pass
            for i in range(j + 1):
                c = np.vdot(self.q[i], r)
                r -= c * self.q[i]
                t[i] += c
        beta = np.linalg.norm(r)
        deflated = norm0 == 0.0 or beta < self.tol * norm0
        if deflated:
            beta = 1.0  # keeps the auxiliary update well-defined
            q_new = np.zeros_like(r)
            self._spree += 1
            if self._spree >= _EXHAUSTION_SPREE:
                self.exhausted = True
        else:
            q_new = r / beta
            self._spree = 0
        acc = self.q[j].copy()
        for i in range(j + 1):
            acc -= t[i] * self.p[i]
        self.q.append(q_new)
        self.p.append(acc / beta)
        return q_new


class _RawChain:
    """Raw two-term block recurrence, used for block starting vectors
    (e.g. the output subspace with several probes).

    The trailing block pair is rescaled by a common factor each step, which
    preserves every later direction exactly while avoiding overflow.
    """

    def __init__(self, fact, Dt, M, start: np.ndarray, tol: float):
        self.fact = fact
        self.Dt = Dt
        self.M = M
        self.tol = tol
        self.block = np.atleast_2d(start.astype(np.complex128))
        if self.block.shape[0] == 1 and start.ndim == 1:
            self.block = self.block.T
        self.prev = np.zeros_like(self.block)
        self.block_index = 0
        self.col = 0
        self.exhausted = False

    @property
    def depth(self) -> int:
        return self.block_index + 1

    def advance(self):
        if self.exhausted:
            return None
        if self.col == self.block.shape[1]:
            nxt = -self.fact.solve(self.Dt @ self.block + self.M @ self.prev)
            self.prev, self.block = self.block, nxt
            scale = np.abs(nxt).max()
            if scale == 0.0:
                self.exhausted = True
                return None
            self.block = self.block / scale
            self.prev = self.prev / scale
            self.block_index += 1
            self.col = 0
        out = self.block[:, self.col].copy()
        self.col += 1
        nrm = np.linalg.norm(out)
        return out / nrm if nrm > 0 else out


class _PointState:
    def __init__(self, k0: float, chain):
        self.k0 = k0
        self.chain = chain
        self.slots = 0       # scheduling slots consumed
        self.candidates = 0  # candidate columns offered to the global basis
        self.deflated = 0    # candidates rejected as dependent

    def counts(self) -> dict:
        return {"k0": self.k0, "slots": self.slots, "candidates": self.candidates,
                "deflated": self.deflated, "columns": self.candidates - self.deflated}


class SoarState:
    """Basis construction state: one recurrence per expansion point plus the
    shared orthonormal projection basis.  Extension is single-threaded."""

    def __init__(self, sys: SecondOrderSystem, plan: ExpansionPlan):
        self.sys = sys
        self.plan = plan
        work = sys if plan.subspace == SUBSPACE_INPUT else sys.transposed()
        self._work = work
        dtype = np.complex128 if plan.basis_mode == MODE_COMPLEX else np.float64
        self.basis = ProjectionBasis(work.n, dtype=dtype)
        self.points: list[_PointState] = []
        for k0 in plan.wave_numbers:
            s0 = 1j * k0
            try:
                fact = factorize(shifted_stiffness(work, s0))
            except SingularOperator as exc:
                raise SingularOperator(
                    f"shifted stiffness singular at expansion point k0={k0}: {exc}"
                ) from exc
            Dt = shifted_damping(work, s0)
            start = -solve_block(fact, work.B.toarray())
            chain_cls = _SoarChain if work.p_in == 1 else _RawChain
            start_vec = start[:, 0] if work.p_in == 1 else start
            self.points.append(
                _PointState(k0, chain_cls(fact, Dt, work.M, start_vec, plan.deflation_tol))
            )
        self.slots = 0
        self.deflated = 0

    @property
    def ncols(self) -> int:
        return self.basis.ncols

    def point_counts(self) -> list:
        return [p.counts() for p in self.points]

    def _next_point(self) -> _PointState:
        if self.plan.schedule == SCHEDULE_INTERLEAVED:
            return self.points[self.slots % len(self.points)]
        for point, budget in zip(self.points, self.plan.budgets):
            if point.slots < budget:
                return point
        raise SoarmorError("sequential schedule exhausted: all budgets spent")


def init_state(sys: SecondOrderSystem, plan: ExpansionPlan) -> SoarState:
    """Factorize the shifted operators and form the starting block per point."""
    return SoarState(sys, plan)


def extend(state: SoarState, new_columns: int) -> SoarState:
    """Advance the schedule by ``new_columns`` slots, growing the basis in place.

    Each slot advances one expansion point's recurrence by one step and offers
    the resulting direction(s) to the shared basis; a deflated candidate
    consumes its slot without adding a column.  Raises ``BasisFull`` once the
    basis spans the whole state space.
    """
    for _ in range(int(new_columns)):
        if state.ncols >= state.basis.n:
            raise BasisFull(f"basis already has {state.ncols} = n columns")
        point = state._next_point()
        state.slots += 1
        point.slots += 1
        direction = point.chain.advance()
        if direction is None:
            point.candidates += 1
            point.deflated += 1
            state.deflated += 1
            continue
        index = point.chain.depth - 1
        if state.plan.basis_mode == MODE_COMPLEX:
            offers = [(direction, "complex")]
        else:
            offers = [(direction.real.copy(), "re"), (direction.imag.copy(), "im")]
        for cand, part in offers:
            point.candidates += 1
            if state.ncols >= state.basis.n:
                raise BasisFull(f"basis already has {state.ncols} = n columns")
            col = orthonormalize_against(state.basis, cand, state.plan.deflation_tol)
            if col is None:
                point.deflated += 1
                state.deflated += 1
            else:
                state.basis.append(col, ColumnTag(point.k0, index, part))
    return state


def extend_to(state: SoarState, target_columns: int, max_stall: int = 50) -> SoarState:
    """Consume slots until the basis has ``target_columns`` columns.

    Stops early (without error) if ``max_stall`` consecutive slots deflate,
    which signals that the planned subspaces are saturated.
    """
    stall = 0
    while state.ncols < min(target_columns, state.basis.n):
        before = state.ncols
        extend(state, 1)
        stall = stall + 1 if state.ncols == before else 0
        if stall >= max_stall:
            break
    return state


def raw_krylov_blocks(sys: SecondOrderSystem, s0: complex, count: int) -> list:
    """Unstabilized direction blocks P_0 .. P_{count-1} of the two-term
    recurrence; the span oracle for basis verification.

    P_0 = -Kt^{-1} B, P_1 = A1 P_0, P_i = A1 P_{i-1} + A2 P_{i-2}.  Only
    numerically meaningful for small counts; the raw blocks become linearly
    dependent in floating point as the recurrence's dominant directions
    take over.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if count > 10:
        raise ValueError(f"raw recurrence limited to 10 blocks, requested {count}")
    fact = factorize(shifted_stiffness(sys, s0))
    Dt = shifted_damping(sys, s0)
    blocks = [-solve_block(fact, sys.B.toarray())]
    for i in range(1, count):
        rhs = Dt @ blocks[-1]
        if i >= 2:
            rhs = rhs + sys.M @ blocks[-2]
        blocks.append(-fact.solve(rhs))
    return blocks
