"""Convergence studies over growing reduced models: error/estimator tables,
empirical order verification, the moving-average stopping rule, and the
CSV/SVG reporting that goes with them."""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fem, rom, soar
from .errors import (DegenerateDenominator, EmptyResult, InsufficientData,
                     SingularOperator, SingularReducedOperator)
from .system import SecondOrderSystem

CSV_HEADER = "r,k,norm,E_true,E_hat,E_tilde,abs_est,abs_true,skipped_reason"
STOP_CSV_HEADER = "r,sup_E_hat,smoothed,decision"

ERROR_FIELDS = ("E_true", "E_hat", "E_tilde", "abs_est", "abs_true")

#: Series drawn in the convergence plots, with display labels.
PLOT_SERIES = (
    ("E_true", "true relative error"),
    ("E_hat", "consecutive-ROM estimate"),
    ("E_tilde", "rescaled consecutive-ROM estimate"),
    ("abs_est", "absolute-error estimate"),
)


@dataclass(frozen=True)
class StudyConfig:
    """Everything a convergence study needs; all lengths in m, k in 1/m."""

    mesh_m: int = 64
    boundary: fem.BoundarySpec = field(default_factory=fem.BoundarySpec)
    probes: fem.MeasurementSet | None = None   # None -> built-in 13 points
    plan: soar.ExpansionPlan = field(
        default_factory=lambda: soar.ExpansionPlan((20.0, 60.0, 100.0)))
    k_min: float = 1.0
    k_max: float = 120.0
    k_count: int = 60
    checkpoints: tuple = (50, 100, 150, 200, 250, 300)
    norms: tuple = (rom.NORM_TWO, rom.NORM_SUP)
    stop_window: int = 3
    stop_tol: float = 0.5
    stop_floor: float = 1e-8
    stop_norm: str = rom.NORM_SUP
    workers: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "checkpoints", tuple(int(r) for r in self.checkpoints))
        object.__setattr__(self, "norms", tuple(self.norms))
        if not self.checkpoints:
            raise ValueError("need at least one checkpoint")
        if any(a >= b for a, b in zip(self.checkpoints, self.checkpoints[1:])):
            raise ValueError(f"checkpoints must be strictly increasing: {self.checkpoints}")
        if self.checkpoints[0] < 1:
            raise ValueError("checkpoints must be >= 1")
        if not (0.0 < self.k_min <= self.k_max):
            raise ValueError(f"bad k-grid bounds [{self.k_min}, {self.k_max}]")
        if self.k_count < 1:
            raise ValueError("k_count must be >= 1")
        if self.stop_norm not in self.norms:
            raise ValueError(f"stop_norm {self.stop_norm!r} not among norms {self.norms}")
        for norm in self.norms:
            rom.block_norm(np.zeros((1, 1)), norm)  # validates the tag

    def k_grid(self) -> np.ndarray:
        return np.linspace(self.k_min, self.k_max, self.k_count)

    def fingerprint(self) -> str:
        payload = {
            "mesh_m": self.mesh_m,
            "boundary": [self.boundary.neumann_x, self.boundary.neumann_ymin,
                         self.boundary.neumann_ymax, self.boundary.datum_scale],
            "probes": None if self.probes is None
            else np.asarray(self.probes.points).tolist(),
            "plan": [list(self.plan.wave_numbers), self.plan.schedule,
                     None if self.plan.budgets is None else list(self.plan.budgets),
                     self.plan.basis_mode, self.plan.deflation_tol, self.plan.subspace],
            "k": [self.k_min, self.k_max, self.k_count],
            "checkpoints": list(self.checkpoints),
            "norms": list(self.norms),
            "stop": [self.stop_window, self.stop_tol, self.stop_floor, self.stop_norm],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class StudyRow:
    r: int
    k: float
    norm: str
    sample: rom.ErrorSample | None = None
    skipped_reason: str = ""


@dataclass(frozen=True)
class StoppingTraceRow:
    index: int
    r: int
    raw: float
    smoothed: float
    decision: str  # "warmup" | "continue" | "stop"


@dataclass(frozen=True)
class StoppingOutcome:
    stop_index: int | None
    rows: tuple

    @property
    def stopped(self) -> bool:
        return self.stop_index is not None


@dataclass(frozen=True, eq=False)
class StudyResult:
    config: StudyConfig
    rows: tuple
    summary: dict          # (r, norm) -> {field: sup over k}
    stopping: StoppingOutcome | None
    metadata: dict


@dataclass(frozen=True, eq=False)
class OrderFit:
    """Log-log fit of an estimator discrepancy against the expansion offset."""

    r: int
    estimator: str         # "hat" | "tilde"
    offsets: tuple
    discrepancies: tuple
    slope: float
    residual: float


def build_model(cfg: StudyConfig) -> SecondOrderSystem:
    mesh = fem.classify_boundary(fem.build_unit_square_mesh(cfg.mesh_m), cfg.boundary)
    return fem.assemble(mesh, probes=cfg.probes, spec=cfg.boundary)


def _fom_sweep(sys: SecondOrderSystem, ks, workers):
    """Transfer samples per k, computed once and cached for all checkpoints."""
    def one(k):
        try:
            return rom.eval_fom(sys, float(k)), ""
        except SingularOperator as exc:
            return None, f"fom-singular: {exc}"

    if workers is not None and workers <= 1:
        results = [one(k) for k in ks]
    else:
        with ThreadPoolExecutor(max_workers=workers or os.cpu_count()) as pool:
            results = list(pool.map(one, ks))
    return {float(k): res for k, res in zip(ks, results)}


def run_study(cfg: StudyConfig) -> StudyResult:
    """Build the model once, grow the basis through the checkpoints, and
    tabulate true errors and consecutive-ROM estimators over the k-grid."""
    t0 = time.perf_counter()
    sys = build_model(cfg)
    ks = cfg.k_grid()
    ratio = fem.resolution_ratio(sys.meta["mesh_size"], float(ks.max()))
    fom_cache = _fom_sweep(sys, ks, cfg.workers)
    t_fom = time.perf_counter()

    state = soar.init_state(sys, cfg.plan)
    rows: list[StudyRow] = []
    summary: dict = {}
    orth_residuals: dict = {}
    reached: list[int] = []
    for r in cfg.checkpoints:
        soar.extend_to(state, r + 1)
        if state.ncols < r:
            break  # planned subspaces saturated; later checkpoints unreachable
        reached.append(r)
        orth_residuals[r] = state.basis.orthonormality_residual()
        # At saturation (ncols == r) the next ROM equals the current one and
        # the consecutive estimators are exactly zero.
        rom_r1 = rom.project(sys, state.basis.matrix[:, : min(state.ncols, r + 1)])
        rom_r = rom.truncate(rom_r1, r)
        for k in ks:
            k = float(k)
            fom_sample, fom_reason = fom_cache[k]
            if fom_sample is None:
                rows.extend(StudyRow(r, k, norm, None, fom_reason) for norm in cfg.norms)
                continue
            try:
                g_r = rom.eval_rom(rom_r, k)
                g_r1 = rom.eval_rom(rom_r1, k)
            except SingularReducedOperator as exc:
                rows.extend(StudyRow(r, k, norm, None, f"rom-singular: {exc}")
                            for norm in cfg.norms)
                continue
            for norm in cfg.norms:
                try:
                    sample = rom.error_sample(fom_sample, g_r, g_r1, norm)
                except DegenerateDenominator as exc:
                    rows.append(StudyRow(r, k, norm, None, f"degenerate: {exc}"))
                    continue
                rows.append(StudyRow(r, k, norm, sample))
        for norm in cfg.norms:
            valid = [row.sample for row in rows
                     if row.r == r and row.norm == norm and row.sample is not None]
            summary[(r, norm)] = {
                name: (max(getattr(s, name) for s in valid) if valid else math.nan)
                for name in ERROR_FIELDS
            }
    t_rom = time.perf_counter()

    trace = [summary[(r, cfg.stop_norm)]["E_hat"] for r in reached]
    stopping = stopping_decision(trace, cfg.stop_window, cfg.stop_tol,
                                 floor=cfg.stop_floor, labels=reached)
    metadata = {
        "config_hash": cfg.fingerprint(),
        "n": sys.n,
        "mesh_size": sys.meta["mesh_size"],
        "lambda_h_ratio": ratio,
        "lambda_h_warning": ratio < 10.0,
        "orth_residual": orth_residuals,
        "point_counts": state.point_counts(),
        "basis_hash": state.basis.content_hash(),
        "checkpoints_reached": reached,
        "underestimation_flags": _underestimation_flags(summary, reached, cfg.norms),
        "timings": {"fom_sweep": t_fom - t0, "reduction": t_rom - t_fom},
    }
    return StudyResult(config=cfg, rows=tuple(rows), summary=summary,
                       stopping=stopping, metadata=metadata)


def _underestimation_flags(summary, reached, norms):
    """Checkpoints where the absolute estimate collapsed below 1% of the
    absolute error (expected once the reduction has converged)."""
    flags = []
    for r in reached:
        for norm in norms:
            row = summary[(r, norm)]
            if row["abs_est"] < 1e-2 * row["abs_true"]:
                flags.append((r, norm))
    return flags


def stopping_decision(history, window: int, tol: float, floor: float = 1e-8,
                      labels=None) -> StoppingOutcome:
    """Moving-average plateau detection on a per-checkpoint estimator trace.

    Smooths the raw trace with a trailing mean of width ``window`` (shorter
    at the start of the trace).  The first decision falls at the first full
    window; the rule stops where the smoothed value has changed by less than
    ``tol`` relative to its value ``window`` checkpoints earlier, or where
    it increases while below the absolute ``floor``.  Either condition
    signals that the estimator has converged to its plateau; a trace still
    decaying geometrically keeps the relative change above ``tol``.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    history = [float(h) for h in history]
    labels = list(labels) if labels is not None else list(range(len(history)))
    smoothed = [sum(history[max(0, i - window + 1): i + 1]) / min(i + 1, window)
                for i in range(len(history))]
    rows = []
    stop_index = None
    for i, raw in enumerate(history):
        if i < window:
            decision = "warmup"
        else:
            base, cur = smoothed[i - window], smoothed[i]
            rel = abs(cur - base) / base if base > 0 else (0.0 if cur == base else math.inf)
            plateau = rel < tol or (cur > smoothed[i - 1] and cur < floor)
            decision = "stop" if plateau else "continue"
            if plateau and stop_index is None:
                stop_index = i
        rows.append(StoppingTraceRow(index=i, r=labels[i], raw=raw,
                                     smoothed=smoothed[i], decision=decision))
    return StoppingOutcome(stop_index=stop_index, rows=tuple(rows))


def verify_order(sys: SecondOrderSystem, s0: complex, r_values, offsets,
                 norm: str = rom.NORM_TWO, max_offset_fraction: float = 0.1):
    """Empirical convergence order of the estimator discrepancies.

    For each reduced order r, evaluates |E_r - E_hat_r| and |E_r - E_tilde_r|
    at s = i(k0 + offset) and fits the log-log slope against the offset.
    Returns one OrderFit per (r, estimator) pair.
    """
    offsets = [float(d) for d in offsets]
    if any(d <= 0 for d in offsets):
        raise ValueError(f"offsets must be positive: {offsets}")
    if any(b >= a for a, b in zip(offsets, offsets[1:])):
        raise ValueError(f"offsets must be strictly decreasing: {offsets}")
    if max(offsets) > max_offset_fraction * abs(s0) * (1 + 1e-12):
        raise ValueError(f"largest offset {max(offsets)} exceeds "
                         f"{max_offset_fraction} * |s0| = {max_offset_fraction * abs(s0)}")
    k0 = s0.imag
    if k0 <= 0 or abs(s0.real) > 1e-12 * abs(s0):
        raise ValueError(f"expansion point must lie on the positive imaginary axis, got {s0}")
    r_values = [int(r) for r in r_values]
    plan = soar.ExpansionPlan((k0,))
    state = soar.extend_to(soar.init_state(sys, plan), max(r_values) + 1)
    rom_full = rom.project(sys, state.basis.matrix)
    fits = []
    for r in r_values:
        rom_r = rom.truncate(rom_full, r)
        rom_r1 = rom.truncate(rom_full, r + 1)
        pts: dict = {"hat": [], "tilde": []}
        for delta in offsets:
            k = k0 + delta
            try:
                sample = rom.error_sample(rom.eval_fom(sys, k), rom.eval_rom(rom_r, k),
                                          rom.eval_rom(rom_r1, k), norm)
            except (DegenerateDenominator, SingularOperator, SingularReducedOperator):
                continue
            for kind, est in (("hat", sample.E_hat), ("tilde", sample.E_tilde)):
                d = abs(sample.E_true - est)
                if d > 0:
                    pts[kind].append((delta, d))
        for kind in ("hat", "tilde"):
            if len(pts[kind]) < 4:
                raise InsufficientData(
                    f"only {len(pts[kind])} usable offsets for r={r} ({kind})")
            deltas, ds = zip(*pts[kind])
            logx, logy = np.log10(deltas), np.log10(ds)
            slope, intercept = np.polyfit(logx, logy, 1)
            resid = float(np.sqrt(np.mean((logy - (slope * logx + intercept)) ** 2)))
            fits.append(OrderFit(r=r, estimator=kind, offsets=tuple(deltas),
                                 discrepancies=tuple(ds), slope=float(slope),
                                 residual=resid))
    return fits


def _fmt(x) -> str:
    """Shortest round-trip decimal for a float."""
    return repr(float(x))


def emit_csv(result: StudyResult, path, row_filter=None) -> str:
    """Write the error table; returns the path.  Skipped samples keep their
    row with the reason recorded and empty value columns."""
    rows = [row for row in result.rows if row_filter is None or row_filter(row)]
    if not rows:
        raise EmptyResult("no rows to emit")
    lines = [CSV_HEADER]
    for row in rows:
        if row.sample is None:
            body = ",,,,"
        else:
            s = row.sample
            body = ",".join(_fmt(getattr(s, name)) for name in ERROR_FIELDS)
        lines.append(f"{row.r},{_fmt(row.k)},{row.norm},{body},{row.skipped_reason}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return os.fspath(path)


def emit_stopping_csv(result: StudyResult, path) -> str:
    if result.stopping is None or not result.stopping.rows:
        raise EmptyResult("no stopping trace to emit")
    lines = [STOP_CSV_HEADER]
    for row in result.stopping.rows:
        lines.append(f"{row.r},{_fmt(row.raw)},{_fmt(row.smoothed)},{row.decision}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return os.fspath(path)


_SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e")


def emit_svg(result: StudyResult, out_dir) -> list:
    """One log-scale convergence plot per norm tag; deterministic output.

    Series appear as one polyline each; axes and ticks use line elements so
    the polyline count equals the series count.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for norm in result.config.norms:
        rs = [r for r in result.metadata["checkpoints_reached"]]
        if not rs:
            raise EmptyResult("no checkpoints to plot")
        series = {}
        for name, label in PLOT_SERIES:
            vals = [result.summary[(r, norm)][name] for r in rs]
            series[label] = [math.log10(max(v, 1e-300)) if v == v else None for v in vals]
        path = os.path.join(out_dir, f"study_{norm}.svg")
        _write_svg(path, rs, series,
                   title=f"Reduction error vs basis size ({norm}-norm, sup over k-grid)")
        paths.append(path)
    return paths


def _write_svg(path, xs, series, title):
    width, height = 720, 480
    ml, mr, mt, mb = 70, 200, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    all_vals = [v for vals in series.values() for v in vals if v is not None]
    lo = math.floor(min(all_vals)) if all_vals else -1
    hi = math.ceil(max(all_vals)) if all_vals else 1
    if hi == lo:
        hi += 1
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x1 += 1

    def px(x):
        return ml + pw * (x - x0) / (x1 - x0)

    def py(y):
        return mt + ph * (hi - y) / (hi - lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{ml}" y="24" font-family="sans-serif" font-size="15">{title}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for tick in range(lo, hi + 1):
        y = py(tick)
        out.append(f'<line x1="{ml - 4}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" font-family="sans-serif" '
                   f'font-size="11" text-anchor="end">1e{tick}</text>')
    for x in xs:
        xp = px(x)
        out.append(f'<line x1="{xp:.2f}" y1="{mt + ph}" x2="{xp:.2f}" y2="{mt + ph + 4}" '
                   f'stroke="black"/>')
        out.append(f'<text x="{xp:.2f}" y="{mt + ph + 18}" font-family="sans-serif" '
                   f'font-size="11" text-anchor="middle">{x}</text>')
    out.append(f'<text x="{ml + pw / 2:.2f}" y="{height - 12}" font-family="sans-serif" '
               f'font-size="12" text-anchor="middle">reduced order r</text>')
    for (label, vals), color in zip(series.items(), _SERIES_COLORS):
        pts = " ".join(f"{px(x):.2f},{py(v):.2f}" for x, v in zip(xs, vals) if v is not None)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{pts}"/>')
    for i, (label, _) in enumerate(series.items()):
        y = mt + 16 + 18 * i
        color = _SERIES_COLORS[i % len(_SERIES_COLORS)]
        out.append(f'<line x1="{ml + pw + 10}" y1="{y - 4}" x2="{ml + pw + 30}" y2="{y - 4}" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{ml + pw + 36}" y="{y}" font-family="sans-serif" '
                   f'font-size="11">{label}</text>')
    out.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
    return path
