"""Command-line front end: reproducible runs driven by one INI-style config.

Subcommands: assemble | reduce | sweep | study | verify-order.  Every run
writes a manifest embedding the config hash, so identical configs produce
identical outputs.  Exit codes: 0 success, 1 I/O or config problem, 2 model
or solver error, 3 property failure (e.g. an order fit below its threshold).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys as _sys

import numpy as np

from . import fem, mmio, rom, soar, study
from .errors import ConfigError, EmptyResult, SoarmorError

_EXIT_OK = 0
_EXIT_CONFIG = 1
_EXIT_MODEL = 2
_EXIT_PROPERTY = 3

_DEFAULT_OFFSET_FRACTIONS = tuple(10.0 ** (-e) for e in (1.0, 1.5, 2.0, 2.5, 3.0))


def _floats(text):
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _norms(text):
    return tuple(tok for tok in text.replace(",", " ").split())


def _probes(text):
    if text.strip() == "default":
        return None
    pts = []
    for pair in text.split(";"):
        x, y = (float(tok) for tok in pair.replace(",", " ").split())
        pts.append((x, y))
    return fem.MeasurementSet(points=np.asarray(pts))


#: section -> key -> (parser, default).  Unknown sections or keys are rejected.
_SCHEMA = {
    "model": {
        "mesh_m": (int, 64),
        "neumann_x": (float, 0.0),
        "neumann_ymin": (float, 0.75),
        "neumann_ymax": (float, 1.0),
        "datum_scale": (float, 1.0),
        "probes": (_probes, None),
        "k_max": (float, 120.0),  # wave number used for the resolution warning
    },
    "expansion": {
        "wave_numbers": (_floats, (20.0, 60.0, 100.0)),
        "schedule": (str, soar.SCHEDULE_INTERLEAVED),
        "budgets": (_ints, None),
        "basis_mode": (str, soar.MODE_COMPLEX),
        "deflation_tol": (float, 1e-10),
        "subspace": (str, soar.SUBSPACE_INPUT),
    },
    "reduce": {
        "order": (int, 40),
    },
    "sweep": {
        "k_min": (float, 1.0),
        "k_max": (float, 120.0),
        "count": (int, 60),
        "rom_order": (int, 0),  # 0 -> no reduced sweep
        "include_fom": (_bool, True),
    },
    "study": {
        "k_min": (float, 1.0),
        "k_max": (float, 120.0),
        "count": (int, 60),
        "checkpoints": (_ints, (50, 100, 150, 200, 250, 300)),
        "norms": (_norms, (rom.NORM_TWO, rom.NORM_SUP)),
        "stop_window": (int, 3),
        "stop_tol": (float, 0.5),
        "stop_floor": (float, 1e-8),
        "stop_norm": (str, rom.NORM_SUP),
    },
    "verify": {
        "k0": (float, 20.0),
        "r_values": (_ints, (1, 2, 3)),
        "offset_fractions": (_floats, _DEFAULT_OFFSET_FRACTIONS),
        "norm": (str, rom.NORM_TWO),
        "slope_margin": (float, 0.5),
    },
    "run": {
        "out_dir": (str, "out"),
        "workers": (int, 0),  # 0 -> available parallelism
        "seed": (int, 0),     # only consumed by randomized property tests
        "verbosity": (int, 1),
    },
}


def load_config(path) -> dict:
    """Parse and validate the INI config; unknown keys are an error."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = {section: {key: default for key, (_, default) in keys.items()}
           for section, keys in _SCHEMA.items()}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            parse, _ = _SCHEMA[section][key]
            try:
                cfg[section][key] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc
    with open(path, "rb") as fh:
        cfg["_hash"] = hashlib.sha256(fh.read()).hexdigest()
    return cfg


def _boundary_spec(cfg) -> fem.BoundarySpec:
    m = cfg["model"]
    return fem.BoundarySpec(neumann_x=m["neumann_x"], neumann_ymin=m["neumann_ymin"],
                            neumann_ymax=m["neumann_ymax"], datum_scale=m["datum_scale"])


def _plan(cfg) -> soar.ExpansionPlan:
    e = cfg["expansion"]
    return soar.ExpansionPlan(wave_numbers=e["wave_numbers"], schedule=e["schedule"],
                              budgets=e["budgets"], basis_mode=e["basis_mode"],
                              deflation_tol=e["deflation_tol"], subspace=e["subspace"])


def _build_model(cfg):
    spec = _boundary_spec(cfg)
    mesh = fem.classify_boundary(fem.build_unit_square_mesh(cfg["model"]["mesh_m"]), spec)
    return mesh, fem.assemble(mesh, probes=cfg["model"]["probes"], spec=spec)


def _resolution_warning(sys_model, k_max: float) -> dict:
    ratio = fem.resolution_ratio(sys_model.meta["mesh_size"], k_max)
    return {"lambda_h_ratio": ratio, "k_max": k_max, "under_resolved": ratio < 10.0}


def _relativize(out_dir, value):
    if isinstance(value, str):
        return os.path.relpath(value, out_dir)
    if isinstance(value, (list, tuple)):
        return [_relativize(out_dir, v) for v in value]
    if isinstance(value, dict):
        return {k: _relativize(out_dir, v) for k, v in value.items()}
    return value


def _write_manifest(out_dir, command, cfg, payload) -> str:
    manifest = {"command": command, "config_hash": cfg["_hash"]}
    if "outputs" in payload:
        payload = dict(payload, outputs=_relativize(out_dir, payload["outputs"]))
    manifest.update(payload)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _log(cfg, *parts):
    if cfg["run"]["verbosity"] > 0:
        print(*parts)


def cmd_assemble(cfg) -> int:
    out_dir = cfg["run"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    mesh, model = _build_model(cfg)
    warn = _resolution_warning(model, cfg["model"]["k_max"])
    if warn["under_resolved"]:
        print(f"warning: lambda/h = {warn['lambda_h_ratio']:.2f} < 10 at "
              f"k = {warn['k_max']}; mesh under-resolves the shortest wavelength",
              file=_sys.stderr)
    outputs = {}
    for name in ("M", "D", "K", "B", "C"):
        path = os.path.join(out_dir, f"{name}.mtx")
        mmio.write_matrix_market(path, getattr(model, name))
        outputs[name] = path
    mesh_path = os.path.join(out_dir, "mesh.txt")
    fem.write_mesh_text(mesh, mesh_path)
    outputs["mesh"] = mesh_path
    _write_manifest(out_dir, "assemble", cfg, {
        "n": model.n, "p_in": model.p_in, "p_out": model.p_out,
        "nnz": {name: int(getattr(model, name).nnz) for name in ("M", "D", "K")},
        "mesh_hash": model.meta["mesh_hash"],
        "resolution": warn,
        "outputs": outputs,
    })
    _log(cfg, f"assembled n={model.n} system into {out_dir}")
    return _EXIT_OK


def _grow_basis(cfg, model, order: int) -> soar.SoarState:
    state = soar.init_state(model, _plan(cfg))
    soar.extend_to(state, order)
    return state


def cmd_reduce(cfg) -> int:
    out_dir = cfg["run"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _, model = _build_model(cfg)
    order = cfg["reduce"]["order"]
    state = _grow_basis(cfg, model, order)
    reduced = rom.project(model, state.basis)
    outputs = {}
    basis_path = os.path.join(out_dir, "basis.mtx")
    mmio.write_matrix_market(basis_path, state.basis.matrix)
    outputs["basis"] = basis_path
    prov_path = os.path.join(out_dir, "basis_provenance.csv")
    with open(prov_path, "w", newline="\n") as fh:
        fh.write("column,k0,krylov_index,part\n")
        for i, tag in enumerate(state.basis.tags):
            fh.write(f"{i},{tag.k0!r},{tag.krylov_index},{tag.part}\n")
    outputs["provenance"] = prov_path
    for name in ("M", "D", "K", "B", "C"):
        path = os.path.join(out_dir, f"rom_{name}.mtx")
        mmio.write_matrix_market(path, np.asarray(getattr(reduced, name)))
        outputs[f"rom_{name}"] = path
    _write_manifest(out_dir, "reduce", cfg, {
        "n": model.n, "order_requested": order, "order_achieved": state.ncols,
        "point_counts": state.point_counts(),
        "deflated": state.deflated,
        "basis_hash": state.basis.content_hash(),
        "outputs": outputs,
    })
    _log(cfg, f"reduced n={model.n} to r={state.ncols} into {out_dir}")
    return _EXIT_OK


def cmd_sweep(cfg) -> int:
    out_dir = cfg["run"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    sw = cfg["sweep"]
    if sw["count"] < 1:
        raise ConfigError("sweep needs a nonempty k grid (count >= 1)")
    if not 0.0 < sw["k_min"] <= sw["k_max"]:
        raise ConfigError(f"bad sweep bounds [{sw['k_min']}, {sw['k_max']}]")
    _, model = _build_model(cfg)
    warn = _resolution_warning(model, sw["k_max"])
    ks = np.linspace(sw["k_min"], sw["k_max"], sw["count"])
    sources = []
    if sw["include_fom"]:
        sources.append(("fom", None))
    reduced = None
    if sw["rom_order"] > 0:
        state = _grow_basis(cfg, model, sw["rom_order"])
        reduced = rom.project(model, state.basis)
        sources.append(("rom", reduced))
    if not sources:
        raise ConfigError("sweep has nothing to do: include_fom=false and rom_order=0")
    workers = cfg["run"]["workers"] or None
    path = os.path.join(out_dir, "transfer.csv")
    rows_written = 0
    with open(path, "w", newline="\n") as fh:
        fh.write("k,source,order,output_index,value_re,value_im,status\n")
        fom_cache = study._fom_sweep(model, ks, workers) if sw["include_fom"] else {}
        for k in ks:
            k = float(k)
            for label, reduced_sys in sources:
                if label == "fom":
                    sample, reason = fom_cache[k]
                    order = ""
                else:
                    order = reduced_sys.r
                    try:
                        sample, reason = rom.eval_rom(reduced_sys, k), ""
                    except SoarmorError as exc:
                        sample, reason = None, f"rom-singular: {exc}"
                if sample is None:
                    fh.write(f"{k!r},{label},{order},,,,{reason}\n")
                    continue
                for iout in range(sample.value.shape[0]):
                    v = complex(sample.value[iout, 0])
                    fh.write(f"{k!r},{label},{order},{iout},{v.real!r},{v.imag!r},ok\n")
                    rows_written += 1
    _write_manifest(out_dir, "sweep", cfg, {
        "n": model.n, "k_grid": [sw["k_min"], sw["k_max"], sw["count"]],
        "rows": rows_written, "resolution": warn,
        "outputs": {"transfer": path},
    })
    _log(cfg, f"swept {sw['count']} wave numbers into {path}")
    return _EXIT_OK


def _study_config(cfg) -> study.StudyConfig:
    st = cfg["study"]
    return study.StudyConfig(
        mesh_m=cfg["model"]["mesh_m"],
        boundary=_boundary_spec(cfg),
        probes=cfg["model"]["probes"],
        plan=_plan(cfg),
        k_min=st["k_min"], k_max=st["k_max"], k_count=st["count"],
        checkpoints=st["checkpoints"], norms=st["norms"],
        stop_window=st["stop_window"], stop_tol=st["stop_tol"],
        stop_floor=st["stop_floor"], stop_norm=st["stop_norm"],
        workers=cfg["run"]["workers"] or None,
    )


def cmd_study(cfg) -> int:
    out_dir = cfg["run"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    result = study.run_study(_study_config(cfg))
    if result.metadata["lambda_h_warning"]:
        print(f"warning: lambda/h = {result.metadata['lambda_h_ratio']:.2f} < 10 "
              f"at the top of the k grid", file=_sys.stderr)
    csv_path = study.emit_csv(result, os.path.join(out_dir, "study.csv"))
    stop_path = study.emit_stopping_csv(result, os.path.join(out_dir, "stopping.csv"))
    svg_paths = study.emit_svg(result, out_dir)
    stop = result.stopping
    _write_manifest(out_dir, "study", cfg, {
        "n": result.metadata["n"],
        "study_config_hash": result.metadata["config_hash"],
        "checkpoints_reached": result.metadata["checkpoints_reached"],
        "point_counts": result.metadata["point_counts"],
        "resolution": {"lambda_h_ratio": result.metadata["lambda_h_ratio"],
                       "under_resolved": result.metadata["lambda_h_warning"]},
        "stop_r": None if stop.stop_index is None else stop.rows[stop.stop_index].r,
        "underestimation_flags": result.metadata["underestimation_flags"],
        "outputs": {"table": csv_path, "stopping": stop_path, "plots": svg_paths},
    })
    _log(cfg, f"study over {len(result.metadata['checkpoints_reached'])} checkpoints "
              f"written to {out_dir}")
    return _EXIT_OK


def cmd_verify_order(cfg) -> int:
    out_dir = cfg["run"]["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _, model = _build_model(cfg)
    ver = cfg["verify"]
    k0 = ver["k0"]
    offsets = [frac * k0 for frac in ver["offset_fractions"]]
    fits = study.verify_order(model, 1j * k0, ver["r_values"], offsets, norm=ver["norm"])
    path = os.path.join(out_dir, "order_fits.csv")
    failures = []
    with open(path, "w", newline="\n") as fh:
        fh.write("r,estimator,slope,slope_required,residual,n_offsets\n")
        for fit in fits:
            required = fit.r + ver["slope_margin"]
            fh.write(f"{fit.r},{fit.estimator},{fit.slope!r},{required!r},"
                     f"{fit.residual!r},{len(fit.offsets)}\n")
            if fit.slope < required:
                failures.append((fit.r, fit.estimator, fit.slope, required))
    _write_manifest(out_dir, "verify-order", cfg, {
        "n": model.n, "k0": k0, "r_values": list(ver["r_values"]),
        "passed": not failures,
        "failures": [{"r": r, "estimator": e, "slope": s, "required": req}
                     for r, e, s, req in failures],
        "outputs": {"fits": path},
    })
    for r, estimator, slope, required in failures:
        print(f"order check failed: r={r} ({estimator}) slope {slope:.3f} "
              f"< required {required:.3f}", file=_sys.stderr)
    _log(cfg, f"order fits written to {path}")
    return _EXIT_PROPERTY if failures else _EXIT_OK


_COMMANDS = {
    "assemble": cmd_assemble,
    "reduce": cmd_reduce,
    "sweep": cmd_sweep,
    "study": cmd_study,
    "verify-order": cmd_verify_order,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="soarmor",
        description="Krylov model reduction of Helmholtz FEM systems "
                    "(lengths in m, wave numbers in 1/m)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--workers", type=int, default=None,
                       help="worker threads for k sweeps (default: all cores)")
        p.add_argument("--norm", choices=(rom.NORM_TWO, rom.NORM_SUP), default=None,
                       help="restrict error norms to one tag")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg["run"]["out_dir"] = args.out
        if args.workers is not None:
            cfg["run"]["workers"] = args.workers
        if args.norm is not None:
            cfg["study"]["norms"] = (args.norm,)
            cfg["study"]["stop_norm"] = args.norm
            cfg["verify"]["norm"] = args.norm
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return _EXIT_CONFIG
    try:
        return _COMMANDS[args.command](cfg)
    except (ConfigError, EmptyResult) as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return _EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=_sys.stderr)
        return _EXIT_CONFIG
    except (SoarmorError, ValueError) as exc:
        print(f"model error: {exc}", file=_sys.stderr)
        return _EXIT_MODEL


if __name__ == "__main__":
    raise SystemExit(main())
