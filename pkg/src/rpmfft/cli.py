"""Experiment harness: ``python -m rpmfft <command> --config run.yaml``.

Commands
--------
solve            one solve, field dumps, report and convergence history
sweep-contrast   iterations vs contrast K for each solver, with log-log fits
sweep-reference  iterations vs reference modulus E_o for each solver
compare          several solvers on one problem, pairwise field differences

The config schema is documented in ``configs/README.md``. CSV files start
with a versioned comment line; summary lines (fits, ratios) are appended as
``#`` comments so the files stay readable with ``comment="#"``.

Exit status: 0 all converged, 2 config error, 3 some runs did not converge,
4 no run converged.
"""
from __future__ import annotations

import argparse
import copy
import csv
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import microstructure as ms
from .greens import ReferenceMedium
from .rpm import RPMConfig, rpm_solve_scheme
from .spectral_core import (
    CellProblem, FixedPointConfig, LoadCase, make_scheme, save_fields, solve_fixed_point,
)
from .tensor2d import ddot

log = logging.getLogger("rpmfft")

CSV_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_NONE = 0, 2, 3, 4

SCHEMES = ("classical", "polarization", "accelerated", "gradient_flow")
RPM_KEYS = {"n_max", "max_basis", "growth_ratio", "fd_step"}


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------

@dataclass
class SolverSpec:
    scheme: str
    rpm: bool = False
    params: dict = field(default_factory=dict)
    rpm_params: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if not self.label:
            self.label = ("rpm-" if self.rpm else "") + self.scheme


def parse_solver(entry):
    """``"accelerated"``, ``"rpm-classical"`` or a mapping with ``scheme`` and options."""
    if isinstance(entry, str):
        name = entry.strip().lower()
        rpm = name.startswith("rpm-")
        entry = {"scheme": name[4:] if rpm else name, "rpm": rpm}
    if not isinstance(entry, dict):
        raise ConfigError(f"solver entry must be a string or mapping, got {entry!r}")
    entry = dict(entry)
    scheme = str(entry.pop("scheme", "")).lower().replace("-", "_")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    rpm = entry.pop("rpm", False)
    rpm_params = {}
    if isinstance(rpm, dict):
        rpm_params, rpm = dict(rpm), True
    label = entry.pop("label", "")
    params = {}
    for key in ("alpha", "beta", "a"):
        if key in entry:
            params[key] = float(entry.pop(key))
    for key in list(entry):
        if key in RPM_KEYS:
            rpm_params[key] = entry.pop(key)
    if entry:
        raise ConfigError(f"unknown solver keys {sorted(entry)}")
    unknown = set(rpm_params) - RPM_KEYS - {"coordinates"}
    if unknown:
        raise ConfigError(f"unknown rpm keys {sorted(unknown)}")
    if rpm_params and not rpm:
        raise ConfigError("rpm options given for a solver without rpm")
    if scheme in ("polarization", "accelerated"):
        for key in ("alpha", "beta"):
            if not params.get(key, 2.0) > 0:
                raise ConfigError(f"{key} must be positive")
    if scheme == "gradient_flow" and not params.get("a", 0.1) > 0:
        raise ConfigError("gradient flow step a must be positive")
    return SolverSpec(scheme, bool(rpm), params, rpm_params, label)


def _phase(spec, name):
    if not isinstance(spec, dict) or "E" not in spec or "nu" not in spec:
        raise ConfigError(f"phase {name!r} needs E and nu")
    E, nu = float(spec["E"]), float(spec["nu"])
    if E < 0 or not -1 < nu < 0.5:
        raise ConfigError(f"phase {name!r}: need E >= 0 and -1 < nu < 0.5")
    return E, nu


GEOMETRY_PHASES = {
    "homogeneous": ("matrix",),
    "single_fiber": ("fiber", "matrix"),
    "two_fibers": ("fiber", "matrix"),
    "laminate": ("phase1", "phase2"),
    "phase_map": None,
}


def build_material(cfg, base_dir=Path(".")):
    g = cfg.get("grid", {})
    try:
        grid = ms.Grid2(int(g["nx"]), int(g["ny"]), float(g.get("lx", 1.0)), float(g.get("ly", 1.0)))
    except KeyError as exc:
        raise ConfigError(f"grid needs {exc.args[0]}") from None
    geo = dict(cfg.get("geometry", {}))
    kind = geo.pop("type", None)
    if kind not in GEOMETRY_PHASES:
        raise ConfigError(f"geometry type must be one of {sorted(GEOMETRY_PHASES)}, got {kind!r}")
    phases = cfg.get("phases", {})
    if kind == "phase_map":
        table = {int(k): _phase(v, k) for k, v in phases.items()}
        path = Path(geo.pop("path"))
        path = path if path.is_absolute() else base_dir / path
        material = ms.load_phase_map(path, table, grid.lx, grid.ly)
        if (material.grid.nx, material.grid.ny) != (grid.nx, grid.ny):
            raise ConfigError("phase map dimensions differ from the grid section")
        if geo:
            raise ConfigError(f"unknown geometry keys {sorted(geo)}")
        return material
    named = {n: _phase(phases.get(n), n) for n in GEOMETRY_PHASES[kind]}
    try:
        if kind == "homogeneous":
            return ms.homogeneous(grid, named["matrix"])
        if kind == "single_fiber":
            return ms.single_fiber(grid, float(geo.pop("radius_ratio")), named["fiber"], named["matrix"], **geo)
        if kind == "two_fibers":
            return ms.two_fibers(grid, float(geo.pop("radius")), float(geo.pop("separation")),
                                 named["fiber"], named["matrix"], **geo)
        return ms.laminate(grid, float(geo.pop("fraction")), named["phase1"], named["phase2"], **geo)
    except KeyError as exc:
        raise ConfigError(f"geometry {kind} needs {exc.args[0]}") from None
    except TypeError as exc:
        raise ConfigError(f"geometry {kind}: {exc}") from None


def reference_medium(cfg, material):
    """Reference medium from the ``reference`` section.

    ``rule``: ``average`` (mean of the extreme phase moduli), ``geometric``
    (their geometric mean) or ``explicit`` (``E``). ``factor`` scales the
    modulus; ``nu`` defaults to the matrix (or first) phase ratio.
    """
    ref = dict(cfg.get("reference", {}))
    rule = ref.pop("rule", "average")
    factor = float(ref.pop("factor", 1.0))
    nu = ref.pop("nu", None)
    E_explicit = ref.pop("E", None)
    if ref:
        raise ConfigError(f"unknown reference keys {sorted(ref)}")
    lo, hi = material.moduli_range()
    if rule == "average":
        E = 0.5 * (lo + hi)
    elif rule == "geometric":
        if lo <= 0:
            raise ConfigError("geometric reference needs all phase moduli positive")
        E = math.sqrt(lo * hi)
    elif rule == "explicit":
        if E_explicit is None:
            raise ConfigError("explicit reference needs E")
        E = float(E_explicit)
    else:
        raise ConfigError(f"unknown reference rule {rule!r}")
    if nu is None:
        nu = _default_nu(cfg)
    E *= factor
    if not E > 0 or not -1 < float(nu) < 0.5:
        raise ConfigError(f"reference medium must be positive definite (E={E}, nu={nu})")
    return ReferenceMedium.from_young(E, float(nu))


def _default_nu(cfg):
    phases = cfg.get("phases", {})
    for name in ("matrix", "phase2"):
        if name in phases:
            return float(phases[name]["nu"])
    return float(next(iter(phases.values()))["nu"])


def load_case(cfg):
    load = dict(cfg.get("load", {}))
    try:
        E = LoadCase.of(float(load.pop("E11", 0.0)), float(load.pop("E22", 0.0)), float(load.pop("E12", 0.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if load:
        raise ConfigError(f"unknown load keys {sorted(load)}")
    if not E.E.norm() > 0:
        raise ConfigError("load must be nonzero")
    return E


TOP_KEYS = {"name", "grid", "geometry", "phases", "load", "reference", "solvers", "solver",
            "tolerance", "max_iterations", "sweep", "output", "dump_csv"}


def validate(cfg, base_dir=Path("."), command=None):
    """Check everything a run needs; returns the parsed solver list."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "solver" in cfg and "solvers" in cfg:
        raise ConfigError("give either solver or solvers, not both")
    entries = cfg.get("solvers", [cfg["solver"]] if "solver" in cfg else None)
    if not entries:
        raise ConfigError("no solver given")
    solvers = [parse_solver(e) for e in entries]
    if not float(cfg.get("tolerance", 1e-4)) > 0:
        raise ConfigError("tolerance must be positive")
    if not int(cfg.get("max_iterations", 10_000)) > 0:
        raise ConfigError("max_iterations must be positive")
    try:
        material = build_material(cfg, base_dir)
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    load_case(cfg)
    reference_medium(cfg, material)
    sweep = cfg.get("sweep", {})
    if command == "sweep-contrast":
        ks = sweep.get("K")
        if not ks or any(not float(k) > 0 for k in ks):
            raise ConfigError("sweep.K must be a non-empty list of positive contrasts")
        phases = cfg.get("phases", {})
        for key, default in (("phase", "fiber"), ("base", "matrix")):
            if sweep.get(key, default) not in phases:
                raise ConfigError(f"sweep.{key} names an unknown phase")
    if command == "sweep-reference":
        values = sweep.get("Eo") or sweep.get("Eo_factors")
        if not values or any(not float(v) > 0 for v in values):
            raise ConfigError("sweep.Eo or sweep.Eo_factors must be a non-empty list of positive values")
    if command == "compare" and len(solvers) < 2:
        raise ConfigError("compare needs at least two solvers")
    if command == "solve" and len(solvers) != 1:
        raise ConfigError("solve takes exactly one solver")
    return solvers


def read_config(path):
    path = Path(path)
    try:
        cfg = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return cfg or {}


# --- running ---------------------------------------------------------------

def run_one(cfg, solver, base_dir=".", keep_fields=False):
    """Solve the configured problem with one solver; returns a plain dict."""
    base_dir = Path(base_dir)
    material = build_material(cfg, base_dir)
    medium = reference_medium(cfg, material)
    problem = CellProblem(material, medium, load_case(cfg))
    tol = float(cfg.get("tolerance", 1e-4))
    max_it = int(cfg.get("max_iterations", 10_000))
    row = {"solver": solver.label, "E_o": medium.young, "nu_o": medium.poisson}
    try:
        scheme = make_scheme(problem, solver.scheme, **solver.params)
        # diverging runs overflow before the residual turns non-finite
        with np.errstate(over="ignore", invalid="ignore"):
            if solver.rpm:
                params = dict(solver.rpm_params)
                coords = params.pop("coordinates", "auto")
                rcfg = RPMConfig(tolerance=tol, max_outer=max_it, **params)
                eps, rep = rpm_solve_scheme(scheme, rcfg, coordinates=coords)
            else:
                eps, rep = solve_fixed_point(scheme, FixedPointConfig(tolerance=tol, max_iterations=max_it))
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        log.warning("%s failed: %s", solver.label, exc)
        row.update(iterations=0, converged=False, final_residual=math.inf, basis_size=0,
                   operator_evaluations=0, elapsed_s=0.0, message=str(exc))
        return row
    with np.errstate(over="ignore", invalid="ignore"):
        sig = problem.stress(eps)
    row.update(
        iterations=rep.iterations,
        converged=rep.converged,
        final_residual=rep.final_residual,
        basis_size=rep.basis_size if solver.rpm else "",
        operator_evaluations=rep.operator_evaluations,
        elapsed_s=round(rep.elapsed, 4),
        S11=rep.effective_stress.e11,
        S22=rep.effective_stress.e22,
        S12=rep.effective_stress.e12,
        message=rep.message,
        history=list(rep.residual_history),
    )
    if keep_fields:
        row["fields"] = {"strain": eps, "stress": sig, "energy_density": 0.5 * ddot(eps, sig)}
        row["grid"] = material.grid
    return row


def _job(args):
    cfg, solver, base_dir = args
    return run_one(cfg, solver, base_dir)


def run_jobs(jobs, workers=1):
    """Run ``(cfg, solver, base_dir)`` jobs; results come back in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``; nan with fewer than two points."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def exit_status(rows):
    flags = [bool(r["converged"]) for r in rows]
    if all(flags):
        return EXIT_OK
    return EXIT_NONE if not any(flags) else EXIT_PARTIAL


class CsvOut:
    def __init__(self, path, kind, columns):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w", newline="")
        self.fh.write(f"# rpmfft {kind} csv v{CSV_VERSION}\n")
        self.writer = csv.DictWriter(self.fh, columns, extrasaction="ignore", lineterminator="\n")
        self.writer.writeheader()

    def row(self, r):
        self.writer.writerow({k: _fmt(v) for k, v in r.items()})

    def comment(self, text):
        self.fh.write(f"# {text}\n")

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return str(v).lower()
    return v


REPORT_COLUMNS = ["solver", "E_o", "nu_o", "iterations", "converged", "final_residual", "basis_size",
                  "operator_evaluations", "elapsed_s", "S11", "S22", "S12", "message"]


def _dump(out_dir, tag, row, cfg):
    meta = {"solver": row["solver"], "load": [cfg.get("load", {}).get(k, 0.0) for k in ("E11", "E22", "E12")],
            "converged": bool(row["converged"]), "iterations": row["iterations"]}
    save_fields(out_dir / f"fields_{tag}", row["grid"], row["fields"], meta, csv=bool(cfg.get("dump_csv")))


def _write_history(path, rows):
    with CsvOut(path, "history", ["solver", "iteration", "residual"]) as out:
        for r in rows:
            for i, e in enumerate(r.get("history", []), 1):
                out.row({"solver": r["solver"], "iteration": i, "residual": e})


def cmd_solve(cfg, out_dir, base_dir, workers=1):
    solver = validate(cfg, base_dir, "solve")[0]
    row = run_one(cfg, solver, base_dir, keep_fields=True)
    with CsvOut(out_dir / "report.csv", "report", REPORT_COLUMNS) as out:
        out.row(row)
    _write_history(out_dir / "history.csv", [row])
    if "fields" in row:
        _dump(out_dir, _slug(solver.label), row, cfg)
    _log_row(row)
    return exit_status([row])


def _sweep_phase_cfg(cfg, K):
    sweep = cfg.get("sweep", {})
    c = copy.deepcopy(cfg)
    phase, base = sweep.get("phase", "fiber"), sweep.get("base", "matrix")
    c["phases"][phase]["E"] = float(K) * float(c["phases"][base]["E"])
    return c


def cmd_sweep_contrast(cfg, out_dir, base_dir, workers=1):
    solvers = validate(cfg, base_dir, "sweep-contrast")
    ks = [float(k) for k in cfg["sweep"]["K"]]
    jobs = [(_sweep_phase_cfg(cfg, K), s, str(base_dir)) for K in ks for s in solvers]
    rows = run_jobs(jobs, workers)
    for (c, s, _), r, K in zip(jobs, rows, [K for K in ks for _ in solvers]):
        r["K"] = K
    with CsvOut(out_dir / "sweep_contrast.csv", "sweep-contrast", ["K"] + REPORT_COLUMNS) as out:
        for r in rows:
            out.row(r)
        for s in solvers:
            sel = [r for r in rows if r["solver"] == s.label and r["converged"]]
            slope = loglog_slope([r["K"] for r in sel], [r["iterations"] for r in sel])
            out.comment(f"fit solver={s.label} slope={slope:.4f} points={len(sel)}")
            log.info("%s: log-log slope %.3f over %d converged points", s.label, slope, len(sel))
    _write_history(out_dir / "history.csv", rows)
    return exit_status(rows)


def cmd_sweep_reference(cfg, out_dir, base_dir, workers=1):
    solvers = validate(cfg, base_dir, "sweep-reference")
    sweep = cfg["sweep"]
    if "Eo" in sweep:
        variants = [{"rule": "explicit", "E": float(e)} for e in sweep["Eo"]]
    else:
        rule = cfg.get("reference", {}).get("rule", "average")
        variants = [{"rule": rule, "factor": float(f)} for f in sweep["Eo_factors"]]
    jobs = []
    for v in variants:
        c = copy.deepcopy(cfg)
        ref = dict(c.get("reference", {}))
        ref.pop("factor", None)
        ref.update(v)
        c["reference"] = ref
        jobs.extend((c, s, str(base_dir)) for s in solvers)
    rows = run_jobs(jobs, workers)
    with CsvOut(out_dir / "sweep_reference.csv", "sweep-reference", REPORT_COLUMNS) as out:
        for r in rows:
            out.row(r)
        for s in solvers:
            its = [r["iterations"] for r in rows if r["solver"] == s.label]
            conv = all(r["converged"] for r in rows if r["solver"] == s.label)
            ratio = max(its) / min(its) if min(its) > 0 else math.inf
            out.comment(f"ratio solver={s.label} max_over_min={ratio:.4f} all_converged={str(conv).lower()}")
            log.info("%s: max/min iterations %.2f%s", s.label, ratio, "" if conv else " (some runs hit the cap)")
    _write_history(out_dir / "history.csv", rows)
    return exit_status(rows)


def cmd_compare(cfg, out_dir, base_dir, workers=1):
    solvers = validate(cfg, base_dir, "compare")
    rows = [run_one(cfg, s, base_dir, keep_fields=True) for s in solvers]
    with CsvOut(out_dir / "compare.csv", "compare", REPORT_COLUMNS) as out:
        for r in rows:
            out.row(r)
    with CsvOut(out_dir / "compare_pairs.csv", "compare-pairs",
                ["solver_a", "solver_b", "max_strain_difference", "relative"]) as out:
        for i, a in enumerate(rows):
            for b in rows[i + 1:]:
                if "fields" not in a or "fields" not in b:
                    continue
                ea, eb = a["fields"]["strain"], b["fields"]["strain"]
                diff = float(np.max(np.abs(ea - eb)))
                out.row({"solver_a": a["solver"], "solver_b": b["solver"], "max_strain_difference": diff,
                         "relative": diff / float(np.max(np.abs(ea)))})
    for i, r in enumerate(rows):
        if "fields" in r:
            _dump(out_dir, f"{i}_{_slug(r['solver'])}", r, cfg)
    _write_history(out_dir / "history.csv", rows)
    for r in rows:
        _log_row(r)
    return exit_status(rows)


def _slug(label):
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in label)


def _log_row(r):
    log.info("%s: %s after %d iterations (residual %.3e)", r["solver"],
             "converged" if r["converged"] else "NOT converged", r["iterations"], r["final_residual"])


COMMANDS = {
    "solve": cmd_solve,
    "sweep-contrast": cmd_sweep_contrast,
    "sweep-reference": cmd_sweep_reference,
    "compare": cmd_compare,
}


def build_parser():
    p = argparse.ArgumentParser(prog="rpmfft", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML experiment config")
        s.add_argument("--out", default=None, help="output directory (default: config 'output' or ./out)")
        s.add_argument("--workers", type=int, default=1, help="parallel sweep entries")
        s.add_argument("--tolerance", type=float, default=None, help="override the config tolerance")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        cfg = read_config(args.config)
        if args.tolerance is not None:
            cfg["tolerance"] = args.tolerance
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        base_dir = Path(args.config).resolve().parent
        out_dir = Path(args.out or cfg.get("output", "out"))
        validate(cfg, base_dir, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir.mkdir(parents=True, exist_ok=True)
    return COMMANDS[args.command](cfg, out_dir, base_dir, args.workers)


if __name__ == "__main__":
    sys.exit(main())
