"""Batch front end: ``python -m bipotentials --config scenario.json --out dir``.

Three modes:

* ``audit``: axiom audits of ``b_e``, ``b'_p``, ``b_p`` and ``b_pk``;
* ``point``: strain-driven material point history;
* ``mesh``: load-stepped plane strain problem on a structured mesh.

Every run writes ``manifest.json`` and ``results.csv``; mesh runs also write
``trace.jsonl`` and audits one JSON report per bipotential. Exit codes:
0 success, 2 config error, 3 solver non-convergence, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import samplers
from .convex import ConvergenceError
from .core import DEFAULT_COUNTS, axiom_audit, report_to_json
from .discretization import Mesh, material_point_driver
from .materials import (DruckerPragerParams, ElasticModuli, stress_pair,
                        validate_drucker_prager)
from .solver import SolverConfig, SolverError, config_dict, run_evolution
from .tensors import SymTensor, mdot, mnorm
from .timestep import StepState, delta_b, shifted_plastic_bipotential

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INTERNAL = 0, 2, 3, 4
MODES = ("audit", "point", "mesh")
EDGES = ("left", "right", "bottom", "top")
FLOAT_FMT = "%.16e"
# tensor component labels, in SymTensor order
COMPONENTS = ("11", "22", "33", "12", "13", "23")


class ConfigError(ValueError):
    """Invalid scenario; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class ScenarioConfig:
    mode: str
    moduli: ElasticModuli
    params: DruckerPragerParams
    material: dict
    mesh: dict | None = None
    schedule: list = field(default_factory=list)
    strain_path: np.ndarray | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    audit: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"mode": self.mode, "seed": self.seed, "material": self.material,
               "solver": config_dict(self.solver),
               "schedule": [{"dt": dt, "boundary_scale": b, "load_scale": f}
                            for dt, b, f in self.schedule]}
        if self.mesh is not None:
            out["mesh"] = self.mesh
        if self.strain_path is not None:
            out["strain_path"] = self.strain_path.tolist()
        if self.audit:
            out["audit"] = self.audit
        return out


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _number(d, key, path, errors, default=None, integer=False):
    if key not in d:
        if default is None:
            errors.append(f"{path}.{key}: missing required field")
        return default
    v = d[key]
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if integer:
        ok = ok and float(v).is_integer()
    if not ok or not math.isfinite(v):
        kind = "integer" if integer else "finite number"
        errors.append(f"{path}.{key}: expected a {kind}, got {v!r}")
        return None
    return int(v) if integer else float(v)


# first word of a Drucker-Prager validation message -> config field
# desk-scale bound on structured meshes
MAX_CELLS = 16

_DP_FIELDS = {"cohesion": "c", "friction": "phi_deg", "dilatancy": "theta_deg",
              "k_d": "k_d"}


def _parse_material(d, errors):
    if not isinstance(d, dict):
        errors.append("material: missing or not an object")
        return None, None, {}
    vals = {k: _number(d, k, "material", errors)
            for k in ("lambda", "mu", "c", "phi_deg", "theta_deg", "k_d")}
    moduli = params = None
    if vals["lambda"] is not None and vals["mu"] is not None:
        try:
            moduli = ElasticModuli(vals["lambda"], vals["mu"])
        except ValueError as exc:
            field = "mu" if "mu must" in str(exc) else "lambda"
            errors.append(f"material.{field}: {exc}")
    # check what can be checked even when some fields are missing; the
    # placeholders satisfy their own constraints
    dp = {"c": 1.0, "phi_deg": 45.0, "theta_deg": 0.0, "k_d": 1.0}
    dp.update({k: vals[k] for k in dp if vals[k] is not None})
    if vals["theta_deg"] is None and vals["phi_deg"] is not None:
        dp["theta_deg"] = min(max(vals["phi_deg"], 0.0), 89.0) / 2.0
    if vals["phi_deg"] is None and vals["theta_deg"] is not None:
        dp["phi_deg"] = min(max(vals["theta_deg"], 1.0), 89.0)
    dp_errors = validate_drucker_prager(
        dp["c"], math.radians(dp["phi_deg"]), math.radians(dp["theta_deg"]),
        dp["k_d"])
    errors.extend(f"material.{_DP_FIELDS[e.split()[0]]}: {e} (Drucker-Prager "
                  "constraint)" for e in dp_errors)
    if not dp_errors and all(vals[k] is not None for k in dp):
        params = DruckerPragerParams.from_degrees(
            vals["c"], vals["phi_deg"], vals["theta_deg"], vals["k_d"])
    return moduli, params, vals


def _parse_vector(v, n, path, errors):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        errors.append(f"{path}: expected {n} numbers")
        return None
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        errors.append(f"{path}: expected {n} finite numbers")
        return None
    return arr


def _parse_mesh(d, errors):
    if not isinstance(d, dict):
        errors.append("mesh: missing or not an object (required in mesh mode)")
        return None
    out = {}
    for key in ("nx", "ny"):
        v = _number(d, key, "mesh", errors, integer=True)
        if v is not None and v < 1:
            errors.append(f"mesh.{key}: must be >= 1")
        elif v is not None and v > MAX_CELLS:
            errors.append(f"mesh.{key}: at most {MAX_CELLS} elements per direction")
        out[key] = v
    for key in ("lx", "ly"):
        v = _number(d, key, "mesh", errors, default=1.0)
        if v is not None and not v > 0:
            errors.append(f"mesh.{key}: must be > 0")
        out[key] = v
    out["dirichlet"] = []
    for i, item in enumerate(d.get("dirichlet", [])):
        p = f"mesh.dirichlet[{i}]"
        if not isinstance(item, dict):
            errors.append(f"{p}: expected an object")
            continue
        if item.get("edge") not in EDGES:
            errors.append(f"{p}.edge: expected one of {EDGES}")
        if item.get("component") not in ("x", "y"):
            errors.append(f"{p}.component: expected 'x' or 'y'")
        value = _number(item, "value", p, errors, default=0.0)
        out["dirichlet"].append({"edge": item.get("edge"),
                                 "component": item.get("component"),
                                 "value": value})
    if not out["dirichlet"]:
        errors.append("mesh.dirichlet: at least one constraint is required")
    out["tractions"] = []
    for i, item in enumerate(d.get("tractions", [])):
        p = f"mesh.tractions[{i}]"
        if not isinstance(item, dict):
            errors.append(f"{p}: expected an object")
            continue
        if item.get("edge") not in EDGES:
            errors.append(f"{p}.edge: expected one of {EDGES}")
        vec = _parse_vector(item.get("traction"), 2, f"{p}.traction", errors)
        out["tractions"].append({"edge": item.get("edge"),
                                 "traction": None if vec is None else vec.tolist()})
    bf = _parse_vector(d.get("body_force", [0.0, 0.0]), 2, "mesh.body_force", errors)
    out["body_force"] = None if bf is None else bf.tolist()
    return out


def _parse_schedule(items, errors):
    if not isinstance(items, list) or not items:
        errors.append("schedule: must be a nonempty list")
        return []
    out = []
    for i, item in enumerate(items):
        p = f"schedule[{i}]"
        if not isinstance(item, dict):
            errors.append(f"{p}: expected an object")
            continue
        dt = _number(item, "dt", p, errors)
        if dt is not None and not dt > 0:
            errors.append(f"{p}.dt: must be > 0")
        b = _number(item, "boundary_scale", p, errors, default=0.0)
        f = _number(item, "load_scale", p, errors, default=0.0)
        out.append((dt, b, f))
    return out


def _parse_strain_path(items, nsteps, errors):
    if not isinstance(items, list) or not items:
        errors.append("strain_path: must be a nonempty list (required in point mode)")
        return None
    rows = []
    for i, item in enumerate(items):
        v = _parse_vector(item, 6, f"strain_path[{i}]", errors)
        if v is not None:
            rows.append(SymTensor(v).mandel())
    if len(rows) != len(items):
        return None
    if nsteps and len(rows) != nsteps:
        errors.append(f"strain_path: expected one strain per schedule entry "
                      f"({nsteps}), got {len(rows)}")
    return np.array(rows)


def _parse_solver(d, errors):
    if d is None:
        return SolverConfig()
    if not isinstance(d, dict):
        errors.append("solver: expected an object")
        return None
    defaults = config_dict(SolverConfig())
    unknown = sorted(set(d) - set(defaults))
    errors.extend(f"solver.{k}: unknown field" for k in unknown)
    vals = dict(defaults)
    vals.update({k: v for k, v in d.items() if k in defaults})
    for k in ("max_outer", "max_inner", "weak_samples"):
        vals[k] = _number(vals, k, "solver", errors, integer=True)
    for k in ("outer_tol", "inner_tol"):
        vals[k] = _number(vals, k, "solver", errors)
    if any(v is None for v in vals.values()):
        return None
    tmp = object.__new__(SolverConfig)
    tmp.__dict__.update(vals)
    problems = SolverConfig.validate(tmp)
    errors.extend(f"solver: {e}" for e in problems)
    return None if problems else SolverConfig(**vals)


def parse_config(text: str, overrides: dict | None = None) -> ScenarioConfig:
    """Parse and validate a JSON scenario.

    Raises
    ------
    ConfigError
        With every violation found (syntax errors carry line and column).
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"parse error at line {exc.lineno}, column "
                           f"{exc.colno}: {exc.msg}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a JSON object"])
    raw = dict(raw)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "tol":
            raw["solver"] = dict(raw.get("solver") or {}, outer_tol=v)
        else:
            raw[k] = v
    errors = []
    mode = raw.get("mode")
    if mode not in MODES:
        errors.append(f"mode: expected one of {MODES}, got {mode!r}")
    seed = _number(raw, "seed", "config", errors, default=0, integer=True)
    if seed is not None and seed < 0:
        errors.append("config.seed: must be >= 0")
    moduli, params, material = _parse_material(raw.get("material"), errors)
    solver = _parse_solver(raw.get("solver"), errors)
    mesh, schedule, path = None, [], None
    if mode in ("point", "mesh"):
        schedule = _parse_schedule(raw.get("schedule"), errors)
    if mode == "point":
        path = _parse_strain_path(raw.get("strain_path"), len(schedule), errors)
    if mode == "mesh":
        n_before = len(errors)
        mesh = _parse_mesh(raw.get("mesh"), errors)
        if mesh is not None and len(errors) == n_before:
            try:
                build_mesh(mesh)
            except ValueError as exc:
                errors.append(f"mesh.dirichlet: {exc}")
    audit = raw.get("audit") or {}
    if mode == "audit":
        if not isinstance(audit, dict):
            errors.append("audit: expected an object")
            audit = {}
        counts = audit.get("counts", {})
        for k in counts:
            if k not in DEFAULT_COUNTS:
                errors.append(f"audit.counts.{k}: unknown field")
            elif _number(counts, k, "audit.counts", errors, integer=True) is not None \
                    and counts[k] < 1:
                errors.append(f"audit.counts.{k}: must be >= 1")
        inst = _number(audit, "shifted_instances", "audit", errors, default=3,
                       integer=True)
        if inst is not None and inst < 1:
            errors.append("audit.shifted_instances: must be >= 1")
    if errors:
        raise ConfigError(errors)
    return ScenarioConfig(mode, moduli, params, material, mesh, schedule, path,
                          solver, seed, audit if mode == "audit" else {})


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return FLOAT_FMT % float(v)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    return v


def _tensor_cols(prefix):
    return [f"{prefix}_{c}" for c in COMPONENTS]


def _tensor(v):
    return SymTensor.from_mandel(v).entries.tolist()


# ---------------------------------------------------------------------------
# Modes
# ---------------------------------------------------------------------------

_AUDIT_FILES = {"b_e": "b_e", "b'_p": "b_p_prime", "b_p": "b_p"}


def run_audit(cfg: ScenarioConfig, out: Path) -> tuple[int, dict]:
    rng = np.random.default_rng(cfg.seed)
    counts = dict(DEFAULT_COUNTS, **cfg.audit.get("counts", {}))
    jobs = [(samplers.elastic(cfg.moduli), samplers.elastic_sampler(cfg.moduli), {}),
            (samplers.plastic_prime(cfg.params), samplers.prime_sampler(cfg.params), {}),
            (samplers.plastic(cfg.params), samplers.plastic_sampler(cfg.params), {})]
    for _ in range(int(cfg.audit.get("shifted_instances", 3))):
        sig_k = samplers.random_admissible_stress(cfg.params, rng)[0]
        dt = float(10.0 ** rng.uniform(-3.0, 0.0))
        jobs.append((samplers.plastic_shifted(cfg.params, sig_k, dt),
                     samplers.shifted_sampler(cfg.params, sig_k, dt),
                     {"sig_k": sig_k.tolist(), "dt": dt}))
    rows, files, nshift = [], [], 0
    for b, sampler, extra in jobs:
        rep = axiom_audit(b, sampler, counts, rng)
        if b.name == "b_pk":
            nshift += 1
            name = f"b_pk_{nshift}"
        else:
            name = _AUDIT_FILES[b.name]
        rep["instance"] = extra
        fname = f"audit_{name}.json"
        (out / fname).write_text(report_to_json(rep) + "\n")
        files.append(fname)
        eq = rep["equivalence"]
        rows.append([name, rep["evaluations"], rep["inequality"]["violations"],
                     rep["convex_x"]["violations"], rep["convex_y"]["violations"],
                     eq["failures"], eq["converse_failures"],
                     rep["inequality"]["worst_margin"], int(rep["passed"])])
    header = ["bipotential", "evaluations", "inequality_violations",
              "convex_x_violations", "convex_y_violations",
              "equivalence_failures", "converse_failures",
              "worst_inequality_margin", "passed"]
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[0]] + [_fmt(v) for v in r[1:]])
    total = sum(r[2] + r[3] + r[4] + r[5] + r[6] for r in rows)
    return EXIT_OK, {"outputs": ["results.csv"] + files,
                     "total_violations": int(total)}


def _point_rows(cfg: ScenarioConfig, states):
    rows = []
    for k, st in enumerate(states):
        eps = st.eps_e[0] + st.eps_p[0]
        gaps = [0.0, 0.0, 0.0]
        if k > 0:
            prev = states[k - 1]
            deps = eps - (prev.eps_e[0] + prev.eps_p[0])
            dp = st.eps_p[0] - prev.eps_p[0]
            dsig = st.sig[0] - prev.sig[0]
            gaps[0] = float(0.5 * (mdot(st.eps_e[0], cfg.moduli.stiffness(st.eps_e[0]))
                                   + mdot(st.sig[0], cfg.moduli.compliance(st.sig[0])))
                            - mdot(st.eps_e[0], st.sig[0]))
            gaps[1] = float(shifted_plastic_bipotential(
                cfg.params, prev.sig[:1], st.dt, dp[None], dsig[None])[0]
                - mdot(dp, dsig))
            val, _ = delta_b(cfg.moduli, cfg.params, prev.sig[0], st.dt, deps, dsig)
            gaps[2] = val - float(mdot(deps, dsig))
        rows.append([k, st.t] + _tensor(eps) + _tensor(st.sig[0])
                    + _tensor(st.eps_p[0]) + gaps)
    return rows


def run_point(cfg: ScenarioConfig, out: Path) -> tuple[int, dict]:
    path = np.vstack([np.zeros((1, 6)), cfg.strain_path])
    dts = [dt for dt, _, _ in cfg.schedule]
    states = material_point_driver(path, cfg.moduli, cfg.params, dts)
    header = (["step", "time"] + _tensor_cols("eps") + _tensor_cols("sig")
              + _tensor_cols("eps_p")
              + ["gap_elastic", "gap_plastic", "gap_increment"])
    _write_csv(out / "results.csv", header, _point_rows(cfg, states))
    return EXIT_OK, {"outputs": ["results.csv"], "steps": len(states) - 1}


def build_mesh(spec: dict) -> Mesh:
    return Mesh.structured(
        spec["nx"], spec["ny"], spec["lx"], spec["ly"],
        dirichlet=[(d["edge"], d["component"], d["value"]) for d in spec["dirichlet"]],
        tractions=[(t["edge"], tuple(t["traction"])) for t in spec["tractions"]],
        body_force=tuple(spec["body_force"]))


MESH_HEADER = (["step", "time", "iterations", "ux_min", "ux_max", "uy_min",
                "uy_max"] + _tensor_cols("sig_mean")
               + ["sig_trace_min", "sig_trace_max", "sig_dev_norm_max",
                  "yield_margin_max", "pdisc_max", "weak_margin"])


def _mesh_row(cfg, disc, state, rec):
    u = state.u.reshape(-1, 2)
    sm, s = stress_pair(state.sig)
    margin = cfg.params.stress_cone.margin(sm, mnorm(s))
    weak = None if rec is None or rec.weak is None else rec.weak["worst_margin"]
    mean_sig = disc.weights @ state.sig / disc.area
    return ([0 if rec is None else rec.index, state.t,
             0 if rec is None else rec.iterations,
             u[:, 0].min(), u[:, 0].max(), u[:, 1].min(), u[:, 1].max()]
            + _tensor(mean_sig)
            + [float(np.min(sm)), float(np.max(sm)), float(np.max(mnorm(s))),
               float(np.max(margin)),
               0.0 if rec is None else rec.residuals["max"], weak])


def run_mesh(cfg: ScenarioConfig, out: Path) -> tuple[int, dict]:
    disc = build_mesh(cfg.mesh)
    state0 = StepState.zero(disc.ndof, disc.npts)
    rng = np.random.default_rng(cfg.seed)
    status, info = EXIT_OK, {}
    try:
        states, records = run_evolution(disc, cfg.moduli, cfg.params, state0,
                                        cfg.schedule, cfg.solver,
                                        check_weak=True, rng=rng)
    except SolverError as exc:
        states, records = exc.history or ([state0], [])
        status = EXIT_SOLVER
        info["error"] = str(exc)
        failed_trace = exc.trace.records if exc.trace is not None else []
    else:
        failed_trace = None
    rows = [_mesh_row(cfg, disc, states[0], None)]
    rows += [_mesh_row(cfg, disc, st, rec) for st, rec in zip(states[1:], records)]
    _write_csv(out / "results.csv", MESH_HEADER, rows)
    with open(out / "trace.jsonl", "w") as fh:
        for rec in records:
            for it in rec.trace:
                fh.write(json.dumps(_jsonable(dict(it, step=rec.index)),
                                    sort_keys=True) + "\n")
        if failed_trace:
            for it in failed_trace:
                fh.write(json.dumps(_jsonable(dict(it, step=len(records) + 1,
                                                   failed=True)),
                                    sort_keys=True) + "\n")
    info["outputs"] = ["results.csv", "trace.jsonl"]
    info["steps_completed"] = len(records)
    if records and records[-1].weak is not None:
        info["final_weak_margin"] = records[-1].weak["worst_margin"]
    return status, info


RUNNERS = {"audit": run_audit, "point": run_point, "mesh": run_mesh}


def run(cfg: ScenarioConfig, out_dir) -> int:
    """Execute a scenario, writing outputs and the manifest into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "mode": cfg.mode,
                "config": cfg.as_dict()}
    try:
        status, info = RUNNERS[cfg.mode](cfg, out)
    except (SolverError, ConvergenceError) as exc:
        status, info = EXIT_SOLVER, {"error": str(exc)}
    except Exception as exc:  # noqa: BLE001 - reported through the exit code
        status, info = EXIT_INTERNAL, {
            "error": f"{type(exc).__name__}: {exc}",
            "traceback": traceback.format_exc()}
    manifest.update(info)
    manifest["exit_code"] = status
    (out / "manifest.json").write_text(
        json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bipotentials",
        description="Run a bipotential audit, material point or mesh scenario.")
    ap.add_argument("--config", required=True, help="JSON scenario file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--mode", choices=MODES, help="override the scenario mode")
    ap.add_argument("--seed", type=int, help="override the sampling seed")
    ap.add_argument("--tol", type=float, help="override solver.outer_tol")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text, {"mode": args.mode, "seed": args.seed,
                                  "tol": args.tol})
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    status = run(cfg, args.out)
    if status != EXIT_OK:
        print(f"run finished with exit code {status}; see "
              f"{Path(args.out) / 'manifest.json'}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
