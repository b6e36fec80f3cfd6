"""Alternating variational solver for one implicit step and time marching.

Each outer iteration of a step performs

* a global step: ``u <- argmin_v B(D(v), sig)`` over kinematically
  admissible ``v`` (homogeneous Dirichlet data), by damped Newton with
  consistent tangents;
* a local step: ``sig <- grad_eps Db_k(D(u), sig)`` at every quadrature
  point, optionally followed by the projection onto ``K_stress``.

All unknowns live in the homogenized setting of
:class:`~bipotentials.timestep.HomogenizedStep`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .convex import ConvergenceError, InfiniteValueError, project_arrays
from .discretization import Loads, Mesh, bifunctional, sa_residual
from .materials import DruckerPragerParams, ElasticModuli, nudge_mandel
from .tensors import IDENTITY6, mdev, mdot, mtrace
from .timestep import (HomogenizedStep, StepIncrement, StepState, homogenize,
                       pdisc_residual)

VARIANTS = ("plain", "projected")
INITS = ("elastic", "zero")


@dataclass
class SolverConfig:
    """Controls of the alternating algorithm."""

    variant: str = "projected"
    outer_tol: float = 1e-8
    max_outer: int = 200
    inner_tol: float = 1e-12
    max_inner: int = 50
    weak_samples: int = 1000
    init: str = "elastic"

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> list[str]:
        errors = []
        if self.variant not in VARIANTS:
            errors.append(f"variant must be one of {VARIANTS}")
        if self.init not in INITS:
            errors.append(f"init must be one of {INITS}")
        for name in ("outer_tol", "inner_tol"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be > 0")
        for name in ("max_outer", "max_inner", "weak_samples"):
            if not int(getattr(self, name)) >= 1:
                errors.append(f"{name} must be >= 1")
        return errors


@dataclass
class IterationTrace:
    """Per-iteration records of one step."""

    records: list = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    @property
    def last(self) -> dict:
        return self.records[-1]

    def column(self, key):
        return [r[key] for r in self.records]


class SolverError(RuntimeError):
    """A step did not converge; carries the trace and partial results."""

    def __init__(self, message, trace=None, history=None):
        super().__init__(message)
        self.trace = trace
        self.history = history


# ---------------------------------------------------------------------------
# Global and local steps
# ---------------------------------------------------------------------------

def _energy(disc: Mesh, ev, u, sig):
    return bifunctional(disc, ev.value, disc.strain(u), sig)


def global_step(disc: Mesh, evaluator, sig_field, u_init, tol: float = 1e-12,
                max_iter: int = 50):
    """Minimize ``v -> B(D(v), sig)`` over ``v`` vanishing on Dirichlet dofs.

    Damped Newton with the consistent tangent and Armijo backtracking; a
    steepest-descent step is used when the Newton direction is not a
    descent direction.

    Returns
    -------
    u : ndarray
    info : dict
        Iteration count, final relative gradient and energy.

    Raises
    ------
    InfiniteValueError
        If the stress field makes the point functions infinite.
    ConvergenceError
        If the gradient test is not met within ``max_iter`` iterations.
    """
    free = disc.free
    u = np.array(u_init, dtype=float)
    u[disc.dirichlet_mask] = 0.0
    eps = disc.strain(u)
    energy = bifunctional(disc, evaluator.value, eps, sig_field)
    if not math.isfinite(energy):
        raise InfiniteValueError("bifunctional is +inf for this stress field")
    rel = math.inf
    for it in range(max_iter + 1):
        stress = evaluator.grad(eps, sig_field)
        g = disc.internal_force(stress)
        scale = 1.0 + float(np.max(disc._force_scale(stress)[free], initial=0.0))
        gf = g[free]
        rel = float(np.max(np.abs(gf), initial=0.0)) / scale
        if rel <= tol:
            return u, {"iterations": it, "gradient": rel, "energy": energy}
        if it == max_iter:
            break
        K = disc.assemble(evaluator.tangent(eps, sig_field))
        Kff = K[free][:, free].tocsc()
        try:
            d = spla.spsolve(Kff, -gf)
            ok = np.all(np.isfinite(d)) and float(d @ gf) < 0.0
        except RuntimeError:
            ok = False
        if not ok:
            d = -gf / (float(np.max(Kff.diagonal())) + 1.0)
        slope = float(d @ gf)
        t = 1.0
        step = np.zeros(disc.ndof)
        for _ in range(60):
            step[free] = t * d
            trial = u + step
            eps_t = disc.strain(trial)
            e_t = bifunctional(disc, evaluator.value, eps_t, sig_field)
            if e_t <= energy + 1e-4 * t * slope:
                break
            # near the minimum the energy is flat to round-off; accept a
            # full Newton step that still reduces the gradient
            if t == 1.0 and ok and abs(e_t - energy) <= 1e-13 * (1.0 + abs(energy)):
                g_t = disc.internal_force(evaluator.grad(eps_t, sig_field))[free]
                if np.max(np.abs(g_t)) < np.max(np.abs(gf)):
                    break
            t *= 0.5
        else:
            raise ConvergenceError("line search failed in global step",
                                   residual=rel)
        u, eps, energy = trial, eps_t, e_t
    raise ConvergenceError("global step did not converge", residual=rel)


def local_step(disc: Mesh, evaluator, u_next, sig_field) -> np.ndarray:
    """``sig <- grad_eps b(D(u_next), sig)`` at every point."""
    return evaluator.grad(disc.strain(u_next), sig_field)


def project_stress(moduli: ElasticModuli, params: DruckerPragerParams, sig,
                   offset=None, shift=None):
    """Projection of ``offset + (sig + shift)`` onto ``K_stress`` in the
    compliance metric, returned as the corresponding value of ``sig``.

    The result is nudged by ulps so that ``offset + (result + shift)``
    passes the exact membership test as computed. Returns
    ``(sig_proj, n_projected)``.
    """
    sig = np.atleast_2d(np.asarray(sig, dtype=float))
    base = 0.0 if offset is None else np.atleast_2d(offset)
    sh = 0.0 if shift is None else np.atleast_2d(shift)
    full = base + (sig + sh)
    w_m, w_d = moduli.stress_metric()
    tr, dev = mtrace(full), mdev(full)
    m, d, region = project_arrays(params.stress_cone, tr, dev, w_m, w_d)
    moved = region != 0
    proj = np.where(moved[:, None], d + (m / 3.0)[:, None] * IDENTITY6, full)
    out = np.where(moved[:, None], (proj - base) - sh, sig)
    out = nudge_mandel(params.stress_cone, out, offset=base, shift=shift)
    return out, int(np.count_nonzero(moved))


def local_step_projected(disc: Mesh, hstep: HomogenizedStep, u_next, sig_field):
    """Local step followed by the projection onto ``K_stress``.

    Returns ``(sig_next, n_projected)``.
    """
    raw = local_step(disc, hstep, u_next, sig_field)
    ev = hstep.evaluator
    return project_stress(ev.moduli, ev.params, raw, offset=ev.sig_k,
                          shift=hstep.sig_bar)


# ---------------------------------------------------------------------------
# One step
# ---------------------------------------------------------------------------

def graph_gap(disc: Mesh, hstep: HomogenizedStep, u, sig) -> float:
    """Integrated sync ``int (b - <eps, sig>)`` relative to the elastic
    energy scale of the increment."""
    eps = disc.strain(u)
    vals = hstep.value(eps, sig) - mdot(eps, sig)
    if not np.all(np.isfinite(vals)):
        return math.inf
    ev = hstep.evaluator
    deps, dsig = eps + hstep.eps_bar, sig + hstep.sig_bar
    scale = disc.integrate(0.5 * mdot(deps, ev.moduli.stiffness(deps))
                           + 0.5 * mdot(ev.moduli.compliance(dsig), dsig))
    top = disc.integrate(np.maximum(vals, 0.0))
    if top == 0.0:
        return 0.0
    return top / scale if scale > 0 else math.inf


def _rel_change(new, old) -> float:
    top = float(np.max(np.abs(new - old), initial=0.0))
    if top == 0.0:
        return 0.0
    return top / max(float(np.max(np.abs(new), initial=0.0)),
                     float(np.max(np.abs(old), initial=0.0)))


def initial_stress(hstep: HomogenizedStep, init: str) -> np.ndarray:
    """Starting stress in homogenized form.

    ``"elastic"``: the elastic predictor ``sig_k + sig_bar`` projected into
    ``K_stress``; ``"zero"``: no stress increment.
    """
    ev = hstep.evaluator
    if init == "zero":
        return -hstep.sig_bar
    sig, _ = project_stress(ev.moduli, ev.params, np.zeros_like(hstep.sig_bar),
                            offset=ev.sig_k, shift=hstep.sig_bar)
    return sig


def solve_homogenized(disc: Mesh, hstep: HomogenizedStep, config: SolverConfig,
                      trace: IterationTrace | None = None, callback=None):
    """Run the alternating iteration on a homogenized step.

    ``callback(k, u, sig)``, if given, sees every iterate (homogenized
    unknowns, after the optional projection).

    Returns ``(u, sig, trace)`` in homogenized unknowns.
    """
    trace = IterationTrace() if trace is None else trace
    u = np.zeros(disc.ndof)
    sig = initial_stress(hstep, config.init)
    for k in range(1, config.max_outer + 1):
        try:
            u_new, info = global_step(disc, hstep, sig, u, config.inner_tol,
                                      config.max_inner)
        except (InfiniteValueError, ConvergenceError) as exc:
            trace.append(iteration=k, error=str(exc))
            raise SolverError(f"global step failed at iteration {k}: {exc}",
                              trace) from exc
        raw = local_step(disc, hstep, u_new, sig)
        sa = sa_residual(disc, raw, reference=hstep.evaluator.sig_k + hstep.sig_bar)
        nproj = 0
        sig_new = raw
        if config.variant == "projected":
            sig_new, nproj = project_stress(
                hstep.evaluator.moduli, hstep.evaluator.params, raw,
                offset=hstep.evaluator.sig_k, shift=hstep.sig_bar)
        feasible = bool(np.all(hstep.stress_feasible(sig_new)))
        energy = bifunctional(disc, hstep.value, disc.strain(u_new), sig)
        gap = graph_gap(disc, hstep, u_new, sig_new)
        du = _rel_change(u_new, u)
        dsig = _rel_change(sig_new + hstep.sig_bar, sig + hstep.sig_bar)
        trace.append(iteration=k, bifunctional=energy, graph_gap=gap,
                     sa_residual=sa, du=du, dsig=dsig, feasible=feasible,
                     projected=nproj, inner_iterations=info["iterations"])
        u, sig = u_new, sig_new
        if callback is not None:
            callback(k, u, sig)
        if not feasible:
            raise SolverError(
                f"stress iterate left K_stress at iteration {k}; the point "
                "functions are +inf there (use variant='projected')", trace)
        if max(gap, sa, du, dsig) <= config.outer_tol:
            return u, sig, trace
    raise SolverError(f"no convergence in {config.max_outer} outer iterations",
                      trace)


def solve_step(disc: Mesh, moduli: ElasticModuli, params: DruckerPragerParams,
               state: StepState, loads: Loads, dt: float,
               config: SolverConfig, callback=None):
    """Solve one implicit step.

    ``callback(k, hstep, u, sig)``, if given, sees every iterate together
    with the homogenized step it belongs to.

    Returns ``(increment, trace, hstep)``.

    Raises
    ------
    SolverError
        On non-convergence or on an infeasible iterate (plain variant).
    """
    hstep = homogenize(disc, moduli, params, state, loads, dt)
    relay = None
    if callback is not None:
        def relay(k, u, sig):
            callback(k, hstep, u, sig)
    u_h, sig_h, trace = solve_homogenized(disc, hstep, config, callback=relay)
    du, dsig = hstep.recover(u_h, sig_h)
    deps_e, deps_p = hstep.split(disc.strain(u_h), sig_h)
    return StepIncrement(du, deps_p, deps_e, dsig), trace, hstep


# ---------------------------------------------------------------------------
# Weak-solution check
# ---------------------------------------------------------------------------

def verify_weak(disc: Mesh, hstep: HomogenizedStep, u, sig, samples: int = 1000,
                rng: np.random.Generator | None = None) -> dict:
    """Check ``B(D(u), sig) <= B(eps, sig) - <eps, sig>_1`` on probe fields.

    Probes: random strain fields, per-point perturbations ``D(u) + t delta``
    and strains ``D(v)`` of random admissible displacements, in equal
    shares. Returns the worst margin (right minus left side) and its
    relative version ``margin / (1 + |B|)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    eps_u = disc.strain(u)
    lhs = bifunctional(disc, hstep.value, eps_u, sig)
    strain_scale = max(float(np.max(np.abs(eps_u + hstep.eps_bar))), 1e-12)
    kinds = ("random", "perturbed", "admissible")
    worst = {k: math.inf for k in kinds}
    for i in range(samples):
        kind = kinds[i % 3]
        amp = strain_scale * 10.0 ** rng.uniform(-3, 1)
        if kind == "random":
            eps = amp * rng.standard_normal(eps_u.shape)
            eps[:, [2, 4, 5]] = 0.0
        elif kind == "perturbed":
            delta = rng.standard_normal(eps_u.shape)
            eps = eps_u + amp * delta / np.max(np.abs(delta))
        else:
            v = rng.standard_normal(disc.ndof)
            v[disc.dirichlet_mask] = 0.0
            ev = disc.strain(v)
            eps = amp * ev / max(float(np.max(np.abs(ev))), 1e-300)
        rhs = bifunctional(disc, hstep.value, eps, sig) - disc.integrate(mdot(eps, sig))
        worst[kind] = min(worst[kind], rhs - lhs)
    margin = min(worst.values())
    return {"bifunctional": lhs, "worst_margin": margin,
            "relative_margin": margin / (1.0 + abs(lhs)),
            "by_kind": worst, "samples": samples}


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    """Outcome of one accepted step."""

    index: int
    time: float
    iterations: int
    residuals: dict
    trace: list
    weak: dict | None = None


def run_evolution(disc: Mesh, moduli: ElasticModuli,
                  params: DruckerPragerParams, state0: StepState, schedule,
                  config: SolverConfig, check_weak: bool = False,
                  rng: np.random.Generator | None = None, callback=None):
    """March through a load schedule.

    ``schedule`` is a sequence of ``(dt, boundary_scale, load_scale)`` where
    the scales are the load levels reached at the end of the step; each
    step applies the difference to the previous level.

    ``callback(step, k, hstep, u, sig)``, if given, sees every iterate of
    every step (``step`` counts from 1).

    Returns ``(states, records)``.

    Raises
    ------
    SolverError
        With ``history = (states, records)`` up to the failing step.
    """
    if len(schedule) == 0:
        raise ValueError("schedule must be nonempty")
    states, records = [state0], []
    level_b = level_f = 0.0
    for i, (dt, bscale, fscale) in enumerate(schedule):
        loads = disc.load_increment(bscale - level_b, fscale - level_f)
        state = states[-1]
        step_cb = None
        if callback is not None:
            def step_cb(k, h, u, sig, i=i):
                callback(i + 1, k, h, u, sig)
        try:
            inc, trace, hstep = solve_step(disc, moduli, params, state, loads,
                                           dt, config, step_cb)
        except SolverError as exc:
            exc.history = (states, records)
            raise
        res = pdisc_residual(moduli, params, state, inc, disc, loads, dt)
        weak = None
        if check_weak:
            u_h, sig_h = inc.du - hstep.u_bar, inc.dsig - hstep.sig_bar
            weak = verify_weak(disc, hstep, u_h, sig_h, config.weak_samples, rng)
        new = state.advanced(inc, dt)
        # carry eps_e = S^-1 sig exactly between steps; the additive split
        # then fixes eps_p from the total strain
        new.eps_e = moduli.compliance(new.sig)
        new.eps_p = disc.strain(new.u) - new.eps_e
        states.append(new)
        records.append(StepRecord(i + 1, new.t, len(trace), res, trace.records,
                                  weak))
        level_b, level_f = bscale, fscale
    return states, records


def config_dict(config: SolverConfig) -> dict:
    return asdict(config)
