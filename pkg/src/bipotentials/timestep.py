"""One implicit time step of the elastoplastic evolution.

The incremental law at a quadrature point is the inf-convolution

    Db_k(deps, dsig) = min_p  b_e(deps - p, dsig) + b_pk(p, dsig)

of the elastic bipotential with the shifted plastic bipotential
``b_pk(p, dsig) = dt b_p(p/dt, sig_k + dsig) - <p, sig_k>``. Because
``b_p`` is positively 1-homogeneous in its first argument, ``b_pk`` does
not depend on ``dt`` and the minimization over ``p`` is a weighted proximal
problem in ``(tr p, dev p)`` with weights ``(kappa, 2 mu)``. It is solved in
closed form: a soft threshold of the deviatoric norm followed by a weighted
projection onto the plastic strain cone.

Fields are stored as Mandel arrays of shape ``(npts, 6)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .convex import INF, InfiniteValueError
from .materials import (DruckerPragerParams, ElasticModuli, dp_bipotential,
                        elastic_bipotential, nudge_mandel, sig_in_k_stress)
from .tensors import DEV_PROJECTOR, IDENTITY6, as_mandel, mdev, mdot, mnorm, mtrace

# Relative margin kept between plastic strains and the cone boundary, so
# that p / dt passes the exact membership test for any dt.
_STRAIN_SLACK = 64.0 * np.finfo(float).eps

REGION_ELASTIC = 0      # p = 0 with a zero threshold region (q = 0, r = 0)
REGION_INTERIOR = 1     # p strictly inside the strain cone
REGION_VOLUMETRIC = 2   # dev p = 0, tr p > 0
REGION_BOUNDARY = 3     # p on the smooth part of the cone boundary
REGION_APEX = 4         # p = 0 reached through the projection


@dataclass
class StepState:
    """Fields at time ``t`` (start of a step)."""

    u: np.ndarray
    eps_p: np.ndarray
    eps_e: np.ndarray
    sig: np.ndarray
    t: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")

    @classmethod
    def zero(cls, ndof: int, npts: int, t: float = 0.0, dt: float = 1.0):
        z = np.zeros((npts, 6))
        return cls(np.zeros(ndof), z.copy(), z.copy(), z.copy(), t, dt)

    def elastic_consistency(self, moduli: ElasticModuli) -> float:
        """``max |eps_e - S^-1 sig|``, relative to the stress scale."""
        diff = self.eps_e - moduli.compliance(self.sig)
        scale = 1.0 + float(np.max(np.abs(moduli.compliance(self.sig)), initial=0.0))
        return float(np.max(np.abs(diff), initial=0.0)) / scale

    def advanced(self, inc: "StepIncrement", dt: float) -> "StepState":
        return StepState(self.u + inc.du, self.eps_p + inc.deps_p,
                         self.eps_e + inc.deps_e, self.sig + inc.dsig,
                         self.t + dt, dt)


@dataclass
class StepIncrement:
    """Unknown increments of one step."""

    du: np.ndarray
    deps_p: np.ndarray
    deps_e: np.ndarray
    dsig: np.ndarray

    @classmethod
    def zero(cls, ndof: int, npts: int):
        z = np.zeros((npts, 6))
        return cls(np.zeros(ndof), z.copy(), z.copy(), z.copy())


def shifted_plastic_bipotential(params: DruckerPragerParams, sig_k, dt,
                                deps_p, dsig):
    """``dt b_p(deps_p / dt, sig_k + dsig) - <deps_p, sig_k>``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    sk, p, ds = as_mandel(sig_k), as_mandel(deps_p), as_mandel(dsig)
    val = dt * dp_bipotential(params, p / dt, sk + ds) - mdot(p, sk)
    if np.ndim(val) == 0:
        return float(val)
    return val


@dataclass
class PlasticSplit:
    """Minimizing plastic increment and the data needed for its Jacobian."""

    p: np.ndarray
    region: np.ndarray
    n_hat: np.ndarray
    R: np.ndarray
    r: np.ndarray
    feasible: np.ndarray


class DeltaB:
    """Vectorized evaluator of ``Db_k`` at a set of points.

    Parameters
    ----------
    moduli, params : material data.
    sig_k : array, shape (npts, 6)
        Stresses at the start of the step.
    dt : float
        Step length; kept for the definition of ``b_pk`` (the value does not
        depend on it).
    """

    def __init__(self, moduli: ElasticModuli, params: DruckerPragerParams,
                 sig_k, dt: float = 1.0):
        if not dt > 0:
            raise ValueError("dt must be > 0")
        self.moduli = moduli
        self.params = params
        self.sig_k = np.atleast_2d(as_mandel(sig_k))
        self.dt = float(dt)
        self._S = moduli.stiffness_matrix()
        self._sk_tr = mtrace(self.sig_k)
        self._sk_dev = mdev(self.sig_k)

    # -- the minimizing split ----------------------------------------------
    def plastic_split(self, deps, dsig) -> PlasticSplit:
        deps = np.atleast_2d(as_mandel(deps))
        dsig = np.atleast_2d(as_mandel(dsig))
        kappa, two_mu = self.moduli.bulk, 2.0 * self.moduli.mu
        pr = self.params
        beta = pr.k_d * pr.tan_theta
        sig = self.sig_k + dsig
        feasible = sig_in_k_stress(pr, sig)
        Sig = mtrace(sig)
        lin_mean = pr.C1 - (2.0 / 3.0) * Sig - self._sk_tr / 3.0
        # outside K_stress the threshold would be negative; the value is +inf
        # there anyway, so clip to keep the split well defined
        a = np.maximum(pr.C2 * (Sig - pr.C1), 0.0)

        E = mtrace(deps)
        Dc = mdev(deps) + self._sk_dev / two_mu
        R = mnorm(Dc)
        n_hat = Dc / np.where(R > 0, R, 1.0)[:, None]
        Q = E - lin_mean / kappa
        Rp = R - a / two_mu

        den = kappa * beta * beta + two_mu
        r_b = (kappa * beta * Q + two_mu * Rp) / den
        thresh = Rp <= 0.0
        inside = ~thresh & (beta * Rp <= Q)
        apex = ~thresh & ~inside & (r_b <= 0.0)
        bdry = ~thresh & ~inside & ~apex

        q = np.where(thresh, np.maximum(Q, 0.0),
                     np.where(inside, Q, np.where(apex, 0.0, beta * r_b)))
        r = np.where(thresh | apex, 0.0, np.where(inside, Rp, r_b))
        region = np.select(
            [thresh & (Q <= 0), thresh, inside, bdry],
            [REGION_ELASTIC, REGION_VOLUMETRIC, REGION_INTERIOR, REGION_BOUNDARY],
            REGION_APEX)
        p = (q / 3.0)[:, None] * IDENTITY6 + r[:, None] * n_hat
        p = nudge_mandel(pr.strain_cone, p, slack=_STRAIN_SLACK)
        return PlasticSplit(p, region, n_hat, R, r, feasible)

    # -- value, gradient, tangent --------------------------------------------
    def value(self, deps, dsig) -> np.ndarray:
        deps = np.atleast_2d(as_mandel(deps))
        dsig = np.atleast_2d(as_mandel(dsig))
        sp = self.plastic_split(deps, dsig)
        return self._value_at(deps, dsig, sp.p)

    def _value_at(self, deps, dsig, p):
        val = (elastic_bipotential(self.moduli, deps - p, dsig)
               + shifted_plastic_bipotential(self.params, self.sig_k, self.dt,
                                             p, dsig))
        return np.atleast_1d(val)

    def evaluate(self, deps, dsig):
        """``(value, deps_e, deps_p)`` in one pass."""
        deps = np.atleast_2d(as_mandel(deps))
        dsig = np.atleast_2d(as_mandel(dsig))
        sp = self.plastic_split(deps, dsig)
        return self._value_at(deps, dsig, sp.p), deps - sp.p, sp.p

    def grad(self, deps, dsig) -> np.ndarray:
        """``S (deps - p*)``; raises where ``sig_k + dsig`` is outside K."""
        deps = np.atleast_2d(as_mandel(deps))
        sp = self.plastic_split(deps, dsig)
        bad = np.flatnonzero(~sp.feasible)
        if bad.size:
            raise InfiniteValueError(
                f"stress outside K_stress at points {bad[:10].tolist()}")
        return (deps - sp.p) @ self._S

    def tangent(self, deps, dsig) -> np.ndarray:
        """Consistent tangent ``d grad / d deps``, shape (npts, 6, 6)."""
        deps = np.atleast_2d(as_mandel(deps))
        sp = self.plastic_split(deps, dsig)
        kappa, two_mu = self.moduli.bulk, 2.0 * self.moduli.mu
        beta = self.params.k_d * self.params.tan_theta
        n = sp.n_hat
        nn = np.einsum("pi,pj->pij", n, n)
        mm = np.outer(IDENTITY6, IDENTITY6) / 3.0
        ratio = (sp.r / np.where(sp.R > 0, sp.R, 1.0))[:, None, None]
        curv = ratio * (DEV_PROJECTOR - nn)

        J = np.zeros((deps.shape[0], 6, 6))
        reg = sp.region
        J[reg == REGION_INTERIOR] = (mm + nn + curv)[reg == REGION_INTERIOR]
        J[reg == REGION_VOLUMETRIC] = mm
        b = reg == REGION_BOUNDARY
        if b.any():
            left = beta / 3.0 * IDENTITY6 + n[b]
            right = kappa * beta * IDENTITY6 + two_mu * n[b]
            den = kappa * beta * beta + two_mu
            J[b] = np.einsum("pi,pj->pij", left, right) / den + curv[b]
        return self._S - np.einsum("ij,pjk->pik", self._S, J)


def delta_b(moduli: ElasticModuli, params: DruckerPragerParams, sig_k, dt,
            deps, dsig):
    """Value of ``Db_k`` and the minimizing split ``(deps_e, deps_p)``."""
    single = np.ndim(as_mandel(deps)) == 1
    val, de, dp = DeltaB(moduli, params, sig_k, dt).evaluate(deps, dsig)
    if single:
        return float(val[0]), (de[0], dp[0])
    return val, (de, dp)


def delta_b_grad_eps(moduli: ElasticModuli, params: DruckerPragerParams,
                     sig_k, dt, deps, dsig):
    """Stress-valued gradient ``S (deps - deps_p*)`` of ``Db_k`` in ``deps``."""
    single = np.ndim(as_mandel(deps)) == 1
    g = DeltaB(moduli, params, sig_k, dt).grad(deps, dsig)
    return g[0] if single else g


# ---------------------------------------------------------------------------
# Per-point solve of the incremental law
# ---------------------------------------------------------------------------

def solve_point(moduli: ElasticModuli, params: DruckerPragerParams, sig_k,
                deps, dt: float = 1.0):
    """Stress increment for a prescribed strain increment at one point.

    Finds ``dsig`` with ``dsig = S (deps - p*(deps, dsig))``, i.e. the pair
    ``(deps - S^-1 dsig, dsig)`` lies on the graph of ``b_pk``. The plastic
    split depends on ``dsig`` only through ``Sigma = tr(sig_k + dsig)``, so
    the fixed point reduces to the scalar equation
    ``g(Sigma) = tr sig_k + 3 kappa (tr deps - tr p*(Sigma)) - Sigma = 0``,
    with ``g`` strictly decreasing.

    Returns ``(dsig, deps_p)`` as Mandel vectors.
    """
    sig_k = as_mandel(sig_k).reshape(6)
    deps = as_mandel(deps).reshape(6)
    ev = DeltaB(moduli, params, sig_k, dt)
    kappa = moduli.bulk
    sk_tr = float(mtrace(sig_k))
    E = float(mtrace(deps))

    def trial(Sig):
        # only the trace of dsig enters the split
        dsig = (Sig - sk_tr) / 3.0 * IDENTITY6
        return ev.plastic_split(deps, dsig).p[0]

    def g(Sig):
        return sk_tr + 3.0 * kappa * (E - float(mtrace(trial(Sig)))) - Sig

    C1 = params.C1
    g0 = g(C1)
    if g0 >= 0.0:
        # g(C1) <= 0 holds in exact arithmetic; a positive value is round-off
        Sig = C1
    else:
        # slope of g is <= -1, so the root lies in [C1 + g0, C1]; widen the
        # bracket only if round-off puts g(lo) a hair below zero
        lo, hi = C1 + g0, C1
        width = -g0
        while g(lo) < 0.0:
            width *= 2.0
            lo = C1 - width
        Sig = brentq(g, lo, hi, xtol=1e-15 * (1.0 + abs(lo)), rtol=1e-15,
                     maxiter=500)
    p = trial(Sig)
    dsig = (deps - p) @ moduli.stiffness_matrix()
    dsig = nudge_mandel(params.stress_cone, dsig, offset=sig_k)
    # the deviatoric part of p depends on the returned trace; refresh it
    p = ev.plastic_split(deps, dsig).p[0]
    return dsig, p


# ---------------------------------------------------------------------------
# Boundary-condition homogenization
# ---------------------------------------------------------------------------

@dataclass
class HomogenizedStep:
    """A step rewritten with homogeneous data.

    Unknowns ``du' = du - u_bar`` in CA(0) and ``dsig' = dsig - sig_bar`` in
    SA(0, 0). The shifted evaluator

        b'(eps', sig') = Db_k(eps' + eps_bar, sig' + sig_bar)
                         - <eps', sig_bar> - <eps_bar, sig'> - <eps_bar, sig_bar>

    has the same sync as ``Db_k`` and therefore the same graph.
    """

    evaluator: DeltaB
    u_bar: np.ndarray
    eps_bar: np.ndarray
    sig_bar: np.ndarray
    lift_residual: float = 0.0
    info: dict = field(default_factory=dict)

    def value(self, eps_h, sig_h):
        full = self.evaluator.value(eps_h + self.eps_bar, sig_h + self.sig_bar)
        return (full - mdot(eps_h, self.sig_bar) - mdot(self.eps_bar, sig_h)
                - mdot(self.eps_bar, self.sig_bar))

    def grad(self, eps_h, sig_h):
        return self.evaluator.grad(eps_h + self.eps_bar, sig_h + self.sig_bar) - self.sig_bar

    def tangent(self, eps_h, sig_h):
        return self.evaluator.tangent(eps_h + self.eps_bar, sig_h + self.sig_bar)

    def split(self, eps_h, sig_h):
        """Elastic and plastic increments of the original problem."""
        _, de, dp = self.evaluator.evaluate(eps_h + self.eps_bar, sig_h + self.sig_bar)
        return de, dp

    def recover(self, du_h, sig_h):
        """Map homogenized unknowns back: ``(du, dsig)``."""
        return du_h + self.u_bar, sig_h + self.sig_bar

    def stress_feasible(self, sig_h):
        # same summation order as the evaluator: sig_k + (sig_h + sig_bar)
        return sig_in_k_stress(self.evaluator.params,
                               self.evaluator.sig_k + (sig_h + self.sig_bar))


def homogenize(disc, moduli: ElasticModuli, params: DruckerPragerParams,
               state: StepState, loads, dt: float, u_bar=None, sig_bar=None,
               tol: float = 1e-8) -> HomogenizedStep:
    """Shift a step to homogeneous boundary data and loads.

    ``loads`` carries the prescribed Dirichlet increments and the external
    force increment (see :meth:`Mesh.load_increment`). Without explicit
    lifts, ``u_bar`` and ``sig_bar = S D(u_bar)`` come from a linear elastic
    solve with the same discretization, which makes ``sig_bar`` statically
    admissible and ``u_bar`` kinematically admissible.

    Raises
    ------
    ValueError
        If a supplied lift violates its admissibility class by more than
        ``tol`` (relative).
    """
    if u_bar is None:
        u_bar = disc.elastic_solve(moduli, loads)
    eps_bar = disc.strain(u_bar)
    if sig_bar is None:
        sig_bar = moduli.stiffness(eps_bar)
    kin = disc.dirichlet_residual(u_bar, loads.u_dirichlet)
    stat = disc.equilibrium_residual(sig_bar, loads.force)
    if kin > tol or stat > tol:
        raise ValueError(f"lift not admissible: kinematic {kin:.3e}, "
                         f"static {stat:.3e}")
    ev = DeltaB(moduli, params, state.sig, dt)
    return HomogenizedStep(ev, np.asarray(u_bar, float), eps_bar,
                           np.asarray(sig_bar, float), max(kin, stat),
                           {"kinematic": kin, "static": stat})


# ---------------------------------------------------------------------------
# Residuals of the discrete step problem
# ---------------------------------------------------------------------------

def pdisc_residual(moduli: ElasticModuli, params: DruckerPragerParams,
                   state: StepState, inc: StepIncrement, disc=None,
                   loads=None, dt: float | None = None) -> dict:
    """Residuals of the equations of one implicit step.

    * ``kinematic_split``: ``|deps_e + deps_p - D(du)|`` (needs ``disc``);
    * ``elastic_law``: ``|deps_e - S^-1 dsig|`` relative to the strain scale;
    * ``flow_gap``: max graph gap of ``b_pk`` at ``(deps_p, dsig)``;
    * ``equilibrium``: weak equilibrium of ``dsig`` with the load increment;
    * ``dirichlet``: prescribed displacement increment on the Dirichlet set.
    """
    dt = state.dt if dt is None else dt
    S_inv_ds = moduli.compliance(inc.dsig)
    strain_scale = 1.0 + float(np.max(np.abs(S_inv_ds), initial=0.0))
    gap = (shifted_plastic_bipotential(params, state.sig, dt, inc.deps_p, inc.dsig)
           - mdot(inc.deps_p, inc.dsig))
    gap = np.atleast_1d(gap)
    report = {
        "elastic_law": float(np.max(np.abs(inc.deps_e - S_inv_ds), initial=0.0))
        / strain_scale,
        "flow_gap": float(np.max(gap, initial=0.0)) if np.all(np.isfinite(gap))
        else INF,
        "flow_gap_min": float(np.min(gap, initial=0.0)),
    }
    if disc is not None:
        deps = disc.strain(inc.du)
        report["kinematic_split"] = float(np.max(
            np.abs(inc.deps_e + inc.deps_p - deps), initial=0.0)) / (
            1.0 + float(np.max(np.abs(deps), initial=0.0)))
        if loads is not None:
            report["equilibrium"] = disc.equilibrium_residual(inc.dsig, loads.force)
            report["dirichlet"] = disc.dirichlet_residual(inc.du, loads.u_dirichlet)
    report["max"] = max(v for k, v in report.items() if k != "flow_gap_min")
    return report
