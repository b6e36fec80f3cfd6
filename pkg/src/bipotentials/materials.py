"""Isotropic elasticity and the non-associated Drucker-Prager bipotential.

All kernels accept either package types (:class:`SymTensor`,
:class:`HydroDevPair`) and return floats, or Mandel arrays / ``(mean, dev)``
array tuples with arbitrary leading batch axes and return arrays.

Coordinates used for the plastic law (n = 3 throughout):

* stresses: ``(s_m, s) = (tr sig, dev sig)``;
* plastic strain rates: ``(e_m, e) = (tr eps, dev eps)``, i.e.
  ``eps = e_m/3 I + e``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .convex import INF, SecondOrderCone, nudge_inside, project_arrays
from .tensors import (IDENTITY6, HydroDevPair, SymTensor, as_mandel, mdev,
                      mdot, mnorm, mtrace)


@dataclass(frozen=True)
class ElasticModuli:
    """Lame constants of an isotropic elastic material (n = 3)."""

    lam: float
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("shear modulus mu must be > 0")
        if not 3.0 * self.lam + 2.0 * self.mu > 0:
            raise ValueError("3*lambda + 2*mu must be > 0")

    @classmethod
    def from_young(cls, young: float, poisson: float) -> "ElasticModuli":
        lam = young * poisson / ((1 + poisson) * (1 - 2 * poisson))
        return cls(lam, young / (2 * (1 + poisson)))

    @property
    def bulk(self) -> float:
        """Bulk modulus ``lambda + 2 mu / 3``."""
        return self.lam + 2.0 * self.mu / 3.0

    def stiffness(self, eps):
        """``S eps = lambda tr(eps) I + 2 mu eps``."""
        v = as_mandel(eps)
        out = self.lam * mtrace(v)[..., None] * IDENTITY6 + 2.0 * self.mu * v
        return SymTensor.from_mandel(out) if isinstance(eps, SymTensor) else out

    def compliance(self, sig):
        """``S^-1 sig``."""
        v = as_mandel(sig)
        k = self.lam / (3.0 * self.lam + 2.0 * self.mu)
        out = (v - k * mtrace(v)[..., None] * IDENTITY6) / (2.0 * self.mu)
        return SymTensor.from_mandel(out) if isinstance(sig, SymTensor) else out

    def stiffness_matrix(self) -> np.ndarray:
        """6x6 Mandel matrix of S."""
        return self.lam * np.outer(IDENTITY6, IDENTITY6) + 2.0 * self.mu * np.eye(6)

    def stress_metric(self):
        """Weights ``(w_m, w_d)`` of the compliance norm in ``(tr, dev)``
        stress coordinates: ``<S^-1 sig, sig> = w_m tr^2 + w_d |dev|^2``."""
        return 1.0 / (9.0 * self.bulk), 1.0 / (2.0 * self.mu)


@dataclass(frozen=True)
class DruckerPragerParams:
    """Cohesion, friction and dilatancy angles (radians) and cone constant."""

    c: float
    phi: float
    theta: float
    k_d: float

    def __post_init__(self):
        errors = validate_drucker_prager(self.c, self.phi, self.theta, self.k_d)
        if errors:
            raise ValueError("; ".join(errors))

    @classmethod
    def from_degrees(cls, c, phi_deg, theta_deg, k_d) -> "DruckerPragerParams":
        return cls(c, math.radians(phi_deg), math.radians(theta_deg), k_d)

    @property
    def tan_phi(self) -> float:
        return math.tan(self.phi)

    @property
    def tan_theta(self) -> float:
        return math.tan(self.theta)

    @property
    def C1(self) -> float:
        return self.c / self.tan_phi

    @property
    def C2(self) -> float:
        return self.k_d * (self.tan_theta - self.tan_phi)

    @property
    def stress_cone(self) -> SecondOrderCone:
        return SecondOrderCone.stress(1.0 / self.k_d, self.tan_phi, self.c)

    @property
    def strain_cone(self) -> SecondOrderCone:
        return SecondOrderCone.strain(self.k_d * self.tan_theta)

    def associated(self) -> "DruckerPragerParams":
        return DruckerPragerParams(self.c, self.phi, self.phi, self.k_d)


def validate_drucker_prager(c, phi, theta, k_d) -> list[str]:
    errors = []
    if not c > 0:
        errors.append("cohesion c must be > 0")
    if not 0 < phi < math.pi / 2:
        errors.append("friction angle must satisfy 0 < phi < 90 deg")
    if not 0 <= theta <= phi:
        errors.append("dilatancy angle must satisfy 0 <= theta <= phi")
    if not k_d > 0:
        errors.append("k_d must be > 0")
    return errors


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _as_pair(p):
    """(mean, dev-Mandel) arrays from a HydroDevPair or a tuple."""
    if isinstance(p, HydroDevPair):
        return p.mean, p.dev.mandel()
    mean, dev = p
    return np.asarray(mean, dtype=float), np.asarray(dev, dtype=float)


def _scalar(value, *inputs):
    if any(isinstance(x, (SymTensor, HydroDevPair)) for x in inputs):
        return float(value)
    return value


def stress_pair(sig):
    """``(tr sig, dev sig)`` arrays from Mandel stresses."""
    v = as_mandel(sig)
    return mtrace(v), mdev(v)


def rate_pair(eps):
    """``(tr eps, dev eps)`` arrays from Mandel strain rates."""
    v = as_mandel(eps)
    return mtrace(v), mdev(v)


# ---------------------------------------------------------------------------
# elasticity
# ---------------------------------------------------------------------------

def elastic_bipotential(moduli: ElasticModuli, eps_e, sig):
    """``1/2 <eps_e, S eps_e> + 1/2 <S^-1 sig, sig>``."""
    e, s = as_mandel(eps_e), as_mandel(sig)
    val = 0.5 * mdot(e, moduli.stiffness(e)) + 0.5 * mdot(moduli.compliance(s), s)
    return _scalar(val, eps_e, sig)


# ---------------------------------------------------------------------------
# Drucker-Prager cones and bipotentials
# ---------------------------------------------------------------------------

def k_stress_contains(params: DruckerPragerParams, stress):
    """``|s| / k_d + s_m tan(phi) <= c`` (exact)."""
    sm, s = _as_pair(stress)
    out = params.stress_cone.contains(sm, mnorm(s))
    return bool(out) if isinstance(stress, HydroDevPair) else out


def k_strain_contains(params: DruckerPragerParams, rate):
    """``k_d tan(theta) |e| <= e_m`` (exact)."""
    em, e = _as_pair(rate)
    out = params.strain_cone.contains(em, mnorm(e))
    return bool(out) if isinstance(rate, HydroDevPair) else out


def sig_in_k_stress(params: DruckerPragerParams, sig) -> np.ndarray:
    """Exact K_stress membership of Mandel stresses."""
    sm, s = stress_pair(sig)
    return params.stress_cone.contains(sm, mnorm(s))


def dp_bipotential_prime(params: DruckerPragerParams, strain_rate, stress,
                         c2: float | None = None):
    """Bipotential in ``((e_m, e), (s_m, s))`` coordinates.

    ``C1 e_m + C2 (s_m - c / tan phi) |e|`` on ``K'_strain x K'_stress``,
    ``+inf`` elsewhere. ``c2`` overrides ``C2`` (used to exercise the
    auditor with a wrong sign).
    """
    em, e = _as_pair(strain_rate)
    sm, s = _as_pair(stress)
    C2 = params.C2 if c2 is None else c2
    r = mnorm(e)
    val = params.C1 * em + C2 * (sm - params.C1) * r
    ok = params.strain_cone.contains(em, r) & params.stress_cone.contains(sm, mnorm(s))
    return _scalar(np.where(ok, val, INF), strain_rate, stress)


def dp_bipotential(params: DruckerPragerParams, eps, sig):
    """The same law in ``(eps, sig)`` coordinates with ``<eps, sig> = tr(eps sig)``.

    ``Psi_Kstress(sig) + Psi_Kstrain(eps) + C1 tr eps
    + C2 (tr sig - c/tan phi) |dev eps| - (1 - 1/3) tr eps tr sig``.
    """
    ev, sv = as_mandel(eps), as_mandel(sig)
    tre, trs = mtrace(ev), mtrace(sv)
    r = mnorm(mdev(ev))
    val = (params.C1 * tre + params.C2 * (trs - params.C1) * r
           - (2.0 / 3.0) * tre * trs)
    ok = (params.strain_cone.contains(tre, r)
          & params.stress_cone.contains(trs, mnorm(mdev(sv))))
    return _scalar(np.where(ok, val, INF), eps, sig)


def flow_pair(params: DruckerPragerParams, lam, s_hat, s_m):
    """Analytic points of the flow-rule graph.

    The stress lies on the cone boundary with deviator direction ``s_hat``
    and mean ``s_m <= c/tan(phi)``; the rate is ``lam`` times the flow
    direction: ``e = lam/k_d s_hat``, ``e_m = lam tan(theta)``.

    Returns ``((e_m, e), (s_m, s))`` arrays, nudged so that both exact
    cone tests pass.
    """
    lam = np.asarray(lam, dtype=float)
    s_m = np.asarray(s_m, dtype=float)
    s_hat = np.asarray(s_hat, dtype=float)
    radius = params.k_d * (params.c - s_m * params.tan_phi)
    s = radius[..., None] * s_hat
    s_m, s = nudge_inside(params.stress_cone, s_m, s)
    e = (lam / params.k_d)[..., None] * s_hat
    e_m = lam * params.tan_theta
    # round-off can leave e_m just below beta |e|; lift it by ulps
    beta = params.k_d * params.tan_theta
    e_m = np.where(beta * mnorm(e) <= e_m, e_m,
                   np.nextafter(beta * mnorm(e), np.inf))
    e_m, e = nudge_inside(params.strain_cone, e_m, e)
    return (e_m, e), (s_m, s)


def flow_rule_residual(params: DruckerPragerParams, strain_rate, stress,
                       active_tol: float = 1e-12):
    """Distance of ``(e_m + k_d (tan phi - tan theta)|e|, e)`` to the normal
    cone of ``K'_stress`` at ``(s_m, s)``.

    Zero iff the non-associated flow rule holds. Stresses within
    ``active_tol * (1 + c)`` of the yield surface count as on it.

    Raises
    ------
    ValueError
        If the stress lies outside ``K'_stress``.
    """
    em, e = _as_pair(strain_rate)
    sm, s = _as_pair(stress)
    em, sm = np.atleast_1d(em), np.atleast_1d(sm)
    e, s = np.atleast_2d(e), np.atleast_2d(s)
    rs = mnorm(s)
    fval = rs / params.k_d + sm * params.tan_phi - params.c
    tol = active_tol * (1.0 + params.c)
    if np.any(fval > tol):
        raise ValueError("stress outside K'_stress")
    re = mnorm(e)
    vm = em - params.C2 * re
    vd = e
    norm_v = np.sqrt(vm ** 2 + mnorm(vd) ** 2)

    # smooth boundary: ray spanned by n = (tan phi, s_hat / k_d)
    shat = s / np.where(rs > 0, rs, 1.0)[:, None]
    nm = params.tan_phi
    nd = shat / params.k_d
    nn = nm * nm + 1.0 / params.k_d ** 2
    t = np.maximum((vm * nm + mdot(vd, nd)) / nn, 0.0)
    ray = np.sqrt((vm - t * nm) ** 2 + mnorm(vd - t[:, None] * nd) ** 2)

    # apex: normal cone is {(a, w): a >= k_d tan(phi) |w|}
    apex_cone = SecondOrderCone.strain(params.k_d * params.tan_phi)
    pm, pd, _ = project_arrays(apex_cone, vm, vd, snap=False)
    apex = np.sqrt((vm - pm) ** 2 + mnorm(vd - pd) ** 2)

    at_apex = (rs <= tol) & (np.abs(sm - params.C1) <= tol * (1 + abs(params.C1)))
    on_boundary = fval >= -tol
    res = np.where(at_apex, apex, np.where(on_boundary, ray, norm_v))
    if isinstance(stress, HydroDevPair) or np.ndim(_as_pair(stress)[0]) == 0:
        return float(res[0])
    return res


def constitutive_inclusions_check(moduli: ElasticModuli,
                                  params: DruckerPragerParams, eps, eps_e,
                                  eps_p, eps_p_rate, sig, eps_e_rate=None,
                                  sig_rate=None, tol: float = 1e-9) -> dict:
    """Check the additive split and the elastic / plastic inclusions.

    The split ``eps = eps_e + eps_p`` is checked exactly. The inclusions
    are checked as graph gaps ``b(x, y) - <x, y>``: elastic law on
    ``(eps_e, sig)``, plastic law on ``(eps_p_rate, sig)`` and, when both
    rates are given, the rate form of the elastic law on
    ``(eps_e_rate, sig_rate)``. For the elastic law the gap equals the
    completed square ``1/2 <eps_e - S^-1 sig, S (eps_e - S^-1 sig)>``.
    """
    eps, eps_e, eps_p, eps_p_rate, sig = (
        as_mandel(x) for x in (eps, eps_e, eps_p, eps_p_rate, sig))
    split = eps - (eps_e + eps_p)
    report = {
        "split_exact": bool(np.all(split == 0.0)),
        "split_residual": float(np.max(np.abs(split))),
        "elastic_gap": float(np.max(
            elastic_bipotential(moduli, eps_e, sig) - mdot(eps_e, sig))),
        "plastic_gap": float(np.max(
            dp_bipotential(params, eps_p_rate, sig) - mdot(eps_p_rate, sig))),
    }
    if eps_e_rate is not None and sig_rate is not None:
        er, sr = as_mandel(eps_e_rate), as_mandel(sig_rate)
        report["elastic_rate_gap"] = float(np.max(
            elastic_bipotential(moduli, er, sr) - mdot(er, sr)))
    gaps = [v for k, v in report.items() if k.endswith("gap")]
    report["passed"] = report["split_exact"] and all(g <= tol for g in gaps)
    return report


def _strictly_contains(cone: SecondOrderCone, mean, r, slack: float):
    if slack == 0.0:
        return cone.contains(mean, r)
    if cone.form == "strain":
        return cone.beta * r * (1.0 + slack) <= mean
    lhs = cone.a * r + cone.t * mean
    pad = slack * (cone.a * r + np.abs(cone.t * mean) + abs(cone.c0))
    return lhs + pad <= cone.c0


def nudge_mandel(cone: SecondOrderCone, v, offset=None, slack: float = 0.0,
                 max_tries: int = 80, shift=None) -> np.ndarray:
    """Move Mandel tensors by a few ulps so that ``offset + (v + shift)``
    passes the exact membership test of ``cone`` in ``(tr, dev)`` coordinates.

    The sum is formed in that order, which is how callers evaluate it, so
    the test is exact for them as computed. Only points that fail are
    modified. ``slack`` > 0 asks for a relative safety margin, so that
    rescaled copies of the result pass as well.
    """
    v = np.array(v, dtype=float, copy=True)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    base = 0.0 if offset is None else np.atleast_2d(np.asarray(offset, float))
    sh = 0.0 if shift is None else np.atleast_2d(np.asarray(shift, float))
    eps = np.finfo(float).eps
    for k in range(max_tries):
        w = base + (v + sh)
        tr, d = mtrace(w), mdev(w)
        bad = ~_strictly_contains(cone, tr, mnorm(d), slack)
        if not bad.any():
            return v[0] if single else v
        step = 4.0 * eps * 2.0 ** k
        scale = np.maximum(np.maximum(np.abs(tr[bad]), mnorm(d[bad])),
                           max(abs(cone.apex), 1e-300))
        v[bad] -= step * d[bad]
        v[bad] += (cone.orient * step * scale / 3.0)[:, None] * IDENTITY6
    raise ValueError("could not move tensors inside the cone")
