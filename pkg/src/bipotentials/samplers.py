"""Ready-made bipotentials and audit samplers for the constitutive laws.

Coordinates:

* ``b_e``, ``b_p``, ``b_pk``: Mandel 6-vectors for both arguments with
  ``<x, y> = x . y``;
* ``b'_p``: 7-vectors ``(mean, dev)`` (deviator in Mandel form) with
  ``<x, y>' = x_0 y_0 + x_dev . y_dev``.
"""
from __future__ import annotations

import numpy as np

from .convex import nudge_inside
from .core import AuditSampler, Bipotential
from .materials import (DruckerPragerParams, ElasticModuli, dp_bipotential,
                        dp_bipotential_prime, elastic_bipotential, flow_pair,
                        nudge_mandel)
from .tensors import mandel_from_pair, mdev, mdot, random_deviatoric_direction
from .timestep import _STRAIN_SLACK, shifted_plastic_bipotential


def mandel_duality(x, y):
    return mdot(np.asarray(x, float), np.asarray(y, float))


def prime_duality(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    return x[..., 0] * y[..., 0] + mdot(x[..., 1:], y[..., 1:])


def project_pair_space(v):
    """Map ambient 7-vectors onto ``R x Sym_0`` (remove the deviator trace)."""
    v = np.array(v, dtype=float, copy=True)
    v[..., 1:] = mdev(v[..., 1:])
    return v


def _pack(mean, dev):
    return np.concatenate([np.asarray(mean, float)[..., None], dev], axis=-1)


# ---------------------------------------------------------------------------
# Bipotentials
# ---------------------------------------------------------------------------

def elastic(moduli: ElasticModuli) -> Bipotential:
    return Bipotential(lambda x, y: elastic_bipotential(moduli, x, y),
                       mandel_duality, "b_e")


def plastic_prime(params: DruckerPragerParams, c2: float | None = None
                  ) -> Bipotential:
    def func(x, y):
        return dp_bipotential_prime(params, (x[..., 0], x[..., 1:]),
                                    (y[..., 0], y[..., 1:]), c2=c2)
    name = "b'_p" if c2 is None else "b'_p[C2 flipped]"
    return Bipotential(func, prime_duality, name, project_pair_space,
                       project_pair_space)


def plastic(params: DruckerPragerParams) -> Bipotential:
    return Bipotential(lambda x, y: dp_bipotential(params, x, y),
                       mandel_duality, "b_p")


def plastic_shifted(params: DruckerPragerParams, sig_k, dt: float) -> Bipotential:
    sig_k = np.asarray(sig_k, float)
    return Bipotential(
        lambda x, y: shifted_plastic_bipotential(params, sig_k, dt, x, y),
        mandel_duality, "b_pk")


# ---------------------------------------------------------------------------
# Samples in (mean, dev) coordinates
# ---------------------------------------------------------------------------

def _scales(rng, n, lo=-3.0, hi=1.0):
    return 10.0 ** rng.uniform(lo, hi, n)


# relative inward margin of segment endpoints
SEGMENT_MARGIN = 1e-9


def strain_cone_pairs(params: DruckerPragerParams, rng, n, margin: float = 0.0):
    """Points of ``K'_strain``: boundary, interior, axis and origin.

    ``margin > 0`` shrinks the deviator by that relative amount.
    """
    beta = params.k_d * params.tan_theta
    r = _scales(rng, n)
    kind = rng.integers(0, 4, n)
    r = np.where(kind == 2, 0.0, r)
    extra = np.where(kind == 0, 0.0, _scales(rng, n))
    mean = beta * r + extra
    mean = np.where(kind == 3, 0.0, mean)
    r = np.where(kind == 3, 0.0, r)
    dev = ((1.0 - margin) * r)[:, None] * random_deviatoric_direction(rng, n)
    return nudge_pair(params.strain_cone, mean, dev)


def stress_cone_pairs(params: DruckerPragerParams, rng, n, depth: float = 6.0,
                      margin: float = 0.0):
    """Points of ``K'_stress``: boundary, interior and apex.

    ``margin > 0`` pulls points inside by that relative amount.
    """
    sm = params.C1 - depth * rng.uniform(0, 1, n) ** 2
    radius = params.k_d * (params.c - sm * params.tan_phi)
    kind = rng.integers(0, 4, n)
    frac = np.where(kind == 0, 1.0, rng.uniform(0, 1, n))
    sm = np.where(kind == 3, params.C1, sm)
    frac = np.where(kind == 3, 0.0, frac)
    sm = sm - margin * (1.0 + abs(params.C1))
    dev = ((1.0 - margin) * frac * radius)[:, None] * random_deviatoric_direction(rng, n)
    return nudge_pair(params.stress_cone, sm, dev)


def nudge_pair(cone, mean, dev):
    return nudge_inside(cone, mean, dev)


def flow_pairs(params: DruckerPragerParams, rng, n, depth: float = 6.0):
    """Analytic graph pairs: flow pairs, zero rates and apex stresses."""
    k = n // 3
    lam = _scales(rng, n - 2 * k)
    sm = params.C1 - depth * rng.uniform(0, 1, n - 2 * k)
    (em, e), (s_m, s) = flow_pair(params, lam, random_deviatoric_direction(
        rng, n - 2 * k), sm)
    # zero rate with any admissible stress
    zm, zs = stress_cone_pairs(params, rng, k, depth)
    # apex stress with any admissible rate
    am, ae = strain_cone_pairs(params, rng, k)
    x = np.concatenate([_pack(em, e), np.zeros((k, 7)), _pack(am, ae)])
    y = np.concatenate([_pack(s_m, s), _pack(zm, zs),
                        np.tile(np.r_[params.C1, np.zeros(6)], (k, 1))])
    return x, y


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

def elastic_sampler(moduli: ElasticModuli, scale: float = 1.0) -> AuditSampler:
    S = moduli.stiffness_matrix()

    def dom(rng, n):
        return scale * _scales(rng, n)[:, None] * rng.standard_normal((n, 6))

    def graph(rng, n):
        x = dom(rng, n)
        return x, x @ S

    def special(rng):
        x = dom(rng, 4)
        return (np.concatenate([np.zeros((2, 6)), x, 2 * x]),
                np.concatenate([np.zeros((1, 6)), x[:1] @ S, x @ S, x @ S]))

    return AuditSampler(dom, lambda rng, n: dom(rng, n) @ S, graph, dom, dom, special)


def prime_sampler(params: DruckerPragerParams) -> AuditSampler:
    def xd(rng, n):
        return _pack(*strain_cone_pairs(params, rng, n))

    def yd(rng, n):
        return _pack(*stress_cone_pairs(params, rng, n))

    def anyv(rng, n):
        return project_pair_space(_scales(rng, n)[:, None] * rng.standard_normal((n, 7)))

    def graph(rng, n):
        return flow_pairs(params, rng, n)

    def special(rng):
        x, y = flow_pairs(params, rng, 12)
        return np.concatenate([x, 2 * x, 0 * x]), np.concatenate([y, y, y])

    def xs(rng, n):
        return _pack(*strain_cone_pairs(params, rng, n, SEGMENT_MARGIN))

    def ys(rng, n):
        return _pack(*stress_cone_pairs(params, rng, n, margin=SEGMENT_MARGIN))

    return AuditSampler(xd, yd, graph, anyv, anyv, special, xs, ys)


def _to_strain(params, v):
    eps = mandel_from_pair(v[:, 0], v[:, 1:], mean_is_trace=True)
    return nudge_mandel(params.strain_cone, eps, slack=_STRAIN_SLACK)


def _to_stress(params, v, offset=None):
    sig = mandel_from_pair(v[:, 0], v[:, 1:], mean_is_trace=True)
    if offset is None:
        return nudge_mandel(params.stress_cone, sig)
    return nudge_mandel(params.stress_cone, sig - offset, offset=offset)


def plastic_sampler(params: DruckerPragerParams) -> AuditSampler:
    base = prime_sampler(params)

    def xd(rng, n):
        return _to_strain(params, base.x_domain(rng, n))

    def yd(rng, n):
        return _to_stress(params, base.y_domain(rng, n))

    def anyv(rng, n):
        return _scales(rng, n)[:, None] * rng.standard_normal((n, 6))

    def graph(rng, n):
        x, y = base.graph(rng, n)
        return _to_strain(params, x), _to_stress(params, y)

    def special(rng):
        x, y = graph(rng, 12)
        return np.concatenate([x, 2 * x, 0 * x]), np.concatenate([y, y, y])

    def xs(rng, n):
        return _to_strain(params, base.x_segment(rng, n))

    def ys(rng, n):
        return _to_stress(params, base.y_segment(rng, n))

    return AuditSampler(xd, yd, graph, anyv, anyv, special, xs, ys)


def random_admissible_stress(params: DruckerPragerParams, rng, n=1):
    return _to_stress(params, _pack(*stress_cone_pairs(params, rng, n)))


def shifted_sampler(params: DruckerPragerParams, sig_k, dt: float) -> AuditSampler:
    sig_k = np.asarray(sig_k, float)
    base = prime_sampler(params)

    def xd(rng, n):
        return dt * _to_strain(params, base.x_domain(rng, n))

    def yd(rng, n):
        sig = mandel_from_pair(*_split(base.y_domain(rng, n)))
        return _to_dsig(sig)

    def _split(v):
        return v[:, 0], v[:, 1:]

    def _to_dsig(sig):
        return nudge_mandel(params.stress_cone, sig - sig_k, offset=sig_k)

    def anyv(rng, n):
        return _scales(rng, n)[:, None] * rng.standard_normal((n, 6))

    def graph(rng, n):
        x, y = base.graph(rng, n)
        p = nudge_mandel(params.strain_cone,
                         dt * mandel_from_pair(x[:, 0], x[:, 1:]),
                         slack=_STRAIN_SLACK)
        sig = mandel_from_pair(y[:, 0], y[:, 1:])
        return p, _to_dsig(sig)

    def special(rng):
        x, y = graph(rng, 12)
        return np.concatenate([x, 2 * x, 0 * x]), np.concatenate([y, y, y])

    def xs(rng, n):
        return dt * _to_strain(params, base.x_segment(rng, n))

    def ys(rng, n):
        return _to_dsig(mandel_from_pair(*_split(base.y_segment(rng, n))))

    return AuditSampler(xd, yd, graph, anyv, anyv, special, xs, ys)


def delta_b_bipotential(moduli, params, sig_k, dt) -> Bipotential:
    """``Db_k`` at a single point as a two-argument function (it is convex
    in ``deps`` but in general not in ``dsig``)."""
    from .timestep import DeltaB
    sig_k = np.asarray(sig_k, float)

    def func(x, y):
        x, y = np.atleast_2d(x), np.atleast_2d(y)
        ev = DeltaB(moduli, params, np.broadcast_to(sig_k, x.shape), dt)
        return ev.value(x, y)

    return Bipotential(func, mandel_duality, "Db_k")


__all__ = [
    "elastic", "plastic_prime", "plastic", "plastic_shifted",
    "elastic_sampler", "prime_sampler", "plastic_sampler", "shifted_sampler",
    "flow_pairs", "strain_cone_pairs", "stress_cone_pairs",
    "random_admissible_stress", "delta_b_bipotential", "mandel_duality",
    "prime_duality", "project_pair_space",
]
