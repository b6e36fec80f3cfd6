"""Convex-analysis primitives on R x Sym_0 pairs and small vector spaces.

Extended reals are plain floats with ``math.inf`` standing for +infinity;
nothing in this package ever produces -infinity.

Points of ``R x Sym_0(3)`` are handled in two ways: as
:class:`~bipotentials.tensors.HydroDevPair` objects at the API surface and
as ``(mean, dev)`` arrays (``dev`` in Mandel form) inside the kernels. All
cone and proximal computations only depend on ``(mean, |dev|)`` and the
direction of ``dev``, so they reduce to closed-form problems in two scalar
variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensors import HydroDevPair, SymTensor, mnorm

INF = math.inf
_EPS = np.finfo(float).eps


class InfiniteValueError(ValueError):
    """A function was evaluated at a point outside its domain."""


class ConvergenceError(RuntimeError):
    """An iterative method stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = trace


class UnboundedBelowError(ArithmeticError):
    """An infimum is -infinity."""


# ---------------------------------------------------------------------------
# Second-order cones
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SecondOrderCone:
    """Closed convex cone in (mean, deviator) coordinates.

    ``form="strain"``: ``beta * |dev| <= mean``.
    ``form="stress"``: ``a * |dev| + t * mean <= c0``, a cone with apex at
    ``mean = c0 / t`` opening towards negative means.
    """

    form: str
    beta: float = 0.0
    a: float = 1.0
    t: float = 1.0
    c0: float = 0.0

    def __post_init__(self):
        if self.form == "strain":
            if not self.beta >= 0.0:
                raise ValueError("strain-form cone needs beta >= 0")
        elif self.form == "stress":
            if not (self.a > 0.0 and self.t > 0.0):
                raise ValueError("stress-form cone needs a > 0 and t > 0")
        else:
            raise ValueError(f"unknown cone form {self.form!r}")

    @classmethod
    def strain(cls, beta: float) -> "SecondOrderCone":
        return cls("strain", beta=float(beta))

    @classmethod
    def stress(cls, a: float, t: float, c0: float) -> "SecondOrderCone":
        return cls("stress", a=float(a), t=float(t), c0=float(c0))

    # Both forms read  slope*|d| <= orient*(m - apex).
    @property
    def slope(self) -> float:
        return self.beta if self.form == "strain" else self.a / self.t

    @property
    def apex(self) -> float:
        return 0.0 if self.form == "strain" else self.c0 / self.t

    @property
    def orient(self) -> float:
        return 1.0 if self.form == "strain" else -1.0

    def contains(self, mean, dev_norm) -> np.ndarray:
        """Exact membership test (no tolerance), vectorized."""
        mean = np.asarray(mean, dtype=float)
        dev_norm = np.asarray(dev_norm, dtype=float)
        if self.form == "strain":
            return self.beta * dev_norm <= mean
        return self.a * dev_norm + self.t * mean <= self.c0

    def margin(self, mean, dev_norm) -> np.ndarray:
        """Signed constraint value; <= 0 inside."""
        if self.form == "strain":
            return self.beta * np.asarray(dev_norm) - np.asarray(mean)
        return self.a * np.asarray(dev_norm) + self.t * np.asarray(mean) - self.c0


def indicator(cone: SecondOrderCone, p: HydroDevPair) -> float:
    return 0.0 if bool(cone.contains(p.mean, p.dev_norm())) else INF


def _split_norm(dev):
    r = mnorm(dev)
    safe = np.where(r > 0.0, r, 1.0)
    return r, dev / safe[..., None]


def project_arrays(cone: SecondOrderCone, mean, dev, w_m=1.0, w_d=1.0,
                   snap: bool = True):
    """Weighted projection onto ``cone``.

    Minimizes ``w_m (m - mean)^2 + w_d |d - dev|^2`` over the cone, using
    the three analytic regions (inside, apex, boundary ray). ``dev`` is an
    array of deviator vectors of shape ``(..., k)``.

    Returns ``(m, d, region)`` with region codes 0 inside, 1 boundary,
    2 apex. With ``snap`` the result is nudged by a few ulps so that the
    exact membership test passes.
    """
    mean = np.asarray(mean, dtype=float)
    dev = np.asarray(dev, dtype=float)
    beta, m0, s = cone.slope, cone.apex, cone.orient
    y = s * (mean - m0)
    r, dhat = _split_norm(dev)

    r_bdry = (w_m * beta * y + w_d * r) / (w_m * beta * beta + w_d)
    inside = cone.contains(mean, r)
    apex = ~inside & (r_bdry <= 0.0)
    region = np.where(inside, 0, np.where(apex, 2, 1))

    r_out = np.where(inside, r, np.where(apex, 0.0, r_bdry))
    y_out = np.where(inside, y, np.where(apex, 0.0, beta * r_bdry))
    m_out = np.where(inside, mean, m0 + s * y_out)
    d_out = np.where(inside[..., None], dev, r_out[..., None] * dhat)
    if snap:
        m_out, d_out = nudge_inside(cone, m_out, d_out)
    return m_out, d_out, region


def nudge_inside(cone: SecondOrderCone, mean, dev, max_tries: int = 60):
    """Move points that fail the exact membership test by a few ulps."""
    mean = np.array(mean, dtype=float, copy=True)
    dev = np.array(dev, dtype=float, copy=True)
    scalar = mean.ndim == 0
    mean = np.atleast_1d(mean)
    dev = dev.reshape(mean.shape + dev.shape[-1:])
    for k in range(max_tries):
        bad = ~cone.contains(mean, mnorm(dev))
        if not bad.any():
            break
        step = 4.0 * _EPS * 2.0 ** k
        dev[bad] *= (1.0 - step)
        scale = np.maximum(np.abs(mean[bad]), max(abs(cone.apex), 1e-300))
        mean[bad] += cone.orient * step * scale
    else:
        raise ConvergenceError("could not move point inside cone")
    if scalar:
        return mean[0], dev[0]
    return mean, dev


def project(cone: SecondOrderCone, p: HydroDevPair, weights=(1.0, 1.0)
            ) -> HydroDevPair:
    """Weighted projection of a pair onto a second-order cone."""
    w_m, w_d = weights
    if not (w_m > 0 and w_d > 0):
        raise ValueError("projection weights must be positive")
    m, d, _ = project_arrays(cone, p.mean, p.dev.mandel() if p.n == 3
                             else p.dev.entries, w_m, w_d)
    if p.n == 3:
        return HydroDevPair(float(m), SymTensor.from_mandel(d))
    return HydroDevPair(float(m), SymTensor(d, p.n))


# ---------------------------------------------------------------------------
# Subgradients
# ---------------------------------------------------------------------------

def euclidean(a, b):
    return np.einsum("...i,...i->...", np.asarray(a, float), np.asarray(b, float))


def subgradient_member(f: Callable, x, y, probes, duality=euclidean,
                       rtol: float = 1e-9) -> bool:
    """Sampled test of ``y in df(x)``.

    Checks ``<z - x, y> <= f(z) - f(x)`` for every probe ``z`` (rows of
    ``probes``) within ``rtol * (1 + |f(x)|)``. ``f`` is vectorized over
    leading axes.

    Raises
    ------
    InfiniteValueError
        If ``f(x)`` is not finite.
    """
    x = np.asarray(x, dtype=float)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    fx = float(np.asarray(f(x[None]))[0])
    if not math.isfinite(fx):
        raise InfiniteValueError("f(x) = +inf; subgradient undefined")
    fz = np.asarray(f(probes), dtype=float)
    lhs = duality(probes - x, np.asarray(y, dtype=float))
    tol = rtol * (1.0 + abs(fx))
    return bool(np.all(lhs <= fz - fx + tol))


def scaled_probes(rng: np.random.Generator, x, count: int = 24,
                  scales=(1e-3, 1e-2, 1e-1, 1.0)) -> np.ndarray:
    """Structured probe set around ``x``: origin, radial scalings, axis
    steps and random directions at several radii."""
    x = np.asarray(x, dtype=float)
    dim = x.size
    size = 1.0 + float(np.linalg.norm(x))
    rows = [np.zeros(dim), 2.0 * x, 0.5 * x]
    for h in scales:
        step = h * size
        eye = np.eye(dim) * step
        rows.extend(x + eye)
        rows.extend(x - eye)
        dirs = rng.standard_normal((count, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rows.extend(x + step * dirs)
    return np.array(rows)


# ---------------------------------------------------------------------------
# Function handles with proximal maps
# ---------------------------------------------------------------------------

class ConvexFunction:
    """Vectorized proper convex lsc function on R^k with a Euclidean prox."""

    def __call__(self, x):
        raise NotImplementedError

    def prox(self, z, step: float):
        """``argmin_w step*f(w) + 1/2 |w - z|^2``."""
        raise NotImplementedError


class Zero(ConvexFunction):
    def __call__(self, x):
        return np.zeros(np.shape(x)[:-1])

    def prox(self, z, step):
        return np.array(z, dtype=float)

    def prox_weighted(self, mean, dev, w_m, w_d):
        return np.asarray(mean, float), np.asarray(dev, float)


@dataclass(frozen=True)
class Quadratic(ConvexFunction):
    """``1/2 x^T H x`` with H symmetric positive semidefinite."""

    hessian: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.hessian, x)

    def prox(self, z, step):
        h = np.asarray(self.hessian, dtype=float)
        return np.linalg.solve(np.eye(h.shape[0]) + step * h,
                               np.asarray(z, float).T).T


def half_squared_norm(dim: int) -> Quadratic:
    return Quadratic(np.eye(dim))


@dataclass(frozen=True)
class PointIndicator(ConvexFunction):
    """Indicator of a single point."""

    point: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        hit = np.all(x == np.asarray(self.point, float), axis=-1)
        return np.where(hit, 0.0, INF)

    def prox(self, z, step):
        return np.broadcast_to(np.asarray(self.point, float), np.shape(z)).copy()


@dataclass(frozen=True)
class ConeLinear(ConvexFunction):
    """``lin_mean * m + lin_dev * |d| + Psi_cone(m, d)`` on R x R^k.

    Points are rows ``(m, d_1, ..., d_k)``. ``lin_dev >= 0`` keeps the
    function convex; ``cone=None`` drops the indicator. Covers the zero
    function, cone indicators, linear functions and the plastic terms of
    the Drucker-Prager bipotential.
    """

    lin_mean: float = 0.0
    lin_dev: float = 0.0
    cone: SecondOrderCone | None = None

    def __post_init__(self):
        if self.lin_dev < 0:
            raise ValueError("lin_dev must be >= 0 for convexity")

    def evaluate(self, mean, dev) -> np.ndarray:
        mean = np.asarray(mean, dtype=float)
        r = mnorm(np.asarray(dev, dtype=float))
        val = self.lin_mean * mean + self.lin_dev * r
        if self.cone is not None:
            val = np.where(self.cone.contains(mean, r), val, INF)
        return val

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.evaluate(x[..., 0], x[..., 1:])

    def prox_weighted(self, mean, dev, w_m, w_d):
        """Minimizer of ``1/2 w_m (m-mean)^2 + 1/2 w_d |d-dev|^2 + f``.

        The linear and norm terms shift the centre (soft thresholding of
        ``|dev|``); the cone then acts through a weighted projection.
        """
        mean = np.asarray(mean, dtype=float) - self.lin_mean / w_m
        r, dhat = _split_norm(np.asarray(dev, dtype=float))
        r = np.maximum(r - self.lin_dev / w_d, 0.0)
        dev = r[..., None] * dhat
        if self.cone is None:
            return mean, dev
        m, d, _ = project_arrays(self.cone, mean, dev, w_m, w_d)
        return m, d

    def prox(self, z, step):
        z = np.asarray(z, dtype=float)
        m, d = self.prox_weighted(z[..., 0], z[..., 1:], 1.0 / step, 1.0 / step)
        return np.concatenate([np.asarray(m)[..., None], d], axis=-1)


def prox(f, z: HydroDevPair, weights=(1.0, 1.0)):
    """Weighted proximal map of a handle on R x Sym_0(3).

    Returns ``(argmin, value)`` where the objective is
    ``1/2 w_m (m - z_m)^2 + 1/2 w_d |d - z_d|^2 + f(m, d)``.
    """
    w_m, w_d = weights
    if not (w_m > 0 and w_d > 0):
        raise ValueError("metric weights must be positive")
    if not hasattr(f, "prox_weighted"):
        raise TypeError(f"no closed-form weighted prox for {type(f).__name__}")
    zd = z.dev.mandel()
    m, d = f.prox_weighted(z.mean, zd, w_m, w_d)
    m = float(m)
    d = np.asarray(d, dtype=float)
    if isinstance(f, Zero):
        fval = 0.0
    else:
        fval = float(f.evaluate(m, d))
    value = 0.5 * w_m * (m - z.mean) ** 2 + 0.5 * w_d * float(np.sum((d - zd) ** 2)) + fval
    return HydroDevPair(m, SymTensor.from_mandel(d)), value


# ---------------------------------------------------------------------------
# Inf-convolution
# ---------------------------------------------------------------------------

def inf_convolution(f: ConvexFunction, g: ConvexFunction, x, rho: float = 1.0,
                    tol: float = 1e-13, max_iter: int = 200_000):
    """``(f [] g)(x) = inf { f(u) + g(v) : u + v = x }``.

    Solved by ADMM on the splitting ``u + v = x`` using the Euclidean prox
    maps of both handles; desk-scale only.

    Returns
    -------
    value : float
        Infimum (``inf`` if no finite split was found).
    split : tuple of ndarray
        ``(u, v)`` with ``u + v = x`` attaining ``value``.
    """
    x = np.asarray(x, dtype=float)
    v = np.zeros_like(x)
    w = np.zeros_like(x)
    scale = 1.0 + float(np.linalg.norm(x))
    residual = INF
    for it in range(max_iter):
        u = f.prox(x - v - w, 1.0 / rho)
        v_old = v
        v = g.prox(x - u - w, 1.0 / rho)
        r = u + v - x
        w = w + r
        residual = max(float(np.linalg.norm(r)),
                       rho * float(np.linalg.norm(v - v_old)))
        if not np.all(np.isfinite(u)) or np.linalg.norm(u) > 1e12 * scale:
            raise UnboundedBelowError("ADMM iterates diverge; infimum is -inf")
        if residual <= tol * scale and it > 2:
            break
    else:
        raise ConvergenceError("inf-convolution ADMM did not converge",
                               residual=residual)
    candidates = [(u, x - u), (x - v, v)]
    best = (INF, candidates[0])
    for uu, vv in candidates:
        val = float(f(uu[None])[0]) + float(g(vv[None])[0])
        if val < best[0]:
            best = (val, (uu, vv))
    return best
