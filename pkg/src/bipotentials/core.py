"""Bipotentials, syncs and BB-graphs as objects, with a sampled axiom audit.

Points are flat float vectors; every callable is vectorized over leading
axes, so ``b(x, y)`` with ``x`` of shape ``(n, dx)`` and ``y`` of shape
``(n, dy)`` returns ``n`` values. ``+inf`` encodes points outside the
domain.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .convex import INF, InfiniteValueError, euclidean, scaled_probes, subgradient_member


class ConjugateMismatchError(ValueError):
    """A supplied Fenchel conjugate disagrees with grid conjugation."""


def _identity(v):
    return v


@dataclass(frozen=True)
class Bipotential:
    """A function ``b(x, y)`` paired with a duality product.

    ``project_x`` / ``project_y`` map ambient vectors onto the linear spaces
    ``X`` and ``Y`` (identity by default); the auditor uses them to keep
    probes inside the spaces.
    """

    func: Callable
    duality: Callable = euclidean
    name: str = "b"
    project_x: Callable = _identity
    project_y: Callable = _identity

    def __call__(self, x, y):
        return np.asarray(self.func(np.asarray(x, float), np.asarray(y, float)),
                          dtype=float)

    def gap(self, x, y):
        """``b(x, y) - <x, y>`` (``+inf`` off the domain)."""
        val = self(x, y)
        with np.errstate(invalid="ignore"):
            return np.where(np.isfinite(val), val - self.duality(x, y), INF)


@dataclass(frozen=True)
class Sync:
    """A nonnegative function ``c(x, y)`` whose zero set is a constitutive graph."""

    func: Callable
    name: str = "c"

    def __call__(self, x, y):
        return np.asarray(self.func(np.asarray(x, float), np.asarray(y, float)),
                          dtype=float)


@dataclass(frozen=True)
class BBGraph:
    """A set of pairs given by a membership test.

    ``x_section(rng, y, n)`` and ``y_section(rng, x, n)`` optionally sample
    the sections ``M*(y)`` and ``M(x)``.
    """

    membership: Callable
    x_section: Callable | None = None
    y_section: Callable | None = None

    def __call__(self, x, y):
        return np.asarray(self.membership(np.asarray(x, float),
                                          np.asarray(y, float)), dtype=bool)

    def audit_sections(self, rng: np.random.Generator, points, n: int = 20,
                       side: str = "y") -> int:
        """Count convex combinations of section samples that leave the set.

        ``side="y"``: for each ``x`` in ``points`` sample ``M(x)`` and test
        midpoints and random combinations; ``side="x"`` likewise for
        ``M*(y)``.
        """
        sampler = self.y_section if side == "y" else self.x_section
        if sampler is None:
            raise ValueError(f"no section sampler for side {side!r}")
        bad = 0
        for p in np.atleast_2d(points):
            s = np.atleast_2d(sampler(rng, p, n))
            if len(s) < 2:
                continue
            i, j = rng.integers(0, len(s), (2, n))
            lam = rng.uniform(0, 1, n)[:, None]
            comb = lam * s[i] + (1 - lam) * s[j]
            fixed = np.broadcast_to(p, comb.shape[:-1] + p.shape)
            ok = self(fixed, comb) if side == "y" else self(comb, fixed)
            bad += int(np.count_nonzero(~ok))
        return bad


def sync_from_bipotential(b: Bipotential) -> Sync:
    """``c(x, y) = b(x, y) - <x, y>``."""
    return Sync(b.gap, name=f"sync({b.name})")


def bipotential_from_sync(c: Sync, duality: Callable = euclidean,
                          name: str | None = None, project_x=_identity,
                          project_y=_identity) -> Bipotential:
    """``b(x, y) = c(x, y) + <x, y>``."""
    def func(x, y):
        val = c(x, y)
        with np.errstate(invalid="ignore"):
            return np.where(np.isfinite(val), val + duality(x, y), INF)
    return Bipotential(func, duality, name or f"bip({c.name})", project_x, project_y)


def _full_column_rank(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] < A.shape[1] or np.linalg.matrix_rank(A) < A.shape[1]:
        raise ValueError("linear map is not injective (rank deficient)")
    return A


def transform_sync(c_prime: Sync, T, L, alpha: float = 1.0) -> Sync:
    """``c(x, y) = alpha c'(T x, L y)``.

    ``T`` and ``L`` are matrices of full column rank (bijections onto their
    images, e.g. the coordinate changes onto ``R x Sym_0``); ``alpha > 0``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    T = _full_column_rank(T)
    L = _full_column_rank(L)
    return Sync(lambda x, y: alpha * c_prime(x @ T.T, y @ L.T),
                name=f"{alpha:g}*{c_prime.name}(T., L.)")


def separable(phi: Callable, phi_star: Callable, duality: Callable = euclidean,
              name: str = "separable") -> Bipotential:
    """``b(x, y) = phi(x) + phi*(y)``; use :func:`conjugate_audit` to check
    the supplied conjugate."""
    def func(x, y):
        return np.asarray(phi(x), float) + np.asarray(phi_star(y), float)
    return Bipotential(func, duality, name)


def conjugate_audit(phi: Callable, phi_star: Callable, y_probes, radius: float,
                    points: int = 201, tol: float | None = None,
                    raise_on_mismatch: bool = True) -> dict:
    """Compare ``phi_star`` with a grid conjugate ``sup_x <x, y> - phi(x)``.

    The grid is ``[-radius, radius]^d`` with ``points`` nodes per axis
    (``d <= 3``) and is evaluated twice, at ``radius`` and ``2 radius``. A
    finite ``phi_star(y)`` must match the larger grid within ``tol``; an
    infinite one must show the supremum growing with the grid.

    Raises
    ------
    ConjugateMismatchError
        On any mismatch, when ``raise_on_mismatch``.
    """
    y_probes = np.atleast_2d(np.asarray(y_probes, dtype=float))
    d = y_probes.shape[1]
    if d > 3:
        raise ValueError("grid conjugation is limited to dimension <= 3")
    h = 2.0 * radius / (points - 1)
    tol = 2.0 * h * (1.0 + float(np.max(np.abs(y_probes)))) if tol is None else tol

    def grid_sup(rad):
        axes = [np.linspace(-rad, rad, points)] * d
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        fx = np.asarray(phi(X), float)
        keep = np.isfinite(fx)
        X, fx = X[keep], fx[keep]
        return np.array([float(np.max(X @ y - fx)) for y in y_probes])

    s1, s2 = grid_sup(radius), grid_sup(2.0 * radius)
    ref = np.asarray(phi_star(y_probes), float)
    bad = []
    for i, (a, b, r) in enumerate(zip(s1, s2, ref)):
        if math.isfinite(r):
            if abs(b - r) > tol:
                bad.append(i)
        elif not b > a + 0.25 * radius * float(np.linalg.norm(y_probes[i])):
            bad.append(i)
    report = {"probes": len(y_probes), "mismatches": bad, "tol": tol,
              "grid_sup": s2.tolist(), "claimed": ref.tolist()}
    if bad and raise_on_mismatch:
        raise ConjugateMismatchError(f"conjugate mismatch at probes {bad}")
    return report


def b_infinity(M: BBGraph, duality: Callable = euclidean,
               name: str = "b_inf") -> Bipotential:
    """``<x, y> + Psi_M(x, y)``."""
    def func(x, y):
        inside = M(x, y)
        with np.errstate(invalid="ignore"):
            return np.where(inside, duality(x, y), INF)
    return Bipotential(func, duality, name)


def graph_membership(b: Bipotential, x, y, tol: float = 1e-12):
    """``b(x, y) - <x, y> <= tol``; scalar inputs give a bool."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    res = b.gap(x, y) <= tol
    return bool(res) if np.ndim(res) == 0 else res


# ---------------------------------------------------------------------------
# Axiom audit
# ---------------------------------------------------------------------------

@dataclass
class AuditSampler:
    """Sample sources for :func:`axiom_audit`.

    ``x_domain(rng, n)`` / ``y_domain(rng, n)`` sample the (product) domain;
    ``x_any`` / ``y_any`` sample the ambient spaces (in and out of the
    domain); ``graph(rng, n)`` returns pairs on the graph; ``special(rng)``
    returns structured pairs (origin, apex, boundary points) or ``None``.
    """

    x_domain: Callable
    y_domain: Callable
    graph: Callable
    x_any: Callable | None = None
    y_any: Callable | None = None
    special: Callable | None = None
    x_segment: Callable | None = None
    y_segment: Callable | None = None

    def segment_source(self, side: str) -> Callable:
        """Endpoint sampler for segments: domain points kept a relative
        margin away from the boundary, so interior points of a segment do not
        round out of a convex domain."""
        if side == "x":
            return self.x_segment or self.x_domain
        return self.y_segment or self.y_domain


DEFAULT_COUNTS = {"pairs": 40000, "segments": 1200, "graph": 150,
                  "converse": 150}


def _witness(x, y, val):
    return {"x": np.asarray(x).tolist(), "y": np.asarray(y).tolist(),
            "value": float(val)}


def axiom_audit(b: Bipotential, sampler: AuditSampler, counts=None,
                rng: np.random.Generator | None = None,
                checks=("inequality", "convex_x", "convex_y", "equivalence"),
                ineq_rtol: float = 1e-12, convex_tol: float = 1e-10,
                graph_tol: float = 1e-9) -> dict:
    """Sampled audit of the bipotential axioms.

    * inequality: ``b(x, y) - <x, y> >= -ineq_rtol (1 + |b|)``;
    * convex_x / convex_y: convexity of the partial maps along segments
      with finite endpoints, 11 interior points each, slack ``convex_tol``;
    * equivalence: on graph pairs both subgradient inclusions hold
      (sampled); on random pairs where one inclusion holds the gap is at
      most ``graph_tol``.

    Returns a JSON-compatible report with violation counts, worst margins
    and witnesses.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    counts = {**DEFAULT_COUNTS, **(counts or {})}
    report = {"name": b.name, "checks": list(checks), "evaluations": 0}
    evals = 0

    if "inequality" in checks:
        n = counts["pairs"]
        xs = [sampler.x_domain(rng, n)]
        ys = [sampler.y_domain(rng, n)]
        if sampler.x_any is not None and sampler.y_any is not None:
            xs.append(sampler.x_any(rng, n // 2))
            ys.append(sampler.y_any(rng, n // 2))
        gx, gy = sampler.graph(rng, counts["graph"])
        xs.append(gx)
        ys.append(gy)
        if sampler.special is not None:
            sx, sy = sampler.special(rng)
            xs.append(sx)
            ys.append(sy)
        X, Y = np.concatenate(xs), np.concatenate(ys)
        val = b(X, Y)
        evals += len(X)
        fin = np.isfinite(val)
        margin = np.full(len(X), INF)
        margin[fin] = val[fin] - b.duality(X[fin], Y[fin])
        thresh = -ineq_rtol * (1.0 + np.abs(np.where(fin, val, 0.0)))
        viol = fin & (margin < thresh)
        k = int(np.argmin(np.where(fin, margin - thresh, INF))) if fin.any() else 0
        report["inequality"] = {
            "samples": int(len(X)), "finite": int(fin.sum()),
            "violations": int(viol.sum()),
            "worst_margin": float(np.min(margin[fin])) if fin.any() else None,
            "witness": _witness(X[k], Y[k], val[k]) if viol.any() else None,
        }

    for side in ("x", "y"):
        key = f"convex_{side}"
        if key not in checks:
            continue
        n = counts["segments"]
        other = "y" if side == "x" else "x"
        fixed = sampler.segment_source(other)(rng, n)
        a = sampler.segment_source(side)(rng, n)
        c = sampler.segment_source(side)(rng, n)
        lam = np.linspace(0.0, 1.0, 13)[1:-1]

        def f(pts, fx=fixed):
            reps = pts.shape[0] // fx.shape[0]
            fx_rep = np.repeat(fx, reps, axis=0)
            return b(pts, fx_rep) if side == "x" else b(fx_rep, pts)

        fa, fc = f(a), f(c)
        pts = (lam[None, :, None] * a[:, None, :]
               + (1 - lam)[None, :, None] * c[:, None, :]).reshape(-1, a.shape[1])
        fm = f(pts).reshape(n, len(lam))
        evals += 2 * n + fm.size
        ok_ends = np.isfinite(fa) & np.isfinite(fc)
        bound = lam[None, :] * fa[:, None] + (1 - lam)[None, :] * fc[:, None]
        with np.errstate(invalid="ignore"):
            excess = np.where(ok_ends[:, None], fm - bound, -INF)
        viol = excess > convex_tol
        worst = float(np.max(excess)) if ok_ends.any() else None
        entry = {"segments": int(ok_ends.sum()), "violations": int(viol.sum()),
                 "worst_excess": worst, "witness": None}
        if viol.any():
            i, j = np.unravel_index(int(np.argmax(excess)), excess.shape)
            entry["witness"] = {"fixed": fixed[i].tolist(), "a": a[i].tolist(),
                                "b": c[i].tolist(), "lambda": float(lam[j])}
        report[key] = entry

    if "equivalence" in checks:
        gx, gy = sampler.graph(rng, counts["graph"])
        on_graph = b.gap(gx, gy) <= graph_tol
        dual_swap = lambda yy, xx: b.duality(xx, yy)  # noqa: E731
        fails, checked = 0, 0
        for x, y in zip(gx[on_graph], gy[on_graph]):
            px = b.project_x(scaled_probes(rng, x))
            py = b.project_y(scaled_probes(rng, y))
            inc_x = subgradient_member(lambda z: b(z, np.broadcast_to(y, z.shape[:-1] + y.shape)),
                                       x, y, px, b.duality, graph_tol)
            inc_y = subgradient_member(lambda z: b(np.broadcast_to(x, z.shape[:-1] + x.shape), z),
                                       y, x, py, dual_swap, graph_tol)
            evals += len(px) + len(py) + 2
            checked += 1
            fails += int(not (inc_x and inc_y))
        # converse: a single inclusion on a random domain pair forces the gap
        n = counts["converse"]
        rx, ry = sampler.x_domain(rng, n), sampler.y_domain(rng, n)
        conv_fail, conv_holds = 0, 0
        for x, y in zip(rx, ry):
            px = b.project_x(scaled_probes(rng, x))
            try:
                inc = subgradient_member(
                    lambda z: b(z, np.broadcast_to(y, z.shape[:-1] + y.shape)),
                    x, y, px, b.duality, graph_tol)
            except InfiniteValueError:
                continue
            evals += len(px) + 1
            if inc:
                conv_holds += 1
                if float(b.gap(x[None], y[None])[0]) > graph_tol:
                    conv_fail += 1
        report["equivalence"] = {
            "graph_pairs": int(len(gx)), "on_graph": int(on_graph.sum()),
            "checked": checked, "failures": fails,
            "converse_checked": int(n), "converse_inclusions": conv_holds,
            "converse_failures": conv_fail,
        }
    report["evaluations"] = int(evals)
    total = 0
    for key in ("inequality", "convex_x", "convex_y"):
        if key in report:
            total += report[key]["violations"]
    if "equivalence" in report:
        total += report["equivalence"]["failures"] + report["equivalence"]["converse_failures"]
    report["total_violations"] = int(total)
    report["passed"] = total == 0
    return report


def report_to_json(report: dict) -> str:
    """Serialize an audit report; non-finite floats become strings."""
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(w) for k, w in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(w) for w in v]
        if isinstance(v, (float, np.floating)):
            v = float(v)
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
        if isinstance(v, np.integer):
            return int(v)
        if isinstance(v, np.bool_):
            return bool(v)
        return v
    return json.dumps(clean(report), indent=2, sort_keys=True)
