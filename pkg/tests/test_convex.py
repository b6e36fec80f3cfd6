import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bipotentials.convex import (INF, ConeLinear, ConvergenceError,
                                 PointIndicator, SecondOrderCone,
                                 UnboundedBelowError, Zero, half_squared_norm,
                                 indicator, inf_convolution, nudge_inside,
                                 project, project_arrays, prox,
                                 scaled_probes, subgradient_member)
from bipotentials.tensors import HydroDevPair, SymTensor, mdev, mnorm

STRAIN1 = SecondOrderCone.strain(1.0)


def dev_with_norm(rng, r):
    d = mdev(rng.standard_normal(6))
    return SymTensor.from_mandel(r * d / mnorm(d))


def grid_min(f, box, feasible, n=201, rounds=10):
    """Zooming grid search of a 2-D function; returns the best value."""
    (x0, x1), (y0, y1) = box
    best = (math.inf, None)
    for _ in range(rounds):
        X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n))
        V = np.where(feasible(X, Y), f(X, Y), np.inf)
        k = np.unravel_index(np.argmin(V), V.shape)
        if V[k] < best[0]:
            best = (V[k], (X[k], Y[k]))
        bx, by = best[1]
        hx, hy = (x1 - x0) / 10, (y1 - y0) / 10
        x0, x1, y0, y1 = bx - hx, bx + hx, max(by - hy, 0.0), by + hy
    return best


# -- cones and indicators ---------------------------------------------------

def test_indicator_examples(rng):
    z = SymTensor.zeros()
    assert indicator(STRAIN1, HydroDevPair(1.0, z)) == 0.0
    assert indicator(STRAIN1, HydroDevPair(-1.0, z)) == INF
    cone = SecondOrderCone.stress(1.0, 1.0, 1.0)
    assert indicator(cone, HydroDevPair(0.5, dev_with_norm(rng, 0.4))) == 0.0
    assert indicator(cone, HydroDevPair(0.5, dev_with_norm(rng, 0.6))) == INF


def test_cone_validation():
    with pytest.raises(ValueError):
        SecondOrderCone.strain(-1.0)
    with pytest.raises(ValueError):
        SecondOrderCone.stress(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        SecondOrderCone("other")


def test_project_examples(rng):
    inside = HydroDevPair(2.0, dev_with_norm(rng, 1.0))
    out = project(STRAIN1, inside)
    assert out.mean == inside.mean and out.dev.allclose(inside.dev)
    out = project(STRAIN1, HydroDevPair(-2.0, dev_with_norm(rng, 0.0)))
    assert out.mean == 0.0 and out.dev_norm() == 0.0
    d = dev_with_norm(rng, 1.0)
    out = project(STRAIN1, HydroDevPair(0.0, d))
    # closed-form second-order cone projection ((m + b|d|)/(1 + b^2)) (1, b d_hat)
    assert out.mean == pytest.approx(0.5, abs=1e-14)
    assert np.allclose(out.dev.mandel(), 0.5 * d.mandel(), atol=1e-14)


def test_project_against_closed_form_soc(rng):
    for beta in (0.3, 1.0, 2.5):
        cone = SecondOrderCone.strain(beta)
        m = rng.uniform(-2, 2, 200)
        d = mdev(rng.standard_normal((200, 6)))
        pm, pd, region = project_arrays(cone, m, d, snap=False)
        r = mnorm(d)
        # boundary ray (beta r, r): foot of the perpendicular
        rho = (beta * m + r) / (1 + beta ** 2)
        ref_m = np.where(beta * r <= m, m, np.where(rho <= 0, 0.0, beta * rho))
        ref_r = np.where(beta * r <= m, r, np.where(rho <= 0, 0.0, rho))
        assert np.allclose(pm, ref_m, atol=1e-13)
        assert np.allclose(mnorm(pd), ref_r, atol=1e-13)


def test_project_weights_must_be_positive(rng):
    with pytest.raises(ValueError):
        project(STRAIN1, HydroDevPair(0.0, dev_with_norm(rng, 1.0)), (0.0, 1.0))


def test_projection_passes_exact_test(rng):
    cone = SecondOrderCone.stress(1.0, math.tan(0.5), 1.0)
    m = rng.uniform(-5, 5, 5000)
    d = mdev(rng.standard_normal((5000, 6))) * 3
    pm, pd, _ = project_arrays(cone, m, d, 0.3, 1.7)
    assert np.all(cone.contains(pm, mnorm(pd)))


@given(st.floats(-5, 5), st.floats(0, 5), st.floats(0.1, 10), st.floats(0.1, 10),
       st.floats(0.0, 3.0))
def test_projection_idempotent(m, r, w_m, w_d, beta):
    cone = SecondOrderCone.strain(beta)
    d = np.array([r, -r, 0, 0, 0, 0]) / math.sqrt(2)
    pm, pd, _ = project_arrays(cone, m, d, w_m, w_d)
    qm, qd, _ = project_arrays(cone, pm, pd, w_m, w_d)
    assert abs(qm - pm) <= 1e-12 * (1 + abs(pm))
    assert np.max(np.abs(qd - pd)) <= 1e-12 * (1 + mnorm(pd))


def test_projection_variational_inequality(rng):
    for form in ("strain", "stress"):
        cone = (SecondOrderCone.strain(0.7) if form == "strain"
                else SecondOrderCone.stress(1.0, 0.6, 1.0))
        w_m, w_d = 0.25, 3.0
        for _ in range(20):
            m = rng.uniform(-4, 4)
            d = 2 * mdev(rng.standard_normal(6))
            pm, pd, _ = project_arrays(cone, m, d, w_m, w_d)
            qm = rng.uniform(-6, 6, 1000)
            qd = mdev(rng.standard_normal((1000, 6))) * rng.uniform(0, 3, (1000, 1))
            keep = cone.contains(qm, mnorm(qd))
            ip = w_m * (m - pm) * (qm - pm) + w_d * (qd - pd) @ (d - pd)
            assert np.all(ip[keep] <= 1e-10)


def test_nudge_inside_moves_boundary_points(rng):
    cone = SecondOrderCone.stress(1.0, math.tan(math.radians(30)), 1.0)
    m = rng.uniform(-3, 1.5, 1000)
    r = np.maximum((cone.c0 - cone.t * m) / cone.a, 0)
    d = r[:, None] * mdev(rng.standard_normal((1000, 6)))
    d /= np.maximum(mnorm(mdev(d)), 1e-300)[:, None] / np.maximum(r, 1e-300)[:, None]
    nm, nd = nudge_inside(cone, m, d)
    assert np.all(cone.contains(nm, mnorm(nd)))
    assert np.max(np.abs(nm - m)) < 1e-12


# -- subgradients --------------------------------------------------------------

def test_subgradient_member_square(rng):
    f = half_squared_norm(3)
    x = rng.standard_normal(3)
    probes = scaled_probes(rng, x)
    assert subgradient_member(f, x, x, probes)
    delta = np.array([0.3, -0.2, 0.1])
    probes = np.vstack([probes, x + delta])
    assert not subgradient_member(f, x, x + delta, probes)


def test_subgradient_member_cone_normal(rng):
    cone = SecondOrderCone.strain(1.0)
    f = ConeLinear(cone=cone)
    x = np.array([1.0, 1.0])           # boundary point |d| = m
    y = np.array([-1.0, 1.0]) / math.sqrt(2)   # outward normal
    # oracle: dense ball of probes, inequality scanned directly
    ang = rng.uniform(0, 2 * np.pi, 20000)
    rad = rng.uniform(0, 2, 20000)
    probes = x + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    assert subgradient_member(f, x, y, probes)
    assert not subgradient_member(f, x, -y, probes)


def test_subgradient_member_infinite_point():
    f = ConeLinear(cone=STRAIN1)
    from bipotentials.convex import InfiniteValueError
    with pytest.raises(InfiniteValueError):
        subgradient_member(f, np.array([-1.0, 0.0]), np.zeros(2), np.zeros((1, 2)))


# -- prox ------------------------------------------------------------------------

def test_prox_zero(rng):
    z = HydroDevPair(0.7, dev_with_norm(rng, 1.3))
    p, val = prox(Zero(), z, (2.0, 0.5))
    assert p.mean == z.mean and p.dev.allclose(z.dev) and val == 0.0


def test_prox_indicator_is_projection(rng):
    w = (0.4, 2.0)
    for _ in range(10):
        z = HydroDevPair(rng.uniform(-2, 1), dev_with_norm(rng, rng.uniform(0, 3)))
        p, val = prox(ConeLinear(cone=STRAIN1), z, w)
        q = project(STRAIN1, z, w)
        assert p.mean == pytest.approx(q.mean, abs=1e-14)
        assert p.dev.allclose(q.dev)
        dist2 = w[0] * (q.mean - z.mean) ** 2 + w[1] * (q.dev - z.dev).norm() ** 2
        assert val == pytest.approx(0.5 * dist2, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("beta,lin_mean,lin_dev", [(0.2, 1.7, 0.4), (0.0, 0.5, 1.0),
                                                   (1.0, -0.3, 0.0)])
def test_prox_cone_linear_against_grid(rng, beta, lin_mean, lin_dev):
    f = ConeLinear(lin_mean, lin_dev, SecondOrderCone.strain(beta))
    w_m, w_d = 0.8, 2.5
    for _ in range(5):
        zm, zr = rng.uniform(-2, 2), rng.uniform(0, 2)
        z = HydroDevPair(zm, dev_with_norm(rng, zr))
        _, val = prox(f, z, (w_m, w_d))

        def obj(m, r):
            return (0.5 * w_m * (m - zm) ** 2 + 0.5 * w_d * (r - zr) ** 2
                    + lin_mean * m + lin_dev * r)
        ref, _ = grid_min(obj, ((-6, 6), (0, 6)), lambda m, r: beta * r <= m)
        assert val == pytest.approx(ref, abs=1e-7)


def test_prox_nonexpansive_in_metric(rng):
    f = ConeLinear(1.2, 0.3, SecondOrderCone.strain(0.4))
    w = np.array([0.3, 4.0])
    for _ in range(300):
        z1 = HydroDevPair(rng.uniform(-3, 3), dev_with_norm(rng, rng.uniform(0, 3)))
        z2 = HydroDevPair(rng.uniform(-3, 3), dev_with_norm(rng, rng.uniform(0, 3)))
        p1, _ = prox(f, z1, w)
        p2, _ = prox(f, z2, w)

        def snorm(a, b):
            return math.sqrt(w[0] * (a.mean - b.mean) ** 2 + w[1] * (a.dev - b.dev).norm() ** 2)
        assert snorm(p1, p2) <= snorm(z1, z2) + 1e-9


def test_prox_requires_closed_form(rng):
    with pytest.raises(TypeError):
        prox(half_squared_norm(7), HydroDevPair(0.0, SymTensor.zeros()))


# -- inf-convolution ---------------------------------------------------------------

def test_inf_convolution_two_squares(rng):
    x = rng.standard_normal(3)
    f = half_squared_norm(3)
    val, (u, v) = inf_convolution(f, f, x)
    assert val == pytest.approx(0.25 * x @ x, rel=1e-10)
    assert np.allclose(u, x / 2, atol=1e-9) and np.allclose(v, x / 2, atol=1e-9)


def test_inf_convolution_point_indicator(rng):
    x = rng.standard_normal(3)
    f = half_squared_norm(3)
    val, (u, v) = inf_convolution(f, PointIndicator(np.zeros(3)), x)
    assert val == pytest.approx(f(x[None])[0], rel=1e-12)
    assert np.array_equal(v, np.zeros(3)) and np.allclose(u, x)


def test_moreau_envelope_of_cone(rng):
    f = half_squared_norm(2)
    g = ConeLinear(cone=STRAIN1)
    for _ in range(5):
        x = rng.uniform(-2, 2, 2)
        val, (u, v) = inf_convolution(f, g, x)
        # oracle: 1/2 dist^2 by a zooming grid over the cone
        ref, _ = grid_min(lambda m, d: 0.5 * ((x[0] - m) ** 2 + (x[1] - d) ** 2),
                          ((-3, 3), (-3, 3)), lambda m, d: np.abs(d) <= m)
        # the grid helper clips the second coordinate at 0; redo symmetric
        ref2, _ = grid_min(lambda m, d: 0.5 * ((x[0] - m) ** 2 + (x[1] + d) ** 2),
                           ((-3, 3), (0, 3)), lambda m, d: np.abs(d) <= m)
        assert val == pytest.approx(min(ref, ref2), abs=1e-7)
        assert np.allclose(u + v, x)


def test_inf_convolution_upper_bound(rng):
    f = half_squared_norm(2)
    g = ConeLinear(0.5, 0.2, STRAIN1)
    x = np.array([0.3, -1.1])
    val, _ = inf_convolution(f, g, x)
    us = rng.uniform(-3, 3, (2000, 2))
    rhs = f(us) + g(x - us)
    assert np.all(val <= rhs + 1e-9)


def test_inf_convolution_unbounded():
    class Linear:
        def __call__(self, x):
            return -np.asarray(x)[..., 0]

        def prox(self, z, step):
            z = np.array(z, float)
            z[..., 0] += step
            return z

    with pytest.raises((UnboundedBelowError, ConvergenceError)):
        inf_convolution(Linear(), Zero(), np.zeros(2), max_iter=10_000)
