import math

import numpy as np
import pytest

import oracles
from bipotentials.discretization import (DegenerateElementError, Loads, Mesh,
                                         bifunctional, bifunctional_grad_u,
                                         material_point_driver, sa_residual,
                                         strain_op)
from bipotentials.materials import DruckerPragerParams, elastic_bipotential
from bipotentials.tensors import SymTensor, mdev, mdot, mnorm, mtrace
from bipotentials.timestep import DeltaB

R2 = math.sqrt(2.0)


def skewed_mesh(nx=3, ny=2):
    """Structured mesh sheared into parallelograms."""
    m = Mesh.structured(nx, ny, 2.0, 1.0, dirichlet=[("left", "x", 0.0),
                                                     ("left", "y", 0.0)])
    nodes = m.nodes.copy()
    nodes[:, 0] += 0.3 * nodes[:, 1]
    return Mesh(nodes, m.elements, m.dirichlet_mask)


def linear_field(mesh, A):
    return (mesh.nodes @ np.asarray(A).T).ravel()


def clamped(nx=3, ny=3):
    return Mesh.structured(nx, ny, dirichlet=[(e, c, 0.0) for e in
                                             ("left", "right", "bottom", "top")
                                             for c in ("x", "y")])


# -- construction ------------------------------------------------------------------

def test_mesh_needs_dirichlet():
    with pytest.raises(ValueError):
        Mesh.structured(2, 2)
    # a roller along one edge leaves a translation free
    with pytest.raises(ValueError, match="rigid"):
        Mesh.structured(2, 2, dirichlet=[("bottom", "x", 0.0)])
    # two pinned components on one node leave the rotation free
    m = Mesh.structured(1, 1, dirichlet=[("bottom", "x", 0.0), ("bottom", "y", 0.0)])
    with pytest.raises(ValueError, match="rigid"):
        Mesh(m.nodes, m.elements, np.isin(np.arange(8), [0, 1]))


def test_degenerate_element():
    nodes = np.array([[0, 0], [1, 0], [1, 0], [0, 0]], float)
    with pytest.raises(DegenerateElementError):
        Mesh(nodes, [[0, 1, 2, 3]], np.ones(8, bool))


def test_quadrature_area():
    m = skewed_mesh()
    assert m.area == pytest.approx(2.0, abs=1e-14)
    assert m.npts == 4 * len(m.elements)


# -- strain operator --------------------------------------------------------------

def test_strain_rigid_motions(rng):
    m = skewed_mesh()
    t = np.tile(rng.standard_normal(2), len(m.nodes))
    assert np.max(np.abs(strain_op(m, t))) <= 1e-15
    W = np.array([[0.0, -1e-3], [1e-3, 0.0]])
    assert np.max(np.abs(strain_op(m, linear_field(m, W)))) <= 1e-17


def test_strain_linear_field_exact(rng):
    m = skewed_mesh()
    A = rng.standard_normal((2, 2))
    A = 0.5 * (A + A.T)
    eps = strain_op(m, linear_field(m, A))
    ref = SymTensor.from_matrix(np.pad(A, (0, 1))).mandel()
    assert np.max(np.abs(eps - ref)) <= 1e-14


def test_strain_linearity(rng):
    m = skewed_mesh()
    u, v = rng.standard_normal((2, m.ndof))
    a = 0.37
    lhs = strain_op(m, a * u + v)
    rhs = a * strain_op(m, u) + strain_op(m, v)
    assert np.max(np.abs(lhs - rhs)) <= 1e-14 * np.max(np.abs(lhs))


def test_plane_strain_components(rng):
    m = skewed_mesh()
    eps = strain_op(m, rng.standard_normal(m.ndof))
    assert np.all(eps[:, [2, 4, 5]] == 0.0)


# -- bifunctional -----------------------------------------------------------------

def test_bifunctional_constants(rng):
    m = skewed_mesh()
    z = np.zeros((m.npts, 6))
    assert bifunctional(m, lambda e, s: np.zeros(len(e)), z, z) == 0.0
    assert bifunctional(m, lambda e, s: np.ones(len(e)), z, z) == pytest.approx(m.area, abs=1e-14)
    inf = np.zeros(m.npts)
    inf[3] = np.inf
    assert bifunctional(m, lambda e, s: inf, z, z) == math.inf


def test_bifunctional_elastic_duality(moduli, rng):
    m = skewed_mesh()
    eps = strain_op(m, rng.standard_normal(m.ndof))
    sig = moduli.stiffness(eps)
    val = bifunctional(m, lambda e, s: elastic_bipotential(moduli, e, s), eps, sig)
    # independent duality integral from explicit 3x3 tensors
    dens = oracles.ddot(oracles.mat(eps), oracles.mat(sig))
    ref = float(np.sum(m.weights * dens))
    assert abs(val - ref) <= 1e-12 * abs(ref)


def test_renumbering_invariance(moduli, rng):
    m = skewed_mesh()
    perm = rng.permutation(len(m.nodes))
    m2 = m.renumbered(perm)
    u = rng.standard_normal(m.ndof)
    u2 = np.empty_like(u)
    u2.reshape(-1, 2)[perm] = u.reshape(-1, 2)

    def b(e, s):
        return elastic_bipotential(moduli, e, s)

    e1, e2 = strain_op(m, u), strain_op(m2, u2)
    v1 = bifunctional(m, b, e1, moduli.stiffness(e1))
    v2 = bifunctional(m2, b, e2, moduli.stiffness(e2))
    assert abs(v1 - v2) <= 1e-14 * abs(v1)


# -- gradient assembly ------------------------------------------------------------

def test_grad_u_elastic_is_stiffness(moduli, params, rng):
    m = clamped(3, 3)
    # node 0 pinned, node 1 on a vertical roller: the minimal support
    m = Mesh(m.nodes, m.elements, np.isin(np.arange(m.ndof), [0, 1, 3]))
    u = 1e-5 * rng.standard_normal(m.ndof)
    ev = DeltaB(moduli, params, np.zeros((m.npts, 6)))
    g = bifunctional_grad_u(m, ev, u, np.zeros((m.npts, 6)))
    # oracle stiffness from the independent Q4 assembly
    K = _oracle_stiffness(m, moduli)
    ref = K @ u
    ref[m.dirichlet_mask] = 0.0
    assert np.max(np.abs(g - ref)) <= 1e-12 * np.max(np.abs(ref))


def _oracle_stiffness(m, moduli):
    n = m.ndof
    K = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        fixed = np.ones(n, bool)
        # internal force of a unit displacement through the oracle's stresses
        _, sig = oracles.q4_elastic_solve(m.nodes, m.elements, moduli.lam,
                                          moduli.mu, fixed, e)
        K[:, j] = m.internal_force(sig)
    return K


def test_grad_u_zero(moduli, params):
    m = clamped(2, 2)
    ev = DeltaB(moduli, params, np.zeros((m.npts, 6)))
    z = np.zeros((m.npts, 6))
    assert np.all(bifunctional_grad_u(m, ev, np.zeros(m.ndof), z) == 0.0)


def test_grad_u_finite_differences(moduli, params, rng):
    m = Mesh.structured(2, 2, dirichlet=[("bottom", "x", 0.0), ("bottom", "y", 0.0)])
    from bipotentials import samplers as S
    sig_k = S.random_admissible_stress(params, rng, m.npts)
    ev = DeltaB(moduli, params, sig_k)
    dsig = np.zeros((m.npts, 6))
    u = 0.02 * rng.standard_normal(m.ndof) * m.free

    def B(v):
        return bifunctional(m, ev.value, strain_op(m, v), dsig)

    g = bifunctional_grad_u(m, ev, u, dsig)
    h = 1e-5
    for _ in range(20):
        d = rng.standard_normal(m.ndof) * m.free
        d /= np.linalg.norm(d)
        f = [B(u + k * h * d) for k in (-2, -1, 1, 2)]
        fd = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
        assert abs(fd - g @ d) <= 1e-6 * max(abs(g @ d), np.linalg.norm(g))
    assert np.all(g[m.dirichlet_mask] == 0.0)


# -- static admissibility --------------------------------------------------------------

def test_sa_residual_examples(rng):
    m = clamped(3, 3)
    assert sa_residual(m, np.zeros((m.npts, 6))) == 0.0
    const = np.tile(rng.standard_normal(6), (m.npts, 1))
    assert sa_residual(m, const) <= 1e-14
    free = skewed_mesh()
    assert sa_residual(free, np.tile(rng.standard_normal(6), (free.npts, 1))) > 1e-3


def test_elastic_solution_is_equilibrated(moduli):
    m = Mesh.structured(3, 3, dirichlet=[("bottom", "x", 0.0), ("bottom", "y", 0.0)],
                        tractions=[("top", (0.1, -0.2))])
    loads = m.load_increment(1.0, 1.0)
    u = m.elastic_solve(moduli, loads)
    sig = moduli.stiffness(m.strain(u))
    assert m.equilibrium_residual(sig, loads.force) <= 1e-12
    # the traction data are consistent: total vertical force on the top edge
    assert np.sum(loads.force[1::2]) == pytest.approx(-0.2)
    assert Loads.zero(4).scaled(2.0, 3.0).force.tolist() == [0.0] * 4


def test_patch_single_element(moduli):
    A = np.array([[1e-4, 3e-5], [3e-5, -2e-4]])
    m0 = Mesh.structured(1, 1, dirichlet=[(e, c, 0.0) for e in ("left", "right")
                                          for c in ("x", "y")])
    vals = linear_field(m0, A)
    m = Mesh(m0.nodes, m0.elements, m0.dirichlet_mask, vals)
    u = m.elastic_solve(moduli, m.load_increment(1.0, 0.0))
    ref, sig_ref = oracles.q4_elastic_solve(m.nodes, m.elements, moduli.lam, moduli.mu,
                                            m.dirichlet_mask, vals)
    assert np.max(np.abs(u - ref)) <= 1e-10 * np.max(np.abs(ref))
    assert np.max(np.abs(moduli.stiffness(m.strain(u)) - sig_ref)) <= 1e-10


# -- material point driver -------------------------------------------------------------

def test_driver_elastic_path(moduli, params, rng):
    d = mdev(rng.standard_normal(6))
    path = [t * 1e-3 * d / mnorm(d) for t in range(6)]
    states = material_point_driver(path, moduli, params)
    for e, st in zip(path, states):
        assert np.allclose(st.sig[0], moduli.stiffness(e), atol=1e-14)
        assert np.all(st.eps_p == 0.0)


def test_driver_rejects_bad_path(moduli, params):
    with pytest.raises(ValueError):
        material_point_driver([np.ones(6)], moduli, params)
    with pytest.raises(ValueError):
        material_point_driver([np.zeros(6), np.ones(6)], moduli, params, dts=[0.0])


def test_driver_dilatancy_on_cone_boundary(moduli, params):
    d = np.array([1.0, -1.0, 0, 0, 0, 0]) / R2
    path = [t * 2e-3 * d for t in range(25)]
    states = material_point_driver(path, moduli, params)
    ep = np.array([s.eps_p[0] for s in states])
    beta = params.k_d * params.tan_theta
    plastic = mnorm(mdev(ep)) > 1e-8
    assert plastic.sum() >= 10
    # tr eps_p == k_d tan(theta) |dev eps_p| once plastic flow has started
    assert np.allclose(mtrace(ep[plastic]), beta * mnorm(mdev(ep[plastic])),
                       rtol=1e-8)
    # monotone growth
    assert np.all(np.diff(mtrace(ep)) >= -1e-15)


def test_driver_associated_matches_return_map(moduli, rng):
    p = DruckerPragerParams.from_degrees(1.0, 30.0, 30.0, 1.0)
    d = mdev(rng.standard_normal(6))
    d /= mnorm(d)
    path = [t * 3e-3 * d + t * 1e-4 * np.r_[1, 1, 1, 0, 0, 0] for t in range(11)]
    states = material_point_driver(path, moduli, p)
    sig = np.zeros((3, 3))
    for k in range(10):
        deps = oracles.mat(path[k + 1] - path[k])
        sig, _ = oracles.return_map(moduli.lam, moduli.mu, 1.0, p.phi, p.theta, 1.0,
                                    sig, deps)
        assert np.max(np.abs(oracles.vec(sig) - states[k + 1].sig[0])) <= 1e-8
