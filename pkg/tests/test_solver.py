import math

import numpy as np
import pytest

import oracles
from bipotentials import samplers as S
from bipotentials.discretization import Loads, Mesh, bifunctional, material_point_driver
from bipotentials.materials import DruckerPragerParams, sig_in_k_stress
from bipotentials.tensors import IDENTITY6, mdev, mnorm
from bipotentials.timestep import StepState, homogenize
from bipotentials.solver import (SolverConfig, SolverError, global_step,
                                 local_step, project_stress, run_evolution,
                                 solve_homogenized, solve_step, verify_weak)

R2 = math.sqrt(2.0)


def shear_mesh(nx=4, ny=4, top=0.02):
    return Mesh.structured(nx, ny, dirichlet=[("bottom", "x", 0.0), ("bottom", "y", 0.0),
                                              ("top", "x", top), ("top", "y", 0.0)])


def homogeneous_element(A):
    """One element with every node on a prescribed linear field ``A x``."""
    m0 = Mesh.structured(1, 1, dirichlet=[(e, c, 0.0) for e in ("bottom", "top")
                                          for c in ("x", "y")])
    vals = (m0.nodes @ np.asarray(A).T).ravel()
    return Mesh(m0.nodes, m0.elements, m0.dirichlet_mask, vals)


def strain_of(A):
    E = 0.5 * (np.asarray(A) + np.asarray(A).T)
    return np.array([E[0, 0], E[1, 1], 0.0, R2 * E[0, 1], 0.0, 0.0])


def test_config_validation():
    with pytest.raises(ValueError) as exc:
        SolverConfig(variant="other", outer_tol=0.0, max_outer=0)
    msg = str(exc.value)
    assert "variant" in msg and "outer_tol" in msg and "max_outer" in msg


# -- global step ---------------------------------------------------------------------

def test_global_step_zero(moduli, params):
    disc = shear_mesh(2, 2)
    h = homogenize(disc, moduli, params, StepState.zero(disc.ndof, disc.npts),
                   Loads.zero(disc.ndof), 1.0)
    u, info = global_step(disc, h, np.zeros((disc.npts, 6)), np.zeros(disc.ndof))
    assert np.all(u == 0.0) and info["iterations"] == 0


def test_global_step_elastic_linear_solve(moduli, params):
    disc = Mesh.structured(3, 3, dirichlet=[("bottom", "x", 0.0), ("bottom", "y", 0.0),
                                            ("top", "y", -1e-4)],
                           tractions=[("right", (1e-3, 0.0))])
    st = StepState.zero(disc.ndof, disc.npts)
    loads = disc.load_increment(1.0, 1.0)
    u_el = disc.elastic_solve(moduli, loads)
    # a non-elastic displacement lift: the global step must recover u_el
    u_bar = np.where(disc.dirichlet_mask, loads.u_dirichlet, 0.0)
    h = homogenize(disc, moduli, params, st, loads, 1.0, u_bar=u_bar,
                   sig_bar=moduli.stiffness(disc.strain(u_el)))
    u, info = global_step(disc, h, np.zeros((disc.npts, 6)), np.zeros(disc.ndof))
    assert info["iterations"] <= 2
    assert np.max(np.abs(u + u_bar - u_el)) <= 1e-12 * np.max(np.abs(u_el))


def test_global_step_plastic_minimality(moduli, params, rng):
    disc = shear_mesh(2, 2)
    st = StepState.zero(disc.ndof, disc.npts)
    h = homogenize(disc, moduli, params, st, disc.load_increment(1.0, 0.0), 1.0)
    sig = project_stress(moduli, params, np.zeros((disc.npts, 6)),
                         offset=h.evaluator.sig_k, shift=h.sig_bar)[0]
    u, _ = global_step(disc, h, sig, np.zeros(disc.ndof))
    base = bifunctional(disc, h.value, disc.strain(u), sig)
    assert math.isfinite(base)
    for _ in range(1000):
        d = rng.standard_normal(disc.ndof) * disc.free * 10 ** rng.uniform(-6, -2)
        assert bifunctional(disc, h.value, disc.strain(u + d), sig) >= base - 1e-14


# -- local step -----------------------------------------------------------------------

def test_local_step_elastic(moduli, params, rng):
    disc = shear_mesh(2, 2)
    h = homogenize(disc, moduli, params, StepState.zero(disc.ndof, disc.npts),
                   Loads.zero(disc.ndof), 1.0)
    u = 1e-5 * rng.standard_normal(disc.ndof) * disc.free
    sig = local_step(disc, h, u, np.zeros((disc.npts, 6)))
    assert np.allclose(sig, moduli.stiffness(disc.strain(u)), rtol=1e-13, atol=1e-18)


def test_local_step_fixed_point(moduli, params):
    A = np.array([[0.0, 0.03], [0.0, 0.002]])
    disc = homogeneous_element(A)
    st = StepState.zero(disc.ndof, disc.npts)
    states = material_point_driver([np.zeros(6), strain_of(A)], moduli, params)
    dsig = np.tile(states[1].sig[0], (disc.npts, 1))
    assert np.any(states[1].eps_p != 0.0)
    h = homogenize(disc, moduli, params, st, disc.load_increment(1.0, 0.0), 1.0)
    sig_h = dsig - h.sig_bar
    out = local_step(disc, h, np.zeros(disc.ndof), sig_h)
    assert np.max(np.abs(out - sig_h)) <= 1e-10


def test_projection_examples(moduli, params, rng):
    inside = S.random_admissible_stress(params, rng, 20)
    out, n = project_stress(moduli, params, inside)
    assert n == 0 and np.array_equal(out, inside)
    tension = np.tile(3.0 * params.C1 * IDENTITY6, (3, 1))
    out, n = project_stress(moduli, params, tension)
    assert n == 3
    assert np.allclose(out, params.C1 / 3.0 * IDENTITY6, atol=1e-14)
    assert sig_in_k_stress(params, out).all()
    far = 5.0 * rng.standard_normal((200, 6))
    out, _ = project_stress(moduli, params, far)
    assert sig_in_k_stress(params, out).all()


# -- one step -------------------------------------------------------------------------

def test_solve_step_zero_load(moduli, params):
    disc = shear_mesh(2, 2)
    st = StepState.zero(disc.ndof, disc.npts)
    inc, trace, _ = solve_step(disc, moduli, params, st, Loads.zero(disc.ndof), 1.0,
                               SolverConfig())
    assert len(trace) == 1
    assert np.all(inc.du == 0.0) and np.all(inc.dsig == 0.0)


@pytest.mark.parametrize("variant", ["plain", "projected"])
def test_solve_step_elastic(moduli, params, variant):
    disc = shear_mesh(3, 3, top=1e-4)
    st = StepState.zero(disc.ndof, disc.npts)
    loads = disc.load_increment(1.0, 0.0)
    inc, trace, _ = solve_step(disc, moduli, params, st, loads, 1.0,
                               SolverConfig(variant=variant))
    assert len(trace) <= 2
    u_ref, sig_ref = oracles.q4_elastic_solve(disc.nodes, disc.elements, moduli.lam,
                                              moduli.mu, disc.dirichlet_mask,
                                              disc.dirichlet_values)
    assert np.max(np.abs(inc.du - u_ref)) <= 1e-10 * np.max(np.abs(u_ref))
    assert np.max(np.abs(inc.dsig - sig_ref)) <= 1e-10 * np.max(np.abs(sig_ref))
    assert np.all(inc.deps_p == 0.0)


def test_solve_step_associated_single_element(moduli):
    p = DruckerPragerParams.from_degrees(1.0, 30.0, 30.0, 1.0)
    A = np.array([[0.004, 0.03], [0.0, -0.002]])
    disc = homogeneous_element(A)
    st = StepState.zero(disc.ndof, disc.npts)
    inc, trace, _ = solve_step(disc, moduli, p, st, disc.load_increment(1.0, 0.0),
                               1.0, SolverConfig())
    sig_ref, _ = oracles.return_map(moduli.lam, moduli.mu, 1.0, p.phi, p.theta, 1.0,
                                    np.zeros((3, 3)), oracles.mat(strain_of(A)))
    assert np.max(np.abs(inc.dsig - oracles.vec(sig_ref))) <= 1e-8
    assert np.any(inc.deps_p != 0.0)


def test_plain_variant_error_path(moduli, params):
    disc = shear_mesh()
    st = StepState.zero(disc.ndof, disc.npts)
    with pytest.raises(SolverError) as exc:
        solve_step(disc, moduli, params, st, disc.load_increment(1.0, 0.0), 1.0,
                   SolverConfig(variant="plain"))
    assert exc.value.trace is not None and len(exc.value.trace) >= 1


def test_non_convergence_is_reported(moduli, params):
    disc = shear_mesh(2, 2)
    st = StepState.zero(disc.ndof, disc.npts)
    with pytest.raises(SolverError) as exc:
        solve_step(disc, moduli, params, st, disc.load_increment(1.0, 0.0), 1.0,
                   SolverConfig(max_outer=2))
    assert len(exc.value.trace) == 2


# -- weak check ------------------------------------------------------------------------

def test_verify_weak_elastic_and_perturbed(moduli, params, rng):
    disc = shear_mesh(2, 2, top=1e-4)
    st = StepState.zero(disc.ndof, disc.npts)
    h = homogenize(disc, moduli, params, st, disc.load_increment(1.0, 0.0), 1.0)
    u_h, sig_h, _ = solve_homogenized(disc, h, SolverConfig())
    good = verify_weak(disc, h, u_h, sig_h, 300, rng)
    assert good["worst_margin"] >= -1e-14
    bad_u = u_h + 1e-3 * rng.standard_normal(disc.ndof) * disc.free
    bad = verify_weak(disc, h, bad_u, sig_h, 300, rng)
    assert bad["worst_margin"] < 0.0


def test_verify_weak_plastic(moduli, params, rng):
    disc = shear_mesh(2, 2, top=0.01)
    st = StepState.zero(disc.ndof, disc.npts)
    h = homogenize(disc, moduli, params, st, disc.load_increment(1.0, 0.0), 1.0)
    u_h, sig_h, trace = solve_homogenized(disc, h, SolverConfig())
    assert any(r["projected"] for r in trace.records) or np.any(
        h.split(disc.strain(u_h), sig_h)[1] != 0.0)
    rep = verify_weak(disc, h, u_h, sig_h, 300, rng)
    assert rep["worst_margin"] >= -1e-8 * (1 + abs(rep["bifunctional"]))


# -- evolution --------------------------------------------------------------------------

def test_run_evolution_zero_schedule(moduli, params):
    disc = shear_mesh(2, 2)
    st = StepState.zero(disc.ndof, disc.npts)
    states, records = run_evolution(disc, moduli, params, st, [(1.0, 0.0, 0.0)] * 3,
                                    SolverConfig())
    assert len(states) == 4
    for s in states:
        assert np.all(s.u == 0.0) and np.all(s.sig == 0.0)
    with pytest.raises(ValueError):
        run_evolution(disc, moduli, params, st, [], SolverConfig())


def test_run_evolution_unloading_is_elastic(moduli, params):
    disc = shear_mesh(2, 2, top=0.01)
    st = StepState.zero(disc.ndof, disc.npts)
    sched = [(1.0, 0.5, 0.0), (1.0, 1.0, 0.0), (1.0, 0.9, 0.0), (1.0, 0.8, 0.0)]
    states, records = run_evolution(disc, moduli, params, st, sched, SolverConfig())
    assert np.max(np.abs(states[2].eps_p)) > 1e-4
    for k in (3, 4):
        assert np.max(np.abs(states[k].eps_p - states[2].eps_p)) <= 1e-10
        # trial stresses of the unloading steps stay inside the cone
        assert sig_in_k_stress(params, states[k].sig).all()
    for s in states:
        assert s.elastic_consistency(moduli) <= 1e-10
    for r in records:
        assert r.residuals["max"] <= 1e-7


def test_run_evolution_matches_driver(moduli, params):
    A = np.array([[0.0, 0.02], [0.0, 0.0]])
    disc = homogeneous_element(A)
    st = StepState.zero(disc.ndof, disc.npts)
    sched = [(1.0, 0.1 * (k + 1), 0.0) for k in range(10)]
    states, _ = run_evolution(disc, moduli, params, st, sched, SolverConfig())
    path = [0.1 * k * strain_of(A) for k in range(11)]
    ref = material_point_driver(path, moduli, params)
    for s, r in zip(states, ref):
        assert np.max(np.abs(s.eps_p - r.eps_p[0])) <= 1e-8
    ep = np.array([s.eps_p[0] for s in states[1:]])
    dirs = mdev(ep[mnorm(mdev(ep)) > 0])
    dirs /= mnorm(dirs)[:, None]
    assert np.allclose(dirs, dirs[-1], atol=1e-6)


def test_step_determinism(moduli, params):
    disc = shear_mesh(2, 2, top=0.01)
    st = StepState.zero(disc.ndof, disc.npts)
    run = [solve_step(disc, moduli, params, st, disc.load_increment(1.0, 0.0), 1.0,
                      SolverConfig()) for _ in range(2)]
    assert np.array_equal(run[0][0].dsig, run[1][0].dsig)
    assert run[0][1].records == run[1][1].records
