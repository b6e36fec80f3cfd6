"""Spatial discretization: structured plane-strain Q4 meshes.

Bilinear quadrilaterals with 2x2 Gauss quadrature. Strains and stresses at
quadrature points are Mandel 6-vectors with the full 3-D layout: in plane
strain ``eps_33`` and the out-of-plane shears vanish, while ``sig_33`` is
carried along so that the Drucker-Prager cones act on 3-D stresses.

Point fields are ordered element by element, quadrature point by quadrature
point; all assembly loops run in that order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .materials import DruckerPragerParams, ElasticModuli
from .tensors import SQRT2, as_mandel
from .timestep import StepState, solve_point

_GP = 1.0 / math.sqrt(3.0)
GAUSS_POINTS = np.array([[-_GP, -_GP], [_GP, -_GP], [_GP, _GP], [-_GP, _GP]])
GAUSS_WEIGHTS = np.ones(4)
EDGES = ("left", "right", "bottom", "top")
_COMPONENTS = {"x": 0, "y": 1}


class DegenerateElementError(ValueError):
    """An element has a non-positive Jacobian at a quadrature point."""


def _shape_derivatives(xi, eta):
    """Derivatives of the four bilinear shape functions, shape (2, 4)."""
    return 0.25 * np.array([
        [-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
        [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)],
    ])


@dataclass(frozen=True)
class Loads:
    """Data of one load increment.

    ``u_dirichlet`` holds prescribed displacement increments (only the
    entries at Dirichlet dofs are used) and ``force`` the consistent nodal
    external force increment.
    """

    u_dirichlet: np.ndarray
    force: np.ndarray

    @classmethod
    def zero(cls, ndof: int) -> "Loads":
        return cls(np.zeros(ndof), np.zeros(ndof))

    def scaled(self, boundary: float, load: float) -> "Loads":
        return Loads(boundary * self.u_dirichlet, load * self.force)


class Mesh:
    """Plane-strain Q4 mesh with Dirichlet mask and load data.

    Parameters
    ----------
    nodes : array, shape (nnodes, 2)
    elements : int array, shape (nel, 4)
        Counter-clockwise node numbers.
    dirichlet_mask : bool array, shape (2 * nnodes,)
        Constrained dofs (dof ``2 i + c`` is component ``c`` of node ``i``).
    dirichlet_values : array, shape (2 * nnodes,), optional
        Reference prescribed displacements (scaled by the schedule).
    force : array, shape (2 * nnodes,), optional
        Reference external nodal forces (scaled by the schedule).
    """

    def __init__(self, nodes, elements, dirichlet_mask, dirichlet_values=None,
                 force=None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.elements = np.asarray(elements, dtype=int)
        self.ndof = 2 * len(self.nodes)
        self.dirichlet_mask = np.asarray(dirichlet_mask, dtype=bool).copy()
        if self.dirichlet_mask.shape != (self.ndof,):
            raise ValueError("dirichlet mask must have one entry per dof")
        if not self.dirichlet_mask.any():
            raise ValueError("at least one Dirichlet dof is required")
        if not self._fixes_rigid_motions():
            raise ValueError("Dirichlet dofs do not fix the rigid-body motions "
                             "(two translations and the rotation)")
        self.dirichlet_values = (np.zeros(self.ndof) if dirichlet_values is None
                                 else np.asarray(dirichlet_values, float).copy())
        self.force = (np.zeros(self.ndof) if force is None
                      else np.asarray(force, float).copy())
        self.free = ~self.dirichlet_mask
        self.dofs = np.stack([2 * self.elements, 2 * self.elements + 1],
                             axis=-1).reshape(len(self.elements), 8)
        self._build_operators()

    def _fixes_rigid_motions(self) -> bool:
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        R = np.zeros((self.ndof, 3))
        R[0::2, 0] = 1.0
        R[1::2, 1] = 1.0
        R[0::2, 2], R[1::2, 2] = -y, x
        return np.linalg.matrix_rank(R[self.dirichlet_mask]) == 3

    # -- construction ------------------------------------------------------
    @classmethod
    def structured(cls, nx: int, ny: int, lx: float = 1.0, ly: float = 1.0,
                   dirichlet=(), tractions=(), body_force=(0.0, 0.0)) -> "Mesh":
        """Rectangular ``[0, lx] x [0, ly]`` mesh of ``nx x ny`` elements.

        ``dirichlet`` is a sequence of ``(edge, component, value)`` with edge
        in {left, right, bottom, top} and component ``"x"`` or ``"y"``;
        ``tractions`` a sequence of ``(edge, (tx, ty))`` uniform edge loads.
        """
        if nx < 1 or ny < 1:
            raise ValueError("nx and ny must be >= 1")
        xs = np.linspace(0.0, lx, nx + 1)
        ys = np.linspace(0.0, ly, ny + 1)
        X, Y = np.meshgrid(xs, ys)
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        elements = []
        for j in range(ny):
            for i in range(nx):
                n0 = j * (nx + 1) + i
                elements.append([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
        edge_nodes = _edge_nodes(nx, ny)
        ndof = 2 * len(nodes)
        mask = np.zeros(ndof, dtype=bool)
        values = np.zeros(ndof)
        for edge, comp, value in dirichlet:
            c = _COMPONENTS[comp] if isinstance(comp, str) else int(comp)
            idx = 2 * edge_nodes[edge] + c
            mask[idx] = True
            values[idx] = value
        force = np.zeros(ndof)
        for edge, vec in tractions:
            force += _edge_load(nodes, edge_nodes[edge], np.asarray(vec, float))
        mesh = cls(nodes, elements, mask, values, force)
        fv = np.asarray(body_force, float)
        if np.any(fv != 0.0):
            mesh.force = mesh.force + mesh.body_load(fv)
        return mesh

    def renumbered(self, perm) -> "Mesh":
        """Same mesh with node ``i`` moved to position ``perm[i]``."""
        perm = np.asarray(perm, dtype=int)
        inv = np.argsort(perm)
        dof_perm = np.stack([2 * inv, 2 * inv + 1], axis=-1).ravel()
        return Mesh(self.nodes[inv], perm[self.elements],
                    self.dirichlet_mask[dof_perm], self.dirichlet_values[dof_perm],
                    self.force[dof_perm])

    def _build_operators(self):
        nel = len(self.elements)
        B = np.zeros((nel, 4, 6, 8))
        wdet = np.zeros((nel, 4))
        self._N = np.zeros((4, 4))
        for q, (xi, eta) in enumerate(GAUSS_POINTS):
            self._N[q] = 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                                          (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
            dN = _shape_derivatives(xi, eta)
            xe = self.nodes[self.elements]              # (nel, 4, 2)
            J = np.einsum("an,enb->eab", dN, xe)        # (nel, 2, 2)
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            if np.any(det <= 0):
                bad = np.flatnonzero(det <= 0)
                raise DegenerateElementError(
                    f"non-positive Jacobian in elements {bad[:10].tolist()}")
            Jinv = np.linalg.inv(J)
            dNx = np.einsum("eab,bn->ean", Jinv, dN)    # (nel, 2, 4)
            B[:, q, 0, 0::2] = dNx[:, 0]
            B[:, q, 1, 1::2] = dNx[:, 1]
            B[:, q, 3, 0::2] = dNx[:, 1] / SQRT2
            B[:, q, 3, 1::2] = dNx[:, 0] / SQRT2
            wdet[:, q] = GAUSS_WEIGHTS[q] * det
        self.B = B
        self.wdet = wdet
        self.weights = wdet.ravel()
        self.npts = 4 * nel
        # sparse strain operator (npts*6, ndof)
        rows = np.arange(self.npts * 6).reshape(nel, 4, 6, 1)
        rows = np.broadcast_to(rows, B.shape)
        cols = np.broadcast_to(self.dofs[:, None, None, :], B.shape)
        self.D = sp.csr_matrix((B.ravel(), (rows.ravel(), cols.ravel())),
                               shape=(self.npts * 6, self.ndof))

    # -- basic operators ---------------------------------------------------
    @property
    def area(self) -> float:
        return float(np.sum(self.weights))

    def point_coordinates(self) -> np.ndarray:
        xe = self.nodes[self.elements]
        return np.einsum("qn,end->eqd", self._N, xe).reshape(-1, 2)

    def strain(self, u) -> np.ndarray:
        """Symmetric gradient at the quadrature points, shape (npts, 6)."""
        u = np.asarray(u, dtype=float)
        return np.einsum("eqij,ej->eqi", self.B, u[self.dofs]).reshape(self.npts, 6)

    def integrate(self, values) -> float:
        """``sum_q w_q |J_q| v_q`` in point order."""
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def internal_force(self, sig) -> np.ndarray:
        """``int D(w) : sig`` for every nodal basis function ``w``."""
        sig = np.asarray(sig, dtype=float).reshape(len(self.elements), 4, 6)
        fe = np.einsum("eq,eqij,eqi->ej", self.wdet, self.B, sig)
        out = np.zeros(self.ndof)
        np.add.at(out, self.dofs.ravel(), fe.ravel())
        return out

    def _force_scale(self, sig) -> np.ndarray:
        sig = np.asarray(sig, dtype=float).reshape(len(self.elements), 4, 6)
        fe = np.einsum("eq,eqij,eqi->ej", self.wdet, np.abs(self.B), np.abs(sig))
        out = np.zeros(self.ndof)
        np.add.at(out, self.dofs.ravel(), fe.ravel())
        return out

    def assemble(self, tangent) -> sp.csr_matrix:
        """``sum_q w_q B_q^T C_q B_q`` for point matrices ``C``, (npts, 6, 6)."""
        C = np.asarray(tangent, dtype=float)
        if C.ndim == 2:
            C = np.broadcast_to(C, (self.npts, 6, 6))
        C = C.reshape(len(self.elements), 4, 6, 6)
        Ke = np.einsum("eq,eqia,eqij,eqjb->eab", self.wdet, self.B, C, self.B)
        rows = np.broadcast_to(self.dofs[:, :, None], Ke.shape).ravel()
        cols = np.broadcast_to(self.dofs[:, None, :], Ke.shape).ravel()
        K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(self.ndof, self.ndof))
        return K.tocsr()

    def elastic_stiffness(self, moduli: ElasticModuli) -> sp.csr_matrix:
        return self.assemble(moduli.stiffness_matrix())

    def body_load(self, fv) -> np.ndarray:
        """Consistent nodal forces of a uniform body force ``fv``."""
        out = np.zeros(self.ndof)
        Nw = np.einsum("eq,qn->en", self.wdet, self._N)
        for c in range(2):
            np.add.at(out, 2 * self.elements.ravel() + c, (Nw * fv[c]).ravel())
        return out

    # -- load data and admissibility ---------------------------------------
    def load_increment(self, boundary_scale: float, load_scale: float) -> Loads:
        return Loads(boundary_scale * self.dirichlet_values,
                     load_scale * self.force)

    def solve_linear(self, K: sp.csr_matrix, rhs, u_dirichlet) -> np.ndarray:
        """Solve ``K u = rhs`` on the free dofs with prescribed Dirichlet values."""
        u = np.zeros(self.ndof)
        u[self.dirichlet_mask] = np.asarray(u_dirichlet, float)[self.dirichlet_mask]
        f, d = self.free, self.dirichlet_mask
        if f.any():
            Kff = K[f][:, f].tocsc()
            r = np.asarray(rhs, float)[f] - K[f][:, d] @ u[d]
            u[f] = spla.spsolve(Kff, r)
        return u

    def elastic_solve(self, moduli: ElasticModuli, loads: Loads) -> np.ndarray:
        """Linear elastic displacement for the given load increment."""
        return self.solve_linear(self.elastic_stiffness(moduli), loads.force,
                                 loads.u_dirichlet)

    def dirichlet_residual(self, u, values) -> float:
        """Max deviation from prescribed values on Dirichlet dofs (relative)."""
        u = np.asarray(u, float)[self.dirichlet_mask]
        v = np.asarray(values, float)[self.dirichlet_mask]
        return float(np.max(np.abs(u - v), initial=0.0)) / (
            1.0 + float(np.max(np.abs(v), initial=0.0)))

    def equilibrium_residual(self, sig, force, reference=None) -> float:
        """Weak equilibrium of ``sig`` with nodal forces, at free dofs.

        Normalized by the assembled absolute force scale of ``sig`` (plus
        that of an optional ``reference`` stress field), so the value is a
        relative residual.
        """
        fint = self.internal_force(sig)
        force = np.asarray(force, float)
        res = np.abs(fint - force)[self.free]
        scale = (np.max(self._force_scale(sig)[self.free], initial=0.0)
                 + np.max(np.abs(force[self.free]), initial=0.0))
        if reference is not None:
            scale += np.max(self._force_scale(reference)[self.free], initial=0.0)
        top = float(np.max(res, initial=0.0))
        if top == 0.0:
            return 0.0
        return top / scale if scale > 0 else math.inf

    def ca0_residual(self, u) -> float:
        """Max displacement on Dirichlet dofs (CA(0) membership)."""
        return float(np.max(np.abs(np.asarray(u, float)[self.dirichlet_mask]),
                            initial=0.0))


def _edge_nodes(nx: int, ny: int) -> dict:
    ids = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    return {"left": ids[:, 0], "right": ids[:, -1],
            "bottom": ids[0, :], "top": ids[-1, :]}


def _edge_load(nodes, edge_ids, traction) -> np.ndarray:
    """Consistent nodal forces of a uniform traction on a straight edge."""
    out = np.zeros(2 * len(nodes))
    for a, b in zip(edge_ids[:-1], edge_ids[1:]):
        length = float(np.linalg.norm(nodes[b] - nodes[a]))
        for n in (a, b):
            out[2 * n:2 * n + 2] += 0.5 * length * traction
    return out


# ---------------------------------------------------------------------------
# Generic operations on a mesh
# ---------------------------------------------------------------------------

def strain_op(disc: Mesh, u) -> np.ndarray:
    return disc.strain(u)


def bifunctional(disc: Mesh, b, eps_field, sig_field) -> float:
    """``B(eps, sig) = int b(eps, sig)`` by quadrature; ``+inf`` if any
    point value is ``+inf``."""
    vals = np.broadcast_to(np.asarray(b(eps_field, sig_field), dtype=float),
                           (disc.npts,))
    if not np.all(np.isfinite(vals)):
        return math.inf
    return disc.integrate(vals)


def bifunctional_grad_u(disc: Mesh, evaluator, u, sig_field) -> np.ndarray:
    """Gradient of ``v -> B(D(v), sig)`` at ``u``, zero at Dirichlet dofs.

    ``evaluator.grad(eps, sig)`` supplies the stress-valued gradient of the
    point function in its first argument.
    """
    g = disc.internal_force(evaluator.grad(disc.strain(u), sig_field))
    g[disc.dirichlet_mask] = 0.0
    return g


def sa_residual(disc: Mesh, sig_field, reference=None) -> float:
    """Relative weak-equilibrium residual of ``sig`` against zero loads.

    ``max_w |<D(w), sig>_1|`` over nodal basis functions ``w`` vanishing on
    the Dirichlet set, divided by the assembled absolute force scale of
    ``sig`` and of the optional ``reference`` field (useful when ``sig`` is
    itself a small correction).
    """
    return disc.equilibrium_residual(sig_field, np.zeros(disc.ndof), reference)


def material_point_driver(strain_path, moduli: ElasticModuli,
                          params: DruckerPragerParams, dts=None) -> list:
    """Strain-driven integration at a single material point.

    Parameters
    ----------
    strain_path : sequence of strains (Mandel arrays or SymTensor), starting
        at zero.
    dts : step lengths, one per increment (default 1).

    Returns
    -------
    list of StepState
        One state per path entry (``u`` is empty).
    """
    path = [np.asarray(as_mandel(e), dtype=float).reshape(6) for e in strain_path]
    if not path or np.any(path[0] != 0.0):
        raise ValueError("strain path must start at zero")
    nsteps = len(path) - 1
    dts = np.ones(nsteps) if dts is None else np.asarray(dts, dtype=float)
    if dts.shape != (nsteps,) or np.any(dts <= 0):
        raise ValueError("need one positive dt per increment")
    z = np.zeros((1, 6))
    states = [StepState(np.zeros(0), z.copy(), z.copy(), z.copy(), 0.0, 1.0)]
    for k in range(nsteps):
        st = states[-1]
        deps = path[k + 1] - path[k]
        dsig, dp = solve_point(moduli, params, st.sig[0], deps, dts[k])
        de = deps - dp
        states.append(StepState(np.zeros(0), st.eps_p + dp, st.eps_e + de,
                                st.sig + dsig, st.t + dts[k], dts[k]))
    return states
