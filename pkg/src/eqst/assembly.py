"""Sparse P1 assembly with planar or axisymmetric weighting.

Coefficients are given per element and quadrature point (shape ``(ne, nq)``
for scalars, ``(ne, nq, 2)`` for vectors, ``(ne, nq, 2, 2)`` for tensors);
per-element arrays and plain scalars are broadcast.  Operators follow

    stiffness   K[r, s] = int (C grad N_s) . grad N_r
    mass        M[r, s] = int c N_s N_r
    advective   A[r, s] = int (b . grad N_s) N_r
    load        f[r]    = int f N_r

with d(Omega) = dA (planar) or 2 pi rho dA (axisymmetric).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh


class AssemblyError(ValueError):
    pass


# Reference-triangle rules on barycentric coordinates; weights sum to 1.
def _rule(degree: int):
    if degree <= 2:
        lam = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 3)
        return lam, w
    s15 = math.sqrt(15.0)
    a1, a2 = (6 - s15) / 21, (6 + s15) / 21
    w1, w2 = (155 - s15) / 1200, (155 + s15) / 1200
    lam = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [1 - 2 * a1, a1, a1], [a1, 1 - 2 * a1, a1], [a1, a1, 1 - 2 * a1],
        [1 - 2 * a2, a2, a2], [a2, 1 - 2 * a2, a2], [a2, a2, 1 - 2 * a2],
    ])
    w = np.array([9 / 40, w1, w1, w1, w2, w2, w2])
    return lam, w


class P1Space:
    """Geometry, quadrature and sparsity pattern of a mesh.

    ``degree`` selects the 3-point (2) or 7-point (5) rule; by default the
    7-point rule is used for axisymmetric meshes.
    """

    def __init__(self, mesh: Mesh, degree: int | None = None):
        if degree is None:
            degree = 5 if mesh.axisymmetric else 2
        self.mesh = mesh
        self.degree = 2 if degree <= 2 else 5
        self.n = mesh.n_nodes
        tri = mesh.triangles
        self.tri = tri
        self.ne = len(tri)

        p = mesh.nodes[tri]                       # (ne, 3, 2)
        self.area = mesh.signed_areas()
        x, y = p[..., 0], p[..., 1]
        j, k = [1, 2, 0], [2, 0, 1]
        g = np.empty((self.ne, 3, 2))
        g[..., 0] = y[:, j] - y[:, k]
        g[..., 1] = x[:, k] - x[:, j]
        self.grads = g / (2.0 * self.area)[:, None, None]
        self._abs_gg = np.abs(np.einsum("eri,esi->ers", self.grads, self.grads))

        lam, w = _rule(self.degree)
        self.N = lam                              # (nq, 3) shape values
        self.nq = len(w)
        self.xq = np.einsum("qa,eac->eqc", lam, p)
        wq = w[None, :] * self.area[:, None]
        if mesh.axisymmetric:
            wq = wq * 2.0 * math.pi * self.xq[..., 0]
        self.wq = wq                              # (ne, nq)

        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        key = rows * self.n + cols
        uniq, self._scatter = np.unique(key, return_inverse=True)
        self._scatter = self._scatter.ravel()
        self._indices = (uniq % self.n).astype(np.int32)
        counts = np.bincount(uniq // self.n, minlength=self.n)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self._nnz = len(uniq)

    # -- field helpers -------------------------------------------------------
    def grad(self, u) -> np.ndarray:
        """Element-constant gradient (ne, 2) of a nodal field."""
        return np.einsum("eac,ea->ec", self.grads, np.asarray(u, dtype=float)[self.tri])

    def at_qp(self, v) -> np.ndarray:
        """Nodal field interpolated to quadrature points (ne, nq)."""
        return np.asarray(v, dtype=float)[self.tri] @ self.N.T

    def integrate(self, f) -> float:
        return float(np.sum(self.wq * self._scalar(f)))

    # -- coefficient handling ------------------------------------------------
    def _scalar(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.ndim == 1 and c.shape[0] == self.ne:
            c = c[:, None]
        return np.broadcast_to(c, (self.ne, self.nq))

    def _check(self, c, what):
        bad = ~np.isfinite(c)
        if bad.any():
            e = int(np.argwhere(bad)[0][0])
            raise AssemblyError(f"non-finite {what} coefficient on element {e}")

    def _matrix(self, ke: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self._scatter, weights=ke.ravel(), minlength=self._nnz)
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(self.n, self.n))

    # -- operators -----------------------------------------------------------
    def stiffness(self, coeff=1.0) -> sp.csr_matrix:
        c = np.asarray(coeff, dtype=float)
        if c.ndim >= 2 and c.shape[-2:] == (2, 2):
            if c.ndim == 3:
                c = c[:, None]
            c = np.broadcast_to(c, (self.ne, self.nq, 2, 2))
            self._check(c, "stiffness")
            cbar = np.einsum("eq,eqij->eij", self.wq, c)
            ke = np.einsum("eri,eij,esj->ers", self.grads, cbar, self.grads)
        else:
            c = self._scalar(c)
            self._check(c, "stiffness")
            cbar = np.sum(self.wq * c, axis=1)
            ke = cbar[:, None, None] * np.einsum("eri,esi->ers", self.grads, self.grads)
        return self._matrix(ke)

    def mass(self, coeff=1.0) -> sp.csr_matrix:
        c = self._scalar(coeff)
        self._check(c, "mass")
        ke = np.einsum("eq,qr,qs->ers", self.wq * c, self.N, self.N)
        return self._matrix(ke)

    def advective(self, b) -> sp.csr_matrix:
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            b = b[:, None, :]
        b = np.broadcast_to(b, (self.ne, self.nq, 2))
        self._check(b, "vector")
        bs = np.einsum("eqi,esi->eqs", b, self.grads)
        ke = np.einsum("eq,qr,eqs->ers", self.wq, self.N, bs)
        return self._matrix(ke)

    def load(self, f=1.0) -> np.ndarray:
        f = self._scalar(f)
        self._check(f, "load")
        fe = np.einsum("eq,qr->er", self.wq * f, self.N)
        return np.bincount(self.tri.ravel(), weights=fe.ravel(), minlength=self.n)

    # -- matrix-free products -------------------------------------------------
    def flux(self, coeff, g) -> np.ndarray:
        """``stiffness(coeff) @ u`` given the element gradients ``g`` of u."""
        cbar = np.sum(self.wq * self._scalar(coeff), axis=1)
        fe = cbar[:, None] * np.einsum("eri,ei->er", self.grads, g)
        return np.bincount(self.tri.ravel(), weights=fe.ravel(), minlength=self.n)


    def abs_action(self, coeff, u) -> np.ndarray:
        """Row magnitudes ``|K(coeff)| |u|`` for a scalar coefficient.

        This bounds the round-off in ``K u`` row by row, so it serves as the
        per-row scale of a residual.
        """
        cbar = np.sum(self.wq * np.abs(self._scalar(coeff)), axis=1)
        fe = cbar[:, None] * np.einsum("ers,es->er", self._abs_gg, np.abs(np.asarray(u, dtype=float))[self.tri])
        return np.bincount(self.tri.ravel(), weights=fe.ravel(), minlength=self.n)


def _space(mesh_or_space) -> P1Space:
    return mesh_or_space if isinstance(mesh_or_space, P1Space) else P1Space(mesh_or_space)


def assemble_stiffness(mesh, coeff=1.0) -> sp.csr_matrix:
    """``int (coeff grad N_s) . grad N_r``; coeff scalar or 2x2 tensor."""
    return _space(mesh).stiffness(coeff)


def assemble_mass(mesh, coeff=1.0) -> sp.csr_matrix:
    return _space(mesh).mass(coeff)


def assemble_vector_weighted(mesh, b) -> sp.csr_matrix:
    """``A[r, s] = int (b . grad N_s) N_r`` (generally nonsymmetric)."""
    return _space(mesh).advective(b)


def assemble_load(mesh, f=1.0) -> np.ndarray:
    return _space(mesh).load(f)


# ---------------------------------------------------------------------------
# Dirichlet elimination
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DirichletSet:
    """Prescribed nodal values; nodes must lie on tagged boundary edges."""

    mesh: Mesh
    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64).ravel()
        values = np.broadcast_to(np.asarray(self.values, dtype=float), nodes.shape).copy()
        order = np.argsort(nodes, kind="stable")
        nodes, values = nodes[order], values[order]
        if np.any(np.diff(nodes) == 0):
            raise AssemblyError("duplicate Dirichlet node")
        tagged = np.unique(self.mesh.edges.ravel())
        stray = np.setdiff1d(nodes, tagged)
        if stray.size:
            raise AssemblyError(f"Dirichlet node {stray[0]} is not on any tagged boundary")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_tags(cls, mesh: Mesh, tag_values: dict[str, float]) -> "DirichletSet":
        """Constant value per boundary tag; nodes shared by tags with
        different values are rejected."""
        value_of: dict[int, float] = {}
        for tag, val in tag_values.items():
            for node in mesh.boundary_nodes([tag]).tolist():
                if node in value_of and value_of[node] != val:
                    raise AssemblyError(f"node {node} receives conflicting Dirichlet values")
                value_of[node] = float(val)
        nodes = np.array(sorted(value_of), dtype=np.int64)
        return cls(mesh, nodes, np.array([value_of[n] for n in nodes.tolist()]))

    def free(self) -> np.ndarray:
        mask = np.ones(self.mesh.n_nodes, dtype=bool)
        mask[self.nodes] = False
        return np.flatnonzero(mask)

    def lift(self) -> np.ndarray:
        """Full vector holding the prescribed values and zeros elsewhere."""
        u = np.zeros(self.mesh.n_nodes)
        u[self.nodes] = self.values
        return u


@dataclass
class ReducedSystem:
    K: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    bc: DirichletSet

    def expand(self, x_free) -> np.ndarray:
        u = self.bc.lift()
        u[self.free] = x_free
        return u

    def solve(self) -> np.ndarray:
        if len(self.free) == 0:
            return self.bc.lift()
        x = spla.spsolve(self.K.tocsc(), self.rhs)
        return self.expand(np.atleast_1d(x))


def apply_dirichlet(K, rhs, bc: DirichletSet) -> ReducedSystem:
    """Eliminate prescribed DoFs: ``K_ff x_f = rhs_f - K_fd u_d``."""
    K = sp.csr_matrix(K)
    rhs = np.asarray(rhs, dtype=float)
    free = bc.free()
    Kf = K[free]
    reduced_rhs = rhs[free] - Kf[:, bc.nodes] @ bc.values
    return ReducedSystem(Kf[:, free].tocsr(), reduced_rhs, free, bc)
