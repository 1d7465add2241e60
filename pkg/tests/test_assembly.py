from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqst.assembly import (AssemblyError, DirichletSet, P1Space, apply_dirichlet, assemble_load,
                           assemble_mass, assemble_stiffness, assemble_vector_weighted)
from eqst.mesh import PLANAR, GeometrySpec, Mesh, Rect, generate_layered_mesh

UNIT = Mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]], ["a"], [[1, 2]], ["d"], PLANAR)


def box(mode=PLANAR, h=0.25, r0=0.0):
    return generate_layered_mesh(GeometrySpec([Rect(r0, r0 + 1.0, 0.0, 1.0, "a")], h, mode=mode))


def test_unit_triangle_element_matrices():
    K = assemble_stiffness(UNIT).toarray()
    np.testing.assert_allclose(K, [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]], atol=1e-15)
    M = assemble_mass(UNIT).toarray()
    np.testing.assert_allclose(M, (np.ones((3, 3)) + np.eye(3)) / 24.0, atol=1e-15)
    np.testing.assert_allclose(assemble_load(UNIT, 6.0), [1.0, 1.0, 1.0], atol=1e-15)


def test_axisymmetric_weights_are_exact_for_linear_rho():
    m = box("axisymmetric", h=0.2, r0=0.5)
    sp_ = P1Space(m)
    assert sp_.integrate(1.0) == pytest.approx(math.pi * (1.5**2 - 0.5**2), rel=1e-13)
    # int rho dV over the ring = 2 pi int rho^2 drho dz
    assert sp_.integrate(sp_.xq[..., 0]) == pytest.approx(2 * math.pi * (1.5**3 - 0.5**3) / 3, rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from([PLANAR, "axisymmetric"]))
def test_operator_identities(seed, mode):
    m = box(mode, h=0.25, r0=0.2)
    rng = np.random.default_rng(seed)
    c = rng.uniform(0.1, 10.0, m.n_triangles)
    ones = np.ones(m.n_nodes)
    K = assemble_stiffness(m, c)
    M = assemble_mass(m, c)
    np.testing.assert_allclose(K @ ones, 0.0, atol=1e-12 * abs(K).max())
    np.testing.assert_allclose((K - K.T).toarray(), 0.0, atol=1e-14 * abs(K).max())
    sp_ = P1Space(m)
    assert ones @ M @ ones == pytest.approx(sp_.integrate(c), rel=1e-12)
    assert np.all(np.linalg.eigvalsh(M.toarray()) > 0)
    b = rng.normal(size=(m.n_triangles, 2))
    A = assemble_vector_weighted(m, b)
    np.testing.assert_allclose(A @ ones, 0.0, atol=1e-12 * abs(A).max())
    # scalar coefficient equals the isotropic tensor
    np.testing.assert_allclose(sp_.stiffness(c[:, None, None] * np.eye(2)).toarray(), K.toarray(), rtol=1e-13)
    u = rng.normal(size=m.n_nodes)
    np.testing.assert_allclose(sp_.flux(c, sp_.grad(u)), K @ u, rtol=1e-12, atol=1e-12 * np.abs(K @ u).max())


def test_advective_matrix_against_directional_derivative():
    m = box(PLANAR, h=0.25)
    b = np.array([0.3, -1.2])
    A = assemble_vector_weighted(m, np.broadcast_to(b, (m.n_triangles, 2)))
    u = 2.0 * m.nodes[:, 0] + 5.0 * m.nodes[:, 1]       # b . grad u = -5.4 everywhere
    np.testing.assert_allclose(A @ u, -5.4 * assemble_load(m), atol=1e-12)


def test_linear_field_reproduced_exactly():
    m = box(PLANAR, h=0.2)
    edge = np.unique(m.edges.ravel())
    exact = 3.0 + 2.0 * m.nodes[:, 0] - 1.0 * m.nodes[:, 1]
    bc = DirichletSet(m, edge, exact[edge])
    u = apply_dirichlet(assemble_stiffness(m, 4.0), np.zeros(m.n_nodes), bc).solve()
    np.testing.assert_allclose(u, exact, atol=1e-12)


def test_dirichlet_validation():
    m = box(PLANAR, h=0.25)
    interior = np.setdiff1d(np.arange(m.n_nodes), m.edges.ravel())[0]
    with pytest.raises(AssemblyError, match="not on any tagged boundary"):
        DirichletSet(m, [interior], [0.0])
    node = m.edges[0, 0]
    with pytest.raises(AssemblyError, match="duplicate"):
        DirichletSet(m, [node, node], [0.0, 1.0])
    two = Mesh(UNIT.nodes, UNIT.triangles, UNIT.regions, [[1, 2], [0, 1]], ["x", "y"], PLANAR)
    with pytest.raises(AssemblyError, match="conflicting"):
        DirichletSet.from_tags(two, {"x": 1.0, "y": 0.0})
    assert DirichletSet.from_tags(two, {"x": 1.0, "y": 1.0}).free().size == 0


def test_non_finite_coefficient_names_element():
    c = np.ones(UNIT.n_triangles)
    c[0] = np.nan
    with pytest.raises(AssemblyError, match="element 0"):
        assemble_stiffness(UNIT, c)
