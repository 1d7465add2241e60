from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from eqst.adjoint import adjoint_step_operators, solve_adjoint
from eqst.forward import electric_residual, solve_transient, thermal_residual
from eqst.materials import Constant, MaterialModel, RegionMaterial
from eqst.qoi import QoiPartials, QoiSpec

from support import SIGMA_COAX, coax, joint

JOULE = QoiSpec("joule_heat", name="G")


@pytest.fixture(scope="module")
def joint_sol():
    return solve_transient(joint(h=0.02).scenario)


def test_terminal_and_dirichlet_values(joint_sol):
    sol = joint_sol
    probe = QoiSpec("point_temperature", (0.1, 0.06), sol.scenario.t_f)
    for q in (JOULE, probe):
        adj = solve_adjoint(sol, q)
        assert adj.w_el.shape == sol.u.shape and adj.w_th.shape == sol.v.shape
        assert np.all(adj.w_el[-1] == 0.0) and np.all(adj.w_th[-1] == 0.0)
        assert np.all(adj.w_el[:, sol.disc.el_nodes] == 0.0)
        assert np.all(adj.w_th[:, sol.disc.th_bc.nodes] == 0.0)
        assert np.any(adj.w_th[:-1])


def test_qoi_without_state_dependence_gives_zero_adjoint(joint_sol):
    # potential on the driven electrode at t_s is fixed data
    q = QoiSpec("point_potential", (0.05, 0.06), joint_sol.scenario.t_s)
    adj = solve_adjoint(joint_sol, q)
    assert not np.any(adj.w_el) and not np.any(adj.w_th)


def test_adjoint_is_linear_in_the_qoi(joint_sol):
    whole = solve_adjoint(joint_sol, JOULE)
    parts = [solve_adjoint(joint_sol, QoiSpec("joule_heat", regions=(r,))) for r in ("xlpe", "fgm", "sir")]
    for attr in ("w_el", "w_th", "gamma_u0", "gamma_v0"):
        total = sum(getattr(p, attr) for p in parts)
        ref = getattr(whole, attr)
        np.testing.assert_allclose(total, ref, rtol=0, atol=1e-10 * np.abs(ref).max())


def test_resistive_limit_reduces_to_stiffness_solve():
    # eps = 0, theta-independent sigma: the electric steps decouple in time and
    # a point potential at step k gives K_sigma w_k = e_node / dt, w_n = 0 otherwise
    sc = coax(h=2e-3).scenario
    reg = sc.materials["insulation"]
    sc = sc.replace(materials=MaterialModel({"insulation": RegionMaterial(reg.sigma, Constant(0.0), reg.lam, reg.cv)}))
    sol = solve_transient(sc)
    k = 4
    q = QoiSpec("point_potential", (0.02, 0.005), sol.t_el[k])
    adj = solve_adjoint(sol, q)
    d = sol.disc
    node = QoiPartials(q, sol).node
    K = d.space.stiffness(SIGMA_COAX).tocsr()
    F = d.el_free
    e = np.zeros(d.n)
    e[node] = 1.0 / sol.grid.dt_el
    np.testing.assert_allclose(adj.el_multiplier(k)[F], spla.spsolve(K[F][:, F].tocsc(), e[F]), rtol=1e-10)
    for n in range(1, sol.grid.n_el + 1):
        if n != k:
            assert not np.any(adj.el_multiplier(n))
    assert not np.any(adj.w_th)


def test_step_operators_for_linear_materials():
    sol = solve_transient(coax(h=2e-3).scenario)
    ops = adjoint_step_operators(sol, 2)
    sp_ = sol.disc.space
    eps = sol.scenario.materials["insulation"].eps.get("value")
    np.testing.assert_allclose(ops["Ksd"].toarray(), sp_.stiffness(SIGMA_COAX).toarray(), rtol=1e-13, atol=0)
    np.testing.assert_allclose(ops["Ked"].toarray(), sp_.stiffness(eps).toarray(), rtol=1e-13, atol=0)
    for k in ("Bs", "Be", "St", "Lam"):
        assert ops[k].nnz == 0 or not np.any(ops[k].toarray())
    with pytest.raises(IndexError):
        adjoint_step_operators(sol, sol.grid.n_el + 1)


def _fd_jacobian_action(f, x, dx, h):
    return (f(x + h * dx) - f(x - h * dx)) / (2 * h)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10))
def test_blocks_match_the_forward_linearization(joint_sol, seed, n):
    """Each adjoint block is the transpose of a forward Jacobian block;
    compare the blocks with directional differences of the residuals."""
    sol = joint_sol
    d, g = sol.disc, sol.grid
    rng = np.random.default_rng(seed)
    ops = adjoint_step_operators(sol, n)
    m = g.macro(n)
    u, up, th, thp = sol.u[n], sol.u[n - 1], sol.theta(n), sol.theta(n - 1)
    du = rng.normal(size=d.n) * np.abs(u).max() * 1e-3
    dth = rng.normal(size=d.n)
    dt = g.dt_el

    def close(a, b):
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6 * np.abs(b).max())

    Ju = _fd_jacobian_action(lambda x: electric_residual(d, x, up, th, thp, dt), u, du, 1e-3)
    close((ops["Ksd"] + ops["Ked"] / dt) @ du, Ju)
    Jt = _fd_jacobian_action(lambda x: electric_residual(d, u, up, x, thp, dt), th, dth, 1e-3)
    close((ops["Bs"] + ops["Be"] / dt) @ dth, Jt)
    # previous-step coupling through the charge
    Jp = _fd_jacobian_action(lambda x: electric_residual(d, u, x, th, thp, dt), up, du, 1e-3)
    close(-(ops["Ked"] @ du) / dt, Jp)

    def joule(x_u, x_t):
        return d.joule_load(d.electric(x_u, x_t))

    close(ops["Su"] @ du, _fd_jacobian_action(lambda x: joule(x, th), u, du, 1e-3))
    close(ops["St"] @ dth, _fd_jacobian_action(lambda x: joule(u, x), th, dth, 1e-3))
    v, vp = sol.v[m], sol.v[m - 1]
    src = np.zeros(d.n)
    Jv = _fd_jacobian_action(lambda x: thermal_residual(d, x, vp, src, g.dt_th), v, dth, 1e-3)
    close((ops["C"] / g.dt_th + ops["Kl"] + ops["Lam"]) @ dth, Jv)
