from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from eqst.forward import TransientSolution, solve_transient
from eqst.qoi import QoiPartials, QoiSpec, evaluate_qoi, qoi_partial_p, qoi_rhs

from support import SIGMA_COAX, coax, coax_power, joint

JOULE = QoiSpec("joule_heat", name="G")


@pytest.fixture(scope="module")
def coax_sol():
    return solve_transient(coax(h=2e-3).scenario)


@pytest.fixture(scope="module")
def joint_sol():
    return solve_transient(joint(h=0.02).scenario)


def test_joule_heat_matches_conductance_formula(coax_sol):
    g = coax_sol.grid
    G = evaluate_qoi(JOULE, coax_sol)
    assert G == pytest.approx(coax_power() * (g.t_f - g.t_s), rel=1e-2)
    assert JOULE.unit == "J"


def test_zero_voltage_gives_zero_joule_heat():
    sc = joint(h=0.02).scenario
    sc0 = sc.replace(electric_bc={k: w.scaled(0.0) for k, w in sc.electric_bc.items()})
    assert evaluate_qoi(JOULE, solve_transient(sc0)) == 0.0


def test_region_restricted_heat_adds_up(joint_sol):
    parts = [evaluate_qoi(QoiSpec("joule_heat", regions=(r,)), joint_sol) for r in ("xlpe", "fgm", "sir")]
    assert sum(parts) == pytest.approx(evaluate_qoi(JOULE, joint_sol), rel=1e-12)


def test_point_values(joint_sol):
    sc = joint_sol.scenario
    on_wall = QoiSpec("point_temperature", (0.05, 0.06), sc.t_f)
    assert evaluate_qoi(on_wall, joint_sol) == pytest.approx(sc.thermal_bc["conductor"])
    pot = QoiSpec("point_potential", (0.05, 0.06), sc.t_s)
    assert evaluate_qoi(pot, joint_sol) == pytest.approx(sc.electric_bc["conductor"](sc.t_s))
    with pytest.raises(ValueError, match="outside"):
        QoiPartials(QoiSpec("point_temperature", (0.1, 0.06), 2 * sc.t_f), joint_sol)
    with pytest.raises(ValueError, match="outside the mesh"):
        QoiPartials(QoiSpec("point_temperature", (0.2, 0.06), sc.t_f), joint_sol)
    with pytest.raises(ValueError):
        QoiSpec("point_temperature")
    with pytest.raises(ValueError):
        QoiSpec("energy")


def _with_state(sol, n, u=None, v=None):
    U, V = sol.u.copy(), sol.v.copy()
    if u is not None:
        U[n] = u
    if v is not None:
        V[n] = v
    return TransientSolution(sol.scenario, sol.grid, U, V, sol.stats)


def test_state_derivatives_against_differences(joint_sol):
    sol = joint_sol
    rng = np.random.default_rng(3)
    n = sol.grid.n_el // 2
    m = sol.grid.macro(n)
    part = QoiPartials(JOULE, sol)
    du = rng.normal(size=sol.disc.n) * 10.0
    du[sol.disc.el_nodes] = 0.0
    h = 1e-3
    Gp = evaluate_qoi(JOULE, _with_state(sol, n, u=sol.u[n] + h * du))
    Gm = evaluate_qoi(JOULE, _with_state(sol, n, u=sol.u[n] - h * du))
    assert part.du(n) @ du == pytest.approx((Gp - Gm) / (2 * h), rel=1e-6)
    # temperature enters through the interpolated theta of every step in m
    dv = rng.normal(size=sol.disc.n)
    Gp = evaluate_qoi(JOULE, _with_state(sol, m, v=sol.v[m] + h * dv))
    Gm = evaluate_qoi(JOULE, _with_state(sol, m, v=sol.v[m] - h * dv))
    R = sol.grid.ratio
    steps = range((m - 1) * R + 1, m * R + 1)
    pred = sum(sol.grid.weights(k)[1] * (part.dtheta(k) @ dv) for k in steps)
    if m < sol.grid.n_th:
        pred += sum(sol.grid.weights(k)[0] * (part.dtheta(k) @ dv) for k in range(m * R + 1, (m + 1) * R + 1))
    assert pred == pytest.approx((Gp - Gm) / (2 * h), rel=1e-6)


def test_adjoint_rhs_for_linear_conductivity(coax_sol):
    # x_el = 2 K_sigma u_n for a field-independent sigma; no thermal part
    sol = coax_sol
    n = 3
    x_el, x_th = qoi_rhs(JOULE, sol, n)
    K = sol.disc.space.stiffness(SIGMA_COAX)
    np.testing.assert_allclose(x_el, 2 * K @ sol.u[n], rtol=1e-12, atol=1e-12 * np.abs(x_el).max())
    assert not np.any(x_th)


def test_point_temperature_rhs_is_a_scaled_unit_vector(joint_sol):
    sol = joint_sol
    q = QoiSpec("point_temperature", (0.1, 0.06), sol.scenario.t_f)
    part = QoiPartials(q, sol)
    _, x_th = qoi_rhs(q, sol, sol.grid.n_el)
    assert np.count_nonzero(x_th) == 1
    assert x_th[part.node] == pytest.approx(1.0 / sol.grid.dt_th)
    assert not np.any(qoi_rhs(q, sol, 1)[1])


def test_explicit_parameter_derivative(coax_sol, joint_sol):
    # homogeneous resistor at frozen fields: dG/dsigma = G / sigma
    G = evaluate_qoi(JOULE, coax_sol)
    assert qoi_partial_p(JOULE, coax_sol, "insulation.sigma.value") == pytest.approx(G / SIGMA_COAX, rel=1e-12)
    assert qoi_partial_p(JOULE, coax_sol, "insulation.lam.value") == 0.0
    # FGM: difference quotient of G with the stored fields held fixed
    sol = joint_sol
    for pid in ("fgm.sigma.p2", "fgm.sigma.p5"):
        p0 = sol.scenario.materials.get(pid)
        h = 1e-6 * p0

        def G_at(p):
            sc = sol.scenario.with_param(pid, p)
            return evaluate_qoi(JOULE, dataclasses.replace(sol, scenario=sc))

        fd = (G_at(p0 + h) - G_at(p0 - h)) / (2 * h)
        assert qoi_partial_p(JOULE, sol, pid) == pytest.approx(fd, rel=1e-6)
    q = QoiSpec("point_temperature", (0.1, 0.06), sol.scenario.t_f)
    assert qoi_partial_p(q, sol, "fgm.sigma.p2") == 0.0
