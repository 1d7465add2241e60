from __future__ import annotations

import numpy as np
import pytest

from eqst.adjoint import solve_adjoint
from eqst.forward import solve_stationary, solve_transient
from eqst.qoi import QoiSpec, evaluate_qoi
from eqst.sensitivity import (ParameterHandle, avm_sensitivity, dsm_sensitivity, fd_sensitivity,
                              initial_condition_derivatives, normalize, param_unit, sensitivities)

from support import SIGMA_COAX, TIGHT, coax, joint

JOULE = QoiSpec("joule_heat", name="G")
SIGMA = "insulation.sigma.value"
LINEAR_PARAMS = [SIGMA, "insulation.eps.value", "insulation.lam.value", "insulation.cv.value"]
FGM_PARAMS = [f"fgm.sigma.p{k}" for k in range(1, 6)]


@pytest.fixture(scope="module")
def joint_sol():
    return solve_transient(joint(h=0.02).scenario)


def test_duality_on_linear_materials():
    sol = solve_transient(coax(h=2e-3).scenario)
    qois = [JOULE, QoiSpec("point_temperature", (0.02, 0.005), 0.5, name="T"),
            QoiSpec("point_potential", (0.02, 0.005), 0.3, name="U")]
    dsm = dsm_sensitivity(sol, qois, LINEAR_PARAMS)
    for q in qois:
        avm = avm_sensitivity(sol, solve_adjoint(sol, q), LINEAR_PARAMS)
        for pid in LINEAR_PARAMS:
            ref = dsm[q.name][pid]
            assert avm[pid] == pytest.approx(ref, rel=1e-8, abs=1e-300), (q.name, pid)


def test_duality_on_the_coupled_nonlinear_scenario(joint_sol):
    params = FGM_PARAMS + ["xlpe.lam.alpha", "sir.sigma.alpha", "fgm.eps.value", "xlpe.cv.value"]
    qois = [JOULE, QoiSpec("point_temperature", (0.1, 0.06), joint_sol.scenario.t_f, name="T"),
            QoiSpec("point_potential", (0.1, 0.06), 5e-4, name="U")]
    dsm = dsm_sensitivity(joint_sol, qois, params)
    for q in qois:
        avm = avm_sensitivity(joint_sol, solve_adjoint(joint_sol, q), params)
        for pid in params:
            assert avm[pid] == pytest.approx(dsm[q.name][pid], rel=1e-6), (q.name, pid)


def test_homogeneous_resistor():
    sc = coax(h=2e-3).scenario
    sol = solve_transient(sc)
    G = evaluate_qoi(JOULE, sol)
    assert avm_sensitivity(sol, solve_adjoint(sol, JOULE), [SIGMA])[SIGMA] == pytest.approx(G / SIGMA_COAX, rel=1e-8)
    assert dsm_sensitivity(sol, JOULE, [SIGMA])[SIGMA] == pytest.approx(G / SIGMA_COAX, rel=1e-8)
    assert fd_sensitivity(sc, JOULE, SIGMA, 1e-4) == pytest.approx(G / SIGMA_COAX, rel=1e-8)


def test_parameter_that_does_not_enter_is_exactly_zero(joint_sol):
    pid = "fgm.lam.alpha"      # constant law, no alpha
    assert not joint_sol.scenario.materials.enters(pid)
    assert avm_sensitivity(joint_sol, solve_adjoint(joint_sol, JOULE), [pid])[pid] == 0.0
    assert dsm_sensitivity(joint_sol, JOULE, [pid])[pid] == 0.0
    assert fd_sensitivity(joint_sol.scenario, JOULE, pid) == 0.0


def test_initial_condition_derivatives_against_differences():
    sc = joint(h=0.02, settings=TIGHT).scenario
    u0, v0 = solve_stationary(sc)
    pids = ["fgm.sigma.p1", "fgm.sigma.p2", "xlpe.lam.value"]
    der = initial_condition_derivatives(sc, pids, (u0, v0))
    for pid in pids:
        p0 = sc.materials.get(pid)
        h = 1e-4 * p0
        up, vp = solve_stationary(sc.with_param(pid, p0 + h))
        um, vm = solve_stationary(sc.with_param(pid, p0 - h))
        du, dv = der[pid]
        fu, fv = (up - um) / (2 * h), (vp - vm) / (2 * h)
        np.testing.assert_allclose(du, fu, rtol=0, atol=1e-6 * np.abs(fu).max())
        np.testing.assert_allclose(dv, fv, rtol=0, atol=1e-6 * np.abs(fv).max())


def test_initial_condition_derivatives_in_closed_form_cases():
    sc = joint(h=0.02).scenario
    sc0 = sc.replace(electric_bc={k: w.scaled(0.0) for k, w in sc.electric_bc.items()})
    du, dv = initial_condition_derivatives(sc0, ["fgm.sigma.p2"])["fgm.sigma.p2"]
    assert not np.any(du) and not np.any(dv)
    # homogeneous resistor: the stationary potential does not depend on sigma
    sc = coax(h=2e-3).scenario
    u0, v0 = solve_stationary(sc)
    du, dv = initial_condition_derivatives(sc, [SIGMA], (u0, v0))[SIGMA]
    assert np.max(np.abs(du)) * SIGMA_COAX < 1e-12 * np.max(np.abs(u0))
    # the temperature rise is linear in sigma, so a central difference is exact
    vp = solve_stationary(sc.with_param(SIGMA, 1.5 * SIGMA_COAX))[1]
    vm = solve_stationary(sc.with_param(SIGMA, 0.5 * SIGMA_COAX))[1]
    np.testing.assert_allclose(dv, (vp - vm) / SIGMA_COAX, rtol=1e-6, atol=1e-9 * np.abs(dv).max())


def test_normalization():
    assert normalize(-2.0, 4.0, 1.0) == pytest.approx(-0.5)
    assert normalize(1.0, 0.0, 1.0) is None
    assert normalize(3.0, 5.0, 2.0) == pytest.approx(2 * normalize(3.0, 5.0, 1.0))


def test_report_rows_and_units():
    sol = solve_transient(coax(h=4e-3).scenario)
    rep, res = sensitivities(sol, [JOULE], [SIGMA], ("AVM", "DSM"))
    rows = list(rep.rows())
    assert rows[0] == ["qoi", "parameter", "method", "value", "unit", "normalized_pct", "relerr_vs_reference"]
    assert [r[2] for r in rows[1:]] == ["AVM", "DSM"]
    assert rows[1][4] == "J/(S/m)"
    assert float(rows[1][5]) == pytest.approx(1.0, rel=1e-8)     # G ~ sigma: +1 % -> +1 %
    assert rows[1][6] == "" and float(rows[2][6]) < 1e-8
    assert param_unit("fgm.sigma.p2") == "V/m" and param_unit("xlpe.lam.alpha") == "1/K"
    assert ParameterHandle.from_scenario(sol.scenario, SIGMA).nominal == SIGMA_COAX
    with pytest.raises(ValueError):
        sensitivities(sol, [JOULE], [SIGMA], ("MAGIC",))
    with pytest.raises(ValueError):
        fd_sensitivity(sol.scenario, JOULE, SIGMA, 0.0)
