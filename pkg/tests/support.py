"""Scenario builders shared by the test modules."""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from eqst.config import bundled
from eqst.forward import Scenario, SolverSettings, Waveform, solve_stationary
from eqst.materials import Constant, MaterialModel, RegionMaterial
from eqst.mesh import PLANAR, Mesh
from eqst.qoi import QoiSpec

RI, RO, LEN = 0.010, 0.030, 0.010    # coaxial radii and length (m)
U_COAX = 10e3
SIGMA_COAX = 1e-12

TIGHT = SolverSettings(tol_newton=1e-13, tol_couple=1e-13, tol_linear=1e-14)


def coax(h=None, **overrides):
    setup = bundled("coaxial")
    if h is not None:
        setup = setup.with_overrides(h=h)
    if overrides:
        setup = dataclasses.replace(setup, scenario=setup.scenario.replace(**overrides))
    return setup


def coax_potential(rho):
    return U_COAX * np.log(rho / RO) / math.log(RI / RO)


def coax_l2_error(setup):
    """L2 distance of the stationary potential from the analytic profile."""
    sc = setup.scenario
    u, _ = solve_stationary(sc)
    sp_ = sc.disc.space
    diff = sp_.at_qp(u) - coax_potential(sp_.xq[..., 0])
    return math.sqrt(sp_.integrate(diff**2))


def coax_power():
    """Analytic Joule power of the coaxial resistor (W)."""
    return U_COAX**2 * 2.0 * math.pi * SIGMA_COAX * LEN / math.log(RO / RI)


def joint(h=0.02, t_end=1e-3, dt_el=1e-4, dt_th=5e-4, settings=None):
    """Coarse, short joint_like run with its Joule and probe QoIs."""
    setup = bundled("joint_like").with_overrides(h=h, dt_el=dt_el, dt_th=dt_th)
    changes = {"t_f": t_end}
    if settings is not None:
        changes["settings"] = settings
    sc = setup.scenario.replace(**changes)
    qois = [QoiSpec("joule_heat", name="G_joule"),
            QoiSpec("point_temperature", (0.1, 0.06), t_end, name="theta_probe")]
    return dataclasses.replace(setup, scenario=sc, qois=qois)


def constant_materials(sigma=1.0, eps=1.0, lam=1.0, cv=1.0, region="a"):
    return MaterialModel({region: RegionMaterial(Constant(sigma), Constant(eps), Constant(lam), Constant(cv))})


def one_triangle(sigma=2.0, eps=3.0, U=5.0, dt=0.1, t_f=1.0):
    """Right unit triangle (planar); nodes 1 and 2 carry the voltage."""
    mesh = Mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]], ["a"], [[1, 2]], ["e"], PLANAR)
    return Scenario(mesh, constant_materials(sigma, eps), {"e": Waveform("constant", U)},
                    {"e": 300.0}, 0.0, t_f, dt, dt)
