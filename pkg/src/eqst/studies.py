"""Convergence studies and parameter sweeps built on the AVM sensitivity."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import solve_adjoint
from .config import RunSetup
from .forward import solve_transient
from .mesh import max_edge_length
from .qoi import QoiSpec, evaluate_qoi
from .sensitivity import avm_sensitivity

AXES = ("mesh_h", "dt", "dt_thermal_ratio")


@dataclass
class ConvergenceStudy:
    axis: str
    values: list            # swept values (h, dt_el or thermal/electric ratio)
    results: list           # dG/dp per level
    reference_value: float  # level the errors refer to
    reference: float        # dG/dp at the reference level
    errors: list            # relative error per level
    order: float | None     # least-squares slope of log(error) vs log(value)
    extra: list = field(default_factory=list)   # per-level dicts (solves, timings)

    def rows(self):
        # wall times stay in the manifest so the CSV is reproducible byte for byte
        yield ["axis", "value", "dGdp", "relerr", "thermal_solves"]
        for v, r, e, x in zip(self.values, self.results, self.errors, self.extra):
            yield [self.axis, float(v), float(r), float(e), x["thermal_solves"]]
        yield [self.axis, "reference", float(self.reference), "", ""]
        yield [self.axis, "observed_order", "" if self.order is None else float(self.order), "", ""]


def observed_order(values, errors) -> float | None:
    """Slope of the least-squares line through ``(log value, log error)``."""
    v = np.asarray(values, dtype=float)
    e = np.asarray(errors, dtype=float)
    ok = e > 0
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(v[ok]), np.log(e[ok]), 1)[0])


def _sensitivity(setup: RunSetup, qoi: QoiSpec, pid: str):
    clock = time.perf_counter()
    sol = solve_transient(setup.scenario)
    val = avm_sensitivity(sol, solve_adjoint(sol, qoi), [pid])[pid]
    info = {"thermal_solves": sol.stats["thermal_solves"], "wall_time": time.perf_counter() - clock,
            "nodes": setup.scenario.mesh.n_nodes, "h_max": max_edge_length(setup.scenario.mesh),
            "n_el": sol.grid.n_el, "n_th": sol.grid.n_th}
    return val, info


def convergence_study(setup: RunSetup, axis: str, values, qoi: QoiSpec, pid: str,
                      refine: int = 4) -> ConvergenceStudy:
    """Relative error of ``dG/dp`` over a sweep of one discretization knob.

    ``mesh_h``: errors against the finest listed mesh.  ``dt``: electric step
    sizes at the scenario's thermal/electric ratio, errors against a run
    ``refine`` times finer than the smallest step.  ``dt_thermal_ratio``:
    thermal step multiples of the scenario's electric step, errors against an
    equal-rate run with ``refine`` times smaller steps.
    """
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}; expected one of {AXES}")
    values = sorted(float(v) for v in values)
    if len(values) < 3:
        raise ValueError("a convergence study needs at least three levels")
    sc = setup.scenario
    ratio = sc.grid.ratio
    dt_el = sc.grid.dt_el

    def level(v):
        if axis == "mesh_h":
            return setup.with_overrides(h=v)
        if axis == "dt":
            return setup.with_overrides(dt_el=v, dt_th=v * ratio)
        return setup.with_overrides(dt_el=dt_el, dt_th=dt_el * v)

    if axis == "mesh_h":
        levels, ref_value = values[1:], values[0]
        ref_setup = level(ref_value)
    elif axis == "dt":
        levels, ref_value = values, values[0] / refine
        ref_setup = setup.with_overrides(dt_el=ref_value, dt_th=ref_value * ratio)
    else:
        levels, ref_value = values, 1.0
        ref_setup = setup.with_overrides(dt_el=dt_el / refine, dt_th=dt_el / refine)
    ref, _ = _sensitivity(ref_setup, qoi, pid)
    results, extra = [], []
    for v in levels:
        val, info = _sensitivity(level(v), qoi, pid)
        results.append(val)
        extra.append(info)
    errors = [abs(r - ref) / abs(ref) for r in results]
    order = observed_order(levels, errors) if axis != "dt_thermal_ratio" else None
    return ConvergenceStudy(axis, levels, results, ref_value, ref, errors, order, extra)


@dataclass
class SweepResult:
    pid: str
    p0: float
    G0: float
    factors: list
    values: list
    slope: float            # AVM dG/dp at p0

    @property
    def normalized_slope(self) -> float:
        return self.slope * self.p0 / self.G0


def sweep(setup: RunSetup, qoi: QoiSpec, pid: str, factors) -> SweepResult:
    """QoI at ``p = factor * p0`` plus the AVM slope at the nominal point."""
    factors = [float(f) for f in factors]
    if len(factors) < 5:
        raise ValueError("a sweep needs at least five parameter values")
    sc = setup.scenario
    p0 = sc.materials.get(pid)
    sol = solve_transient(sc)
    G0 = evaluate_qoi(qoi, sol)
    slope = avm_sensitivity(sol, solve_adjoint(sol, qoi), [pid])[pid]
    values = []
    for f in factors:
        if f == 1.0:
            values.append(G0)
        else:
            values.append(evaluate_qoi(qoi, solve_transient(sc.with_param(pid, f * p0))))
    return SweepResult(pid, p0, G0, factors, values, slope)


def emit_tangent_plot_data(res: SweepResult):
    """Rows of ``p/p0, G/G0`` with the AVM tangent through (1, 1)."""
    if res.G0 == 0:
        raise ValueError("nominal QoI is zero; normalized curve undefined")
    yield ["p_over_p0", "p", "G", "G_over_G0", "tangent"]
    k = res.normalized_slope
    for f, g in zip(res.factors, res.values):
        yield [f, f * res.p0, g, g / res.G0, 1.0 + k * (f - 1.0)]
