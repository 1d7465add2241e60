"""Parameter sensitivities of QoIs by adjoint, direct and finite-difference
routes.

Both the adjoint (AVM) and direct (DSM) routes differentiate the same fully
discrete system, so they agree up to linear-solver round-off; finite
differences re-run the nonlinear solver and serve as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .adjoint import AdjointSolution, electric_ops, solve_adjoint, thermal_ops
from .forward import (Discretization, Scenario, SolverError, TransientSolution, factorize,
                      solve_transient)
from .materials import split_param_id
from .qoi import QoiPartials, QoiSpec, evaluate_qoi

_UNITS = {
    ("sigma", "value"): "S/m", ("eps", "value"): "F/m", ("lam", "value"): "W/(m K)",
    ("cv", "value"): "J/(m^3 K)", ("p1", None): "S/m", ("p2", None): "V/m", ("p3", None): "V/m",
    ("p4", None): "1", ("p5", None): "K", ("alpha", None): "1/K",
}


def param_unit(pid: str) -> str:
    _, prop, name = split_param_id(pid)
    return _UNITS.get((prop, name)) or _UNITS.get((name, None), "1")


@dataclass(frozen=True)
class ParameterHandle:
    id: str
    nominal: float
    unit: str = "1"

    @classmethod
    def from_scenario(cls, scenario: Scenario, pid: str) -> "ParameterHandle":
        return cls(pid, scenario.materials.get(pid), param_unit(pid))


def _ids(params) -> list[str]:
    return [p.id if isinstance(p, ParameterHandle) else p for p in params]


# ---------------------------------------------------------------------------
# parameter derivatives of the residuals
# ---------------------------------------------------------------------------

def _electric_pvec(disc: Discretization, pids, u, theta):
    """Per parameter: ``(K_dsig u, K_deps u, s_{dsig |E|^2})`` as (N, P)."""
    N, P = disc.n, len(pids)
    j, q, s = np.zeros((N, P)), np.zeros((N, P)), np.zeros((N, P))
    sp_ = disc.space
    g = thq = E2 = None
    for k, pid in enumerate(pids):
        prop = split_param_id(pid)[1]
        if prop not in ("sigma", "eps"):
            continue
        if g is None:
            g = sp_.grad(u)
            E2 = np.sum(g * g, axis=1)
            thq = sp_.at_qp(theta)
        d = disc.param_field(pid, E2, thq)
        if d is None:
            continue
        if prop == "sigma":
            j[:, k] = sp_.flux(d, g)
            s[:, k] = sp_.load(d * E2[:, None])
        else:
            q[:, k] = sp_.flux(d, g)
    return j, q, s


def _thermal_pvec(disc: Discretization, pids, v):
    """Per parameter: ``(e_{dcv} , K_dlam v)`` as (N, P)."""
    N, P = disc.n, len(pids)
    e, k_ = np.zeros((N, P)), np.zeros((N, P))
    sp_ = disc.space
    thq = None
    for k, pid in enumerate(pids):
        prop = split_param_id(pid)[1]
        if prop not in ("lam", "cv"):
            continue
        if thq is None:
            thq = sp_.at_qp(v)
            gv = sp_.grad(v)
        d = disc.param_field(pid, np.zeros(sp_.ne), thq)
        if d is None:
            continue
        if prop == "lam":
            k_[:, k] = sp_.flux(d, gv)
        else:
            e[:, k] = sp_.load(d * thq)
    return e, k_


def _sub(A, rows, cols):
    return A[rows][:, cols]


# ---------------------------------------------------------------------------
# initial state
# ---------------------------------------------------------------------------

def initial_condition_derivatives(scenario: Scenario, params, state=None) -> dict:
    """``(du0/dp, dv0/dp)`` for each parameter from the linearized stationary
    system; ``state`` is the stationary ``(u0, v0)`` (computed if omitted)."""
    from .forward import solve_stationary
    pids = _ids(params)
    disc = scenario.disc
    u0, v0 = solve_stationary(scenario) if state is None else state
    U, V = _initial_derivatives(disc, pids, u0, v0)
    return {pid: (U[:, k].copy(), V[:, k].copy()) for k, pid in enumerate(pids)}


def _initial_derivatives(disc: Discretization, pids, u0, v0):
    N, P = disc.n, len(pids)
    Fe, Ft = disc.el_free, disc.th_free
    e = electric_ops(disc, u0, v0)
    t = thermal_ops(disc, v0)
    j, _, s = _electric_pvec(disc, pids, u0, v0)
    _, kp = _thermal_pvec(disc, pids, v0)
    U, V = np.zeros((N, P)), np.zeros((N, P))
    if not (np.any(j) or np.any(s) or np.any(kp)):
        return U, V
    J = sp.bmat([[_sub(e.Ksd, Fe, Fe), _sub(e.Bs, Fe, Ft)],
                 [-_sub(e.Su, Ft, Fe), _sub(t.Kl + t.Lam - e.St, Ft, Ft)]])
    rhs = -np.vstack([j[Fe], (kp - s)[Ft]])
    x = factorize(J, "stationary linearization").solve(rhs)
    U[Fe] = x[:len(Fe)]
    V[Ft] = x[len(Fe):]
    return U, V


# ---------------------------------------------------------------------------
# AVM
# ---------------------------------------------------------------------------

def avm_sensitivity(sol: TransientSolution, adj: AdjointSolution, params) -> dict[str, float]:
    """``dG/dp`` from one adjoint solution for any number of parameters."""
    if adj.sol is not sol:
        if adj.w_el.shape != sol.u.shape or adj.w_th.shape != sol.v.shape:
            raise ValueError("adjoint and forward solutions are on different grids")
    pids = _ids(params)
    disc, grid = sol.disc, sol.grid
    R, dt, dtt = grid.ratio, grid.dt_el, grid.dt_th
    P = len(pids)
    total = np.array([adj.partials.explicit(pids)[pid] for pid in pids])
    active = [sol.scenario.materials.enters(pid) for pid in pids]
    if not any(active):
        return {pid: 0.0 for pid in pids}

    U0, V0 = _initial_derivatives(disc, pids, sol.u[0], sol.v[0])
    total += adj.gamma_u0 @ U0 + adj.gamma_v0 @ V0

    _, q_prev, _ = _electric_pvec(disc, pids, sol.u[0], sol.theta(0))
    e_prev, _ = _thermal_pvec(disc, pids, sol.v[0])
    for m in range(1, grid.n_th + 1):
        s_sum = np.zeros((disc.n, P))
        for n in range((m - 1) * R + 1, m * R + 1):
            j, q, s = _electric_pvec(disc, pids, sol.u[n], sol.theta(n))
            total -= dt * (adj.el_multiplier(n) @ (j + (q - q_prev) / dt))
            s_sum += s
            q_prev = q
        e, k_ = _thermal_pvec(disc, pids, sol.v[m])
        total -= dtt * (adj.th_multiplier(m) @ ((e - e_prev) / dtt + k_ - s_sum / R))
        e_prev = e
    return {pid: (float(val) if act else 0.0) for pid, val, act in zip(pids, total, active)}


# ---------------------------------------------------------------------------
# DSM
# ---------------------------------------------------------------------------

def dsm_sensitivity(sol: TransientSolution, q: QoiSpec | list, params) -> dict:
    """Forward linearized sweep for all parameters at once.

    ``q`` may be a single QoI (returns ``{pid: dG/dp}``) or a list (returns
    ``{qoi name: {pid: dG/dp}}``).
    """
    single = isinstance(q, QoiSpec)
    qois = [q] if single else list(q)
    pids = _ids(params)
    disc, grid = sol.disc, sol.grid
    st = sol.scenario.settings
    R, dt, dtt = grid.ratio, grid.dt_el, grid.dt_th
    N, P = disc.n, len(pids)
    Fe, Ft = disc.el_free, disc.th_free
    coupled = sol.scenario.materials.electric_temperature_dependent()
    parts = [QoiPartials(qq, sol) for qq in qois]
    out = np.array([[pt.explicit(pids)[pid] for pid in pids] for pt in parts])

    def acc(vecs, X):
        for i, v in enumerate(vecs):
            if v is not None:
                out[i] += v @ X

    U_prev, V_prev = _initial_derivatives(disc, pids, sol.u[0], sol.v[0])
    acc([pt.du(0) for pt in parts], U_prev)
    acc([pt.dv(0) for pt in parts], V_prev)
    acc([pt.dtheta(0) for pt in parts], V_prev)

    e_last = electric_ops(disc, sol.u[0], sol.v[0])
    C_prev = thermal_ops(disc, sol.v[0]).C
    _, q_prev, _ = _electric_pvec(disc, pids, sol.u[0], sol.v[0])
    ep_prev, _ = _thermal_pvec(disc, pids, sol.v[0])
    for m in range(1, grid.n_th + 1):
        tops = thermal_ops(disc, sol.v[m])
        steps = list(range((m - 1) * R + 1, m * R + 1))
        eops, rp_el = {}, {}
        s_sum = np.zeros((N, P))
        qp = q_prev
        for n in steps:
            eops[n] = electric_ops(disc, sol.u[n], sol.theta(n))
            j, qn, s = _electric_pvec(disc, pids, sol.u[n], sol.theta(n))
            rp_el[n] = j + (qn - qp) / dt
            qp = qn
            s_sum += s
        ep, kp = _thermal_pvec(disc, pids, sol.v[m])
        rp_th = (ep - ep_prev) / dtt + kp - s_sum / R
        solvers = {n: factorize(_sub(eops[n].Ksd + eops[n].Ked / dt, Fe, Fe), f"direct electric step {n}")
                   for n in steps}
        A = tops.C / dtt + tops.Kl + tops.Lam
        fixed = -rp_th + C_prev @ V_prev / dtt
        for n in steps:
            a, b = grid.weights(n)
            A = A - (b / R) * eops[n].St
            fixed = fixed + (a / R) * (eops[n].St @ V_prev)
        th_solver = factorize(_sub(A.tocsr(), Ft, Ft), f"direct thermal step {m}")

        Vg = V_prev.copy()
        Us = {}
        for it in range(1, st.max_linear + 1):
            Up, THp, ep_ops = U_prev, V_prev, e_last
            for n in steps:
                a, b = grid.weights(n)
                TH = a * V_prev + b * Vg
                e = eops[n]
                rhs = (-rp_el[n] + ep_ops.Ked @ Up / dt - (e.Bs + e.Be / dt) @ TH
                       + ep_ops.Be @ THp / dt)
                Un = np.zeros((N, P))
                Un[Fe] = solvers[n].solve(rhs[Fe])
                Us[n] = Un
                Up, THp, ep_ops = Un, TH, e
            rhs = fixed.copy()
            for n in steps:
                rhs += eops[n].Su @ Us[n] / R
            new = np.zeros((N, P))
            new[Ft] = th_solver.solve(rhs[Ft])
            upd, scale = np.linalg.norm(new - Vg), np.linalg.norm(new)
            Vg = new
            if not coupled or upd <= st.tol_linear * scale or scale == 0.0:
                break
        else:
            raise SolverError(f"direct sensitivity coupling did not converge in thermal step {m}")
        for n in steps:
            a, b = grid.weights(n)
            f = eops[n].fields
            acc([pt.du(n, f) for pt in parts], Us[n])
            acc([pt.dtheta(n, f) for pt in parts], a * V_prev + b * Vg)
        acc([pt.dv(m) for pt in parts], Vg)
        U_prev, V_prev = Us[steps[-1]], Vg
        e_last, C_prev, q_prev, ep_prev = eops[steps[-1]], tops.C, qp, ep
    active = [sol.scenario.materials.enters(pid) for pid in pids]
    res = {qq.name: {pid: (float(v) if act else 0.0) for pid, v, act in zip(pids, row, active)}
           for qq, row in zip(qois, out)}
    return res[qois[0].name] if single else res


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def fd_sensitivity(scenario: Scenario, q: QoiSpec | list, pid, rel_step: float = 1e-4):
    """Central difference ``(G(p+d) - G(p-d)) / 2d`` with ``d = rel_step p0``."""
    if rel_step <= 0:
        raise ValueError("rel_step must be positive")
    pid = pid.id if isinstance(pid, ParameterHandle) else pid
    single = isinstance(q, QoiSpec)
    qois = [q] if single else list(q)
    if not scenario.materials.enters(pid):
        res = {qq.name: 0.0 for qq in qois}
        return res[qois[0].name] if single else res
    p0 = scenario.materials.get(pid)
    d = rel_step * abs(p0) if p0 != 0 else rel_step
    vals = []
    for sign in (1.0, -1.0):
        try:
            sol = solve_transient(scenario.with_param(pid, p0 + sign * d))
        except SolverError as exc:
            raise SolverError(f"forward solve failed at perturbed {pid}: {exc}", exc.trace) from None
        vals.append([evaluate_qoi(qq, sol) for qq in qois])
    res = {qq.name: (vals[0][i] - vals[1][i]) / (2 * d) for i, qq in enumerate(qois)}
    return res[qois[0].name] if single else res


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def normalize(dGdp: float, G0: float, p0: float) -> float | None:
    """Predicted relative QoI change (percent) for a +1 % parameter step;
    None when ``G0 == 0``."""
    if G0 == 0:
        return None
    return dGdp * 0.01 * p0 / G0 * 100.0


@dataclass
class SensitivityEntry:
    qoi: str
    parameter: str
    method: str
    value: float
    unit: str
    normalized_pct: float | None
    relerr: float | None = None


@dataclass
class SensitivityReport:
    nominal: dict = field(default_factory=dict)     # qoi name -> G0
    entries: list = field(default_factory=list)

    def add(self, qoi: QoiSpec, handle: ParameterHandle, method: str, value: float,
            reference: float | None = None):
        G0 = self.nominal[qoi.name]
        rel = None
        if reference is not None:
            rel = abs(value - reference) / abs(reference) if reference != 0 else abs(value)
        unit = qoi.unit if handle.unit == "1" else f"{qoi.unit}/({handle.unit})"
        self.entries.append(SensitivityEntry(qoi.name, handle.id, method, float(value), unit,
                                             normalize(value, G0, handle.nominal), rel))

    def rows(self):
        yield ["qoi", "parameter", "method", "value", "unit", "normalized_pct", "relerr_vs_reference"]
        for e in self.entries:
            yield [e.qoi, e.parameter, e.method, _fmt(e.value), e.unit,
                   "n/a" if e.normalized_pct is None else _fmt(e.normalized_pct),
                   "" if e.relerr is None else _fmt(e.relerr)]


def _fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else str(x)


def sensitivities(sol: TransientSolution, qois, params, methods=("AVM",), rel_step=1e-4):
    """Run the requested methods and collect a :class:`SensitivityReport`;
    relative errors refer to the first method."""
    handles = [p if isinstance(p, ParameterHandle) else ParameterHandle.from_scenario(sol.scenario, p)
               for p in params]
    rep = SensitivityReport({q.name: evaluate_qoi(q, sol) for q in qois})
    results = {}
    for method in methods:
        if method == "AVM":
            results[method] = {q.name: avm_sensitivity(sol, solve_adjoint(sol, q), handles) for q in qois}
        elif method == "DSM":
            results[method] = dsm_sensitivity(sol, list(qois), handles)
        elif method == "FD":
            per = {h.id: fd_sensitivity(sol.scenario, list(qois), h, rel_step) for h in handles}
            results[method] = {q.name: {h.id: per[h.id][q.name] for h in handles} for q in qois}
        else:
            raise ValueError(f"unknown method {method!r}")
    ref = methods[0]
    for q in qois:
        for h in handles:
            for method in methods:
                val = results[method][q.name][h.id]
                rep.add(q, h, method, val, None if method == ref else results[ref][q.name][h.id])
    return rep, results
