"""Coupled transient electroquasistatic-thermal solver.

Unknowns are nodal potentials ``u`` on the electric grid ``t_n`` and nodal
temperatures ``v`` on the coarser thermal grid ``t_m``.  With ``R`` electric
steps per thermal step, the fully discrete system solved here is::

    electric step n:  K_sig(u_n, th_n) u_n + (q(u_n, th_n) - q(u_{n-1}, th_{n-1})) / dt = 0
    thermal step m:   (e(v_m) - e(v_{m-1})) / dt_th + K_lam(v_m) v_m
                          = (1/R) sum_{n in m} s(u_n, th_n)

with ``q = K_eps u``, ``e(v)_r = int cv(v) v N_r``, ``s_r = int sigma |E|^2 N_r``
and the electric-step temperature ``th_n = a_n v_{m-1} + b_n v_m`` linearly
interpolated (``b_n = j / R`` for the j-th micro step of macro step m).
The adjoint and direct sensitivity solvers differentiate exactly this system.
"""

from __future__ import annotations

import functools
import math
import time as _time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import DirichletSet, P1Space
from .materials import MaterialModel, differential_tensor, split_param_id
from .mesh import Mesh


class SolverError(RuntimeError):
    """Nonlinear or linear solver failure; ``trace`` holds residual history."""

    def __init__(self, msg: str, trace=()):
        super().__init__(msg)
        self.trace = list(trace)


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Excitation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Waveform:
    """Boundary voltage ``U(t)``; ``constant`` returns ``U_dc``."""

    kind: str = "constant"
    U_dc: float = 0.0
    U_hat: float = 0.0
    tau1: float = 250e-6 / 2.41
    tau2: float = 2500e-6 / 0.87

    def __post_init__(self):
        if self.kind not in ("constant", "switching_impulse"):
            raise ScenarioError(f"unknown waveform kind {self.kind!r}")
        if self.kind == "switching_impulse" and not self.tau2 > self.tau1 > 0:
            raise ScenarioError("switching impulse needs tau2 > tau1 > 0")

    def __call__(self, t: float) -> float:
        if self.kind == "constant":
            return self.U_dc
        return switching_impulse(t, self)

    def scaled(self, factor: float) -> "Waveform":
        return Waveform(self.kind, self.U_dc * factor, self.U_hat * factor, self.tau1, self.tau2)


def switching_impulse(t, w: Waveform):
    """Double-exponential overvoltage superposed on the DC level."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("switching impulse is defined for t >= 0")
    k = w.tau2 / (w.tau2 - w.tau1)
    out = w.U_dc + w.U_hat * k * (np.exp(-t / w.tau2) - np.exp(-t / w.tau1))
    return float(out) if out.ndim == 0 else out


def impulse_peak(w: Waveform) -> tuple[float, float]:
    """Analytic argmax and maximum of the impulse."""
    tp = math.log(w.tau2 / w.tau1) * w.tau1 * w.tau2 / (w.tau2 - w.tau1)
    return tp, switching_impulse(tp, w)


# ---------------------------------------------------------------------------
# Time grid and settings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform electric grid nested in a uniform thermal grid."""

    t_s: float
    t_f: float
    n_th: int
    ratio: int

    @classmethod
    def from_maxima(cls, t_s, t_f, dt_el_max, dt_th_max) -> "TimeGrid":
        if not t_f > t_s:
            raise ScenarioError("t_f must exceed t_s")
        if not (dt_el_max > 0 and dt_th_max > 0):
            raise ScenarioError("time steps must be positive")
        if dt_th_max < dt_el_max:
            raise ScenarioError("thermal step must not be smaller than the electric step")
        span = t_f - t_s
        n_th = max(1, math.ceil(span / dt_th_max * (1 - 1e-12)))
        ratio = max(1, math.ceil(span / n_th / dt_el_max * (1 - 1e-12)))
        return cls(t_s, t_f, n_th, ratio)

    @property
    def dt_th(self) -> float:
        return (self.t_f - self.t_s) / self.n_th

    @property
    def dt_el(self) -> float:
        return self.dt_th / self.ratio

    @property
    def n_el(self) -> int:
        return self.n_th * self.ratio

    @property
    def t_el(self) -> np.ndarray:
        return self.t_s + self.dt_el * np.arange(self.n_el + 1)

    @property
    def t_th(self) -> np.ndarray:
        return self.t_s + self.dt_th * np.arange(self.n_th + 1)

    def macro(self, n: int) -> int:
        """Thermal step containing electric step n >= 1."""
        return (n - 1) // self.ratio + 1

    def weights(self, n: int) -> tuple[float, float]:
        """``(a_n, b_n)`` with ``th_n = a_n v_{m-1} + b_n v_m``."""
        j = n - (self.macro(n) - 1) * self.ratio
        b = j / self.ratio
        return 1.0 - b, b


@dataclass(frozen=True)
class SolverSettings:
    tol_newton: float = 1e-10
    tol_couple: float = 1e-8
    tol_linear: float = 1e-12
    max_newton: int = 25
    max_couple: int = 25
    max_linear: int = 100


# ---------------------------------------------------------------------------
# Scenario and its discretization
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scenario:
    mesh: Mesh
    materials: MaterialModel
    electric_bc: Mapping[str, Waveform]
    thermal_bc: Mapping[str, float]
    t_s: float
    t_f: float
    dt_el_max: float
    dt_th_max: float
    settings: SolverSettings = field(default_factory=SolverSettings)
    name: str = "scenario"

    def __post_init__(self):
        if not self.electric_bc:
            raise ScenarioError("at least one electric Dirichlet boundary is required")
        if not self.thermal_bc:
            raise ScenarioError("at least one thermal Dirichlet boundary is required")
        tags = set(self.mesh.boundary_tags())
        for tag in list(self.electric_bc) + list(self.thermal_bc):
            if tag not in tags:
                raise ScenarioError(f"boundary tag {tag!r} not present in mesh")
        for region in self.mesh.region_tags():
            if region not in self.materials.regions:
                raise ScenarioError(f"no material assigned to region {region!r}")
        TimeGrid.from_maxima(self.t_s, self.t_f, self.dt_el_max, self.dt_th_max)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_maxima(self.t_s, self.t_f, self.dt_el_max, self.dt_th_max)

    @functools.cached_property
    def disc(self) -> "Discretization":
        return Discretization(self)

    def replace(self, **changes) -> "Scenario":
        import dataclasses
        return dataclasses.replace(self, **changes)

    def with_param(self, pid: str, value: float) -> "Scenario":
        return self.replace(materials=self.materials.with_param(pid, value))


@dataclass
class ElectricFields:
    """Electric material data on all elements at one state (``(ne, nq)``)."""

    g: np.ndarray           # grad u per element (ne, 2); E = -g
    E2: np.ndarray          # (ne,)
    th_q: np.ndarray
    sigma: np.ndarray
    eps: np.ndarray
    dsigma_dE2: np.ndarray
    deps_dE2: np.ndarray
    dsigma_dtheta: np.ndarray
    deps_dtheta: np.ndarray


@dataclass
class ThermalFields:
    g: np.ndarray
    th_q: np.ndarray
    lam: np.ndarray
    cv: np.ndarray
    dlam_dtheta: np.ndarray
    dcv_dtheta: np.ndarray


class Discretization:
    """Finite-element context of a scenario: space, boundary data, regions."""

    def __init__(self, sc: Scenario):
        self.scenario = sc
        mesh = sc.mesh
        self.space = P1Space(mesh)
        self.n = mesh.n_nodes
        # electric Dirichlet nodes grouped by waveform
        owner: dict[int, str] = {}
        for tag, wf in sc.electric_bc.items():
            for node in mesh.boundary_nodes([tag]).tolist():
                prev = owner.get(node)
                if prev is not None and sc.electric_bc[prev] != wf:
                    raise ScenarioError(f"node {node} lies on electric boundaries {prev!r} and {tag!r} with different waveforms")
                owner[node] = tag
        self.el_nodes = np.array(sorted(owner), dtype=np.int64)
        self._el_tag = [owner[k] for k in self.el_nodes.tolist()]
        mask = np.ones(self.n, dtype=bool)
        mask[self.el_nodes] = False
        self.el_free = np.flatnonzero(mask)
        self.th_bc = DirichletSet.from_tags(mesh, dict(sc.thermal_bc))
        self.th_free = self.th_bc.free()
        self.region_elems = {r: np.flatnonzero(mesh.regions == r) for r in mesh.region_tags()}

    def el_values(self, t: float) -> np.ndarray:
        wf = self.scenario.electric_bc
        cache = {tag: float(w(t)) for tag, w in wf.items()}
        return np.array([cache[tag] for tag in self._el_tag])

    def with_el_bc(self, u, t) -> np.ndarray:
        u = np.array(u, dtype=float)
        u[self.el_nodes] = self.el_values(t)
        return u

    def with_th_bc(self, v) -> np.ndarray:
        v = np.array(v, dtype=float)
        v[self.th_bc.nodes] = self.th_bc.values
        return v

    # -- material evaluation -------------------------------------------------
    def _per_region(self, props, E2q, thq):
        """Evaluate laws of ``props`` on every region; returns value, dE2 and
        dtheta arrays per property (each ``(ne, nq)``)."""
        ne, nq = thq.shape
        out = {p: [np.empty((ne, nq)) for _ in range(3)] for p in props}
        for region, idx in self.region_elems.items():
            mat = self.scenario.materials[region]
            for p in props:
                lv = mat.law(p).eval(E2q[idx], thq[idx])
                out[p][0][idx] = lv.value
                out[p][1][idx] = lv.dE2
                out[p][2][idx] = lv.dtheta
        return out

    def electric(self, u, theta) -> ElectricFields:
        sp_ = self.space
        g = sp_.grad(u)
        E2 = np.sum(g * g, axis=1)
        thq = sp_.at_qp(theta)
        E2q = np.broadcast_to(E2[:, None], thq.shape)
        d = self._per_region(("sigma", "eps"), E2q, thq)
        return ElectricFields(g, E2, thq, d["sigma"][0], d["eps"][0], d["sigma"][1], d["eps"][1],
                              d["sigma"][2], d["eps"][2])

    def thermal(self, v) -> ThermalFields:
        sp_ = self.space
        thq = sp_.at_qp(v)
        d = self._per_region(("lam", "cv"), np.zeros_like(thq), thq)
        return ThermalFields(sp_.grad(v), thq, d["lam"][0], d["cv"][0], d["lam"][2], d["cv"][2])

    def param_field(self, pid: str, E2, thq) -> np.ndarray | None:
        """``d law / d p`` on all elements (zero outside the owning region);
        None if the parameter does not enter."""
        region, prop, name = split_param_id(pid)
        if region not in self.region_elems or not self.scenario.materials.enters(pid):
            return None
        idx = self.region_elems[region]
        law = self.scenario.materials[region].law(prop)
        E2q = np.broadcast_to(np.asarray(E2, dtype=float)[:, None], thq.shape)
        vals = law.dparams(E2q[idx], thq[idx], (name,))
        if name not in vals:
            return None
        out = np.zeros(thq.shape)
        out[idx] = vals[name]
        return out

    # -- residual pieces -----------------------------------------------------
    def current(self, f: ElectricFields) -> np.ndarray:
        """``K_sig(u) u``"""
        return self.space.flux(f.sigma, f.g)

    def charge(self, f: ElectricFields) -> np.ndarray:
        """``q = K_eps(u) u``"""
        return self.space.flux(f.eps, f.g)

    def joule_load(self, f: ElectricFields) -> np.ndarray:
        """``s_r = int sigma |E|^2 N_r``"""
        return self.space.load(f.sigma * f.E2[:, None])

    def energy(self, t: ThermalFields) -> np.ndarray:
        """``e_r = int cv(th) th N_r``"""
        return self.space.load(t.cv * t.th_q)

    def heat_flux(self, t: ThermalFields) -> np.ndarray:
        return self.space.flux(t.lam, t.g)

    # -- Jacobian pieces -----------------------------------------------------
    def sigma_d(self, f: ElectricFields) -> np.ndarray:
        return differential_tensor(f.sigma, f.dsigma_dE2, f.g[:, None, :])

    def eps_d(self, f: ElectricFields) -> np.ndarray:
        return differential_tensor(f.eps, f.deps_dE2, f.g[:, None, :])


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------

class RowScaledLU:
    """Sparse LU of ``D A`` with ``D`` the inverse absolute row sums.

    Materials spanning many decades of conductivity give rows of very
    different magnitude; equilibrating them keeps pivoting from swamping the
    weakly conducting rows.
    """

    def __init__(self, A, what: str = "system"):
        A = sp.csr_matrix(A)
        rows = np.asarray(abs(A).sum(axis=1)).ravel()
        if np.any(rows == 0) or not np.all(np.isfinite(rows)):
            raise SolverError(f"singular {what}: zero or non-finite row")
        self.d = 1.0 / rows
        try:
            self.lu = spla.splu(sp.csc_matrix(sp.diags(self.d) @ A))
        except RuntimeError as exc:
            raise SolverError(f"singular {what}: {exc}") from None

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        return self.lu.solve(self.d[:, None] * b if b.ndim == 2 else self.d * b)


def factorize(A, what: str = "system") -> RowScaledLU:
    return RowScaledLU(A, what)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise SolverError(f"non-finite solution in {what}")
    return x


# ---------------------------------------------------------------------------
# Electric step
# ---------------------------------------------------------------------------

@dataclass
class NewtonInfo:
    iterations: int
    residuals: list


def step_eqs(disc: Discretization, u_prev, theta, theta_prev, dt: float, t: float,
             settings: SolverSettings, u_guess=None, q_prev=None):
    """Implicit-Euler electric step by damped Newton.

    ``dt = inf`` solves the stationary conduction problem.  Returns
    ``(u, NewtonInfo)``.  Convergence is judged row by row: each residual
    entry is compared with the magnitude of the terms it sums (see
    :func:`electric_row_scale`), so weakly conducting regions converge as
    tightly as strongly conducting ones.
    """
    free = disc.el_free
    transient = math.isfinite(dt)
    if transient and q_prev is None:
        q_prev = disc.charge(disc.electric(u_prev, theta_prev))
    u = disc.with_el_bc(u_prev if u_guess is None else u_guess, t)

    def residual(u):
        f = disc.electric(u, theta)
        r = disc.current(f)
        if transient:
            r = r + (disc.charge(f) - q_prev) / dt
        rel = _row_relative(r[free], electric_row_scale(disc, f, u, u_prev, dt)[free])
        return f, r[free], rel

    f, r, rel = residual(u)
    trace = []
    if len(free) == 0:
        return u, NewtonInfo(0, trace)
    rn = np.linalg.norm(r)
    trace.append(rel)
    for it in range(settings.max_newton + 1):
        if rel <= settings.tol_newton:
            return u, NewtonInfo(it, trace)
        if it == settings.max_newton:
            break
        coeff = disc.sigma_d(f)
        if transient:
            coeff = coeff + disc.eps_d(f) / dt
        J = disc.space.stiffness(coeff)[free][:, free]
        du = factorize(J, "electric Jacobian").solve(-r)
        _check_finite(du, "electric Newton step")
        alpha = 1.0
        while True:
            trial = u.copy()
            trial[free] += alpha * du
            f_t, r_t, rel_t = residual(trial)
            rn_t = np.linalg.norm(r_t)
            if rn_t <= (1 - 1e-4 * alpha) * rn or alpha < 1e-3:
                break
            alpha *= 0.5
        step = alpha * np.linalg.norm(du)
        u, f, r, rel, rn = trial, f_t, r_t, rel_t, rn_t
        trace.append(rel)
        if step <= 1e-14 * max(np.linalg.norm(u[free]), 1e-300) and rel <= 1e3 * settings.tol_newton:
            return u, NewtonInfo(it + 1, trace)
    raise SolverError(f"Newton did not converge at t={t:.6g} s; relative residuals {trace}", trace)


def electric_row_scale(disc: Discretization, f: ElectricFields, u, u_prev, dt) -> np.ndarray:
    """Per-row magnitude ``|K_sig| |u| + |K_eps| (|u| + |u_prev|) / dt`` of
    the electric residual (``dt = inf``: conduction only)."""
    sp_ = disc.space
    s = sp_.abs_action(f.sigma, u)
    if math.isfinite(dt):
        s = s + (sp_.abs_action(f.eps, u) + sp_.abs_action(f.eps, u_prev)) / dt
    return s


def _row_relative(r, scale) -> float:
    """``max |r_i| / scale_i``; rows with zero scale hold exact zeros."""
    if r.size == 0:
        return 0.0
    safe = np.where(scale > 0, scale, 1.0)
    ratio = np.where(scale > 0, np.abs(r) / safe, np.where(r == 0, 0.0, np.inf))
    return float(ratio.max())


def step_heat(disc: Discretization, v_prev, source, dt_th: float, settings: SolverSettings,
              v_guess=None, e_prev=None):
    """Implicit-Euler thermal step (``dt_th = inf``: stationary).

    ``source`` is the nodal Joule load vector.  Temperature-dependent
    ``lam`` and ``cv`` are resolved by successive substitution on the
    frozen-coefficient system.  Returns ``(v, iterations)``.
    """
    sp_ = disc.space
    free, bc = disc.th_free, disc.th_bc
    transient = math.isfinite(dt_th)
    if transient and e_prev is None:
        e_prev = disc.energy(disc.thermal(v_prev))
    rhs = np.asarray(source, dtype=float).copy()
    if transient:
        rhs = rhs + e_prev / dt_th
    v = disc.with_th_bc(v_prev if v_guess is None else v_guess)
    mats = disc.scenario.materials.regions.values()
    nonlinear = any(m.lam.temperature_dependent or m.cv.temperature_dependent for m in mats)
    trace = []
    for it in range(1, settings.max_couple + 1):
        tf = disc.thermal(v)
        A = sp_.stiffness(tf.lam)
        if transient:
            A = A + sp_.mass(tf.cv) / dt_th
        A = A.tocsr()
        Af = A[free]
        b = rhs[free] - Af[:, bc.nodes] @ bc.values
        new = v.copy()
        new[free] = factorize(Af[:, free], "thermal system").solve(b)
        _check_finite(new, "thermal step")
        upd = np.linalg.norm(new - v) / max(np.linalg.norm(new), 1e-300)
        trace.append(upd)
        v = new
        if not nonlinear or upd <= settings.tol_couple:
            return v, it
    raise SolverError(f"thermal fixed point did not converge; updates {trace}", trace)


def joule_power_density(disc: Discretization, u, theta) -> np.ndarray:
    """Element-averaged ``sigma |E|^2`` (W/m^3)."""
    f = disc.electric(u, theta)
    w = disc.space.wq
    return np.sum(w * f.sigma, axis=1) / np.sum(w, axis=1) * f.E2


# ---------------------------------------------------------------------------
# Stationary state
# ---------------------------------------------------------------------------

def solve_stationary(scenario: Scenario):
    """Coupled DC conduction and stationary heat conduction at ``t_s``.

    Returns ``(u0, v0)``.
    """
    disc = scenario.disc
    st = scenario.settings
    t0 = scenario.t_s
    v = disc.with_th_bc(np.full(disc.n, float(np.mean(disc.th_bc.values))))
    u = _linear_guess(disc, v, t0)
    coupled = scenario.materials.electric_temperature_dependent()
    trace = []
    for it in range(1, st.max_couple + 1):
        u = _stationary_eqs(disc, u, v, t0, st)
        v_new, _ = step_heat(disc, v, disc.joule_load(disc.electric(u, v)), math.inf, st, v_guess=v)
        upd = np.linalg.norm(v_new - v) / max(np.linalg.norm(v_new), 1e-300)
        trace.append(upd)
        v = v_new
        if not coupled:
            return u, v
        if it >= 2 and upd <= st.tol_couple:
            # final electric solve on the converged temperature
            return _stationary_eqs(disc, u, v, t0, st), v
    raise SolverError(f"stationary coupling did not converge; updates {trace}", trace)


def _stationary_eqs(disc, u, v, t, st):
    try:
        return step_eqs(disc, u, v, v, math.inf, t, st, u_guess=u)[0]
    except SolverError:
        return _continuation(disc, u, v, t, st)


def _linear_guess(disc: Discretization, v, t):
    """DC solution for the zero-field conductivity at temperature v."""
    sp_ = disc.space
    thq = sp_.at_qp(v)
    d = disc._per_region(("sigma",), np.zeros_like(thq), thq)
    K = sp_.stiffness(d["sigma"][0]).tocsr()
    u = disc.with_el_bc(np.zeros(disc.n), t)
    free = disc.el_free
    if len(free):
        Kf = K[free]
        u[free] = factorize(Kf[:, free], "conduction system").solve(-(Kf[:, disc.el_nodes] @ u[disc.el_nodes]))
    return u


def _continuation(disc, u, v, t, st, steps=8):
    """Ramp the boundary voltages when Newton fails from the linear guess."""
    target = disc.el_values(t)
    nodes = disc.el_nodes
    for k in range(1, steps + 1):
        guess = u.copy()
        guess[nodes] = target * k / steps
        sub = _RampedDisc(disc, target * k / steps)
        u, _ = step_eqs(sub, guess, v, v, math.inf, t, st, u_guess=guess)
    return u


class _RampedDisc:
    """Discretization proxy with fixed boundary values (voltage ramping)."""

    def __init__(self, disc, values):
        self._d, self._values = disc, values

    def __getattr__(self, name):
        return getattr(self._d, name)

    def el_values(self, t):
        return self._values

    def with_el_bc(self, u, t):
        u = np.array(u, dtype=float)
        u[self._d.el_nodes] = self._values
        return u


# ---------------------------------------------------------------------------
# Transient
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransientSolution:
    scenario: Scenario
    grid: TimeGrid
    u: np.ndarray           # (n_el + 1, N)
    v: np.ndarray           # (n_th + 1, N)
    stats: dict

    @property
    def disc(self) -> Discretization:
        return self.scenario.disc

    @property
    def t_el(self) -> np.ndarray:
        return self.grid.t_el

    @property
    def t_th(self) -> np.ndarray:
        return self.grid.t_th

    def theta(self, n: int) -> np.ndarray:
        """Nodal temperature seen by electric step n."""
        if n == 0:
            return self.v[0]
        m = self.grid.macro(n)
        a, b = self.grid.weights(n)
        return a * self.v[m - 1] + b * self.v[m]

    def fields(self, n: int) -> ElectricFields:
        return self.disc.electric(self.u[n], self.theta(n))

    def E(self, n: int) -> np.ndarray:
        return -self.disc.space.grad(self.u[n])

    def J(self, n: int) -> np.ndarray:
        f = self.fields(n)
        w = self.disc.space.wq
        return (np.sum(w * f.sigma, axis=1) / np.sum(w, axis=1))[:, None] * (-f.g)

    def D(self, n: int) -> np.ndarray:
        f = self.fields(n)
        w = self.disc.space.wq
        return (np.sum(w * f.eps, axis=1) / np.sum(w, axis=1))[:, None] * (-f.g)

    def joule(self, n: int) -> np.ndarray:
        return joule_power_density(self.disc, self.u[n], self.theta(n))


def solve_transient(scenario: Scenario, initial=None) -> TransientSolution:
    """Multi-rate implicit Euler from the stationary state.

    Each thermal macro step runs its electric micro steps with linearly
    interpolated temperature, feeds the averaged Joule load to the thermal
    step and repeats until the end temperature stagnates.
    """
    disc = scenario.disc
    st = scenario.settings
    grid = scenario.grid
    R, dt, dtt = grid.ratio, grid.dt_el, grid.dt_th
    clock = _time.perf_counter()
    u0, v0 = solve_stationary(scenario) if initial is None else initial
    u = np.empty((grid.n_el + 1, disc.n))
    v = np.empty((grid.n_th + 1, disc.n))
    u[0], v[0] = u0, v0
    coupled = scenario.materials.electric_temperature_dependent()
    min_iter = 2 if coupled else 1
    stats = {"newton_iterations": 0, "electric_steps": 0, "thermal_solves": 0,
             "coupling_iterations": [], "max_newton_residual": 0.0}
    t_el = grid.t_el
    q_prev0 = disc.charge(disc.electric(u0, v0))
    e_prev = disc.energy(disc.thermal(v0))
    for m in range(1, grid.n_th + 1):
        vg = v[m - 1].copy()
        trace = []
        for it in range(1, st.max_couple + 1):
            src = np.zeros(disc.n)
            q_prev, th_prev = q_prev0, v[m - 1]
            for j in range(1, R + 1):
                n = (m - 1) * R + j
                a, b = grid.weights(n)
                th = a * v[m - 1] + b * vg
                guess = u[n] if it > 1 else u[n - 1]
                u[n], info = step_eqs(disc, u[n - 1], th, th_prev, dt, t_el[n], st,
                                      u_guess=guess, q_prev=q_prev)
                stats["newton_iterations"] += info.iterations
                stats["electric_steps"] += 1
                if info.residuals:
                    stats["max_newton_residual"] = max(stats["max_newton_residual"], info.residuals[-1])
                f = disc.electric(u[n], th)
                q_prev, th_prev = disc.charge(f), th
                src += disc.joule_load(f)
            try:
                v_new, _ = step_heat(disc, v[m - 1], src / R, dtt, st, v_guess=vg, e_prev=e_prev)
            except SolverError as exc:
                raise SolverError(f"thermal step {m}: {exc}", exc.trace) from None
            stats["thermal_solves"] += 1
            upd = np.linalg.norm(v_new - vg) / max(np.linalg.norm(v_new), 1e-300)
            trace.append(upd)
            vg = v_new
            if it >= min_iter and (not coupled or upd <= st.tol_couple):
                break
        else:
            raise SolverError(f"coupling did not converge in macro step {m}; updates {trace}", trace)
        v[m] = vg
        stats["coupling_iterations"].append(it)
        q_prev0 = q_prev
        e_prev = disc.energy(disc.thermal(v[m]))
    stats["wall_time"] = _time.perf_counter() - clock
    return TransientSolution(scenario, grid, u, v, stats)


def _solve_single_rate(scenario: Scenario, initial=None) -> TransientSolution:
    """Reference loop with one electric step per thermal step."""
    disc = scenario.disc
    st = scenario.settings
    grid = scenario.grid
    if grid.ratio != 1:
        raise ScenarioError("single-rate reference needs equal step maxima")
    dt = grid.dt_el
    u0, v0 = solve_stationary(scenario) if initial is None else initial
    u = np.empty((grid.n_el + 1, disc.n))
    v = np.empty((grid.n_th + 1, disc.n))
    u[0], v[0] = u0, v0
    coupled = scenario.materials.electric_temperature_dependent()
    t_el = grid.t_el
    thermal_solves = 0
    for n in range(1, grid.n_el + 1):
        q_prev = disc.charge(disc.electric(u[n - 1], v[n - 1]))
        e_prev = disc.energy(disc.thermal(v[n - 1]))
        vg = v[n - 1].copy()
        for it in range(1, st.max_couple + 1):
            th = vg
            guess = u[n] if it > 1 else u[n - 1]
            u[n], _ = step_eqs(disc, u[n - 1], th, v[n - 1], dt, t_el[n], st, u_guess=guess, q_prev=q_prev)
            src = disc.joule_load(disc.electric(u[n], th))
            v_new, _ = step_heat(disc, v[n - 1], src, dt, st, v_guess=vg, e_prev=e_prev)
            thermal_solves += 1
            upd = np.linalg.norm(v_new - vg) / max(np.linalg.norm(v_new), 1e-300)
            vg = v_new
            if it >= (2 if coupled else 1) and (not coupled or upd <= st.tol_couple):
                break
        else:
            raise SolverError(f"coupling did not converge in step {n}")
        v[n] = vg
    return TransientSolution(scenario, grid, u, v, {"thermal_solves": thermal_solves})


# ---------------------------------------------------------------------------
# Residuals (used by the sensitivity solvers and their tests)
# ---------------------------------------------------------------------------

def electric_residual(disc: Discretization, u, u_prev, theta, theta_prev, dt) -> np.ndarray:
    f = disc.electric(u, theta)
    r = disc.current(f)
    if math.isfinite(dt):
        r = r + (disc.charge(f) - disc.charge(disc.electric(u_prev, theta_prev))) / dt
    return r


def thermal_residual(disc: Discretization, v, v_prev, source, dt_th) -> np.ndarray:
    tf = disc.thermal(v)
    r = disc.heat_flux(tf) - source
    if math.isfinite(dt_th):
        r = r + (disc.energy(tf) - disc.energy(disc.thermal(v_prev))) / dt_th
    return r
