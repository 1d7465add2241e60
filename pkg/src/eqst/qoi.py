"""Quantities of interest and their partial derivatives.

A QoI is a functional of the discrete trajectory.  Its derivatives are
exposed step by step through :class:`QoiPartials`:

    du(n)      dG/du_n                      (electric step n)
    dtheta(n)  dG/dth_n  (interpolated temperature of step n)
    dv(m)      dG/dv_m   (thermal step m, direct dependence only)
    explicit   dG/dp at frozen fields

Joule heat uses the right-endpoint rule ``G = sum_{n>=1} dt int sigma |E|^2``,
matching implicit Euler.  Point values are taken at the nearest node and the
nearest step of the matching time grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import TransientSolution

KINDS = ("joule_heat", "point_temperature", "point_potential")


@dataclass(frozen=True)
class QoiSpec:
    kind: str = "joule_heat"
    location: tuple[float, float] | None = None
    time: float | None = None
    regions: tuple[str, ...] | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown QoI kind {self.kind!r}")
        if self.kind != "joule_heat" and (self.location is None or self.time is None):
            raise ValueError(f"{self.kind} needs a location and a time")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    @property
    def unit(self) -> str:
        return {"joule_heat": "J", "point_temperature": "K", "point_potential": "V"}[self.kind]


class QoiPartials:
    """Evaluation and derivatives of one QoI on one solution."""

    def __init__(self, q: QoiSpec, sol: TransientSolution):
        self.q, self.sol = q, sol
        disc = sol.disc
        grid = sol.grid
        mesh = sol.scenario.mesh
        self.node = self.step = None
        if q.kind == "joule_heat":
            mask = mesh.region_mask(q.regions).astype(float)
            self.mask = mask[:, None]
        else:
            mesh.locate(q.location)   # raises outside the mesh
            self.node = mesh.nearest_node(q.location)
            if not grid.t_s - 1e-12 * grid.t_f <= q.time <= grid.t_f * (1 + 1e-12):
                raise ValueError(f"QoI time {q.time} outside [{grid.t_s}, {grid.t_f}]")
            dt = grid.dt_el if q.kind == "point_potential" else grid.dt_th
            nmax = grid.n_el if q.kind == "point_potential" else grid.n_th
            self.step = int(min(nmax, max(0, round((q.time - grid.t_s) / dt))))
        self._disc = disc

    def _unit(self) -> np.ndarray:
        e = np.zeros(self._disc.n)
        e[self.node] = 1.0
        return e

    # -- value ---------------------------------------------------------------
    def value(self) -> float:
        sol, q = self.sol, self.q
        if q.kind == "point_potential":
            return float(sol.u[self.step, self.node])
        if q.kind == "point_temperature":
            return float(sol.v[self.step, self.node])
        sp_ = self._disc.space
        dt = sol.grid.dt_el
        total = 0.0
        for n in range(1, sol.grid.n_el + 1):
            f = sol.fields(n)
            total += dt * sp_.integrate(self.mask * f.sigma * f.E2[:, None])
        return total

    # -- state derivatives ---------------------------------------------------
    def du(self, n: int, fields=None):
        if self.q.kind == "point_potential":
            return self._unit() if n == self.step else None
        if self.q.kind != "joule_heat" or n == 0:
            return None
        f = self.sol.fields(n) if fields is None else fields
        c = 2.0 * (f.sigma + f.dsigma_dE2 * f.E2[:, None]) * self.mask
        return self.sol.grid.dt_el * self._disc.space.flux(c, f.g)

    def dtheta(self, n: int, fields=None):
        if self.q.kind != "joule_heat" or n == 0:
            return None
        f = self.sol.fields(n) if fields is None else fields
        if not np.any(f.dsigma_dtheta):
            return None
        return self.sol.grid.dt_el * self._disc.space.load(f.dsigma_dtheta * f.E2[:, None] * self.mask)

    def dv(self, m: int):
        if self.q.kind == "point_temperature" and m == self.step:
            return self._unit()
        return None

    # -- explicit parameter derivative ----------------------------------------
    def explicit(self, pids) -> dict[str, float]:
        out = {pid: 0.0 for pid in pids}
        if self.q.kind != "joule_heat":
            return out
        sigma_pids = [p for p in pids if p.split(".")[1] == "sigma"]
        if not sigma_pids:
            return out
        sol, disc = self.sol, self._disc
        dt = sol.grid.dt_el
        for n in range(1, sol.grid.n_el + 1):
            g = disc.space.grad(sol.u[n])
            E2 = np.sum(g * g, axis=1)
            thq = disc.space.at_qp(sol.theta(n))
            for pid in sigma_pids:
                d = disc.param_field(pid, E2, thq)
                if d is not None:
                    out[pid] += dt * disc.space.integrate(d * E2[:, None] * self.mask)
        return out


def evaluate_qoi(q: QoiSpec, sol: TransientSolution) -> float:
    return QoiPartials(q, sol).value()


def qoi_rhs(q: QoiSpec, sol: TransientSolution, n: int):
    """Adjoint right-hand sides ``(x_el, x_th)`` of electric step ``n``.

    Both are the step's partial derivatives divided by the step length; for
    Joule heat ``x_el = (K_sig + K_sig_d) u_n`` and
    ``x_th = s_{dsigma/dtheta E^2}``.  Point temperatures contribute to
    ``x_th`` at the last electric step of their thermal step.
    """
    part = QoiPartials(q, sol)
    grid = sol.grid
    zero = np.zeros(sol.disc.n)
    du, dth = part.du(n), part.dtheta(n)
    x_el = zero.copy() if du is None else du / grid.dt_el
    x_th = zero.copy() if dth is None else dth / grid.dt_el
    if q.kind == "point_temperature" and n == part.step * grid.ratio:
        x_th = x_th + part.dv(part.step) / grid.dt_th
    return x_el, x_th


def qoi_partial_p(q: QoiSpec, sol: TransientSolution, pid: str) -> float:
    return QoiPartials(q, sol).explicit([pid])[pid]
