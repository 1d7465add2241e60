"""Discrete adjoint of the multi-rate EQST scheme.

The linearization of one electric step n and one thermal step m is built
from the blocks (``A_b[r, s] = int (b . grad N_s) N_r``)::

    dR_el^n/du_n   = K_sig_d + K_eps_d / dt        dR_el^{n+1}/du_n  = -K_eps_d / dt
    dR_el^n/dth_n  = B_sig + B_eps / dt            dR_el^{n+1}/dth_n = -B_eps / dt
    dR_th^m/dv_m   = C / dt_th + K_lam + Lam       dR_th^{m+1}/dv_m  = -C / dt_th
    dR_th^m/du_n   = -S_u / R                      dR_th^m/dth_n     = -S_th / R

    B_sig = A^T_{dsigma/dtheta grad u}   B_eps = A^T_{deps/dtheta grad u}
    S_u   = A_{2 (sigma + dsigma/dE2 |E|^2) grad u}     S_th = M_{dsigma/dtheta |E|^2}
    C     = M_{cv + dcv/dtheta theta}    Lam   = A^T_{dlam/dtheta grad theta}

Multipliers are stored scaled by the step length (``lambda_n = dt w_el,n``,
``mu_m = dt_th w_th,m``) so that ``w`` approximates the continuous adjoint
fields.  Terminal values are zero and the coupling inside each thermal step
is resolved by successive substitution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .forward import Discretization, SolverError, TransientSolution, factorize
from .qoi import QoiPartials, QoiSpec


@dataclass
class ElectricOps:
    Ksd: sp.csr_matrix
    Ked: sp.csr_matrix
    Bs: sp.csr_matrix
    Be: sp.csr_matrix
    Su: sp.csr_matrix
    St: sp.csr_matrix
    fields: object = None


@dataclass
class ThermalOps:
    C: sp.csr_matrix
    Kl: sp.csr_matrix
    Lam: sp.csr_matrix


def electric_ops(disc: Discretization, u, theta) -> ElectricOps:
    sp_ = disc.space
    f = disc.electric(u, theta)
    g = f.g[:, None, :]
    return ElectricOps(
        Ksd=sp_.stiffness(disc.sigma_d(f)),
        Ked=sp_.stiffness(disc.eps_d(f)),
        Bs=sp_.advective(f.dsigma_dtheta[..., None] * g).T.tocsr(),
        Be=sp_.advective(f.deps_dtheta[..., None] * g).T.tocsr(),
        Su=sp_.advective(2.0 * (f.sigma + f.dsigma_dE2 * f.E2[:, None])[..., None] * g),
        St=sp_.mass(f.dsigma_dtheta * f.E2[:, None]),
        fields=f,
    )


def thermal_ops(disc: Discretization, v) -> ThermalOps:
    sp_ = disc.space
    t = disc.thermal(v)
    return ThermalOps(
        C=sp_.mass(t.cv + t.dcv_dtheta * t.th_q),
        Kl=sp_.stiffness(t.lam),
        Lam=sp_.advective(t.dlam_dtheta[..., None] * t.g[:, None, :]).T.tocsr(),
    )


def adjoint_step_operators(sol: TransientSolution, n: int) -> dict:
    """Linearization blocks of electric step ``n`` and of the thermal step
    containing it (for ``n = 0`` the initial state)."""
    if not 0 <= n <= sol.grid.n_el:
        raise IndexError(f"step {n} not on the stored trajectory")
    disc = sol.disc
    m = 0 if n == 0 else sol.grid.macro(n)
    e = electric_ops(disc, sol.u[n], sol.theta(n))
    t = thermal_ops(disc, sol.v[m])
    return {"Ksd": e.Ksd, "Ked": e.Ked, "Bs": e.Bs, "Be": e.Be, "Su": e.Su, "St": e.St,
            "C": t.C, "Kl": t.Kl, "Lam": t.Lam}


def _sub(A, rows, cols):
    return A[rows][:, cols]


@dataclass(frozen=True, eq=False)
class AdjointSolution:
    """Adjoint fields on the forward time points.

    ``w_el[k]`` lives at ``t_k`` and multiplies the residual of electric step
    ``k + 1`` (the backward implicit-Euler pairing); ``w_el[n_el]`` is the
    terminal value and is exactly zero.  ``w_th`` likewise on the thermal
    grid.  ``gamma_u0``/``gamma_v0`` are the derivatives of the reduced
    functional with respect to the initial state.
    """

    qoi: QoiSpec
    sol: TransientSolution
    w_el: np.ndarray      # (n_el + 1, N)
    w_th: np.ndarray      # (n_th + 1, N)
    gamma_u0: np.ndarray
    gamma_v0: np.ndarray
    partials: QoiPartials
    stats: dict

    def el_multiplier(self, n: int) -> np.ndarray:
        """Scaled multiplier of electric residual n >= 1."""
        return self.w_el[n - 1]

    def th_multiplier(self, m: int) -> np.ndarray:
        return self.w_th[m - 1]


def solve_adjoint(sol: TransientSolution, q: QoiSpec) -> AdjointSolution:
    disc = sol.disc
    grid = sol.grid
    st = sol.scenario.settings
    R, dt, dtt = grid.ratio, grid.dt_el, grid.dt_th
    Ne, Nm, N = grid.n_el, grid.n_th, disc.n
    Fe, Ft = disc.el_free, disc.th_free
    part = QoiPartials(q, sol)
    coupled = sol.scenario.materials.electric_temperature_dependent()

    w_el = np.zeros((Ne + 2, N))
    w_th = np.zeros((Nm + 2, N))
    carry = np.zeros(N)          # sum_{n in m+1} a_n (zeta_n - S_th,n w_th,m+1)
    iters = []

    def vec(x):
        return np.zeros(N) if x is None else x

    for m in range(Nm, 0, -1):
        tops = thermal_ops(disc, sol.v[m])
        steps = list(range((m - 1) * R + 1, m * R + 1))
        eops = {n: electric_ops(disc, sol.u[n], sol.theta(n)) for n in steps}
        x_el = {n: vec(part.du(n, eops[n].fields)) / dt for n in steps}
        g_th = {n: vec(part.dtheta(n, eops[n].fields)) / dt for n in steps}
        solvers = {n: factorize(_sub(eops[n].Ksd + eops[n].Ked / dt, Fe, Fe), f"adjoint electric step {n}")
                   for n in steps}
        A = (tops.C / dtt + tops.Kl + tops.Lam).T
        for n in steps:
            A = A - (grid.weights(n)[1] / R) * eops[n].St
        th_solver = factorize(_sub(A.tocsr(), Ft, Ft), f"adjoint thermal step {m}")
        rhs_fixed = vec(part.dv(m)) / dtt + tops.C @ w_th[m + 1] / dtt - carry / R

        wg = w_th[m + 1].copy()
        for it in range(1, st.max_linear + 1):
            zeta = {}
            for n in reversed(steps):
                e = eops[n]
                rhs = x_el[n] + e.Ked @ w_el[n + 1] / dt + e.Su.T @ wg
                w = np.zeros(N)
                w[Fe] = solvers[n].solve(rhs[Fe])
                w_el[n] = w
                zeta[n] = (e.Bs + e.Be / dt).T @ w - e.Be.T @ w_el[n + 1] / dt - g_th[n]
            rhs = rhs_fixed.copy()
            for n in steps:
                rhs -= (grid.weights(n)[1] / R) * zeta[n]
            new = np.zeros(N)
            new[Ft] = th_solver.solve(rhs[Ft])
            upd = np.linalg.norm(new - wg)
            scale = np.linalg.norm(new)
            wg = new
            if not coupled or upd <= st.tol_linear * scale or scale == 0.0:
                break
        else:
            raise SolverError(f"adjoint coupling did not converge in thermal step {m}")
        if not np.all(np.isfinite(wg)):
            raise SolverError(f"non-finite adjoint in thermal step {m}")
        w_th[m] = wg
        iters.append(it)
        carry = np.zeros(N)
        for n in steps:
            carry += grid.weights(n)[0] * (zeta[n] - eops[n].St @ wg)

    # initial-state terms
    e0 = electric_ops(disc, sol.u[0], sol.v[0])
    t0 = thermal_ops(disc, sol.v[0])
    gamma_u0 = vec(part.du(0)) + e0.Ked @ w_el[1]
    gamma_v0 = (vec(part.dv(0)) + vec(part.dtheta(0)) + e0.Be.T @ w_el[1]
                + t0.C @ w_th[1] - dtt / R * carry)
    return AdjointSolution(q, sol, w_el[1:], w_th[1:], gamma_u0, gamma_v0, part,
                           {"coupling_iterations": iters[::-1]})
