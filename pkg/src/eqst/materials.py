"""Material laws with every derivative the forward, adjoint and sensitivity
solvers consume.

Each region carries four laws: electric conductivity ``sigma(E, theta)``,
permittivity ``eps(E, theta)``, thermal conductivity ``lam(theta)`` and
volumetric heat capacity ``cv(theta)``.  A law is evaluated on the squared
field magnitude ``E2`` and the temperature and returns its value, its
derivatives with respect to ``E2`` and ``theta``, and on request the
derivatives with respect to its own named parameters.

The field-grading law is::

    sigma = p1 * (1 + p4**((E - p2)/p2)) / (1 + p4**((E - p3)/p2))
               * exp(-p5 * (1/theta - 1/theta0))
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

PROPERTIES = ("sigma", "eps", "lam", "cv")
EPS0 = 8.8541878128e-12


# ---------------------------------------------------------------------------
# Field-grading conductivity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FgmParams:
    p1: float = 1e-10          # baseline conductivity, S/m
    p2: float = 0.7e6          # transition field, V/m
    p3: float = 2.4e6          # saturation field, V/m
    p4: float = 1864.0         # steepness
    p5: float = 3713.59        # thermal activation, K
    theta0: float = 293.15     # reference temperature, K

    def __post_init__(self):
        if not (self.p1 > 0 and self.p2 > 0 and self.p3 > self.p2 and self.p4 > 1
                and self.p5 >= 0 and self.theta0 > 0):
            raise ValueError(f"inadmissible FGM parameters {self}")


def _fgm_terms(E, theta, p: FgmParams):
    E = np.asarray(E, dtype=float)
    theta = np.asarray(theta, dtype=float)
    L = np.log(p.p4)
    a = (E - p.p2) / p.p2 * L
    b = (E - p.p3) / p.p2 * L
    gap = (p.p3 - p.p2) / p.p2 * L
    # log((1 + e^a) / (1 + e^b)) = log1p(expm1(gap) expit(b)): no overflow,
    # and every operation is monotone so sigma stays monotone after rounding
    if gap < 700.0:
        log_ratio = np.log1p(np.expm1(gap) * expit(b))
    else:
        with np.errstate(over="ignore"):
            big = gap + np.log1p(np.exp(-np.abs(a))) - np.log1p(np.exp(-np.abs(b)))
            small = np.logaddexp(0.0, a) - np.log1p(np.exp(np.minimum(b, 0.0)))
        log_ratio = np.where(b > 0, big, small)
    thermal = -p.p5 * (1.0 / theta - 1.0 / p.theta0)
    sigma = p.p1 * np.exp(log_ratio + thermal)
    # expit(a) - expit(b) without cancellation once both are close to 1
    sdiff = expit(a) * expit(-b) * -np.expm1(-gap)
    return sigma, expit(a), expit(b), sdiff, L, E, theta


def fgm_sigma(E, theta, p: FgmParams):
    """Field- and temperature-dependent FGM conductivity (S/m)."""
    return _fgm_terms(E, theta, p)[0]


def fgm_partials(E, theta, p: FgmParams) -> dict[str, np.ndarray]:
    """Closed-form partial derivatives of :func:`fgm_sigma`.

    Keys: ``sigma``, ``dE``, ``dE2``, ``dtheta``, ``p1`` ... ``p5``.

    ``dE2 = dE / (2E)`` diverges like 1/E at E = 0 because the law has a
    non-zero slope there; every consumer multiplies it by E^2 or E E^T, so it
    is reported as 0 at exactly E = 0.
    """
    sigma, sa, sb, sdiff, L, E, theta = _fgm_terms(E, theta, p)
    dlog_dE = L / p.p2 * sdiff
    dE = sigma * dlog_dE
    with np.errstate(divide="ignore", invalid="ignore"):
        dE2 = np.where(E > 0, dE / (2.0 * np.where(E > 0, E, 1.0)), 0.0)
    x = (E - p.p2) / p.p2
    y = (E - p.p3) / p.p2
    return {
        "sigma": sigma,
        "dE": dE,
        "dE2": dE2,
        "dtheta": sigma * p.p5 / theta**2,
        "p1": sigma / p.p1,
        "p2": sigma * (-L / p.p2**2) * (sdiff * E + sb * p.p3),
        "p3": sigma * sb * L / p.p2,
        "p4": sigma * (sdiff * x + sb * (x - y)) / p.p4,
        "p5": sigma * -(1.0 / theta - 1.0 / p.theta0),
    }


# ---------------------------------------------------------------------------
# Laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LawValue:
    value: np.ndarray
    dE2: np.ndarray
    dtheta: np.ndarray


class Law:
    """Base class; subclasses are frozen dataclasses."""

    parameters: tuple[str, ...] = ()
    kind = "law"

    def eval(self, E2, theta) -> LawValue:
        raise NotImplementedError

    def dparams(self, E2, theta, names) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @property
    def field_dependent(self) -> bool:
        return False

    @property
    def temperature_dependent(self) -> bool:
        return False

    def get(self, name: str) -> float:
        if name not in self.parameters:
            raise KeyError(f"{self.kind} law has no parameter {name!r}")
        return getattr(self, name)

    def with_param(self, name: str, value: float) -> "Law":
        self.get(name)
        return dataclasses.replace(self, **{name: float(value)})


def _bcast(E2, theta):
    return np.broadcast_arrays(np.asarray(E2, dtype=float), np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class Constant(Law):
    value: float
    parameters = ("value",)
    kind = "constant"

    def eval(self, E2, theta):
        E2, theta = _bcast(E2, theta)
        zero = np.zeros(E2.shape)
        return LawValue(np.full(E2.shape, self.value), zero, zero)

    def dparams(self, E2, theta, names):
        E2, _ = _bcast(E2, theta)
        return {n: np.ones(E2.shape) for n in names if n in self.parameters}


@dataclass(frozen=True)
class LinearTemperature(Law):
    """``value * (1 + alpha * (theta - theta_ref))``."""

    value: float
    alpha: float
    theta_ref: float = 293.15
    parameters = ("value", "alpha")
    kind = "linear_temperature"

    @property
    def temperature_dependent(self):
        return self.alpha != 0.0

    def eval(self, E2, theta):
        E2, theta = _bcast(E2, theta)
        f = self.value * (1.0 + self.alpha * (theta - self.theta_ref))
        return LawValue(f, np.zeros(E2.shape), np.full(E2.shape, self.value * self.alpha))

    def dparams(self, E2, theta, names):
        E2, theta = _bcast(E2, theta)
        out = {}
        if "value" in names:
            out["value"] = 1.0 + self.alpha * (theta - self.theta_ref)
        if "alpha" in names:
            out["alpha"] = self.value * (theta - self.theta_ref)
        return out


@dataclass(frozen=True)
class Fgm(Law):
    p1: float = 1e-10
    p2: float = 0.7e6
    p3: float = 2.4e6
    p4: float = 1864.0
    p5: float = 3713.59
    theta0: float = 293.15
    parameters = ("p1", "p2", "p3", "p4", "p5")
    kind = "fgm"

    @property
    def params(self) -> FgmParams:
        return FgmParams(self.p1, self.p2, self.p3, self.p4, self.p5, self.theta0)

    @property
    def field_dependent(self):
        return True

    @property
    def temperature_dependent(self):
        return self.p5 != 0.0

    def eval(self, E2, theta):
        E2, theta = _bcast(E2, theta)
        d = fgm_partials(np.sqrt(E2), theta, self.params)
        return LawValue(d["sigma"], d["dE2"], d["dtheta"])

    def dparams(self, E2, theta, names):
        E2, theta = _bcast(E2, theta)
        d = fgm_partials(np.sqrt(E2), theta, self.params)
        return {n: d[n] for n in names if n in self.parameters}


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionMaterial:
    sigma: Law
    eps: Law
    lam: Law
    cv: Law

    def law(self, prop: str) -> Law:
        return getattr(self, prop)


@dataclass(frozen=True)
class MaterialState:
    """All material quantities at one set of evaluation points.

    Array shapes follow the broadcast of the inputs; tensors carry two
    trailing axes of length 2.  ``d*_dp`` map parameter ids to arrays.
    """

    sigma: np.ndarray
    eps: np.ndarray
    lam: np.ndarray
    cv: np.ndarray
    dsigma_dE2: np.ndarray
    deps_dE2: np.ndarray
    dsigma_dtheta: np.ndarray
    deps_dtheta: np.ndarray
    dlam_dtheta: np.ndarray
    dcv_dtheta: np.ndarray
    dsigma_dp: dict = field(default_factory=dict)
    deps_dp: dict = field(default_factory=dict)
    dlam_dp: dict = field(default_factory=dict)
    dcv_dp: dict = field(default_factory=dict)
    sigma_d: np.ndarray | None = None
    eps_d: np.ndarray | None = None


def differential_tensor(value, d_dE2, E_vec) -> np.ndarray:
    """``value * I + 2 * d_dE2 * E E^T`` with trailing (2, 2) axes."""
    E_vec = np.asarray(E_vec, dtype=float)
    value = np.asarray(value, dtype=float)
    d_dE2 = np.asarray(d_dE2, dtype=float)
    outer = E_vec[..., :, None] * E_vec[..., None, :]
    return value[..., None, None] * np.eye(2) + 2.0 * d_dE2[..., None, None] * outer


def split_param_id(pid: str) -> tuple[str, str, str]:
    try:
        region, prop, name = pid.split(".")
    except ValueError:
        raise KeyError(f"parameter id {pid!r} must look like 'region.property.name'") from None
    if prop not in PROPERTIES:
        raise KeyError(f"parameter id {pid!r}: unknown property {prop!r}")
    return region, prop, name


@dataclass(frozen=True)
class MaterialModel:
    """Per-region laws.  Parameters are addressed as ``region.property.name``."""

    regions: Mapping[str, RegionMaterial]

    def __getitem__(self, region: str) -> RegionMaterial:
        try:
            return self.regions[region]
        except KeyError:
            raise KeyError(f"no material assigned to region {region!r}") from None

    def get(self, pid: str) -> float:
        region, prop, name = split_param_id(pid)
        return self[region].law(prop).get(name)

    def with_param(self, pid: str, value: float) -> "MaterialModel":
        region, prop, name = split_param_id(pid)
        mat = self[region]
        new = dataclasses.replace(mat, **{prop: mat.law(prop).with_param(name, value)})
        regions = dict(self.regions)
        regions[region] = new
        return MaterialModel(regions)

    def enters(self, pid: str) -> bool:
        region, prop, name = split_param_id(pid)
        return region in self.regions and name in self[region].law(prop).parameters

    def electric_temperature_dependent(self) -> bool:
        return any(m.sigma.temperature_dependent or m.eps.temperature_dependent
                   for m in self.regions.values())

    def evaluate(self, region: str, E_vec, theta, params: tuple[str, ...] = ()) -> MaterialState:
        """Evaluate every law of ``region`` at field vectors ``E_vec`` (..., 2)
        and temperatures ``theta``.  ``params`` lists parameter ids whose
        partial derivatives should be populated."""
        mat = self[region]
        E_vec = np.asarray(E_vec, dtype=float)
        E2 = np.sum(E_vec**2, axis=-1)
        E2, theta = _bcast(E2, theta)
        vals = {p: mat.law(p).eval(E2, theta) for p in PROPERTIES}
        dps = {p: {} for p in PROPERTIES}
        for pid in params:
            reg, prop, name = split_param_id(pid)
            if reg != region:
                continue
            d = mat.law(prop).dparams(E2, theta, (name,))
            if name in d:
                dps[prop][pid] = d[name]
        Eb = np.broadcast_to(E_vec, E2.shape + (2,))
        return MaterialState(
            sigma=vals["sigma"].value, eps=vals["eps"].value,
            lam=vals["lam"].value, cv=vals["cv"].value,
            dsigma_dE2=vals["sigma"].dE2, deps_dE2=vals["eps"].dE2,
            dsigma_dtheta=vals["sigma"].dtheta, deps_dtheta=vals["eps"].dtheta,
            dlam_dtheta=vals["lam"].dtheta, dcv_dtheta=vals["cv"].dtheta,
            dsigma_dp=dps["sigma"], deps_dp=dps["eps"], dlam_dp=dps["lam"], dcv_dp=dps["cv"],
            sigma_d=differential_tensor(vals["sigma"].value, vals["sigma"].dE2, Eb),
            eps_d=differential_tensor(vals["eps"].value, vals["eps"].dE2, Eb),
        )


def evaluate(model: MaterialModel, region: str, E_vec, theta, params=()) -> MaterialState:
    return model.evaluate(region, E_vec, theta, params)


def differential_tensors(E_vec, theta, model: MaterialModel, region: str):
    """(sigma_d, eps_d) for one region."""
    st = model.evaluate(region, E_vec, theta)
    return st.sigma_d, st.eps_d
