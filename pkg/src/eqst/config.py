"""Scenario files: one TOML document with the sections ``[geometry]``,
``[materials.<region>]``, ``[boundaries]``, ``[time]``, ``[solver]``,
``[[qoi]]`` and ``[parameters]``.

Quantities may be plain numbers (SI) or strings with a unit suffix, e.g.
``"0.7 kV/mm"``, ``"65 degC"``, ``"250 us"``.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .forward import Scenario, ScenarioError, SolverSettings, Waveform
from .materials import EPS0, Constant, Fgm, Law, LinearTemperature, MaterialModel, RegionMaterial
from .mesh import AXISYMMETRIC, BoundaryRule, GeometrySpec, Rect, generate_layered_mesh, import_msh, read_native
from .qoi import QoiSpec
from .units import to_si


class ConfigError(ValueError):
    pass


_PROP_UNITS = {"sigma": "S/m", "eps": "F/m", "lam": "W/(m*K)", "cv": "J/(m^3*K)"}
_FIELD_UNITS = {"p2": "V/m", "p3": "V/m", "p5": "K", "theta0": "K", "theta_ref": "K", "alpha": "1/K",
                "p4": None}


@dataclass
class RunSetup:
    """A loaded scenario file."""

    scenario: Scenario
    qois: list
    parameters: list
    fd_rel_step: float = 1e-4
    geometry: GeometrySpec | None = None
    source: str = ""
    raw: dict = field(default_factory=dict)
    digest: str = ""

    def with_overrides(self, h=None, dt_el=None, dt_th=None) -> "RunSetup":
        for name, val in (("h", h), ("dt_el", dt_el), ("dt_th", dt_th)):
            if val is not None and not val > 0:
                raise ConfigError(f"override --{name.replace('_', '-')} must be positive")
        sc = self.scenario
        changes = {}
        if h is not None:
            if self.geometry is None:
                raise ConfigError(f"{self.source}: mesh size override needs a [geometry] with rects")
            changes["mesh"] = generate_layered_mesh(self.geometry.with_h(h))
        if dt_el is not None or dt_th is not None:
            el = dt_el if dt_el is not None else sc.dt_el_max
            th = dt_th if dt_th is not None else max(sc.dt_th_max, el)
            changes.update(dt_el_max=el, dt_th_max=th)
        if not changes:
            return self
        geometry = self.geometry.with_h(h) if h is not None else self.geometry
        try:
            new_sc = sc.replace(**changes)
        except ScenarioError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None
        return dataclasses.replace(self, scenario=new_sc, geometry=geometry)


class _Reader:
    def __init__(self, source: str):
        self.source = source

    def fail(self, key: str, msg: str):
        raise ConfigError(f"{self.source}: [{key}] {msg}")

    def get(self, table: dict, key: str, where: str, default=...):
        if key not in table:
            if default is ...:
                self.fail(where, f"missing key {key!r}")
            return default
        return table[key]

    def qty(self, value, unit, where):
        try:
            return to_si(value, unit)
        except ValueError as exc:
            self.fail(where, str(exc))

    def point(self, value, where):
        if not isinstance(value, list) or len(value) != 2:
            self.fail(where, "expected a [rho, z] pair")
        return tuple(self.qty(v, "m", where) for v in value)


def _law(rd: _Reader, prop: str, spec, where: str) -> Law:
    unit = _PROP_UNITS[prop]
    if not isinstance(spec, dict):
        return Constant(rd.qty(spec, unit, where))
    kind = spec.get("law", "constant")
    scale = 1.0
    if prop == "eps" and "eps_r" in spec:
        spec = dict(spec, value=spec["eps_r"])
        scale, unit = EPS0, None
    known = {"constant": ("value",), "linear_temperature": ("value", "alpha", "theta_ref"),
             "fgm": ("p1", "p2", "p3", "p4", "p5", "theta0")}
    if kind not in known:
        rd.fail(where, f"unknown law {kind!r}")
    extra = set(spec) - set(known[kind]) - {"law", "eps_r"}
    if extra:
        rd.fail(where, f"unknown key(s) {sorted(extra)} for law {kind!r}")
    vals = {}
    for name in known[kind]:
        if name not in spec:
            continue
        u = unit if name in ("value", "p1") else _FIELD_UNITS[name]
        vals[name] = rd.qty(spec[name], u, f"{where}.{name}")
    if "value" in vals:
        vals["value"] *= scale
    try:
        if kind == "constant":
            return Constant(rd.get(vals, "value", where))
        if kind == "linear_temperature":
            return LinearTemperature(**vals)
        law = Fgm(**vals)
        law.params  # validates
        return law
    except (TypeError, ValueError) as exc:
        rd.fail(where, str(exc))


def _waveform(rd: _Reader, spec, where) -> Waveform:
    if not isinstance(spec, dict):
        return Waveform("constant", rd.qty(spec, "V", where))
    kind = spec.get("waveform", "constant")
    kw = {"kind": kind}
    for key, unit in (("U_dc", "V"), ("U_hat", "V"), ("tau1", "s"), ("tau2", "s")):
        if key in spec:
            kw[key] = rd.qty(spec[key], unit, f"{where}.{key}")
    try:
        return Waveform(**kw)
    except ScenarioError as exc:
        rd.fail(where, str(exc))


def _geometry(rd: _Reader, geo: dict, base: Path | None):
    mode = geo.get("mode", AXISYMMETRIC)
    if "mesh" in geo:
        path = Path(geo["mesh"])
        if base is not None and not path.is_absolute():
            path = base / path
        if not path.exists():
            rd.fail("geometry.mesh", f"mesh file {str(path)!r} does not exist")
        data = path.read_text()
        try:
            mesh = import_msh(data, mode) if path.suffix == ".msh" else read_native(data)
        except ValueError as exc:
            rd.fail("geometry.mesh", str(exc))
        return mesh, None
    rects = []
    for i, r in enumerate(rd.get(geo, "rects", "geometry")):
        w = f"geometry.rects[{i}]"
        rho = [rd.qty(x, "m", w) for x in rd.get(r, "rho", w)]
        z = [rd.qty(x, "m", w) for x in rd.get(r, "z", w)]
        rects.append(Rect(rho[0], rho[1], z[0], z[1], rd.get(r, "region", w)))
    rules = []
    for i, b in enumerate(geo.get("boundaries", [])):
        w = f"geometry.boundaries[{i}]"
        rules.append(BoundaryRule(rd.get(b, "tag", w), rd.point(rd.get(b, "from", w), w),
                                  rd.point(rd.get(b, "to", w), w)))
    h = rd.qty(rd.get(geo, "h_target", "geometry"), "m", "geometry.h_target")
    try:
        spec = GeometrySpec(tuple(rects), h, tuple(rules), mode)
        return generate_layered_mesh(spec), spec
    except ValueError as exc:
        rd.fail("geometry", str(exc))


def parse_config(text: str, source: str = "<string>", base: Path | None = None) -> RunSetup:
    rd = _Reader(source)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    mesh, geometry = _geometry(rd, rd.get(raw, "geometry", "root"), base)

    regions = {}
    for region, props in rd.get(raw, "materials", "root").items():
        laws = {}
        for prop in _PROP_UNITS:
            laws[prop] = _law(rd, prop, rd.get(props, prop, f"materials.{region}"), f"materials.{region}.{prop}")
        regions[region] = RegionMaterial(**laws)

    bnd = rd.get(raw, "boundaries", "root")
    el = {tag: _waveform(rd, s, f"boundaries.electric.{tag}")
          for tag, s in rd.get(bnd, "electric", "boundaries").items()}
    th = {tag: rd.qty(s, "K", f"boundaries.thermal.{tag}")
          for tag, s in rd.get(bnd, "thermal", "boundaries").items()}

    tm = rd.get(raw, "time", "root")
    times = {k: rd.qty(rd.get(tm, k, "time", d), "s", f"time.{k}")
             for k, d in (("t_start", 0.0), ("t_end", ...), ("dt_el_max", ...), ("dt_th_max", None))
             if d is not None or k in tm}
    times.setdefault("dt_th_max", times["dt_el_max"])

    solver = raw.get("solver", {})
    known = {f.name for f in dataclasses.fields(SolverSettings)}
    bad = set(solver) - known
    if bad:
        rd.fail("solver", f"unknown key(s) {sorted(bad)}")
    settings = SolverSettings(**solver)

    try:
        scenario = Scenario(mesh, MaterialModel(regions), el, th, times["t_start"], times["t_end"],
                            times["dt_el_max"], times["dt_th_max"], settings, raw.get("name", Path(source).stem))
    except (ScenarioError, KeyError) as exc:
        rd.fail("scenario", str(exc))

    qois = []
    for i, q in enumerate(raw.get("qoi", [{"kind": "joule_heat"}])):
        w = f"qoi[{i}]"
        try:
            qois.append(QoiSpec(
                kind=q.get("kind", "joule_heat"),
                location=rd.point(q["location"], w) if "location" in q else None,
                time=rd.qty(q["time"], "s", w) if "time" in q else None,
                regions=tuple(q["regions"]) if "regions" in q else None,
                name=q.get("name", "")))
        except ValueError as exc:
            rd.fail(w, str(exc))

    par = raw.get("parameters", {})
    ids = list(par.get("ids", []))
    for pid in ids:
        try:
            scenario.materials.get(pid)
        except KeyError as exc:
            rd.fail("parameters.ids", str(exc))
    fd = rd.qty(par.get("fd_rel_step", 1e-4), None, "parameters.fd_rel_step")
    if not fd > 0:
        rd.fail("parameters.fd_rel_step", "must be positive")
    digest = hashlib.sha256(text.encode()).hexdigest()
    return RunSetup(scenario, qois, ids, fd, geometry, source, raw, digest)


def load_config(path) -> RunSetup:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: file does not exist")
    return parse_config(path.read_text(), str(path), path.parent)


def bundled(name: str) -> RunSetup:
    """Load a scenario shipped with the package (``coaxial``, ``joint_like``)."""
    ref = resources.files("eqst") / "scenarios" / f"{name}.toml"
    if not ref.is_file():
        raise ConfigError(f"no bundled scenario {name!r}")
    return parse_config(ref.read_text(), f"{name}.toml")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("eqst") / "scenarios" / f"{name}.toml"))
