"""Command line front end.

    eqst <forward|avm|dsm|fd-check|convergence|sweep> --config FILE [--out DIR]
         [--dt-el S] [--dt-th S] [--h M] [--threads N] ...

``--config`` accepts a TOML path or the name of a bundled scenario
(``coaxial``, ``joint_like``).  Exit status: 0 success, 2 configuration
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from pathlib import Path

from . import io
from .adjoint import solve_adjoint
from .config import ConfigError, RunSetup, bundled, load_config
from .forward import SolverError, solve_transient
from .qoi import QoiPartials
from .sensitivity import ParameterHandle, SensitivityReport, sensitivities
from .studies import AXES, convergence_study, emit_tangent_plot_data, sweep
from .units import to_si

COMMANDS = ("forward", "avm", "dsm", "fd-check", "convergence", "sweep")


def _quantity(unit):
    def parse(text):
        try:
            return to_si(float(text) if _is_number(text) else text, unit)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _is_number(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eqst", description="Coupled electroquasistatic-thermal "
                                "simulation with adjoint sensitivities.")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario TOML file or bundled scenario name")
    common.add_argument("--out", default="eqst_out", help="output directory")
    common.add_argument("--dt-el", type=_quantity("s"), help="maximum electric step (s or '20 us')")
    common.add_argument("--dt-th", type=_quantity("s"), help="maximum thermal step")
    common.add_argument("--h", type=_quantity("m"), help="target mesh size")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    common.add_argument("--qoi", action="append", help="QoI name to evaluate (repeatable)")
    common.add_argument("--param", action="append", help="parameter id region.property.name (repeatable)")
    common.add_argument("--vtk", action="store_true", help="also write VTK snapshots")

    sub.add_parser("forward", parents=[common], help="forward solve and QoI values")
    sub.add_parser("avm", parents=[common], help="adjoint sensitivities")
    sub.add_parser("dsm", parents=[common], help="direct sensitivities")
    fd = sub.add_parser("fd-check", parents=[common], help="AVM vs DSM vs finite differences")
    fd.add_argument("--fd-step", type=float, help="relative finite-difference step")
    cv = sub.add_parser("convergence", parents=[common], help="discretization convergence study")
    cv.add_argument("--axis", choices=AXES, default="mesh_h")
    cv.add_argument("--values", required=True, help="comma-separated levels (h in m, dt in s, or ratios)")
    sw = sub.add_parser("sweep", parents=[common], help="QoI vs one parameter with AVM tangent")
    sw.add_argument("--factors", default="0.99,0.995,1.0,1.005,1.01",
                    help="comma-separated multiples of the nominal value")
    return p


def _set_threads(n: int):
    if n < 1:
        raise ConfigError("--threads must be positive")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _load(args) -> RunSetup:
    path = Path(args.config)
    setup = load_config(path) if path.exists() or path.suffix else bundled(args.config)
    return setup.with_overrides(h=args.h, dt_el=args.dt_el, dt_th=args.dt_th)


def _select(setup: RunSetup, args):
    qois = setup.qois
    if args.qoi:
        names = {q.name: q for q in qois}
        missing = [n for n in args.qoi if n not in names]
        if missing:
            raise ConfigError(f"{setup.source}: [qoi] unknown QoI name(s) {missing}")
        qois = [names[n] for n in args.qoi]
    pids = args.param or setup.parameters
    handles = []
    for pid in pids:
        try:
            handles.append(ParameterHandle.from_scenario(setup.scenario, pid))
        except KeyError as exc:
            raise ConfigError(f"{setup.source}: [parameters] {exc}") from None
    return qois, handles


def _qoi_rows(sol, qois):
    yield ["qoi", "kind", "value", "unit"]
    for q in qois:
        yield [q.name, q.kind, QoiPartials(q, sol).value(), q.unit]


def _timeseries_rows(sol, qois):
    disc = sol.disc
    probes = [(q, QoiPartials(q, sol).node) for q in qois if q.kind != "joule_heat"]
    yield ["t", "joule_power_W"] + [f"{q.name}@node{k}" for q, k in probes]
    for n, t in enumerate(sol.t_el):
        f = sol.fields(n)
        P = disc.space.integrate(f.sigma * f.E2[:, None])
        row = [float(t), P]
        for q, k in probes:
            row.append(float(sol.theta(n)[k]) if q.kind == "point_temperature" else float(sol.u[n, k]))
        yield row


def _write_vtk(out: Path, sol):
    mesh = sol.scenario.mesh
    for n in sorted({0, sol.grid.n_el}):
        io.write_vtk(out / f"state_{n:05d}.vtk", mesh,
                     point_data={"potential": sol.u[n], "temperature": sol.theta(n)},
                     cell_data={"E": sol.E(n), "J": sol.J(n), "D": sol.D(n), "joule": sol.joule(n)})


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    clock = time.perf_counter()
    try:
        _set_threads(args.threads)
        setup = _load(args)
        qois, handles = _select(setup, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        timings = {}
        manifest_extra = {}
        sc = setup.scenario

        if args.command == "convergence":
            if not handles:
                raise ConfigError(f"{setup.source}: [parameters] convergence needs a parameter")
            values = [float(v) for v in args.values.split(",")]
            study = convergence_study(setup, args.axis, values, qois[0], handles[0].id)
            io.write_csv(out / "convergence.csv", study.rows())
            manifest_extra["levels"] = study.extra
            manifest_extra["observed_order"] = study.order
            print(f"{args.axis}: observed order {study.order}")
        elif args.command == "sweep":
            if not handles:
                raise ConfigError(f"{setup.source}: [parameters] sweep needs a parameter")
            res = sweep(setup, qois[0], handles[0].id, [float(f) for f in args.factors.split(",")])
            io.write_csv(out / "sweep.csv", emit_tangent_plot_data(res))
            print(f"{handles[0].id}: normalized AVM slope {res.normalized_slope!r}")
        else:
            t0 = time.perf_counter()
            sol = solve_transient(sc)
            timings["forward"] = time.perf_counter() - t0
            manifest_extra["solver_stats"] = {k: v for k, v in sol.stats.items() if k != "wall_time"}
            io.write_csv(out / "qoi.csv", _qoi_rows(sol, qois))
            io.write_csv(out / "timeseries.csv", _timeseries_rows(sol, qois))
            if args.vtk:
                _write_vtk(out, sol)
            for q in qois:
                print(f"{q.name} = {QoiPartials(q, sol).value()!r} {q.unit}")
            methods = {"forward": (), "avm": ("AVM",), "dsm": ("DSM",),
                       "fd-check": ("AVM", "DSM", "FD")}[args.command]
            if methods:
                if not handles:
                    raise ConfigError(f"{setup.source}: [parameters] no parameters selected")
                t0 = time.perf_counter()
                step = args.fd_step if getattr(args, "fd_step", None) else setup.fd_rel_step
                rep, _ = sensitivities(sol, qois, handles, methods, step)
                timings["sensitivity"] = time.perf_counter() - t0
                io.write_csv(out / "sensitivities.csv", rep.rows())
                if args.vtk and "AVM" in methods:
                    adj = solve_adjoint(sol, qois[0])
                    io.write_vtk(out / "adjoint_00000.vtk", sc.mesh,
                                 point_data={"w_el": adj.w_el[0], "w_th": adj.w_th[0]})
                _print_report(rep, args.command == "fd-check")
        timings["total"] = time.perf_counter() - clock
        io.write_manifest(
            out / "manifest.json", command=args.command, config=setup.source,
            config_sha256=setup.digest, argv=list(sys.argv[1:] if argv is None else argv),
            mesh=io.mesh_stats(sc.mesh),
            time_grid={"t_s": sc.grid.t_s, "t_f": sc.grid.t_f, "dt_el": sc.grid.dt_el,
                       "dt_th": sc.grid.dt_th, "n_el": sc.grid.n_el, "n_th": sc.grid.n_th},
            tolerances=dataclasses.asdict(sc.settings),
            threads=args.threads, timings=timings, **manifest_extra)
    except ConfigError as exc:
        print(f"eqst: configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"eqst: error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"eqst: solver failure: {exc}", file=sys.stderr)
        return 3
    return 0


def _print_report(rep: SensitivityReport, with_errors: bool):
    for e in rep.entries:
        line = f"{e.qoi:>14s} {e.parameter:>22s} {e.method:>4s} {e.value: .6e} {e.unit}"
        if e.normalized_pct is not None:
            line += f"  dG1%={e.normalized_pct: .4g}%"
        if with_errors and e.relerr is not None:
            line += f"  relerr={e.relerr:.2e}"
        print(line)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
