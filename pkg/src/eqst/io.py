"""CSV, VTK legacy and JSON manifest output."""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path

import numpy as np

from .mesh import Mesh, max_edge_length


def write_csv(path, rows) -> Path:
    """RFC 4180 CSV (CRLF line ends); floats are written with ``repr``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def read_csv(path) -> list[list[str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.reader(fh))


def write_vtk(path, mesh: Mesh, point_data=None, cell_data=None, title="eqst") -> Path:
    """Legacy ASCII unstructured grid; (rho, z) are written as (x, y, 0).

    ``point_data``/``cell_data`` map names to arrays of shape (n,) or (n, 2).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, ne = mesh.n_nodes, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in mesh.nodes.tolist()]
    out.append(f"CELLS {ne} {4 * ne}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    out.append(f"CELL_TYPES {ne}")
    out += ["5"] * ne

    def block(data, count):
        lines = []
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != count:
                raise ValueError(f"field {name!r} has {arr.shape[0]} entries, expected {count}")
            if arr.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [repr(x) for x in arr.tolist()]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{a!r} {b!r} 0.0" for a, b in arr[:, :2].tolist()]
        return lines

    if cell_data:
        out.append(f"CELL_DATA {ne}")
        out += block(cell_data, ne)
    if point_data:
        out.append(f"POINT_DATA {n}")
        out += block(point_data, n)
    path.write_text("\n".join(out) + "\n")
    return path


def mesh_stats(mesh: Mesh) -> dict:
    return {"nodes": mesh.n_nodes, "triangles": mesh.n_triangles,
            "max_edge_length": max_edge_length(mesh), "mode": mesh.mode,
            "regions": mesh.region_tags(), "boundaries": mesh.boundary_tags()}


def write_manifest(path, **entries) -> Path:
    import numpy
    import scipy
    data = {"python": platform.python_version(), "numpy": numpy.__version__,
            "scipy": scipy.__version__}
    data.update(entries)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    return repr(x)
