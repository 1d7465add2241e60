"""Triangular meshes in axisymmetric (rho, z) or planar (x, y) mode.

Meshes are built from a layered-rectangle description, imported from the
ASCII Gmsh 2.2 format, or read from the native text format::

    # eqst mesh v1
    mode <axisymmetric|planar>
    nodes <N>
    <x> <y>                      (N lines, coordinates in m)
    triangles <T>
    <i> <j> <k> <region>         (T lines, 0-based node indices)
    edges <B>
    <i> <j> <tag>                (B lines)

Tags are whitespace-free strings.  Floats are written with ``repr`` so that a
write/read round trip reproduces every coordinate bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

AXISYMMETRIC = "axisymmetric"
PLANAR = "planar"
_MODES = (AXISYMMETRIC, PLANAR)


class MeshError(ValueError):
    """Invalid mesh data or an unreadable mesh file."""


class GeometryError(ValueError):
    """Invalid layered geometry description."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable P1 triangle mesh with region and boundary tags.

    Attributes
    ----------
    nodes : (N, 2) float array
        Node coordinates in m; (rho, z) in axisymmetric mode.
    triangles : (T, 3) int array
        Counter-clockwise node indices.
    regions : (T,) str array
        Region tag per triangle.
    edges : (B, 2) int array
        Tagged edges.  An edge may appear several times with different tags.
    edge_tags : (B,) str array
    mode : str
        ``"axisymmetric"`` or ``"planar"``.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    regions: np.ndarray
    edges: np.ndarray
    edge_tags: np.ndarray
    mode: str = AXISYMMETRIC

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(np.asarray(self.nodes, dtype=float).reshape(-1, 2)))
        object.__setattr__(self, "triangles", _frozen(np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)))
        object.__setattr__(self, "regions", _frozen(np.asarray(self.regions, dtype=str).reshape(-1)))
        object.__setattr__(self, "edges", _frozen(np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)))
        object.__setattr__(self, "edge_tags", _frozen(np.asarray(self.edge_tags, dtype=str).reshape(-1)))
        self.validate()

    # -- invariants ---------------------------------------------------------
    def validate(self) -> None:
        if self.mode not in _MODES:
            raise MeshError(f"unknown mesh mode {self.mode!r}")
        n = len(self.nodes)
        if len(self.triangles) == 0:
            raise MeshError("mesh has no triangles")
        if len(self.regions) != len(self.triangles):
            raise MeshError("one region tag per triangle required")
        if len(self.edge_tags) != len(self.edges):
            raise MeshError("one tag per boundary edge required")
        for name, idx in (("triangle", self.triangles), ("edge", self.edges)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise MeshError(f"{name} references a node index outside [0, {n})")
        if not np.all(np.isfinite(self.nodes)):
            raise MeshError("non-finite node coordinate")
        area = self.signed_areas()
        bad = np.flatnonzero(area <= 0.0)
        if bad.size:
            raise MeshError(f"triangle {bad[0]} has non-positive signed area {area[bad[0]]:.3e}")
        if self.mode == AXISYMMETRIC:
            neg = np.flatnonzero(self.nodes[:, 0] < 0.0)
            if neg.size:
                raise MeshError(
                    f"node {neg[0]} has negative rho={self.nodes[neg[0], 0]!r} in axisymmetric mode")

    # -- queries ------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def axisymmetric(self) -> bool:
        return self.mode == AXISYMMETRIC

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def region_tags(self) -> list[str]:
        return sorted(set(self.regions.tolist()))

    def boundary_tags(self) -> list[str]:
        return sorted(set(self.edge_tags.tolist()))

    def region_mask(self, tags: Iterable[str] | None) -> np.ndarray:
        """Boolean triangle mask for a set of region tags (``None``: all)."""
        if tags is None:
            return np.ones(self.n_triangles, dtype=bool)
        tags = list(tags)
        unknown = set(tags) - set(self.region_tags())
        if unknown:
            raise MeshError(f"unknown region tag(s) {sorted(unknown)}")
        return np.isin(self.regions, tags)

    def boundary_nodes(self, tags: Iterable[str]) -> np.ndarray:
        tags = list(tags)
        unknown = set(tags) - set(self.boundary_tags())
        if unknown:
            raise MeshError(f"unknown boundary tag(s) {sorted(unknown)}")
        sel = np.isin(self.edge_tags, tags)
        return np.unique(self.edges[sel].ravel())

    def locate(self, point: Sequence[float], tol: float = 1e-12) -> int:
        """Index of a triangle containing ``point``; raises if outside."""
        p = np.asarray(point, dtype=float)
        tri = self.nodes[self.triangles]
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        area2 = 2.0 * self.signed_areas()

        def cross(u, v, q):
            return (v[:, 0] - u[:, 0]) * (q[1] - u[:, 1]) - (v[:, 1] - u[:, 1]) * (q[0] - u[:, 0])

        lam = np.stack([cross(b, c, p), cross(c, a, p), cross(a, b, p)], axis=1) / area2[:, None]
        inside = np.flatnonzero(np.all(lam >= -tol, axis=1))
        if inside.size == 0:
            raise MeshError(f"point {tuple(p)} lies outside the mesh")
        return int(inside[0])

    def nearest_node(self, point: Sequence[float]) -> int:
        self.locate(point)
        d2 = np.sum((self.nodes - np.asarray(point, dtype=float)) ** 2, axis=1)
        return int(np.argmin(d2))

    def volume(self) -> float:
        """Planar area, or the revolved volume 2*pi*int(rho dA)."""
        area = self.signed_areas()
        if not self.axisymmetric:
            return float(area.sum())
        rho_c = self.nodes[self.triangles, 0].mean(axis=1)
        return float(2.0 * math.pi * np.sum(area * rho_c))


def max_edge_length(mesh: Mesh) -> float:
    """Longest triangle edge in the mesh (m)."""
    p = mesh.nodes[mesh.triangles]
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    return float(lengths.max())


# ---------------------------------------------------------------------------
# Layered-rectangle generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    rmin: float
    rmax: float
    zmin: float
    zmax: float
    region: str

    def __post_init__(self):
        if not (self.rmax > self.rmin and self.zmax > self.zmin):
            raise GeometryError(f"degenerate rectangle {self}")


@dataclass(frozen=True)
class BoundaryRule:
    """Tag every mesh edge lying on the axis-aligned segment p0-p1."""

    tag: str
    p0: tuple[float, float]
    p1: tuple[float, float]

    def __post_init__(self):
        (r0, z0), (r1, z1) = self.p0, self.p1
        if r0 != r1 and z0 != z1:
            raise GeometryError(f"boundary rule {self.tag!r} is not axis-aligned")

    def contains(self, pts: np.ndarray, tol: float) -> np.ndarray:
        (r0, z0), (r1, z1) = self.p0, self.p1
        rlo, rhi = min(r0, r1) - tol, max(r0, r1) + tol
        zlo, zhi = min(z0, z1) - tol, max(z0, z1) + tol
        return (pts[:, 0] >= rlo) & (pts[:, 0] <= rhi) & (pts[:, 1] >= zlo) & (pts[:, 1] <= zhi)


@dataclass(frozen=True)
class GeometrySpec:
    rects: tuple[Rect, ...]
    h_target: float
    rules: tuple[BoundaryRule, ...] = ()
    mode: str = AXISYMMETRIC
    default_tag: str = "boundary"

    def __post_init__(self):
        object.__setattr__(self, "rects", tuple(self.rects))
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.h_target > 0:
            raise GeometryError("h_target must be positive")
        if not self.rects:
            raise GeometryError("geometry needs at least one rectangle")
        if self.mode not in _MODES:
            raise GeometryError(f"unknown mode {self.mode!r}")
        if self.mode == AXISYMMETRIC and min(r.rmin for r in self.rects) < 0:
            raise GeometryError("negative rho in axisymmetric geometry")
        self._check_tiling()

    def _check_tiling(self) -> None:
        rects = self.rects
        n = len(rects)
        adjacent = [[] for _ in range(n)]
        for i in range(n):
            a = rects[i]
            for j in range(i + 1, n):
                b = rects[j]
                dr = min(a.rmax, b.rmax) - max(a.rmin, b.rmin)
                dz = min(a.zmax, b.zmax) - max(a.zmin, b.zmin)
                if dr > 0 and dz > 0:
                    raise GeometryError(f"rectangles {i} and {j} overlap ({a.region!r}, {b.region!r})")
                if (dr == 0 and dz > 0) or (dz == 0 and dr > 0):
                    adjacent[i].append(j)
                    adjacent[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for j in adjacent[stack.pop()]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        if len(seen) != n:
            missing = min(set(range(n)) - seen)
            raise GeometryError(f"rectangle {missing} is not connected to rectangle 0")

    def with_h(self, h: float) -> "GeometrySpec":
        return GeometrySpec(self.rects, h, self.rules, self.mode, self.default_tag)


def _subdivide(breaks: Sequence[float], h: float) -> np.ndarray:
    pts = [breaks[0]]
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        n = max(1, math.ceil((hi - lo) / h * (1.0 - 1e-12)))
        pts.extend(lo + (hi - lo) * k / n for k in range(1, n))
        pts.append(hi)
    return np.array(pts)


def generate_layered_mesh(spec: GeometrySpec) -> Mesh:
    """Structured triangulation of a layered-rectangle geometry.

    All rectangle corners become grid lines of one tensor grid whose cells are
    no larger than ``h_target`` in either direction; each covered cell is split
    along its (rmin, zmin)-(rmax, zmax) diagonal.  Shared grid lines make the
    mesh conforming across region interfaces.
    """
    h = spec.h_target
    rs = _subdivide(sorted({v for r in spec.rects for v in (r.rmin, r.rmax)}), h)
    zs = _subdivide(sorted({v for r in spec.rects for v in (r.zmin, r.zmax)}), h)
    nr, nz = len(rs) - 1, len(zs) - 1

    rc = 0.5 * (rs[:-1] + rs[1:])
    zc = 0.5 * (zs[:-1] + zs[1:])
    owner = np.full((nz, nr), -1, dtype=np.int64)
    for k, rect in enumerate(spec.rects):
        ci = (rc > rect.rmin) & (rc < rect.rmax)
        cj = (zc > rect.zmin) & (zc < rect.zmax)
        owner[np.ix_(cj, ci)] = k

    used = np.zeros((nz + 1, nr + 1), dtype=bool)
    jj, ii = np.nonzero(owner >= 0)
    for dj, di in ((0, 0), (0, 1), (1, 0), (1, 1)):
        used[jj + dj, ii + di] = True
    node_id = np.full(used.shape, -1, dtype=np.int64)
    node_id[used] = np.arange(used.sum())
    gj, gi = np.nonzero(used)
    nodes = np.column_stack([rs[gi], zs[gj]])

    a = node_id[jj, ii]
    b = node_id[jj, ii + 1]
    c = node_id[jj + 1, ii + 1]
    d = node_id[jj + 1, ii]
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])
    cell_region = np.array([spec.rects[k].region for k in owner[jj, ii]], dtype=str)
    regions = np.repeat(cell_region, 2)

    # candidate edges: every grid-cell side touching a covered cell, with the
    # owners on both sides (-1 outside)
    padded = np.full((nz + 2, nr + 2), -1, dtype=np.int64)
    padded[1:-1, 1:-1] = owner
    cand = []
    for j in range(nz):          # vertical sides at rs[i], i = 0..nr
        for i in range(nr + 1):
            left, right = padded[j + 1, i], padded[j + 1, i + 1]
            if left >= 0 or right >= 0:
                cand.append((node_id[j, i], node_id[j + 1, i], left, right))
    for j in range(nz + 1):      # horizontal sides at zs[j]
        for i in range(nr):
            below, above = padded[j, i + 1], padded[j + 1, i + 1]
            if below >= 0 or above >= 0:
                cand.append((node_id[j, i], node_id[j, i + 1], below, above))
    cand = np.array(cand, dtype=np.int64).reshape(-1, 4)
    outer = (cand[:, 2] < 0) | (cand[:, 3] < 0)

    tol = 1e-9 * max(rs[-1] - rs[0], zs[-1] - zs[0])
    edges, tags = [], []
    matched = np.zeros(len(cand), dtype=bool)
    for rule in spec.rules:
        on = rule.contains(nodes[cand[:, 0]], tol) & rule.contains(nodes[cand[:, 1]], tol)
        if not on.any():
            raise GeometryError(f"boundary rule {rule.tag!r} matches no mesh edge")
        matched |= on
        edges.append(cand[on, :2])
        tags.extend([rule.tag] * int(on.sum()))
    rest = outer & ~matched
    edges.append(cand[rest, :2])
    tags.extend([spec.default_tag] * int(rest.sum()))
    return Mesh(nodes, tris, regions, np.concatenate(edges), np.array(tags, dtype=str), spec.mode)


# ---------------------------------------------------------------------------
# Native text format
# ---------------------------------------------------------------------------

def write_native(mesh: Mesh) -> str:
    out = ["# eqst mesh v1", f"mode {mesh.mode}", f"nodes {mesh.n_nodes}"]
    out.extend(f"{x!r} {y!r}" for x, y in mesh.nodes.tolist())
    out.append(f"triangles {mesh.n_triangles}")
    out.extend(f"{i} {j} {k} {tag}" for (i, j, k), tag in zip(mesh.triangles.tolist(), mesh.regions.tolist()))
    out.append(f"edges {len(mesh.edges)}")
    out.extend(f"{i} {j} {tag}" for (i, j), tag in zip(mesh.edges.tolist(), mesh.edge_tags.tolist()))
    return "\n".join(out) + "\n"


def read_native(text: str) -> Mesh:
    lines = [(no, ln.split()) for no, ln in enumerate(text.splitlines(), start=1)
             if ln.strip() and not ln.lstrip().startswith("#")]
    pos = 0

    def header(keyword):
        nonlocal pos
        if pos >= len(lines) or lines[pos][1][0] != keyword or len(lines[pos][1]) != 2:
            no = lines[pos][0] if pos < len(lines) else "EOF"
            raise MeshError(f"line {no}: expected '{keyword} <value>'")
        value = lines[pos][1][1]
        pos += 1
        return value

    def block(count, width):
        nonlocal pos
        rows = lines[pos:pos + count]
        if len(rows) != count:
            raise MeshError("unexpected end of mesh file")
        for no, toks in rows:
            if len(toks) != width:
                raise MeshError(f"line {no}: expected {width} fields, got {len(toks)}")
        pos += count
        return [toks for _, toks in rows]

    mode = header("mode")
    nodes = block(int(header("nodes")), 2)
    tris = block(int(header("triangles")), 4)
    edges = block(int(header("edges")), 3)
    return Mesh(
        np.array(nodes, dtype=float).reshape(-1, 2),
        np.array([t[:3] for t in tris], dtype=np.int64).reshape(-1, 3),
        np.array([t[3] for t in tris], dtype=str),
        np.array([e[:2] for e in edges], dtype=np.int64).reshape(-1, 2),
        np.array([e[2] for e in edges], dtype=str),
        mode,
    )


# ---------------------------------------------------------------------------
# Gmsh MSH 2.2 (ASCII)
# ---------------------------------------------------------------------------

_MSH_LINE, _MSH_TRIANGLE = 1, 2


def import_msh(data: bytes | str, mode: str = AXISYMMETRIC) -> Mesh:
    """Read the ASCII Gmsh 2.2 subset: 2-node lines and 3-node triangles.

    The first element tag (the physical entity) becomes the region or boundary
    tag, translated through ``$PhysicalNames`` when present.  Nodes not used by
    any element are dropped; clockwise triangles are reoriented.
    """
    text = data.decode("ascii") if isinstance(data, (bytes, bytearray)) else data
    lines = text.splitlines()
    i = 0
    names: dict[tuple[int, int], str] = {}
    coords: dict[int, tuple[float, float]] = {}
    tris, tri_tags, lines_, line_tags = [], [], [], []
    seen_format = False

    def fail(lineno, msg):
        raise MeshError(f"line {lineno}: {msg}")

    while i < len(lines):
        head = lines[i].strip()
        i += 1
        if not head:
            continue
        if head == "$MeshFormat":
            toks = lines[i].split()
            if len(toks) < 2 or not toks[0].startswith("2."):
                fail(i + 1, f"unsupported MSH version {toks[0] if toks else '?'}")
            if toks[1] != "0":
                fail(i + 1, "binary MSH files are not supported")
            seen_format = True
            i += 1
        elif head == "$PhysicalNames":
            n = int(lines[i].split()[0])
            for k in range(n):
                toks = lines[i + 1 + k].split(maxsplit=2)
                names[(int(toks[0]), int(toks[1]))] = toks[2].strip().strip('"').replace(" ", "_")
            i += n + 1
        elif head == "$Nodes":
            if not seen_format:
                fail(i, "$Nodes before $MeshFormat")
            n = int(lines[i].split()[0])
            for k in range(n):
                toks = lines[i + 1 + k].split()
                if len(toks) < 3:
                    fail(i + 2 + k, "malformed node line")
                coords[int(toks[0])] = (float(toks[1]), float(toks[2]))
            i += n + 1
        elif head == "$Elements":
            n = int(lines[i].split()[0])
            for k in range(n):
                lineno = i + 2 + k
                toks = [int(t) for t in lines[i + 1 + k].split()]
                etype, ntags = toks[1], toks[2]
                tags = toks[3:3 + ntags]
                conn = toks[3 + ntags:]
                phys = tags[0] if tags else 0
                if etype == _MSH_LINE:
                    lines_.append(conn[:2])
                    line_tags.append(names.get((1, phys), str(phys)))
                elif etype == _MSH_TRIANGLE:
                    tris.append(conn[:3])
                    tri_tags.append(names.get((2, phys), str(phys)))
                else:
                    fail(lineno, f"unsupported element type {etype}")
            i += n + 1
        elif head.startswith("$End"):
            continue
        elif head.startswith("$"):
            # skip unknown sections
            while i < len(lines) and not lines[i].strip().startswith("$End"):
                i += 1
            i += 1
    if not seen_format:
        raise MeshError("missing $MeshFormat section")
    if not tris:
        raise MeshError("no triangle elements")

    used = sorted({n for conn in tris + lines_ for n in conn})
    missing = [n for n in used if n not in coords]
    if missing:
        raise MeshError(f"element references undefined node {missing[0]}")
    index = {n: k for k, n in enumerate(used)}
    nodes = np.array([coords[n] for n in used], dtype=float)
    t = np.array([[index[n] for n in conn] for conn in tris], dtype=np.int64)
    e = np.array([[index[n] for n in conn] for conn in lines_], dtype=np.int64).reshape(-1, 2)
    p = nodes[t]
    area = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = area < 0
    t[flip] = t[flip][:, [0, 2, 1]]
    return Mesh(nodes, t, np.array(tri_tags, dtype=str), e, np.array(line_tags, dtype=str), mode)
