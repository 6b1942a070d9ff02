"""Iso-surface extraction via marching cubes, mesh utilities, mesh I/O.

The extractor walks the classic 256-case tables with linear edge
interpolation; vertices on shared cell edges are welded through a global
edge key, so the output is deterministic and boundary-free wherever the
field is.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .mc_tables import EDGE_TABLE, TRI_TABLE

_EDGE = np.asarray(EDGE_TABLE, dtype=np.int64)
_TRI = np.asarray(TRI_TABLE, dtype=np.int64)

# cube corner offsets in table order
_CORNERS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
], dtype=np.int64)

# cube edge -> (lower node offset, axis)
_EDGE_NODE = np.array([
    (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 0),
    (0, 0, 1), (1, 0, 1), (0, 1, 1), (0, 0, 1),
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
], dtype=np.int64)
_EDGE_AXIS = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2], dtype=np.int64)

EVAL_CHUNK = 65536


@dataclass(frozen=True)
class GridSpec:
    """Sampling lattice for extraction: cells per axis over a box."""

    resolution: tuple[int, int, int] = (128, 128, 128)
    lower: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    upper: tuple[float, float, float] = (1.0, 1.0, 1.0)
    iso: float = 0.0

    def __post_init__(self):
        res = self.resolution
        if isinstance(res, int):
            object.__setattr__(self, "resolution", (res, res, res))
            res = self.resolution
        if any(r < 8 for r in res):
            raise ConfigError(f"resolution must be >= 8 per axis, got {res}")
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if not (hi > lo).all():
            raise ConfigError(f"empty grid bounds {self.lower}..{self.upper}")

    def node_axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(np.linspace(self.lower[a], self.upper[a],
                                 self.resolution[a] + 1) for a in range(3))

    def cell_size(self) -> np.ndarray:
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        return (hi - lo) / np.asarray(self.resolution, float)

    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.cell_size()))


@dataclass
class TriangleMesh:
    """Vertices, faces, and optional unit vertex normals."""

    vertices: np.ndarray                # (V, 3) float64
    faces: np.ndarray                   # (F, 3) int64
    normals: np.ndarray | None = None   # (V, 3) float64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    def validate(self) -> None:
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ConfigError("face index out of range")
            a, b, c = self.faces.T
            if ((a == b) | (b == c) | (a == c)).any():
                raise ConfigError("degenerate face with repeated vertex")
        if self.normals is not None:
            if len(self.normals) != len(self.vertices):
                raise ConfigError("normals and vertices must have equal length")
            n = np.linalg.norm(self.normals, axis=1)
            if np.abs(n - 1.0).max() > 1e-6:
                raise ConfigError("vertex normals must be unit length")

    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        lens[lens == 0] = 1.0
        return n / lens

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(n, axis=1)

    def with_vertex_normals(self) -> "TriangleMesh":
        """Area-weighted average of incident face normals per vertex."""
        acc = np.zeros_like(self.vertices)
        v, f = self.vertices, self.faces
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        for c in range(3):
            np.add.at(acc, f[:, c], fn)
        lens = np.linalg.norm(acc, axis=1, keepdims=True)
        lens[lens == 0] = 1.0
        return TriangleMesh(self.vertices, self.faces, acc / lens)

    def transformed(self, fn) -> "TriangleMesh":
        """Apply a point mapping to the vertices (normals dropped)."""
        return TriangleMesh(fn(self.vertices), self.faces.copy())


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def evaluate_on_grid(field, grid: GridSpec) -> np.ndarray:
    """Field values on all grid nodes, chunked, shape (nx+1, ny+1, nz+1)."""
    xs, ys, zs = grid.node_axes()
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = np.empty(len(pts))
    for start in range(0, len(pts), EVAL_CHUNK):
        chunk = pts[start:start + EVAL_CHUNK]
        out = np.asarray(field(chunk), dtype=np.float64).reshape(-1)
        vals[start:start + len(chunk)] = out
    if not np.isfinite(vals).all():
        raise ConfigError("field is not finite on all grid nodes")
    return vals.reshape(len(xs), len(ys), len(zs))


def marching_cubes(field, grid: GridSpec) -> TriangleMesh:
    """Triangulate the iso-surface {field = grid.iso}.

    ``field`` maps an (M, 3) array to M values.  No sign change anywhere
    yields an empty mesh.
    """
    vals = evaluate_on_grid(field, grid)
    return triangulate_grid(vals, grid, grid.iso)


def triangulate_grid(node_values: np.ndarray, grid: GridSpec, iso: float) -> TriangleMesh:
    vals = np.array(node_values, dtype=np.float64)
    # nudge exact hits off the iso value so no vertex collapses onto a
    # grid node shared by several edges (kept tiny: exact fields must
    # still interpolate to ~1e-13 placement error)
    vals[vals == iso] = iso + 1e-13
    nx, ny, nz = grid.resolution
    inside = vals < iso

    case = np.zeros((nx, ny, nz), dtype=np.int64)
    for bit, (ox, oy, oz) in enumerate(_CORNERS):
        case |= inside[ox:ox + nx, oy:oy + ny, oz:oz + nz].astype(np.int64) << bit

    ci, cj, ck = np.nonzero((case != 0) & (case != 255))
    if len(ci) == 0:
        return TriangleMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))
    cases = case[ci, cj, ck]

    def edge_keys(cells_i, cells_j, cells_k, edges):
        node_i = cells_i + _EDGE_NODE[edges, 0]
        node_j = cells_j + _EDGE_NODE[edges, 1]
        node_k = cells_k + _EDGE_NODE[edges, 2]
        return ((node_i * (ny + 1) + node_j) * (nz + 1) + node_k) * 3 + _EDGE_AXIS[edges]

    masks = _EDGE[cases]
    key_parts = []
    for e in range(12):
        sel = (masks >> e) & 1 != 0
        if sel.any():
            key_parts.append(edge_keys(ci[sel], cj[sel], ck[sel],
                                       np.full(int(sel.sum()), e, dtype=np.int64)))
    unique_keys = np.unique(np.concatenate(key_parts))

    # interpolate one vertex per crossed edge
    axis = unique_keys % 3
    node = unique_keys // 3
    k0 = node % (nz + 1)
    j0 = (node // (nz + 1)) % (ny + 1)
    i0 = node // ((nz + 1) * (ny + 1))
    i1, j1, k1 = i0.copy(), j0.copy(), k0.copy()
    i1[axis == 0] += 1
    j1[axis == 1] += 1
    k1[axis == 2] += 1
    v0 = vals[i0, j0, k0]
    v1 = vals[i1, j1, k1]
    t = (iso - v0) / (v1 - v0)
    xs, ys, zs = grid.node_axes()
    p0 = np.stack([xs[i0], ys[j0], zs[k0]], axis=1)
    p1 = np.stack([xs[i1], ys[j1], zs[k1]], axis=1)
    vertices = p0 + t[:, None] * (p1 - p0)

    # assemble faces from the triangle table
    tris = _TRI[cases]
    face_parts = []
    for n in range(0, 15, 3):
        sel = tris[:, n] >= 0
        if not sel.any():
            continue
        corner_ids = []
        for c in range(3):
            keys = edge_keys(ci[sel], cj[sel], ck[sel], tris[sel, n + c])
            corner_ids.append(np.searchsorted(unique_keys, keys))
        face_parts.append(np.stack(corner_ids, axis=1))
    faces = np.concatenate(face_parts, axis=0)
    # table order winds clockwise seen from outside; flip for outward CCW
    faces = faces[:, [0, 2, 1]]
    return TriangleMesh(vertices, faces)


def extract_levels(net, iso_values, grid: GridSpec) -> list[TriangleMesh]:
    """One mesh per iso value, sharing a single grid evaluation."""
    isos = list(iso_values)
    if not isos:
        return []
    vals = evaluate_on_grid(field_of(net), grid)
    return [triangulate_grid(vals, grid, float(l)) for l in isos]


def field_of(net):
    """Value-only field callable for extraction."""
    return lambda pts: net.evaluate(pts, need_gradient=False)[0]


def sample_mesh(mesh: TriangleMesh, n: int, rng: np.random.Generator):
    """Area-weighted surface samples with face normals."""
    if mesh.is_empty():
        raise ConfigError("cannot sample an empty mesh")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ConfigError("mesh has zero surface area")
    face = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.uniform(size=(n, 1))
    v = rng.uniform(size=(n, 1))
    flip = (u + v) > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.vertices[mesh.faces[face]]
    pts = tri[:, 0] + u * (tri[:, 1] - tri[:, 0]) + v * (tri[:, 2] - tri[:, 0])
    normals = mesh.face_normals()[face]
    return pts, normals


# ---------------------------------------------------------------------------
# Mesh I/O
# ---------------------------------------------------------------------------

def export_mesh(mesh: TriangleMesh, path, fmt: str | None = None) -> None:
    """Write OBJ or ascii PLY; coordinates carry 10 significant digits."""
    path = Path(path)
    fmt = fmt or _format_from_suffix(path)
    if fmt == "obj":
        _export_obj(mesh, path)
    elif fmt == "ply-ascii":
        _export_ply(mesh, path)
    else:
        raise ConfigError(f"unknown mesh format {fmt!r}; expected obj or ply-ascii")


def import_mesh(path, fmt: str | None = None) -> TriangleMesh:
    path = Path(path)
    fmt = fmt or _format_from_suffix(path)
    if fmt == "obj":
        return _import_obj(path)
    if fmt == "ply-ascii":
        return _import_ply(path)
    raise ConfigError(f"unknown mesh format {fmt!r}; expected obj or ply-ascii")


def _format_from_suffix(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return "obj"
    if suffix == ".ply":
        return "ply-ascii"
    raise ConfigError(f"cannot infer mesh format from suffix {suffix!r}")


def _export_obj(mesh: TriangleMesh, path: Path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.10g} {v[1]:.10g} {v[2]:.10g}\n")
        if mesh.normals is not None:
            for n in mesh.normals:
                fh.write(f"vn {n[0]:.10g} {n[1]:.10g} {n[2]:.10g}\n")
            for f in mesh.faces:
                fh.write(f"f {f[0]+1}//{f[0]+1} {f[1]+1}//{f[1]+1} {f[2]+1}//{f[2]+1}\n")
        else:
            for f in mesh.faces:
                fh.write(f"f {f[0]+1} {f[1]+1} {f[2]+1}\n")


def _import_obj(path: Path) -> TriangleMesh:
    vertices, normals, faces = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise ParseError(f"{path}:{lineno}: short vertex line")
                vertices.append([float(x) for x in tok[1:4]])
            elif tok[0] == "vn":
                normals.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                if len(tok) != 4:
                    raise ParseError(f"{path}:{lineno}: only triangles are supported")
                faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    return TriangleMesh(np.array(vertices).reshape(-1, 3),
                        np.array(faces, dtype=np.int64).reshape(-1, 3),
                        np.array(normals) if normals else None)


def _export_ply(mesh: TriangleMesh, path: Path) -> None:
    has_normals = mesh.normals is not None
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(mesh.vertices)}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        if has_normals:
            fh.write("property double nx\nproperty double ny\nproperty double nz\n")
        fh.write(f"element face {len(mesh.faces)}\n")
        fh.write("property list uchar int vertex_indices\nend_header\n")
        for i, v in enumerate(mesh.vertices):
            row = f"{v[0]:.10g} {v[1]:.10g} {v[2]:.10g}"
            if has_normals:
                n = mesh.normals[i]
                row += f" {n[0]:.10g} {n[1]:.10g} {n[2]:.10g}"
            fh.write(row + "\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def _import_ply(path: Path) -> TriangleMesh:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}:1: missing 'ply' magic")
    counts = {}
    props: dict[str, list[str]] = {}
    current = None
    body = None
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "element":
            current = tok[1]
            counts[current] = int(tok[2])
            props[current] = []
        elif tok[0] == "property" and current:
            props[current].append(tok[-1])
        elif tok[0] == "end_header":
            body = lineno
            break
    if body is None or "vertex" not in counts:
        raise ParseError(f"{path}: malformed PLY header")
    nv, nf = counts["vertex"], counts.get("face", 0)
    vp = props["vertex"]
    has_normals = all(k in vp for k in ("nx", "ny", "nz"))
    rows = lines[body:]
    vertices = np.empty((nv, 3))
    normals = np.empty((nv, 3)) if has_normals else None
    for i in range(nv):
        tok = rows[i].split()
        vertices[i] = [float(tok[vp.index("x")]), float(tok[vp.index("y")]),
                       float(tok[vp.index("z")])]
        if has_normals:
            normals[i] = [float(tok[vp.index("nx")]), float(tok[vp.index("ny")]),
                          float(tok[vp.index("nz")])]
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        tok = rows[nv + i].split()
        if tok[0] != "3":
            raise ParseError(f"{path}: only triangle faces are supported")
        faces[i] = [int(tok[1]), int(tok[2]), int(tok[3])]
    return TriangleMesh(vertices, faces, normals)
