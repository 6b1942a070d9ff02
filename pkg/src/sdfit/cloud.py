"""Point cloud ingestion, normalization, exact nearest neighbors, and
training query sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, ParseError

# Longest bounding-box edge maps to this span after normalization, leaving
# margin between the cloud and the extraction grid boundary.
NORMALIZED_EXTENT = 1.9

# Rank of the neighbor whose distance sets the per-point noise scale.
NOISE_NEIGHBOR_RANK = 50


class PointCloud:
    """Immutable positions (+ optional unit normals) with a spatial index.

    ``center`` and ``scale`` record the normalization transform mapping
    original coordinates p to normalized ones (p - center) * scale.
    """

    def __init__(self, positions, normals=None, center=(0.0, 0.0, 0.0), scale=1.0):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) < 1:
            raise ConfigError("point cloud must contain at least one point")
        self.normals = None
        if normals is not None:
            self.normals = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.positions):
                raise ConfigError("normals and positions must have equal length")
        self.center = np.asarray(center, dtype=np.float64).reshape(3)
        self.scale = float(scale)
        if self.scale <= 0:
            raise ConfigError(f"scale must be > 0, got {self.scale}")
        self._tree: cKDTree | None = None
        self._noise_scales: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.positions)
        return self._tree

    def nearest(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Distance to and index of the nearest cloud point, batched."""
        d, i = self.tree.query(np.asarray(points, dtype=np.float64).reshape(-1, 3), k=1)
        return np.atleast_1d(d), np.atleast_1d(i)

    def noise_scales(self) -> np.ndarray:
        """Per-point noise scale: distance to the 50th nearest other point
        (rank clamped for tiny clouds)."""
        if self._noise_scales is None:
            if len(self) < 2:
                raise ConfigError("noise scales need at least 2 points")
            rank = min(NOISE_NEIGHBOR_RANK, len(self) - 1)
            d, _ = self.tree.query(self.positions, k=rank + 1)
            self._noise_scales = d[:, rank].copy()
        return self._noise_scales

    def denormalize(self, points) -> np.ndarray:
        """Map normalized coordinates back to the original frame."""
        return np.asarray(points, dtype=np.float64) / self.scale + self.center


@dataclass(frozen=True)
class QueryBatch:
    """Sampled training queries with baseline pulling targets."""

    queries: np.ndarray       # (n, 3)
    anchor_indices: np.ndarray  # (n,) into the source cloud
    noise_scales: np.ndarray  # (n,) sigma used for each query

    def __post_init__(self):
        if not np.isfinite(self.queries).all():
            raise ConfigError("queries must be finite")
        if (self.noise_scales <= 0).any():
            raise ConfigError("noise scales must be > 0")

    def __len__(self) -> int:
        return len(self.queries)

    def anchors(self, pc: PointCloud) -> np.ndarray:
        return pc.positions[self.anchor_indices]


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def load_point_cloud(path, fmt: str | None = None) -> PointCloud:
    """Read an XYZ (3 or 6 whitespace-separated columns) or ascii PLY file.

    Normals are picked up when the columns/properties are present.  The
    format is inferred from the extension unless given explicitly.
    """
    path = Path(path)
    if fmt is None:
        fmt = "ply-ascii" if path.suffix.lower() == ".ply" else "xyz"
    if fmt == "xyz":
        return _load_xyz(path)
    if fmt == "ply-ascii":
        return _load_ply_ascii(path)
    raise ConfigError(f"unknown point cloud format {fmt!r}")


def _load_xyz(path: Path) -> PointCloud:
    positions, normals = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
            if len(vals) == 3:
                positions.append(vals)
            elif len(vals) == 6:
                positions.append(vals[:3])
                normals.append(vals[3:])
            else:
                raise ParseError(
                    f"{path}:{lineno}: expected 3 or 6 columns, got {len(vals)}")
    if not positions:
        raise ParseError(f"{path}: empty point cloud")
    if normals and len(normals) != len(positions):
        raise ParseError(f"{path}: mixed 3- and 6-column lines")
    return PointCloud(np.array(positions), np.array(normals) if normals else None)


def _load_ply_ascii(path: Path) -> PointCloud:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(f"{path}:1: missing 'ply' magic")
    n_vertex = None
    props: list[str] = []
    in_vertex = False
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise ParseError(f"{path}:{lineno}: only ascii PLY is supported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = lineno  # 1-based line index of end_header
            break
    if body_start is None or n_vertex is None:
        raise ParseError(f"{path}: malformed PLY header")
    for name in ("x", "y", "z"):
        if name not in props:
            raise ParseError(f"{path}: vertex element lacks property {name!r}")
    cols = {name: props.index(name) for name in props}
    has_normals = all(n in props for n in ("nx", "ny", "nz"))
    rows = lines[body_start:body_start + n_vertex]
    if len(rows) < n_vertex:
        raise ParseError(f"{path}: expected {n_vertex} vertex rows, found {len(rows)}")
    positions = np.empty((n_vertex, 3))
    normals = np.empty((n_vertex, 3)) if has_normals else None
    for i, row in enumerate(rows):
        lineno = body_start + 1 + i
        tok = row.split()
        if len(tok) < len(props):
            raise ParseError(f"{path}:{lineno}: expected {len(props)} values")
        try:
            positions[i] = [float(tok[cols["x"]]), float(tok[cols["y"]]),
                            float(tok[cols["z"]])]
            if has_normals:
                normals[i] = [float(tok[cols["nx"]]), float(tok[cols["ny"]]),
                              float(tok[cols["nz"]])]
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric value") from None
    if n_vertex == 0:
        raise ParseError(f"{path}: empty point cloud")
    return PointCloud(positions, normals)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def normalize(pc: PointCloud) -> PointCloud:
    """Center at the bounding-box center and scale isotropically so the
    longest edge spans ``NORMALIZED_EXTENT``; the transform is recorded
    on the result for de-normalizing outputs."""
    lo = pc.positions.min(axis=0)
    hi = pc.positions.max(axis=0)
    longest = float((hi - lo).max())
    if longest <= 0:
        raise ConfigError("degenerate cloud: all points identical")
    center = (lo + hi) / 2.0
    scale = NORMALIZED_EXTENT / longest
    return PointCloud((pc.positions - center) * scale, pc.normals,
                      center=center, scale=scale)


def knn(pc: PointCloud, q, k: int) -> list[tuple[int, float]]:
    """Exact k nearest neighbors as (index, distance), ascending distance.

    Ties are broken toward the lower index.
    """
    n = len(pc)
    if k > n:
        raise ConfigError(f"k={k} exceeds point count {n}")
    if k == 0:
        return []
    q = np.asarray(q, dtype=np.float64).reshape(3)
    m = min(n, k + 8)
    while True:
        d, i = pc.tree.query(q, k=m)
        d, i = np.atleast_1d(d), np.atleast_1d(i)
        # all candidates at the k-th distance are in hand once the last
        # returned distance strictly exceeds it (or the tree is exhausted)
        if m == n or d[-1] > d[k - 1]:
            break
        m = min(n, 2 * m)
    order = np.lexsort((i, d))
    return [(int(i[j]), float(d[j])) for j in order[:k]]


def sample_queries(pc: PointCloud, n: int, seed: int) -> QueryBatch:
    """Gaussian queries around the surface, noise scaled per-point by the
    local 50th-neighbor distance; anchor = nearest cloud point."""
    if n < 1:
        raise ConfigError(f"query count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    return sample_queries_rng(pc, n, rng)


def sample_queries_rng(pc: PointCloud, n: int, rng: np.random.Generator) -> QueryBatch:
    sigmas = pc.noise_scales()
    idx = rng.integers(0, len(pc), size=n)
    base = pc.positions[idx]
    sigma = sigmas[idx]
    queries = base + sigma[:, None] * rng.standard_normal((n, 3))
    _, anchors = pc.nearest(queries)
    return QueryBatch(queries, anchors, sigma)
