"""Reconstruction metrics, field diagnostics, and cross-section slices.

Chamfer follows the mean-of-means convention with a 0.5 factor:
cd = 0.5 * (mean_a min_b |a-b| + mean_b min_a |b-a|); the convention is
echoed into every report header so numbers stay comparable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from .errors import ConfigError
from .losses import GRADIENT_NORM_FLOOR
from .surface import TriangleMesh, sample_mesh

CHAMFER_CONVENTION = "0.5*(mean_nn(A->B)+mean_nn(B->A)), euclidean"

# Grayscale slice ramp: clamp to +/- this band, split at the sign.
SLICE_CLAMP = 0.2


@dataclass(frozen=True)
class EvalReport:
    """Chamfer + normal consistency of a reconstruction against truth."""

    cd: float
    nc: float
    samples: int
    seed: int

    def __post_init__(self):
        if self.cd < 0 or not (0.0 <= self.nc <= 1.0):
            raise ConfigError("EvalReport out of range: cd >= 0, nc in [0,1]")


@dataclass(frozen=True)
class ConsistencyStats:
    """Distribution summary of the per-query alignment cosine distance."""

    mean: float
    median: float
    frac_above: float          # fraction of queries with c > 0.1
    residual_q50: float        # |f(p0)| quantiles
    residual_q90: float
    residual_max: float
    n_valid: int
    n_skipped: int


@dataclass(frozen=True)
class FieldSlice:
    """Signed distance and gradient sampled on an axis-aligned plane.

    ``values[i, j]`` is the field at the point whose in-plane coordinates
    are (u[i], v[j]), with (u, v) the remaining axes in xyz order.
    """

    axis: str
    offset: float
    resolution: int
    u: np.ndarray            # (R,)
    v: np.ndarray            # (R,)
    values: np.ndarray       # (R, R)
    gradients: np.ndarray    # (R, R, 3)


# ---------------------------------------------------------------------------
# Chamfer and normal consistency
# ---------------------------------------------------------------------------

def chamfer_l1(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean nearest-neighbor euclidean distance, halved."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ConfigError("chamfer_l1 requires nonempty point sets")
    da, _ = cKDTree(b).query(a, k=1)
    db, _ = cKDTree(a).query(b, k=1)
    return 0.5 * (float(np.mean(da)) + float(np.mean(db)))


def normal_consistency(mesh_a: TriangleMesh, mesh_b: TriangleMesh,
                       n_samples: int = 30000, seed: int = 0) -> float:
    """Symmetric mean |cos| between face normals at nearest sample pairs.

    Samples are area-weighted; the absolute dot makes the score invariant
    to global normal flips.  Each mesh gets its own generator seeded
    identically, so evaluating a mesh against itself scores exactly 1.
    """
    pa, na = sample_mesh(mesh_a, n_samples, np.random.default_rng(seed))
    pb, nb = sample_mesh(mesh_b, n_samples, np.random.default_rng(seed))
    _, ia = cKDTree(pb).query(pa, k=1)
    _, ib = cKDTree(pa).query(pb, k=1)
    fwd = np.abs(np.einsum("ij,ij->i", na, nb[ia])).mean()
    bwd = np.abs(np.einsum("ij,ij->i", nb, na[ib])).mean()
    return 0.5 * (float(fwd) + float(bwd))


def evaluate_reconstruction(mesh: TriangleMesh, gt_mesh: TriangleMesh,
                            n_samples: int = 30000, seed: int = 0) -> EvalReport:
    """CD on area-weighted samples of both meshes, plus NC."""
    if mesh.is_empty():
        raise ConfigError("reconstructed mesh is empty")
    if gt_mesh.is_empty():
        raise ConfigError("ground-truth mesh is empty")
    pa, _ = sample_mesh(mesh, n_samples, np.random.default_rng(seed))
    pb, _ = sample_mesh(gt_mesh, n_samples, np.random.default_rng(seed))
    cd = chamfer_l1(pa, pb)
    nc = normal_consistency(mesh, gt_mesh, n_samples, seed)
    return EvalReport(cd=cd, nc=nc, samples=n_samples, seed=seed)


def evaluate_against_points(mesh: TriangleMesh, gt_points: np.ndarray,
                            gt_normals: np.ndarray,
                            n_samples: int = 30000, seed: int = 0) -> EvalReport:
    """CD and NC against a ground-truth sample set with normals
    (e.g. analytic surface samples)."""
    if mesh.is_empty():
        raise ConfigError("reconstructed mesh is empty")
    rng = np.random.default_rng(seed)
    pa, na = sample_mesh(mesh, n_samples, rng)
    gt_points = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    cd = chamfer_l1(pa, gt_points)
    if gt_normals is None:
        raise ConfigError("ground-truth normals required for NC")
    gt_normals = np.asarray(gt_normals, dtype=np.float64).reshape(-1, 3)
    _, ia = cKDTree(gt_points).query(pa, k=1)
    _, ib = cKDTree(pa).query(gt_points, k=1)
    fwd = np.abs(np.einsum("ij,ij->i", na, gt_normals[ia])).mean()
    bwd = np.abs(np.einsum("ij,ij->i", gt_normals, na[ib])).mean()
    nc = 0.5 * (float(fwd) + float(bwd))
    return EvalReport(cd=cd, nc=nc, samples=n_samples, seed=seed)


def write_report(report: EvalReport, path) -> None:
    """Flat key=value text file with the CD convention in the header."""
    with open(path, "w") as fh:
        fh.write(f"# chamfer convention: {CHAMFER_CONVENTION}\n")
        fh.write(f"cd={report.cd!r}\n")
        fh.write(f"nc={report.nc!r}\n")
        fh.write(f"samples={report.samples}\n")
        fh.write(f"seed={report.seed}\n")


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cd", "nc", "samples", "seed"])
        writer.writerow([repr(report.cd), repr(report.nc), report.samples, report.seed])


# ---------------------------------------------------------------------------
# Field diagnostics
# ---------------------------------------------------------------------------

def consistency_stats(net, queries: np.ndarray, threshold: float = 0.1) -> ConsistencyStats:
    """Alignment cosine distance of each query against its projection on
    the zero level set, plus projection residual quantiles."""
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    vals, grads = net.evaluate(queries)
    norms = np.linalg.norm(grads, axis=1)
    valid = norms > GRADIENT_NORM_FLOOR
    if not valid.any():
        raise ConfigError("no query has a usable gradient")
    q = queries[valid]
    f = vals[valid]
    g = grads[valid]
    n = norms[valid]
    p0 = q - (f / n)[:, None] * g
    tvals, tgrads = net.evaluate(p0)
    tn = np.linalg.norm(tgrads, axis=1)
    ok = tn > GRADIENT_NORM_FLOOR
    c = 1.0 - np.einsum("ij,ij->i", g[ok], tgrads[ok]) / (n[ok] * tn[ok])
    residual = np.abs(tvals[ok])
    skipped = int(len(queries) - ok.sum())
    return ConsistencyStats(
        mean=float(c.mean()),
        median=float(np.median(c)),
        frac_above=float((c > threshold).mean()),
        residual_q50=float(np.quantile(residual, 0.5)),
        residual_q90=float(np.quantile(residual, 0.9)),
        residual_max=float(residual.max()),
        n_valid=int(ok.sum()),
        n_skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Cross-section slices
# ---------------------------------------------------------------------------

_AXES = {"x": 0, "y": 1, "z": 2}


def slice_field(net, axis: str = "z", offset: float = 0.0, resolution: int = 256,
                lower: float = -1.0, upper: float = 1.0) -> FieldSlice:
    """Sample the field on an axis-aligned plane.

    Grid points run over linspace(lower, upper, resolution) on both
    in-plane axes (xyz order), so cell (i, j) is the field at in-plane
    coordinates (u[i], v[j]).
    """
    if axis not in _AXES:
        raise ConfigError(f"axis must be one of x, y, z; got {axis!r}")
    if resolution < 2:
        raise ConfigError(f"slice resolution must be >= 2, got {resolution}")
    a = _AXES[axis]
    u = np.linspace(lower, upper, resolution)
    v = np.linspace(lower, upper, resolution)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.empty((resolution * resolution, 3))
    in_plane = [i for i in range(3) if i != a]
    pts[:, in_plane[0]] = uu.ravel()
    pts[:, in_plane[1]] = vv.ravel()
    pts[:, a] = offset
    vals, grads = net.evaluate(pts)
    return FieldSlice(axis=axis, offset=offset, resolution=resolution, u=u, v=v,
                      values=vals.reshape(resolution, resolution),
                      gradients=grads.reshape(resolution, resolution, 3))


def write_slice_csv(sl: FieldSlice, path) -> None:
    """Row-major CSV of the signed distances under a one-line header."""
    with open(path, "w") as fh:
        fh.write(f"{sl.axis},{sl.offset!r},{sl.resolution}\n")
        for row in sl.values:
            fh.write(",".join(repr(x) for x in row) + "\n")


def slice_to_pixels(values: np.ndarray, clamp: float = SLICE_CLAMP) -> np.ndarray:
    """Sign-split grayscale ramp: [-clamp, 0) maps to [0, 127] and
    [0, clamp] to [128, 255], linearly, after clamping."""
    v = np.clip(values, -clamp, clamp)
    neg = np.rint((v + clamp) / clamp * 127.0)
    pos = 128.0 + np.rint(v / clamp * 127.0)
    return np.where(v < 0, neg, pos).astype(np.uint8)


def write_slice_image(sl: FieldSlice, path) -> None:
    """8-bit grayscale PNG; pixel (i, j) follows values[i, j]."""
    Image.fromarray(slice_to_pixels(sl.values), mode="L").save(Path(path))
