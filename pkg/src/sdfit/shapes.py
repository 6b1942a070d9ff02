"""Analytic signed distance oracles and surface samplers.

These serve as ground truth in tests and evaluation runs: exact signed
distances, exact gradients away from the medial axis, and exact
on-surface samples with normals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import FieldSample
from .errors import ConfigError

# Gradient reported at singular points (shape centers, medial axis hits).
SINGULAR_GRADIENT = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class AnalyticShape:
    """A sphere, axis-aligned box, or z-axis torus with exact SDF."""

    kind: str
    radius: float = 1.0                      # sphere
    half_extents: tuple = (1.0, 1.0, 1.0)    # box
    major_radius: float = 1.0                # torus
    minor_radius: float = 0.4                # torus
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "torus"):
            raise ConfigError(f"unknown shape kind {self.kind!r}")
        sizes = {
            "sphere": (self.radius,),
            "box": tuple(self.half_extents),
            "torus": (self.major_radius, self.minor_radius),
        }[self.kind]
        if any(s <= 0 for s in sizes):
            raise ConfigError(f"shape size parameters must be > 0, got {sizes}")

    def evaluate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact signed distances and gradients for a (B, 3) batch."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(self.center)
        if self.kind == "sphere":
            return _sphere_sdf(p, self.radius)
        if self.kind == "box":
            return _box_sdf(p, np.asarray(self.half_extents, dtype=np.float64))
        return _torus_sdf(p, self.major_radius, self.minor_radius)


def _sphere_sdf(p, r):
    n = np.linalg.norm(p, axis=1)
    vals = n - r
    grads = np.repeat(SINGULAR_GRADIENT[None, :], len(p), axis=0)
    ok = n > 0
    grads[ok] = p[ok] / n[ok, None]
    return vals, grads


def _box_sdf(p, h):
    d = np.abs(p) - h
    outside = np.maximum(d, 0.0)
    out_norm = np.linalg.norm(outside, axis=1)
    inner = np.minimum(d.max(axis=1), 0.0)
    vals = out_norm + inner
    grads = np.empty_like(p)
    sgn = np.where(p >= 0, 1.0, -1.0)
    out = out_norm > 0
    grads[out] = sgn[out] * outside[out] / out_norm[out, None]
    # inside: push along the axis of the least-deep face (max of d);
    # ties sit on the medial axis and take the lowest axis.
    ins = ~out
    if ins.any():
        axis = d[ins].argmax(axis=1)
        g = np.zeros((ins.sum(), 3))
        g[np.arange(len(g)), axis] = sgn[ins][np.arange(len(g)), axis]
        grads[ins] = g
    return vals, grads


def _torus_sdf(p, major, minor):
    rho = np.hypot(p[:, 0], p[:, 1])
    w = np.stack([rho - major, p[:, 2]], axis=1)
    wn = np.linalg.norm(w, axis=1)
    vals = wn - minor
    grads = np.repeat(SINGULAR_GRADIENT[None, :], len(p), axis=0)
    ok = (wn > 0) & (rho > 0)
    u = np.zeros_like(p)
    u[ok, 0] = p[ok, 0] / rho[ok]
    u[ok, 1] = p[ok, 1] / rho[ok]
    grads[ok] = (w[ok, 0] / wn[ok])[:, None] * u[ok]
    grads[ok, 2] = w[ok, 1] / wn[ok]
    return vals, grads


def analytic_sdf(shape: AnalyticShape, q) -> FieldSample:
    """Exact value and gradient at a single point."""
    vals, grads = shape.evaluate(np.asarray(q, dtype=np.float64).reshape(1, 3))
    return FieldSample(float(vals[0]), grads[0])


def medial_distance(shape: AnalyticShape, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the shape's gradient-singular set.

    Used by tests to reject queries too close to the medial axis.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(shape.center)
    if shape.kind == "sphere":
        return np.linalg.norm(p, axis=1)
    if shape.kind == "torus":
        rho = np.hypot(p[:, 0], p[:, 1])
        ring = np.hypot(rho - shape.major_radius, p[:, 2])
        return np.minimum(rho, ring)
    # box: outside has no singular set; inside, distance between the two
    # deepest face margins bounds the gap to a medial sheet.
    h = np.asarray(shape.half_extents, dtype=np.float64)
    d = np.abs(p) - h
    inside = (d < 0).all(axis=1)
    out = np.full(len(p), np.inf)
    sorted_d = np.sort(d[inside], axis=1)
    out[inside] = sorted_d[:, 2] - sorted_d[:, 1]
    return out


@dataclass
class AnalyticField:
    """Adapter exposing an analytic shape through the network interface."""

    shape: AnalyticShape
    name: str = field(default="analytic", init=False)

    def evaluate(self, points, need_gradient: bool = True):
        vals, grads = self.shape.evaluate(points)
        return (vals, grads) if need_gradient else (vals, None)

    def predict(self, q) -> float:
        return analytic_sdf(self.shape, q).value


def sample_surface(shape: AnalyticShape, n: int, seed: int):
    """n exact on-surface points with exact outward normals.

    Area-uniform on the sphere and box; parameter sampling with rejection
    correction on the torus.  Returns a :class:`sdfit.cloud.PointCloud`.
    """
    from .cloud import PointCloud

    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if shape.kind == "sphere":
        pos, nrm = _sample_sphere(rng, n, shape.radius)
    elif shape.kind == "box":
        pos, nrm = _sample_box(rng, n, np.asarray(shape.half_extents, dtype=np.float64))
    else:
        pos, nrm = _sample_torus(rng, n, shape.major_radius, shape.minor_radius)
    return PointCloud(pos + np.asarray(shape.center), nrm)


def _sample_sphere(rng, n, r):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return r * v, v.copy()


def _sample_box(rng, n, h):
    # six faces weighted by area
    areas = 4.0 * np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2],
                            h[0] * h[2], h[0] * h[1], h[0] * h[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pos = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        sel = axis == a
        others = [i for i in range(3) if i != a]
        pos[sel, a] = sign[sel] * h[a]
        pos[sel, others[0]] = uv[sel, 0] * h[others[0]]
        pos[sel, others[1]] = uv[sel, 1] * h[others[1]]
        nrm[sel, a] = sign[sel]
    return pos, nrm


def _sample_torus(rng, n, major, minor):
    # poloidal angle needs density prop. to (major + minor*cos) for area
    # uniformity; sample by rejection against the max density
    out_t = np.empty(0)
    while out_t.size < n:
        cand = rng.uniform(0.0, 2.0 * np.pi, size=2 * n)
        accept = rng.uniform(0.0, 1.0, size=2 * n)
        keep = accept < (major + minor * np.cos(cand)) / (major + minor)
        out_t = np.concatenate([out_t, cand[keep]])
    phi = out_t[:n]
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    ring = major + minor * np.cos(phi)
    pos = np.stack([ring * np.cos(theta), ring * np.sin(theta),
                    minor * np.sin(phi)], axis=1)
    nrm = np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta),
                    np.sin(phi)], axis=1)
    return pos, nrm


def shape_from_name(name: str, size: float = 1.0) -> AnalyticShape:
    """CLI-facing constructor: sphere | box | torus with a scale knob."""
    if name == "sphere":
        return AnalyticShape("sphere", radius=size)
    if name == "box":
        return AnalyticShape("box", half_extents=(size, size, size))
    if name == "torus":
        return AnalyticShape("torus", major_radius=size, minor_radius=0.4 * size)
    raise ConfigError(f"unknown shape {name!r}; expected sphere, box, or torus")
