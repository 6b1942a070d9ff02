"""Signed distance network: architecture, initialization, evaluation.

The network is a plain MLP mapping R^3 -> R.  Its forward pass builds an
autodiff graph that carries both the value and the spatial tangent of
every layer, so the returned gradient is the exact derivative of the
implemented network and remains differentiable with respect to the
parameters.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Var, constant
from .errors import ConfigError, EvaluationError

SMOOTH_ACTIVATIONS = ("softplus", "sine")

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor; immutable after construction.

    ``depth`` counts hidden layers, ``skip_layer`` is the 1-based hidden
    layer whose input is the previous activation concatenated with the
    raw query (0 disables the skip).  ``sharpness`` is the softplus beta
    or the sine frequency.
    """

    depth: int = 8
    width: int = 256
    skip_layer: int = 4
    activation: str = "softplus"
    sharpness: float = 100.0
    geometric_init: bool = True
    init_radius: float = 0.5

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigError(f"depth must be >= 2, got {self.depth}")
        if self.width < 8:
            raise ConfigError(f"width must be >= 8, got {self.width}")
        if self.activation not in SMOOTH_ACTIVATIONS:
            raise ConfigError(
                f"activation must be C^2 smooth, one of {SMOOTH_ACTIVATIONS}, "
                f"got {self.activation!r}"
            )
        if self.sharpness <= 0:
            raise ConfigError(f"sharpness must be > 0, got {self.sharpness}")
        if not (0 <= self.skip_layer <= self.depth):
            raise ConfigError(
                f"skip_layer must be in [0, depth], got {self.skip_layer}"
            )

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every linear layer, output layer last."""
        dims = []
        for layer in range(1, self.depth + 1):
            fan_in = 3 if layer == 1 else self.width
            if layer == self.skip_layer and layer > 1:
                fan_in += 3
            dims.append((fan_in, self.width))
        dims.append((self.width, 1))
        return dims

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


class SdfNetwork:
    """MLP signed distance field f(q) with tape-resident parameters."""

    def __init__(self, arch: ArchSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.arch = arch
        self._weights = [Var(w, param_owner=id(self), name=f"w{i}")
                         for i, w in enumerate(weights)]
        self._biases = [Var(b, param_owner=id(self), name=f"b{i}")
                        for i, b in enumerate(biases)]

    def parameters(self) -> list[Var]:
        out = []
        for w, b in zip(self._weights, self._biases):
            out.append(w)
            out.append(b)
        return out

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def check_finite(self) -> None:
        for p in self.parameters():
            if not np.isfinite(p.value).all():
                raise EvaluationError(f"non-finite network parameter {p.name!r}")

    # -- forward -----------------------------------------------------------

    def _activate(self, z: Var, tangent: Var | None):
        beta = self.arch.sharpness
        if self.arch.activation == "softplus":
            zb = z * beta
            if tangent is None:
                return ad.softplus(zb) * (1.0 / beta), None
            slope = ad.sigmoid(zb)
            h = ad.softplus(zb, slope_value=slope.value) * (1.0 / beta)
            return h, ad.scale_blocks(tangent, slope, 3)
        # sine
        zw = z * beta
        h = ad.sin(zw)
        if tangent is None:
            return h, None
        slope = ad.cos(zw) * beta
        return h, ad.scale_blocks(tangent, slope, 3)

    def _trunk(self, x: Var, seed: Var | None) -> tuple[Var, Var | None]:
        h, t = x, seed
        for layer in range(1, self.arch.depth + 1):
            if layer == self.arch.skip_layer and layer > 1:
                h = ad.concat([h, x], axis=1) * _INV_SQRT2
                if t is not None:
                    t = ad.concat([t, seed], axis=1) * _INV_SQRT2
            w, bias = self._weights[layer - 1], self._biases[layer - 1]
            z = ad.matmul(h, w) + bias
            tz = ad.matmul(t, w) if t is not None else None
            h, t = self._activate(z, tz)
        return h, t

    def field_graph(self, points, need_gradient: bool = True) -> tuple[Var, Var | None]:
        """Build the (values, gradients) graph for a (B, 3) point batch.

        ``points`` may be a numpy array (treated as constant) or a Var,
        in which case gradients flow back into it.
        """
        if isinstance(points, Var):
            x = points
            b = x.value.shape[0]
        else:
            pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
            x = constant(pts)
            b = len(pts)

        seed = None
        if need_gradient:
            t0 = np.zeros((3 * b, 3))
            for c in range(3):
                t0[c * b:(c + 1) * b, c] = 1.0
            seed = constant(t0)

        h, t = self._trunk(x, seed)
        w, bias = self._weights[-1], self._biases[-1]
        values = ad.vsum(ad.matmul(h, w) + bias, axis=1)
        if t is None:
            return values, None
        grads = ad.rows_to_cols(ad.matmul(t, w), b)
        return values, grads

    def hidden_features(self, points) -> np.ndarray:
        """Last hidden activation, numeric; used by init calibration."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        h, _ = self._trunk(constant(pts), None)
        return h.value

    def evaluate(self, points, need_gradient: bool = True):
        """Numeric (detached) field values and gradients."""
        values, grads = self.field_graph(points, need_gradient=need_gradient)
        if grads is None:
            return values.value, None
        return values.value, grads.value

    def predict(self, q) -> float:
        """Field value at a single point."""
        pts = np.asarray(q, dtype=np.float64).reshape(1, 3)
        ad.check_finite_points(pts)
        self.check_finite()
        values, _ = self.field_graph(pts, need_gradient=False)
        return float(values.value[0])


class LinearField:
    """f(q) = w . q + b; the minimal network used in closed-form tests."""

    def __init__(self, w, b: float = 0.0):
        self._w = Var(np.asarray(w, dtype=np.float64).reshape(3), name="w")
        self._b = Var(float(b), name="b")
        self._w.param_owner = id(self)
        self._b.param_owner = id(self)

    def parameters(self) -> list[Var]:
        return [self._w, self._b]

    def check_finite(self) -> None:
        for p in self.parameters():
            if not np.isfinite(p.value).all():
                raise EvaluationError(f"non-finite parameter {p.name!r}")

    def field_graph(self, points, need_gradient: bool = True):
        if isinstance(points, Var):
            x = points
            b = x.value.shape[0]
        else:
            pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
            x = constant(pts)
            b = len(pts)
        values = ad.vsum(ad.mul(x, self._w), axis=1) + self._b
        if not need_gradient:
            return values, None
        ones = constant(np.ones((b, 1)))
        grads = ad.matmul(ones, reshape_row(self._w))
        return values, grads

    def evaluate(self, points, need_gradient: bool = True):
        values, grads = self.field_graph(points, need_gradient=need_gradient)
        if grads is None:
            return values.value, None
        return values.value, grads.value

    def predict(self, q) -> float:
        values, _ = self.field_graph(np.asarray(q, dtype=np.float64).reshape(1, 3),
                                     need_gradient=False)
        return float(values.value[0])


def reshape_row(v: Var) -> Var:
    """View a (3,) Var as a (1, 3) row in the graph."""
    return Var(v.value.reshape(1, 3), ((v, lambda g: g.reshape(3)),))


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_network(arch: ArchSpec, seed: int) -> SdfNetwork:
    """Deterministically initialize a network from (arch, seed).

    With geometric initialization the starting field approximates a
    sphere of radius ``arch.init_radius``, which keeps pulling losses
    from stalling on fields with no zero crossing.  Hidden layers get
    variance-preserving Gaussian weights; the output layer is then
    calibrated to the sphere target by ridge least squares on a seeded
    sample, so the approximation holds at any width.
    """
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims()
    weights, biases = [], []
    n_layers = len(dims)
    for i, (fan_in, fan_out) in enumerate(dims):
        last = i == n_layers - 1
        if arch.activation == "sine":
            bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / arch.sharpness
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
        elif arch.geometric_init:
            if last:
                w = rng.normal(np.sqrt(np.pi / fan_in), 1e-5, size=(fan_in, fan_out))
                b = np.full(fan_out, -arch.init_radius)
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_out), size=(fan_in, fan_out))
                b = np.zeros(fan_out)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
        weights.append(w)
        biases.append(b)
    net = SdfNetwork(arch, weights, biases)
    if arch.geometric_init and arch.activation != "sine":
        _calibrate_output_to_sphere(net, rng)
    return net


def _calibrate_output_to_sphere(net: SdfNetwork, rng: np.random.Generator) -> None:
    arch = net.arch
    m = max(4 * arch.width, 512)
    pts = rng.uniform(-1.0, 1.0, size=(m, 3))
    feats = np.concatenate([net.hidden_features(pts), np.ones((m, 1))], axis=1)
    target = np.linalg.norm(pts, axis=1) - arch.init_radius
    gram = feats.T @ feats
    gram[np.diag_indices_from(gram)] += 1e-9 * np.trace(gram) / len(gram)
    theta = np.linalg.solve(gram, feats.T @ target)
    net._weights[-1].value[...] = theta[:-1].reshape(-1, 1)
    net._biases[-1].value[...] = theta[-1:]


# ---------------------------------------------------------------------------
# Checkpoint I/O (round-trips parameters bit-exactly)
# ---------------------------------------------------------------------------

def save_network(net: SdfNetwork, path) -> None:
    arrays = {"arch_json": np.frombuffer(
        json.dumps(asdict(net.arch)).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(net._weights, net._biases)):
        arrays[f"w{i}"] = w.value
        arrays[f"b{i}"] = b.value
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_network(path) -> SdfNetwork:
    with np.load(path) as z:
        arch = ArchSpec(**json.loads(bytes(z["arch_json"]).decode()))
        n = arch.depth + 1
        weights = [z[f"w{i}"].astype(np.float64) for i in range(n)]
        biases = [z[f"b{i}"].astype(np.float64) for i in range(n)]
    return SdfNetwork(arch, weights, biases)
