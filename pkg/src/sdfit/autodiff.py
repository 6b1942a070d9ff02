"""Reverse-mode automatic differentiation over numpy arrays.

The engine records a computation graph of :class:`Var` nodes holding
float64 arrays.  Networks build their spatial-derivative computation
explicitly into the graph (forward tangent propagation), so parameter
gradients of losses containing spatial gradients fall out of a single
first-order reverse sweep; no nested differentiation is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import EvaluationError, GraphError

Array = np.ndarray


@dataclass(frozen=True)
class FieldSample:
    """Field value and spatial gradient at a single query point."""

    value: float
    gradient: Array  # shape (3,)


@dataclass(frozen=True)
class ParamGradient:
    """Per-parameter partials of a scalar loss, ordered like the network
    parameter list."""

    grads: tuple[Array, ...]

    def __iter__(self):
        return iter(self.grads)

    def __len__(self):
        return len(self.grads)

    def __getitem__(self, i):
        return self.grads[i]


class Var:
    """A node in the computation graph.

    ``parents`` is a tuple of ``(Var, vjp)`` pairs where ``vjp`` maps the
    incoming cotangent to the parent's cotangent contribution.  Leaves
    have no parents; parameter leaves carry the id of the owning network
    in ``param_owner``.
    """

    __slots__ = ("value", "parents", "param_owner", "name")

    def __init__(self, value, parents=(), param_owner=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.param_owner = param_owner
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    # Arithmetic sugar; constants are promoted automatically.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return powc(self, p)

    def __repr__(self):
        tag = self.name or "var"
        return f"Var({tag}, shape={self.value.shape})"


def constant(value, name=None) -> Var:
    return Var(value, (), None, name)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else constant(x)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitive operations
# ---------------------------------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value + b.value, (
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    ))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value - b.value, (
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    ))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value * b.value, (
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    ))


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value / b.value, (
        (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)),
    ))


def neg(a) -> Var:
    a = as_var(a)
    return Var(-a.value, ((a, lambda g: -g),))


def powc(a, p: float) -> Var:
    """Elementwise power with a constant exponent."""
    a = as_var(a)
    return Var(a.value ** p, ((a, lambda g: g * p * a.value ** (p - 1)),))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.value @ b.value, (
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, ((a, lambda g: g * out),))


def log(a) -> Var:
    a = as_var(a)
    return Var(np.log(a.value), ((a, lambda g: g / a.value),))


def sqrt(a) -> Var:
    a = as_var(a)
    out = np.sqrt(a.value)
    return Var(out, ((a, lambda g: g * 0.5 / out),))


def absval(a) -> Var:
    """|a| with subgradient sign(0) = 0."""
    a = as_var(a)
    return Var(np.abs(a.value), ((a, lambda g: g * np.sign(a.value)),))


def sin(a) -> Var:
    a = as_var(a)
    return Var(np.sin(a.value), ((a, lambda g: g * np.cos(a.value)),))


def cos(a) -> Var:
    a = as_var(a)
    return Var(np.cos(a.value), ((a, lambda g: -g * np.sin(a.value)),))


def softplus(a, slope_value: Array | None = None) -> Var:
    """log(1 + exp(a)), overflow-safe.

    ``slope_value`` optionally supplies the already-computed sigmoid of
    ``a`` so the reverse pass can reuse it.
    """
    a = as_var(a)
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if slope_value is None:
        return Var(out, ((a, lambda g: g * expit(x)),))
    return Var(out, ((a, lambda g: g * slope_value),))


def sigmoid(a) -> Var:
    a = as_var(a)
    s = expit(a.value)
    return Var(s, ((a, lambda g: g * s * (1.0 - s)),))


def vsum(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape).copy()

    return Var(out, ((a, vjp),))


def vmean(a, axis=None) -> Var:
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis=axis) * (1.0 / n)


def concat(parts, axis=0) -> Var:
    parts = [as_var(p) for p in parts]
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * parts[i].value.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    out = np.concatenate([p.value for p in parts], axis=axis)
    return Var(out, tuple((p, make_vjp(i)) for i, p in enumerate(parts)))


def scale_blocks(t, s, k: int) -> Var:
    """Scale a (k*n, m) block-stacked array by an (n, m) factor per block.

    Equivalent to tiling ``s`` k times along axis 0 and multiplying, but
    without materializing the tile.
    """
    t, s = as_var(t), as_var(s)
    n, m = s.value.shape
    t3 = t.value.reshape(k, n, m)
    out = (t3 * s.value).reshape(k * n, m)

    def vjp_t(g):
        return (g.reshape(k, n, m) * s.value).reshape(k * n, m)

    def vjp_s(g):
        return (g.reshape(k, n, m) * t3).sum(axis=0)

    return Var(out, ((t, vjp_t), (s, vjp_s)))


def rows_to_cols(a, n: int) -> Var:
    """Reinterpret a (k*n, 1) block-stacked array as (n, k) columns."""
    a = as_var(a)
    k = a.value.shape[0] // n
    out = a.value.reshape(k, n).T.copy()
    return Var(out, ((a, lambda g: g.T.reshape(k * n, 1).copy()),))


def take_rows(a, indices: Array, unique: bool = False) -> Var:
    """Row gather; the cotangent scatter-adds back into place.

    ``unique=True`` promises no repeated indices, allowing a plain
    scatter instead of the (slow) accumulating one.
    """
    a = as_var(a)
    idx = np.asarray(indices)

    def vjp(g):
        full = np.zeros_like(a.value)
        if unique:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return full

    return Var(a.value[idx], ((a, vjp),))


def detach(a) -> Var:
    """Cut the graph: the value flows, gradients do not."""
    return constant(as_var(a).value)


def dot_rows(a, b) -> Var:
    """Row-wise inner product of two (n, d) arrays -> (n,)."""
    return vsum(mul(a, b), axis=1)


def norm_rows(a) -> Var:
    """Row-wise Euclidean norm of an (n, d) array -> (n,)."""
    return sqrt(vsum(mul(a, a), axis=1))


# ---------------------------------------------------------------------------
# Reverse sweep
# ---------------------------------------------------------------------------

def _topo_order(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Var, wrt: list[Var]) -> list[Array]:
    """Gradient of a scalar ``loss`` with respect to each Var in ``wrt``."""
    if loss.value.ndim != 0:
        raise ValueError("backward expects a scalar loss")
    order = _topo_order(loss)
    grads: dict[int, Array] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + contrib
            else:
                grads[pid] = contrib
        if not node.parents:
            grads[id(node)] = g  # keep leaf gradients
    return [grads.get(id(v), np.zeros_like(v.value)) for v in wrt]


def graph_param_leaves(root: Var) -> list[Var]:
    """All parameter leaves reachable from ``root``."""
    return [v for v in _topo_order(root) if not v.parents and v.param_owner is not None]


# ---------------------------------------------------------------------------
# Field evaluation and loss differentiation
# ---------------------------------------------------------------------------

def check_finite_points(points: Array) -> None:
    bad = ~np.isfinite(points).all(axis=-1)
    if bad.any():
        raise EvaluationError(f"non-finite input point at index {int(np.argmax(bad))}")


def eval_field(net, points) -> list[FieldSample]:
    """Evaluate field value and exact spatial gradient at each point.

    ``net`` is anything exposing ``field_graph(points, need_gradient=True)``
    and ``check_finite()``.  The gradient is the analytic derivative of the
    implemented network, not a finite-difference estimate.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    check_finite_points(pts)
    net.check_finite()
    values, grads = net.field_graph(pts, need_gradient=True)
    v, g = values.value, grads.value
    return [FieldSample(float(v[i]), g[i].copy()) for i in range(len(pts))]


def loss_param_gradients(net, loss: Var) -> ParamGradient:
    """Differentiate a scalar loss graph with respect to net parameters.

    Raises :class:`GraphError` if the graph references parameter leaves of
    a different network instance.
    """
    own = {id(p) for p in net.parameters()}
    for leaf in graph_param_leaves(loss):
        if id(leaf) not in own:
            raise GraphError(
                f"loss graph references parameter {leaf.name!r} of a different network"
            )
    grads = backward(loss, net.parameters())
    return ParamGradient(tuple(grads))
