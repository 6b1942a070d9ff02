import numpy as np
import pytest

from sdfit import autodiff as ad
from sdfit.errors import EvaluationError, GraphError
from sdfit.model import ArchSpec, LinearField, init_network

from conftest import fd_param_gradient, rel_vec_err


def test_linear_field_closed_forms():
    lf = LinearField([1.0, 2.0, 3.0], 0.5)
    [sample] = ad.eval_field(lf, [[0.0, 0.0, 0.0]])
    assert sample.value == 0.5
    assert np.array_equal(sample.gradient, [1.0, 2.0, 3.0])


def test_eval_field_is_deterministic(small_net, rng):
    pts = rng.uniform(-1, 1, (7, 3))
    a = ad.eval_field(small_net, pts)
    b = ad.eval_field(small_net, pts)
    for sa, sb in zip(a, b):
        assert sa.value == sb.value
        assert np.array_equal(sa.gradient, sb.gradient)


def test_spatial_gradient_matches_central_differences(rng):
    h = 1e-4
    for trial in range(5):
        net = init_network(ArchSpec(depth=4, width=16, skip_layer=2), seed=trial)
        pts = rng.uniform(-1, 1, (10, 3))
        _, grads = net.evaluate(pts)
        fd = np.zeros_like(grads)
        for i in range(len(pts)):
            for c in range(3):
                p = pts[i].copy()
                p[c] += h
                up = net.evaluate(p.reshape(1, 3), need_gradient=False)[0][0]
                p[c] -= 2 * h
                dn = net.evaluate(p.reshape(1, 3), need_gradient=False)[0][0]
                fd[i, c] = (up - dn) / (2 * h)
        rel = np.abs(grads - fd).max() / max(np.abs(fd).max(), 1e-10)
        assert rel < 1e-5


def test_param_gradient_b_of_value_squared():
    lf = LinearField([1.0, 2.0, 3.0], 0.5)
    values, _ = lf.field_graph(np.array([[1.0, 0.0, 0.0]]))
    loss = ad.vsum(values * values)
    pg = ad.loss_param_gradients(lf, loss)
    assert pg[1] == pytest.approx(3.0)  # 2 * f(q) with f(q) = 1.5
    assert np.allclose(pg[0], [3.0, 0.0, 0.0])


def test_param_gradient_of_gradient_norm_squared():
    lf = LinearField([1.0, 2.0, 3.0], 0.5)
    _, grads = lf.field_graph(np.array([[0.3, -0.2, 0.7]]))
    loss = ad.vsum(grads * grads)
    pg = ad.loss_param_gradients(lf, loss)
    assert np.allclose(pg[0], [2.0, 4.0, 6.0])
    assert pg[1] == pytest.approx(0.0)


def test_param_gradients_match_finite_differences(small_net, rng):
    pts = rng.uniform(-1, 1, (6, 3))

    def build():
        values, grads = small_net.field_graph(pts)
        return ad.vmean(values * values) + ad.vmean(ad.powc(ad.norm_rows(grads) - 1.0, 2.0))

    pg = ad.loss_param_gradients(small_net, build())
    fd = fd_param_gradient(small_net, lambda: float(build().value))
    assert rel_vec_err(pg, fd) < 1e-3


def test_gradient_linearity(small_net, rng):
    pts = rng.uniform(-1, 1, (5, 3))

    def terms():
        values, grads = small_net.field_graph(pts)
        return ad.vmean(values * values), ad.vmean(ad.norm_rows(grads))

    l1, l2 = terms()
    g1 = ad.loss_param_gradients(small_net, l1)
    g2 = ad.loss_param_gradients(small_net, l2)
    combo = ad.loss_param_gradients(small_net, 2.5 * l1 + (-0.75) * l2)
    for gc, a, b in zip(combo, g1, g2):
        assert np.allclose(gc, 2.5 * np.asarray(a) - 0.75 * np.asarray(b),
                           rtol=1e-12, atol=1e-12)


def test_foreign_network_graph_rejected(small_net):
    other = init_network(small_net.arch, seed=6)
    values, _ = other.field_graph(np.zeros((1, 3)), need_gradient=False)
    loss = ad.vsum(values * values)
    with pytest.raises(GraphError):
        ad.loss_param_gradients(small_net, loss)


def test_non_finite_input_rejected(small_net):
    with pytest.raises(EvaluationError, match="index 1"):
        ad.eval_field(small_net, [[0, 0, 0], [np.nan, 0, 0]])


def test_non_finite_parameter_rejected(small_net):
    small_net.parameters()[0].value[0, 0] = np.inf
    with pytest.raises(EvaluationError):
        ad.eval_field(small_net, [[0.0, 0.0, 0.0]])


@pytest.mark.parametrize("op,dop", [
    (ad.exp, lambda x: np.exp(x)),
    (ad.sin, lambda x: np.cos(x)),
    (ad.cos, lambda x: -np.sin(x)),
    (ad.softplus, lambda x: 1.0 / (1.0 + np.exp(-x))),
    (ad.absval, lambda x: np.sign(x)),
])
def test_elementwise_vjps(op, dop, rng):
    x = ad.Var(rng.uniform(-2, 2, (4, 3)))
    out = ad.vsum(op(x))
    (g,) = ad.backward(out, [x])
    assert np.allclose(g, dop(x.value), rtol=1e-12, atol=1e-12)


def test_matmul_and_scale_blocks_vjps(rng):
    a = ad.Var(rng.standard_normal((6, 4)))
    b = ad.Var(rng.standard_normal((4, 5)))
    out = ad.vsum(ad.matmul(a, b))
    ga, gb = ad.backward(out, [a, b])
    assert np.allclose(ga, np.ones((6, 5)) @ b.value.T)
    assert np.allclose(gb, a.value.T @ np.ones((6, 5)))

    t = ad.Var(rng.standard_normal((9, 4)))
    s = ad.Var(rng.standard_normal((3, 4)))
    out = ad.vsum(ad.scale_blocks(t, s, 3))
    gt, gs = ad.backward(out, [t, s])
    assert np.allclose(gt, np.tile(s.value, (3, 1)))
    assert np.allclose(gs, t.value.reshape(3, 3, 4).sum(axis=0))


def test_take_rows_scatter(rng):
    x = ad.Var(rng.standard_normal((5, 2)))
    picked = ad.take_rows(x, np.array([0, 3, 3]))
    out = ad.vsum(picked)
    (g,) = ad.backward(out, [x])
    expected = np.zeros((5, 2))
    expected[0] = 1.0
    expected[3] = 2.0
    assert np.array_equal(g, expected)


def test_detach_blocks_gradient(small_net, rng):
    pts = rng.uniform(-1, 1, (4, 3))
    values, _ = small_net.field_graph(pts, need_gradient=False)
    loss = ad.vsum(ad.detach(values) * values)
    pg = ad.loss_param_gradients(small_net, loss)
    fixed = values.value.copy()

    def frozen():
        v, _ = small_net.field_graph(pts, need_gradient=False)
        return float(np.sum(fixed * v.value))

    fd = fd_param_gradient(small_net, frozen)
    assert rel_vec_err(pg, fd) < 1e-3
