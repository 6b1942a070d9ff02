import numpy as np
import pytest

from sdfit.errors import ConfigError
from sdfit.model import ArchSpec, LinearField, init_network, load_network, save_network


def test_same_arch_and_seed_bitwise_identical():
    arch = ArchSpec(depth=4, width=32, skip_layer=2)
    a = init_network(arch, 7)
    b = init_network(arch, 7)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.value, pb.value)


def test_different_seed_differs():
    arch = ArchSpec(depth=4, width=32, skip_layer=2)
    a = init_network(arch, 7)
    b = init_network(arch, 8)
    assert any(not np.array_equal(pa.value, pb.value)
               for pa, pb in zip(a.parameters(), b.parameters()))


def test_geometric_init_approximates_sphere():
    net = init_network(ArchSpec(), seed=3)  # defaults: 8x256, r0=0.5
    q = np.random.default_rng(0).uniform(-1, 1, (1000, 3))
    vals, _ = net.evaluate(q, need_gradient=False)
    err = np.abs(vals - (np.linalg.norm(q, axis=1) - 0.5))
    assert np.median(err) < 0.1


def test_geometric_init_gives_nonempty_mesh():
    from sdfit.surface import GridSpec, field_of, marching_cubes
    net = init_network(ArchSpec(depth=4, width=64, skip_layer=2), seed=11)
    mesh = marching_cubes(field_of(net), GridSpec(resolution=(32,) * 3))
    assert not mesh.is_empty()


def test_depth_one_rejected():
    with pytest.raises(ConfigError, match="depth"):
        ArchSpec(depth=1)


def test_non_smooth_activation_rejected():
    with pytest.raises(ConfigError, match="activation"):
        ArchSpec(activation="relu")


def test_param_count_arithmetic():
    with_skip = ArchSpec(depth=4, width=32, skip_layer=2)
    without = ArchSpec(depth=4, width=32, skip_layer=0)
    # the skip layer concatenates the 3 input coordinates
    assert with_skip.param_count() == without.param_count() + 3 * 32
    net = init_network(with_skip, 0)
    assert net.param_count() == with_skip.param_count()
    expected = (3 * 32 + 32) + (32 * 32 + 32) * 3 + 3 * 32 + (32 + 1)
    assert with_skip.param_count() == expected


def test_predict_linear_closed_form():
    lf = LinearField([1.0, 2.0, 3.0], 0.5)
    assert lf.predict([1.0, 1.0, 1.0]) == pytest.approx(6.5)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = init_network(ArchSpec(depth=3, width=16, skip_layer=2, sharpness=80.0), 13)
    path = tmp_path / "ckpt.npz"
    save_network(net, path)
    loaded = load_network(path)
    assert loaded.arch == net.arch
    for pa, pb in zip(net.parameters(), loaded.parameters()):
        assert np.array_equal(pa.value, pb.value)
    pts = np.random.default_rng(4).uniform(-1, 1, (5, 3))
    va, ga = net.evaluate(pts)
    vb, gb = loaded.evaluate(pts)
    assert np.array_equal(va, vb)
    assert np.array_equal(ga, gb)


def test_sine_activation_evaluates_and_differentiates():
    net = init_network(ArchSpec(depth=3, width=16, skip_layer=0,
                                activation="sine", sharpness=30.0), 2)
    pts = np.random.default_rng(5).uniform(-1, 1, (6, 3))
    vals, grads = net.evaluate(pts)
    assert np.isfinite(vals).all() and np.isfinite(grads).all()
    h = 1e-5
    fd = np.zeros_like(grads)
    for i in range(len(pts)):
        for c in range(3):
            p = pts[i].copy()
            p[c] += h
            up = net.evaluate(p.reshape(1, 3), need_gradient=False)[0][0]
            p[c] -= 2 * h
            dn = net.evaluate(p.reshape(1, 3), need_gradient=False)[0][0]
            fd[i, c] = (up - dn) / (2 * h)
    assert np.abs(grads - fd).max() / np.abs(fd).max() < 1e-5
