import numpy as np
import pytest

from sdfit.errors import ConfigError
from sdfit.losses import pull_projection
from sdfit.shapes import (AnalyticField, AnalyticShape, analytic_sdf, medial_distance,
                          sample_surface, shape_from_name)

SPHERE = AnalyticShape("sphere", radius=1.0)
BOX = AnalyticShape("box", half_extents=(1.0, 1.0, 1.0))
TORUS = AnalyticShape("torus", major_radius=1.0, minor_radius=0.4)


def test_sphere_closed_forms():
    s = analytic_sdf(SPHERE, [2.0, 0.0, 0.0])
    assert s.value == pytest.approx(1.0)
    assert np.allclose(s.gradient, [1.0, 0.0, 0.0])
    center = analytic_sdf(SPHERE, [0.0, 0.0, 0.0])
    assert center.value == pytest.approx(-1.0)
    assert np.array_equal(center.gradient, [0.0, 0.0, 1.0])  # declared convention


def test_box_corner_region():
    s = analytic_sdf(BOX, [2.0, 2.0, 0.0])
    assert s.value == pytest.approx(np.sqrt(2.0))
    assert np.allclose(s.gradient, [np.sqrt(2) / 2, np.sqrt(2) / 2, 0.0])
    inside = analytic_sdf(BOX, [0.2, 0.0, 0.0])
    assert inside.value == pytest.approx(-0.8)
    assert np.allclose(inside.gradient, [1.0, 0.0, 0.0])


def test_torus_closed_form():
    s = analytic_sdf(TORUS, [1.4, 0.0, 0.0])
    assert s.value == pytest.approx(0.0)
    assert np.allclose(s.gradient, [1.0, 0.0, 0.0])
    s2 = analytic_sdf(TORUS, [1.0, 0.0, 0.4])
    assert s2.value == pytest.approx(0.0)
    assert np.allclose(s2.gradient, [0.0, 0.0, 1.0])


@pytest.mark.parametrize("shape", [SPHERE, BOX, TORUS])
def test_eikonal_property_off_medial_axis(shape, rng):
    pts = rng.uniform(-1.6, 1.6, (4000, 3))
    keep = medial_distance(shape, pts) > 1e-3
    _, grads = shape.evaluate(pts[keep])
    norms = np.linalg.norm(grads, axis=1)
    assert np.abs(norms - 1.0).max() < 1e-9


@pytest.mark.parametrize("shape", [SPHERE, BOX, TORUS])
def test_surface_samples_lie_on_surface(shape):
    pc = sample_surface(shape, 2000, seed=4)
    vals, _ = shape.evaluate(pc.positions)
    assert np.abs(vals).max() < 1e-12
    assert np.abs(np.linalg.norm(pc.normals, axis=1) - 1.0).max() < 1e-9


def test_sphere_sample_radii_exact():
    pc = sample_surface(SPHERE, 1000, seed=0)
    assert np.abs(np.linalg.norm(pc.positions, axis=1) - 1.0).max() < 1e-12


def test_box_samples_on_boundary():
    pc = sample_surface(BOX, 1000, seed=0)
    assert np.abs(np.abs(pc.positions).max(axis=1) - 1.0).max() < 1e-12


def test_sampling_deterministic():
    a = sample_surface(TORUS, 500, seed=9)
    b = sample_surface(TORUS, 500, seed=9)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.normals, b.normals)


@pytest.mark.parametrize("shape", [SPHERE, BOX, TORUS])
def test_one_step_projection_reaches_surface(shape, rng):
    field = AnalyticField(shape)
    pts = rng.uniform(-1.5, 1.5, (500, 3))
    pts = pts[medial_distance(shape, pts) > 1e-3][:200]
    for q in pts:
        p0 = pull_projection(field, q)
        assert abs(analytic_sdf(shape, p0).value) < 1e-9


def test_shape_parameter_validation():
    with pytest.raises(ConfigError):
        AnalyticShape("sphere", radius=0.0)
    with pytest.raises(ConfigError):
        AnalyticShape("pyramid")
    with pytest.raises(ConfigError):
        shape_from_name("cone")


def test_normals_match_gradients_on_surface():
    for shape in (SPHERE, BOX, TORUS):
        pc = sample_surface(shape, 500, seed=2)
        keep = medial_distance(shape, pc.positions) > 1e-6
        _, grads = shape.evaluate(pc.positions[keep])
        dots = np.einsum("ij,ij->i", grads, pc.normals[keep])
        assert dots.min() > 1.0 - 1e-6
