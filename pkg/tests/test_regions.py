import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx

from srint.regions import RegionError, ball, box, box_union, circle, from_json, sphere, unit_box


def test_contains_box_interior_and_boundary():
    A = unit_box(2)
    assert A.contains([0.5, 0.5])
    assert A.contains([1.0, 0.5])
    assert not A.contains([1.0 + 1e-9, 0.5])


def test_contains_ball_outside():
    assert not ball([0.0, 0.0], 1.0).contains([1.1, 0.0])


def test_contains_dimension_mismatch():
    with pytest.raises(RegionError):
        unit_box(2).contains([0.5])


def test_project_examples():
    assert unit_box(2).project([1.4, -0.2]) == approx([1.0, 0.0])
    assert sphere().project([0.0, 0.0, 2.0]) == approx([0.0, 0.0, 1.0])
    x = np.array([0.3, 0.7])
    assert np.array_equal(unit_box(2).project(x), x)


def test_project_box_union_lowest_index_on_tie():
    A = box_union([([0.0], 1.0), ([2.0], 1.0)])
    # 1.5 is equidistant from both members: the first member wins.
    assert A.project([1.5]) == approx([1.0])
    assert A.project([1.7]) == approx([2.0])


def test_measures():
    assert box([0.0, 0.0], 2.0).measure() == approx(4.0)
    assert ball([0.0, 0.0], 1.0).measure() == approx(math.pi)
    assert sphere().measure() == approx(4 * math.pi)
    assert box_union([([0.0, 0.0], 1.0), ([2.0, 0.0], 1.0)]).measure() == approx(2.0)
    assert circle().measure() == approx(1.0)


def test_box_union_rejects_overlap():
    with pytest.raises(RegionError):
        box_union([([0.0, 0.0], 1.0), ([0.5, 0.5], 1.0)])
    # Shared faces are fine.
    box_union([([0.0, 0.0], 1.0), ([1.0, 0.0], 1.0)])


def test_sample_uniform_deterministic():
    A = unit_box(1)
    a = A.sample_uniform(3, 7)
    assert np.array_equal(a, A.sample_uniform(3, 7))
    assert np.all((a >= 0) & (a <= 1))


def test_sample_uniform_rejects_zero():
    with pytest.raises(RegionError):
        unit_box(2).sample_uniform(0, 0)


def test_sample_mean_box():
    pts = unit_box(2).sample_uniform(100_000, 1)
    assert pts.mean(axis=0) == approx([0.5, 0.5], abs=0.01)


def test_sample_mean_sphere():
    pts = sphere().sample_uniform(100_000, 2)
    assert pts.mean(axis=0) == approx([0.0, 0.0, 0.0], abs=0.02)
    assert np.linalg.norm(pts, axis=1) == approx(np.ones(len(pts)))


def test_sub_box_fraction():
    pts = unit_box(2).sample_uniform(100_000, 3)
    assert np.mean(pts[:, 0] < 0.5) == approx(0.5, abs=0.01)


@pytest.mark.parametrize(
    "region",
    [unit_box(2), ball([0.0, 0.0, 0.0], 1.0), box_union([([0.0], 1.0), ([2.0], 0.5)]), circle(), sphere()],
    ids=["box", "ball", "union", "circle", "sphere"],
)
def test_samples_inside(region):
    for fn in (region.sample_uniform, region.sample_quasi_uniform):
        pts = fn(500, 4)
        assert pts.shape == (500, region.dim)
        assert np.all(region.contains(pts))


def test_quasi_uniform_triangular_start_is_spread():
    pts = unit_box(2).sample_quasi_uniform(256, 0)
    from scipy.spatial import cKDTree

    d, _ = cKDTree(pts).query(pts, k=2)
    # Lattice spacing sqrt(2 / (sqrt(3) N)); jitter is 2% of it.
    assert d[:, 1].min() > 0.5 * math.sqrt(2 / (math.sqrt(3) * 256))


def test_json_roundtrip():
    for A in (box([1.0, 2.0], [1.0, 3.0]), box_union([([0.0], 1.0), ([2.0], 1.0)]), ball([0.0, 0.0], 2.0), sphere(), circle()):
        B = from_json(A.to_json())
        assert B.kind == A.kind
        assert B.measure() == approx(A.measure())


def test_from_json_unknown_kind():
    with pytest.raises(RegionError):
        from_json({"kind": "torus"})


def test_bounding_box_is_omega():
    lo, hi = box_union([([0.0, 0.0], 1.0), ([2.0, 1.0], 1.0)]).bounding_box
    assert lo == approx([0.0, 0.0])
    assert hi == approx([3.0, 2.0])


coords = st.floats(-3.0, 3.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(coords, min_size=2, max_size=2))
def test_projection_properties_box_ball(x):
    for A in (unit_box(2), ball([0.2, 0.1], 0.7), box_union([([0.0, 0.0], 1.0), ([1.5, 0.0], 0.5)])):
        p = A.project(x)
        assert A.contains(p)
        assert np.array_equal(A.project(p), p)


@settings(max_examples=200, deadline=None)
@given(st.lists(coords, min_size=3, max_size=3))
def test_projection_properties_sphere(x):
    A = sphere([0.0, 0.0, 0.0], 2.0)
    p = A.project(x)
    assert A.contains(p)
    assert A.project(p) == approx(p, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5.0, 5.0, allow_nan=False))
def test_circle_projection_wraps(x):
    p = circle().project([x])
    assert 0.0 <= p[0] < 1.0
    assert circle().contains(p)
    assert np.array_equal(circle().project(p), p)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10.0), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_scaled_measure(c, shift):
    A = box([0.0, 0.0], [1.0, 2.0])
    assert A.scaled(c, shift).measure() == approx(c**2 * A.measure())
