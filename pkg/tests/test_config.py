import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx

from srint.config import (
    ConfigError,
    PointConfig,
    brute_force_knn,
    build_index,
    covering_radius,
    format_csv,
    knn,
    read_csv,
    separation,
    write_csv,
)
from srint.quantize import midpoint_config
from srint.regions import circle, unit_box


def test_knn_collinear():
    idx = build_index(PointConfig([0.0, 1.0, 3.0]))
    assert knn(idx, 1, 2) == [0, 2]


def test_knn_duplicates():
    idx = build_index(PointConfig([0.0, 0.0, 1.0]))
    assert knn(idx, 0, 1) == [1]
    assert idx.neighbor_distances(1)[0, 0] == 0.0


def test_knn_circle_symmetric_tie():
    idx = build_index(PointConfig(np.arange(4) / 4, "circle-periodic"))
    assert knn(idx, 0, 2) == [1, 3]


def test_knn_grid_center():
    g = np.array([(i, j) for i in range(3) for j in range(3)], dtype=float)
    assert sorted(knn(build_index(PointConfig(g)), 4, 4)) == [1, 3, 5, 7]
    # Tie-break by index.
    assert knn(build_index(PointConfig(g)), 4, 4) == [1, 3, 5, 7]


def test_knn_all_neighbors(rng):
    pts = rng.random((30, 2))
    idx = build_index(PointConfig(pts))
    out = knn(idx, 5, 29)
    d = np.linalg.norm(pts[out] - pts[5], axis=1)
    assert sorted(out) == [j for j in range(30) if j != 5]
    assert np.all(np.diff(d) >= 0)


def test_knn_errors():
    idx = build_index(PointConfig([0.0, 1.0, 2.0]))
    with pytest.raises(ConfigError):
        knn(idx, 0, 3)
    with pytest.raises(ConfigError):
        build_index(PointConfig([0.0]))


def test_knn_matches_brute_force_3d(rng):
    pts = rng.random((200, 3))
    idx = build_index(PointConfig(pts))
    assert idx.tree is not None
    for k in range(1, 11):
        assert np.array_equal(idx.all_knn(k), brute_force_knn(pts, k))


@settings(max_examples=50, deadline=None)
@given(
    st.integers(2, 200),
    st.sampled_from([1, 2, 3]),
    st.integers(0, 2**31),
    st.booleans(),
)
def test_knn_brute_force_equivalence(n, d, seed, lattice):
    rng = np.random.default_rng(seed)
    # Lattice points produce exact distance ties.
    pts = rng.integers(0, 6, (n, d)).astype(float) if lattice else rng.random((n, d))
    idx = build_index(PointConfig(pts))
    for k in range(1, min(10, n - 1) + 1):
        assert np.array_equal(idx.all_knn(k), brute_force_knn(pts, k))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 150), st.integers(0, 2**31))
def test_knn_brute_force_circle(n, seed):
    pts = np.random.default_rng(seed).random(n)
    cfg = PointConfig(pts, "circle-periodic")
    idx = build_index(cfg)
    for k in range(1, min(10, n - 1) + 1):
        assert np.array_equal(idx.all_knn(k), brute_force_knn(cfg.points, k, "circle-periodic"))


def test_separation_examples():
    assert separation(PointConfig(np.linspace(0, 1, 5))) == approx(0.25)
    assert separation(PointConfig([0.0, 0.0, 1.0])) == 0.0
    assert separation(PointConfig(np.arange(8) / 8, "circle-periodic")) == approx(0.125)
    # Wrap-around pair is the closest one.
    assert separation(PointConfig([0.01, 0.5, 0.98], "circle-periodic")) == approx(0.03)


def test_covering_exact_midpoints():
    n = 10
    assert covering_radius(midpoint_config(n), unit_box(1), exact=True) == approx(1 / (2 * n))
    assert covering_radius(PointConfig(np.arange(n) / n, "circle-periodic"), circle(), exact=True) == approx(1 / (2 * n))


def test_covering_single_center():
    r = covering_radius(PointConfig([[0.5, 0.5]]), unit_box(2), probes=10_000, seed=0)
    assert r == approx(math.sqrt(2) / 2, rel=0.05)
    assert r <= math.sqrt(2) / 2


def test_covering_grid():
    g = (np.arange(32) + 0.5) / 32
    pts = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    assert covering_radius(PointConfig(pts), unit_box(2), probes=20_000) <= math.sqrt(2) / 64 * (1 + 1e-9)


def test_csv_roundtrip(tmp_path, rng):
    cfg = PointConfig(rng.random((7, 3)))
    path = tmp_path / "points.csv"
    write_csv(cfg, path)
    assert path.read_text().splitlines()[0] == "# dim=3 n=7"
    assert np.array_equal(read_csv(path).points, cfg.points)
    assert format_csv(cfg) == path.read_text()


def test_csv_bad_header(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("0.1,0.2\n")
    with pytest.raises(ConfigError):
        read_csv(path)


def test_pointconfig_validation():
    with pytest.raises(ConfigError):
        PointConfig([[np.nan, 0.0]])
    with pytest.raises(ConfigError):
        PointConfig(np.zeros((3, 2)), "circle-periodic")
    assert PointConfig([0.1, 0.2]).dim == 1
