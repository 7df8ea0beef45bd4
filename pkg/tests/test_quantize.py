import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx

from srint.config import PointConfig
from srint.expr import parse
from srint.quantize import (
    Quadrature,
    QuantError,
    QuantSpec,
    assign_sites,
    cells_1d,
    grid_search_1d,
    lloyd,
    lloyd_step,
    midpoint_config,
    newton_1d,
    quant_energy,
    quant_energy_terms,
    quant_gradient,
    quantizer_constant_1d,
)
from srint.quantize import _interval_terms
from srint.regions import box, box_union, circle, unit_box

EXACT = QuantSpec(2.0, quad=Quadrature("exact-1d"))


def test_assign_examples():
    cfg = PointConfig([0.25, 0.75])
    assert assign_sites(np.array([[0.4]]), cfg).tolist() == [0]
    assert assign_sites(np.array([[0.5]]), cfg).tolist() == [0]
    # Tie-break also for the later index listed first.
    assert assign_sites(np.array([[0.5]]), PointConfig([0.75, 0.25])).tolist() == [0]


def test_assign_matches_brute_force(rng):
    sites = rng.random((37, 2))
    y = unit_box(2).grid_samples(1000)
    d = np.linalg.norm(y[:, None, :] - sites[None, :, :], axis=2)
    assert np.array_equal(assign_sites(y, PointConfig(sites)), np.argmin(d, axis=1))


def test_assign_lattice_ties():
    sites = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    y = np.array([[0.5, 0.5], [0.5, 0.0], [1.0, 0.5]])
    assert assign_sites(y, PointConfig(sites)).tolist() == [0, 0, 1]


def test_exact_energy_examples():
    assert quant_energy(midpoint_config(2), unit_box(1), EXACT) == approx(1 / 48)
    assert quant_energy(PointConfig([0.5]), unit_box(1), EXACT) == approx(1 / 12)


def test_exact_energy_circle():
    cfg = PointConfig(np.arange(4) / 4, "circle-periodic")
    # Four cells of length 1/4, site in the middle: 4 * 2 * (1/8)^3 / 3.
    assert quant_energy(cfg, circle(), EXACT) == approx(4 * 2 * (1 / 8) ** 3 / 3)


def test_exact_mode_rejects_2d_and_variable_weight():
    with pytest.raises(QuantError):
        quant_energy(PointConfig([[0.5, 0.5]]), unit_box(2), EXACT)
    with pytest.raises(QuantError):
        quant_energy(midpoint_config(3), unit_box(1), QuantSpec(2.0, parse("1 + x0"), quad=Quadrature("exact-1d")))


def test_mc_matches_exact(rng):
    cfg = PointConfig(rng.random(9))
    exact = quant_energy(cfg, unit_box(1), EXACT)
    terms = quant_energy_terms(cfg, unit_box(1), QuantSpec(2.0, quad=Quadrature("monte-carlo", 100_000, 3)))
    assert abs(terms.integral - exact) < 3 * terms.stderr


def test_mc_sample_floor():
    with pytest.raises(QuantError):
        Quadrature("monte-carlo", 999)


def test_field_term_reported_separately():
    spec = QuantSpec(2.0, xi=parse("x0"), quad=Quadrature("exact-1d"))
    cfg = midpoint_config(4)
    terms = quant_energy_terms(cfg, unit_box(1), spec)
    # N^{p/d - 1} sum xi = 4 * (0.125 + 0.375 + 0.625 + 0.875)
    assert terms.field == approx(4 * 2.0)
    assert terms.total == approx(terms.integral + terms.field)


def test_lloyd_step_examples():
    out = lloyd_step(PointConfig([0.1, 0.9]), unit_box(1), EXACT)
    assert out.points[:, 0] == approx([0.25, 0.75])
    mc = lloyd_step(PointConfig([0.1, 0.9]), unit_box(1), QuantSpec(2.0, quad=Quadrature("monte-carlo", 100_000, 0)))
    assert mc.points[:, 0] == approx([0.25, 0.75], abs=0.01)
    mid = midpoint_config(7)
    assert lloyd_step(mid, unit_box(1), EXACT).points == approx(mid.points, abs=1e-15)


def test_lloyd_general_p_centroid():
    # With constant weight the p-centroid of an interval is its midpoint.
    spec = QuantSpec(3.0, quad=Quadrature("grid", 20_000))
    out = lloyd_step(PointConfig([0.1, 0.9]), unit_box(1), spec)
    assert out.points[:, 0] == approx([0.25, 0.75], abs=1e-4)


def test_lloyd_reseeds_empty_cells():
    cfg = PointConfig([[0.5, 0.5], [0.5, 0.5]])
    out = lloyd_step(cfg, unit_box(2), QuantSpec(2.0, quad=Quadrature("grid", 400)), seed=3)
    assert not np.allclose(out.points[0], out.points[1])


@pytest.mark.parametrize("seed", range(10))
def test_lloyd_monotone_exact(seed):
    cfg = PointConfig(np.random.default_rng(seed).random(12))
    energies = [quant_energy(cfg, unit_box(1), EXACT)]
    for _ in range(20):
        cfg = lloyd_step(cfg, unit_box(1), EXACT)
        energies.append(quant_energy(cfg, unit_box(1), EXACT))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(energies, energies[1:]))


def test_lloyd_converges_to_midpoints():
    res = lloyd(PointConfig(np.random.default_rng(1).random(5)), unit_box(1), EXACT, max_steps=2000, tol=1e-14)
    assert np.sort(res.config.points[:, 0]) == approx(midpoint_config(5).points[:, 0], abs=1e-5)


def test_exact_gradient_vanishes_at_midpoints():
    g = quant_gradient(midpoint_config(6), unit_box(1), EXACT)
    assert np.max(np.abs(g)) < 1e-14


def test_exact_gradient_matches_finite_differences(rng):
    x = np.sort(rng.random(6))
    spec = QuantSpec(3.0, quad=Quadrature("exact-1d"))
    g = quant_gradient(PointConfig(x), unit_box(1), spec)
    h = 1e-6
    for i in range(6):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        fd = (quant_energy(PointConfig(up), unit_box(1), spec) - quant_energy(PointConfig(dn), unit_box(1), spec)) / (2 * h)
        assert g[i, 0] == approx(fd, rel=1e-5, abs=1e-9)


def test_quantizer_constant_and_grid_search():
    assert quantizer_constant_1d(2) == approx(1 / 12)
    for n in (1, 2, 3):
        x, e = grid_search_1d(n, 2.0, 120)
        assert np.sort(x) == approx(midpoint_config(n).points[:, 0], abs=1 / 120)
        assert e == approx(1 / (12 * n**2), rel=1e-12)


def test_cells_on_union_split():
    A = box_union([([0.0], 1.0), ([2.0], 1.0)])
    cells = cells_1d(PointConfig([0.2, 1.5, 2.9]), A)
    owners = {}
    for i, lo, hi in cells:
        owners.setdefault(i, []).append((lo, hi))
    # Site 1 sits in the gap and owns pieces of both members.
    assert owners[1] == [(approx(0.85), 1.0), (2.0, approx(2.2))]
    assert owners[0] == [(0.0, approx(0.85))]
    assert owners[2] == [(approx(2.2), 3.0)]


positions = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12)


@settings(max_examples=100, deadline=None)
@given(positions, st.floats(0.1, 10.0), st.floats(0.5, 4.0))
def test_similarity_covariance(xs, c, p):
    spec = QuantSpec(p, quad=Quadrature("exact-1d"))
    e = quant_energy(PointConfig(xs), unit_box(1), spec)
    scaled = quant_energy(PointConfig(np.array(xs) * c), box([0.0], c), spec)
    assert scaled == approx(c ** (p + 1) * e, rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 3.0), min_size=1, max_size=10), st.floats(1.0, 3.0))
def test_union_subadditivity(xs, p):
    a1, a2 = box([0.0], 1.0), box([2.0], 1.0)
    union = box_union([([0.0], 1.0), ([2.0], 1.0)])
    cfg = PointConfig(union.project(np.array(xs)[:, None]))
    spec = QuantSpec(p, quad=Quadrature("exact-1d"))
    whole = quant_energy(cfg, union, spec)
    parts = quant_energy(cfg, a1, spec) + quant_energy(cfg, a2, spec)
    assert whole <= parts * (1 + 1e-12)
    assert whole == approx(parts, rel=1e-12)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
@pytest.mark.parametrize("eta", [None, "1 + x0", "exp(x0)"])
def test_interval_terms_derivatives(p, eta):
    spec = QuantSpec(p, eta=None if eta is None else parse(eta), xi=parse("x0^2"))
    x = np.sort(np.random.default_rng(0).random(7))
    e, g, diag, off = _interval_terms(x, spec, 0.0, 1.0)
    h = 1e-6
    eye = np.eye(7)
    fd = [(_interval_terms(x + h * eye[i], spec, 0, 1, False)[0] - _interval_terms(x - h * eye[i], spec, 0, 1, False)[0]) / (2 * h) for i in range(7)]
    hess = np.array([(_interval_terms(x + h * eye[i], spec, 0, 1)[1] - _interval_terms(x - h * eye[i], spec, 0, 1)[1]) / (2 * h) for i in range(7)])
    assert g == approx(fd, rel=1e-7, abs=1e-9 * np.abs(g).max())
    assert np.diag(diag) + np.diag(off, 1) + np.diag(off, -1) == approx(hess, abs=1e-6 * np.abs(diag).max())


def test_interval_terms_match_closed_form():
    x = np.sort(np.random.default_rng(1).random(9))
    spec = QuantSpec(2.0, quad=Quadrature("exact-1d", 0, 0))
    assert _interval_terms(x, spec, 0.0, 1.0, False)[0] == approx(quant_energy(PointConfig(x), unit_box(1), spec), rel=1e-13)


def test_newton_reaches_midpoints():
    spec = QuantSpec(2.0, quad=Quadrature("exact-1d", 0, 0))
    start = PointConfig(np.random.default_rng(2).random(20))
    res = newton_1d(start, unit_box(1), spec)
    assert np.sort(res.config.points[:, 0]) == approx(midpoint_config(20).points[:, 0], abs=1e-12)
    assert all(b <= a for a, b in zip(res.energies, res.energies[1:]))


def test_newton_weighted_optimum():
    # the optimal energy for weight eta on [0, 1] tends to (int eta^(1/3))^3 / (12 N^2)
    spec = QuantSpec(2.0, eta=parse("1 + x0"))
    n = 400
    res = newton_1d(PointConfig(unit_box(1).sample_quasi_uniform(n, 0)), unit_box(1), spec)
    limit = (0.75 * (2 ** (4 / 3) - 1)) ** 3 / 12
    assert res.energies[-1] * n**2 == approx(limit, rel=1e-4)
    assert res.reason == "step-tol"


def test_newton_keeps_input_order():
    spec = QuantSpec(2.0)
    res = newton_1d(PointConfig([0.9, 0.1, 0.5]), unit_box(1), spec)
    assert res.config.points[:, 0] == approx([5 / 6, 1 / 6, 0.5], abs=1e-12)


def test_newton_rejects_other_regions():
    with pytest.raises(QuantError):
        newton_1d(PointConfig([0.2, 0.4]), circle(), QuantSpec(2.0))
