"""I-spline basis: construction, boundary values, monotonicity and the
M-spline integral identity."""
import numpy as np
import pytest
from scipy import integrate
from scipy.interpolate import BSpline

from deepict.splines import SplineBasis, SplineConfigError, bspline_basis, build_basis


@pytest.fixture
def basis():
    rng = np.random.default_rng(0)
    return build_basis(rng.uniform(0.2, 8.0, 300), degree=3, n_interior=3)


def test_basis_count(basis):
    assert basis.n_basis == 6
    assert basis(np.array([1.0])).shape == (1, 6)


def test_boundary_values(basis):
    a, b = basis.boundary
    np.testing.assert_allclose(basis(np.array([a])), 0.0, atol=1e-14)
    np.testing.assert_allclose(basis(np.array([b])), 1.0, atol=1e-14)
    np.testing.assert_allclose(basis(np.array([np.inf])), 1.0, atol=1e-14)


def test_clamping_below_a(basis):
    a, _ = basis.boundary
    np.testing.assert_allclose(basis(np.array([0.0, a / 2])), 0.0, atol=1e-14)


def test_degree_one_midpoint():
    """Linear I-spline on (0, 1) with no interior knots: the M-spline is the
    constant density 1, so I(0.5) = 0.5."""
    b = SplineBasis(1, (0.0, 1.0), ())
    assert b.n_basis == 1
    val = b(np.array([0.5]))[0, 0]
    quad, _ = integrate.quad(lambda s: b.mspline(np.array([s]))[0, 0], 0.0, 0.5)
    assert abs(val - 0.5) < 1e-14
    assert abs(val - quad) < 1e-10


def test_monotone_in_t(basis):
    t = np.sort(np.random.default_rng(1).uniform(0, 10, 500))
    M = basis(t)
    assert np.all(np.diff(M, axis=0) >= -1e-14)
    assert np.all((M >= 0) & (M <= 1))


def test_ispline_is_integral_of_mspline(basis):
    a, b = basis.boundary
    grid = np.linspace(a, b, 20001)
    m = basis.mspline(grid)
    running = integrate.cumulative_trapezoid(m, grid, axis=0, initial=0.0)
    np.testing.assert_allclose(basis(grid), running, atol=1e-6)


def test_msplines_have_unit_mass(basis):
    a, b = basis.boundary
    grid = np.linspace(a, b, 20001)
    mass = integrate.trapezoid(basis.mspline(grid), grid, axis=0)
    np.testing.assert_allclose(mass, 1.0, atol=1e-6)


def test_bspline_matches_scipy():
    knots = np.array([0, 0, 0, 0, 1, 2.5, 4, 4, 4, 4.0])
    t = np.linspace(0, 4, 101)
    ours = bspline_basis(t, knots, 4)
    ref = BSpline.design_matrix(t, knots, 3).toarray()
    np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_cumhaz_examples(basis):
    a, b = basis.boundary
    t = np.linspace(0, 9, 50)
    assert np.all(basis.cumhaz(np.zeros(6), t) == 0)
    assert basis.cumhaz(np.ones(6), np.array([b]))[0] == pytest.approx(6.0, abs=1e-12)
    g = np.random.default_rng(2).exponential(size=6)
    assert np.all(np.diff(basis.cumhaz(g, t)) >= -1e-14)


def test_negative_gamma_rejected(basis):
    with pytest.raises(ValueError):
        basis.cumhaz(-np.ones(6), np.array([1.0]))


def test_negative_time_rejected(basis):
    with pytest.raises(ValueError):
        basis(np.array([-0.1]))


def test_config_errors():
    with pytest.raises(SplineConfigError):
        build_basis([1.0, 1.0, np.inf])
    with pytest.raises(SplineConfigError):
        SplineBasis(3, (0.0, 1.0), (0.5, 0.5))
    with pytest.raises(SplineConfigError):
        build_basis([0.0, 1.0], placement="bogus")


def test_ties_nudged_apart():
    times = np.r_[np.full(50, 2.0), 1.0, 3.0]
    b = build_basis(times, n_interior=3)
    assert np.all(np.diff(np.r_[b.boundary[0], b.interior_knots, b.boundary[1]]) > 0)


def test_uniform_placement():
    b = build_basis([0.0, 4.0, 1.0], n_interior=3, placement="uniform")
    np.testing.assert_allclose(b.interior_knots, [1.0, 2.0, 3.0])
