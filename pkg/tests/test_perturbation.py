import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import model
from oracles import lambda_taylor
from mbgf import (IllConditionedStencilError, InputError, LambdaExpansion, LambdaStencil, OrderSelfEnergy,
                  SecondOrderSelfEnergy, SingularFrequencyError, extract_order_corrections, sigma2_analytic)
from mbgf.perturbation import g_dyson_n, second_order_singularities

FREQS = (-2.3, 0.41, 3.3)


@pytest.fixture(scope="module")
def quarter_expansion():
    ints = model(1.0, 2.0, 4, 2)
    return ints, LambdaExpansion(ints, LambdaStencil(max_order=4))


@pytest.mark.parametrize("w", FREQS)
def test_coefficients_match_fock_space_fit(quarter_expansion, w):
    ints, exp = quarter_expansion
    ref = lambda_taylor(ints, w)
    coef = exp.coefficients(w)[:, 0]
    for n, tol in enumerate((1e-12, 1e-12, 1e-9, 1e-7, 1e-5)):
        np.testing.assert_allclose(coef[n], ref[n], atol=tol)


@pytest.mark.parametrize("w", FREQS)
def test_second_order_fit_matches_analytic(quarter_expansion, w):
    ints, exp = quarter_expansion
    np.testing.assert_allclose(exp.coefficients(w, 2)[2, 0], sigma2_analytic(ints, w), atol=1e-10)
    np.testing.assert_allclose(SecondOrderSelfEnergy(ints)(w), sigma2_analytic(ints, w), atol=1e-13)


def test_low_orders_vanish_in_canonical_basis(quarter_expansion):
    _, exp = quarter_expansion
    coef = exp.coefficients(np.array(FREQS), 1)
    assert np.abs(coef[0]).max() < 1e-14
    assert np.abs(coef[1]).max() < 1e-11


def test_third_order_vanishes_at_half_filling():
    ints = model(1.0, 2.0, 4)
    corr = extract_order_corrections(ints, np.array(FREQS), LambdaStencil(max_order=3))
    assert np.abs(corr.delta[3]).max() < 1e-7
    assert np.abs(corr.delta[2]).max() > 0.1


def test_third_order_survives_away_from_half_filling(quarter_expansion):
    _, exp = quarter_expansion
    assert np.abs(exp.coefficients(0.41, 3)[3]).max() > 0.5


def test_error_estimates_are_small_and_finite(quarter_expansion):
    _, exp = quarter_expansion
    coef, err = exp.coefficients(np.array(FREQS), 4, with_error=True)
    assert np.all(np.isfinite(err))
    assert err[:4].max() < 1e-6


def test_second_order_analytic_singular_frequency(chain_quarter):
    w = second_order_singularities(chain_quarter)[0]
    with pytest.raises(SingularFrequencyError):
        sigma2_analytic(chain_quarter, w)


def test_second_order_pole_form(dimer):
    # dimer, U = 2: the only 2p1h/2h1p couplings are U/2 at +-(eps_b - eps_a) + ...
    S2 = SecondOrderSelfEnergy(dimer)
    assert S2.poles.size > 0
    np.testing.assert_allclose(S2.diagonal(0, 0.3), S2(0.3)[0, 0], atol=1e-15)
    h = 1e-6
    fd = (S2(0.3 + h) - S2(0.3 - h)) / (2 * h)
    np.testing.assert_allclose(S2.derivative(0.3), fd, atol=1e-7)


def test_order_self_energy_cumulative(quarter_expansion):
    ints, exp = quarter_expansion
    ev3 = OrderSelfEnergy(ints, 3, exp)
    d = ev3.corrections(0.41)
    np.testing.assert_allclose(ev3(0.41), d.sum(axis=0)[0], atol=1e-14)
    np.testing.assert_allclose(OrderSelfEnergy(ints, 2, exp)(0.41), sigma2_analytic(ints, 0.41), atol=1e-10)
    with pytest.raises(InputError):
        OrderSelfEnergy(ints, 5, exp)


def test_grid_points_near_poles_are_dropped(chain_quarter):
    w = second_order_singularities(chain_quarter)[2]
    with pytest.warns(RuntimeWarning):
        corr = extract_order_corrections(chain_quarter, [w, w + 0.5], LambdaStencil(max_order=2))
    assert corr.dropped.size == 1 and corr.omega.size == 1


@pytest.mark.parametrize("kw, exc", [
    (dict(n_points=12), InputError),
    (dict(max_order=4, n_points=3), InputError),
    (dict(h=-0.1), InputError),
    (dict(h=0.3), InputError),
    (dict(max_order=10), InputError),
    (dict(fit="spline"), InputError),
    (dict(max_order=4, n_points=41), IllConditionedStencilError),
])
def test_invalid_stencils(kw, exc):
    with pytest.raises(exc):
        LambdaStencil(**kw)


def test_stencil_minimum_points():
    s = LambdaStencil(max_order=2)
    assert s.points_count == 13 and 0.0 in s.points
    assert s.condition_number < 1e12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 12), st.floats(-2, 2))
def test_stencil_projector_recovers_polynomials(degree, x0):
    s = LambdaStencil(max_order=6)
    c = np.cos(np.arange(degree + 1) + x0)
    vals = np.polynomial.polynomial.polyval(s.unit_points, c)
    np.testing.assert_allclose((s.projector() @ vals)[: degree + 1], c, atol=1e-8)


def test_g_dyson_singular(dimer):
    S2 = SecondOrderSelfEnergy(dimer)
    G = g_dyson_n(S2, 0.3)
    np.testing.assert_allclose(G, np.linalg.inv(S2.dyson_matrix(0.3)), atol=1e-14)


def test_third_order_leaves_a_satellite_bracket_without_roots(quarter_expansion):
    import warnings
    from mbgf import find_brackets, solve_diagonal
    from mbgf.dyson import central_bracket, fermi_level
    ints, exp = quarter_expansion
    q = ints.homo
    wf = fermi_level(ints.eps, ints.n_e)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ev3 = OrderSelfEnergy(ints, 3, exp)
        br = find_brackets(ev3, q)
        roots = solve_diagonal(ev3, q, br, w_fermi=wf)
    counts = [sum(r.bracket == k for r in roots) for k in range(len(br))]
    c = central_bracket(br, wf)
    assert counts[c] >= 1
    assert any(n == 0 for k, n in enumerate(counts) if k != c)
    # order 2 is monotone between poles: exactly one root per bracket
    s2 = SecondOrderSelfEnergy(ints)
    roots2 = solve_diagonal(s2, q, w_fermi=wf)
    assert len(roots2) == s2.singularities_for(q).size + 1


def test_stencil_spacing_robustness(chain_quarter):
    w = np.array(FREQS)
    a = LambdaExpansion(chain_quarter, LambdaStencil(h=0.05, max_order=3)).coefficients(w)
    b = LambdaExpansion(chain_quarter, LambdaStencil(h=0.025, max_order=3)).coefficients(w)
    np.testing.assert_allclose(a[2:], b[2:], atol=1e-6)
