import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import exact
from mbgf import PoleSelfEnergy, check_sum_rules, find_brackets, galitskii_migdal, solve_diagonal, solve_matrix
from mbgf.dyson import central_bracket, fermi_level, residue
from mbgf.fci import exact_self_energy_derivative
from mbgf.selfenergy import SelfEnergy, ZeroSelfEnergy

EXACT_SYSTEMS = [(1.0, 2.0, 2, None), (1.0, 4.0, 2, None), (1.0, 2.0, 4, 2), (1.0, 2.0, 4, None)]


@pytest.mark.parametrize("args", EXACT_SYSTEMS)
def test_matrix_roots_reproduce_fci_poles(args):
    ints, gf, ev = exact(*args)
    roots = solve_matrix(ev, w_fermi=fermi_level(ints.eps, ints.n_e))
    poles, res, kinds = gf.poles.active(1e-10)
    # degenerate roots are reported one per Dyson orbital
    got = np.array([r.omega for r in roots])
    ranks = [int(np.sum(np.linalg.eigvalsh(R) > 1e-6 * np.trace(R))) for R in res]
    ref = np.repeat(poles, ranks)
    np.testing.assert_allclose(np.sort(got), np.sort(ref), atol=1e-10)
    # residue traces of the merged groups
    for r in roots:
        k = np.argmin(np.abs(poles - r.omega))
        assert r.kind == kinds[k]
    rules = check_sum_rules(roots, ints.n_e, ints.m)
    assert abs(rules["ip_deviation"]) < 1e-8 and abs(rules["total_deviation"]) < 1e-8
    assert galitskii_migdal(roots, ints) == pytest.approx(gf.total_energy, abs=1e-8)


def test_degenerate_roots_are_grouped(dimer):
    _, _, ev = exact(1.0, 2.0, 2)
    roots = solve_matrix(ev, w_fermi=fermi_level(dimer.eps, dimer.n_e))
    assert len(roots) == 8 and all(r.degeneracy == 2 for r in roots)
    for a, b in zip(roots[::2], roots[1::2]):
        assert a.omega == pytest.approx(b.omega, abs=1e-12)
        assert abs(a.vector @ b.vector) < 1e-10


def test_zero_self_energy_roots_are_orbital_energies(chain_quarter):
    ev = ZeroSelfEnergy(chain_quarter.eps)
    for q in range(chain_quarter.m):
        roots = solve_diagonal(ev, q)
        assert len(roots) == 1
        assert roots[0].omega == pytest.approx(chain_quarter.eps[q], abs=1e-12)
        assert roots[0].residue == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-3, 3), st.floats(0.05, 2))
def test_single_pole_matches_quadratic(e, s, c):
    ev = PoleSelfEnergy([e], [s], [[c]])
    roots = solve_diagonal(ev, 0)
    # (w - e)(w - s) = c^2
    disc = np.sqrt((e - s) ** 2 + 4 * c * c)
    ref = np.array([(e + s - disc) / 2, (e + s + disc) / 2])
    np.testing.assert_allclose([r.omega for r in roots], ref, atol=1e-9)
    F = 1.0 / (1.0 + c * c / (ref - s) ** 2)
    np.testing.assert_allclose([r.residue for r in roots], F, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10**6))
def test_diagonal_pole_form_roots_interlace(k, seed):
    rng = np.random.default_rng(seed)
    poles = np.sort(rng.uniform(-4, 4, k))
    if k > 1 and np.min(np.diff(poles)) < 1e-2:
        poles = poles + 0.05 * np.arange(k)
    ev = PoleSelfEnergy([rng.normal()], poles, rng.uniform(0.1, 1.0, (1, k)))
    roots = solve_diagonal(ev, 0)
    w = np.array([r.omega for r in roots])
    assert len(roots) == k + 1
    assert np.all(w[:-1] < poles) and np.all(poles < w[1:])
    assert sum(r.residue for r in roots) == pytest.approx(1.0, abs=1e-8)
    M = w - ev.eps[0] - ev.diagonal(0, w)
    assert np.abs(M).max() < 1e-9


def test_diagonal_exact_sum_rules():
    ints, _, ev = exact(1.0, 2.0, 4, 2)
    roots = [r for q in range(ints.m) for r in solve_diagonal(ev, q)]
    assert check_sum_rules(roots)["max_abs_deviation"] < 1e-8
    # one principal root per orbital
    for q in range(ints.m):
        assert sum(r.principal for r in roots if r.orbital == q) == 1


class _NumericOnly(SelfEnergy):
    """Wraps an evaluator but hides its analytic derivative."""

    def __init__(self, inner):
        super().__init__(inner.eps)
        self.inner = inner
        self.singularities = inner.singularities

    def evaluate(self, omega):
        return self.inner.evaluate(omega)

    def singularities_for(self, q=None):
        return self.inner.singularities_for(q)


def test_numeric_residue_matches_analytic():
    ints, gf, ev = exact(1.0, 2.0, 4, 2)
    q = ints.homo
    root = [r for r in solve_diagonal(ev, q) if r.principal][0]
    F_num, err = residue(_NumericOnly(ev), root.omega, q=q)
    assert F_num == pytest.approx(root.residue, abs=1e-7)
    assert err < 1e-6
    d = exact_self_energy_derivative(gf, root.omega)[q, q]
    assert root.residue == pytest.approx(1.0 / (1.0 - d), abs=1e-6)


def test_brackets_cover_all_roots():
    ints, _, ev = exact(1.0, 2.0, 4, 2)
    br = find_brackets(ev, ints.homo)
    sing = ev.singularities_for(ints.homo)
    assert len(br) == sing.size + 1
    wf = fermi_level(ints.eps, ints.n_e)
    c = central_bracket(br, wf)
    assert br[c][0] < wf < br[c][1]


def test_fermi_level_handles_positive_ionization():
    eps = np.array([0.5, 0.5, 3.0, 3.0])
    assert fermi_level(eps, 2) == pytest.approx(1.75)
    assert fermi_level(np.array([-1.0, -1.0, 1.0, 1.0]), 2) == 0.0


def test_gm_energy_of_hf_reference(chain_quarter):
    # with Sigma = 0 the matrix roots are orbitals and GM gives the mean-field energy
    ev = ZeroSelfEnergy(chain_quarter.eps)
    roots = solve_matrix(ev, w_fermi=fermi_level(chain_quarter.eps, chain_quarter.n_e))
    assert galitskii_migdal(roots, chain_quarter) == pytest.approx(chain_quarter.hf_energy(), abs=1e-10)
