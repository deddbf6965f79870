import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import exact, model
from oracles import fock_green, fock_hamiltonian, particle_number
from mbgf import CapExceededError, SingularFrequencyError, solve_fci
from mbgf.fci import build_hamiltonian, enumerate_sector, exact_self_energy, exact_self_energy_derivative

SYSTEMS = [(1.0, 2.0, 2, None), (1.0, 4.0, 2, None), (1.0, 2.0, 4, 2), (0.7, 3.1, 3, 2), (1.0, 2.0, 4, None)]


@pytest.mark.parametrize("args", SYSTEMS)
def test_green_function_matches_fock_space_oracle(args):
    ints, gf, _ = exact(*args)
    for w in (-3.7, 0.123, 2.9):
        e0, G = fock_green(ints, w)
        assert gf.e0 == pytest.approx(e0, abs=1e-12)
        np.testing.assert_allclose(gf(w), G, atol=1e-11)


def test_dimer_ground_energy(dimer):
    assert solve_fci(dimer).total_energy == pytest.approx(1 - np.sqrt(5), abs=1e-14)


@pytest.mark.parametrize("t, U", [(1.0, 0.5), (0.5, 3.0), (2.0, 1.0)])
def test_dimer_ground_energy_closed_form(t, U):
    gf = solve_fci(model(t, U, 2))
    assert gf.total_energy == pytest.approx(0.5 * (U - np.sqrt(U * U + 16 * t * t)), abs=1e-13)


@pytest.mark.parametrize("args", SYSTEMS)
def test_completeness_and_sector_sizes(args):
    ints, gf, _ = exact(*args)
    assert gf.poles.completeness() == pytest.approx(ints.m, abs=1e-12)
    # each IP/EA residue matrix sums to the occupation / vacancy matrix; the trace is N / (m - N)
    ip = gf.poles.kinds == "IP"
    r = gf.poles.amplitudes
    assert np.sum(r[ip] ** 2) == pytest.approx(ints.n_e, abs=1e-12)
    np.testing.assert_allclose(r.T @ r, np.eye(ints.m), atol=1e-12)
    assert np.all(gf.poles.poles[ip].max() < gf.poles.poles[~ip].min())


def test_sector_hamiltonian_matches_fock_oracle(chain_quarter):
    ints = chain_quarter
    H, _ = fock_hamiltonian(ints)
    n = particle_number(ints.m)
    dets = enumerate_sector(ints.m, ints.n_e)
    Hs = build_hamiltonian(ints, dets)
    e_ref = np.linalg.eigvalsh(H[np.ix_(n == ints.n_e, n == ints.n_e)])
    np.testing.assert_allclose(np.linalg.eigvalsh(Hs), e_ref, atol=1e-12)


def test_noninteracting_limit_has_zero_self_energy(dimer):
    gf = solve_fci(dimer, lam=0.0)
    for w in (-0.3, 0.1, 2.5):
        S = exact_self_energy(dimer.eps, gf(w), w)
        np.testing.assert_allclose(S, 0.0, atol=1e-13)
    poles = gf.poles.active()[0]
    np.testing.assert_allclose(np.unique(np.round(poles, 12)), [0.0, 2.0])


def test_self_energy_is_symmetric_and_real(chain_quarter):
    ints, gf, ev = exact(1.0, 2.0, 4, 2)
    for w in (-1.3, 0.37, 4.1):
        S = ev(w)
        np.testing.assert_allclose(S, S.T, atol=1e-12)
        np.testing.assert_allclose(S, exact_self_energy(ints.eps, gf(w), w), atol=1e-9)


def test_self_energy_derivative_matches_finite_difference():
    ints, gf, ev = exact(1.0, 2.0, 4, 2)
    w, h = 0.37, 1e-5
    fd = (ev(w + h) - ev(w - h)) / (2 * h)
    np.testing.assert_allclose(ev.derivative(w), fd, atol=1e-6)
    # independent route through G^-1 and dG/dw
    np.testing.assert_allclose(exact_self_energy_derivative(gf, w), ev.derivative(w), atol=1e-6)


def test_sector_cap(chain_half):
    with pytest.raises(CapExceededError) as exc:
        solve_fci(chain_half, cap=10)
    assert exc.value.exit_code == 3


def test_green_singular_on_pole(dimer):
    gf = solve_fci(dimer)
    with pytest.raises(SingularFrequencyError):
        gf(gf.poles.poles[0])


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 2.0), st.floats(0.0, 6.0), st.sampled_from([(2, None), (3, 2), (4, 2)]))
def test_spectral_sum_rules_hold_for_random_hubbard(t, U, shape):
    sites, electrons = shape
    ints = model(t, U, sites, electrons)
    gf = solve_fci(ints)
    r = gf.poles.amplitudes
    np.testing.assert_allclose(r.T @ r, np.eye(ints.m), atol=1e-11)
    # the first moment of the spectral function is the one-body Fock-like matrix h + sum_i <pi||qi> n_i
    ip = gf.poles.kinds == "IP"
    D = r[ip].T @ r[ip]
    F = ints.hcore + np.einsum("prqs,rs->pq", ints.v_as, D)
    np.testing.assert_allclose((r * gf.poles.poles[:, None]).T @ r, F, atol=1e-10)


def test_green_derivative_matches_central_difference():
    _, gf, _ = exact(1.0, 2.0, 4, 2)
    w, h = 0.37, 1e-5
    fd = (gf(w + h) - gf(w - h)) / (2 * h)
    an = gf.derivative(w)
    assert np.abs(fd - an).max() <= 1e-6 * np.abs(an).max()
