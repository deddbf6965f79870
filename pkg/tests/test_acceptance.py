"""Acceptance checks.  Each test prints one PASS/FAIL line and asserts the same verdict."""

import os
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from mbgf import (DEFAULT_POLES, LambdaExpansion, LambdaStencil, ModelSpec, OrderSelfEnergy,
                  SecondOrderSelfEnergy, TDA2SelfEnergy, check_sum_rules, convergence_map, exact_evaluator,
                  find_brackets, galitskii_migdal, generate_model, model_g, read_fcidump, scgf2_run,
                  sigma2_analytic, solve_diagonal, solve_fci, solve_matrix, taylor_partial_sum)
from mbgf.dyson import central_bracket, fermi_level


def verdict(number, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def hubbard(t, U, sites=2, electrons=None):
    return generate_model(ModelSpec.hubbard(t, U, sites, electrons))


def roots_per_bracket(ev, q, w_fermi, brackets=None):
    brackets = brackets if brackets is not None else find_brackets(ev, q)
    roots = solve_diagonal(ev, q, brackets, w_fermi=w_fermi)
    counts = [0] * len(brackets)
    for r in roots:
        counts[r.bracket] += 1
    return brackets, counts, roots


def test_criterion_1_exact_oracle():
    start = time.perf_counter()
    ints = hubbard(1.0, 2.0)
    gf = solve_fci(ints)
    ev = exact_evaluator(gf)
    roots = solve_matrix(ev, w_fermi=fermi_level(ints.eps, ints.n_e))
    elapsed = time.perf_counter() - start
    e_err = abs(gf.total_energy - (1 - np.sqrt(5)))
    poles = gf.poles.active()[0]
    found = np.array([r.omega for r in roots])
    pole_err = max(np.min(np.abs(found - p)) for p in poles)
    spurious = max(np.min(np.abs(poles - w)) for w in found)
    ok = e_err < 1e-10 and pole_err < 1e-8 and spurious < 1e-8 and elapsed < 5.0
    verdict(1, ok, f"|E0 - (1 - sqrt5)| = {e_err:.2e}, max pole deviation = {max(pole_err, spurious):.2e}, "
                   f"{elapsed:.2f} s")


def test_criterion_2_sum_rules():
    start = time.perf_counter()
    ints = hubbard(1.0, 2.0)
    ev = exact_evaluator(solve_fci(ints))
    wf = fermi_level(ints.eps, ints.n_e)
    matrix = check_sum_rules(solve_matrix(ev, w_fermi=wf), ints.n_e, ints.m)
    diag = check_sum_rules([r for q in range(ints.m) for r in solve_diagonal(ev, q, w_fermi=wf)])
    elapsed = time.perf_counter() - start
    ok = abs(matrix["ip_deviation"]) < 1e-7 and diag["max_abs_deviation"] < 1e-7 and elapsed < 5.0
    verdict(2, ok, f"|sum_IP F - n_e| = {abs(matrix['ip_deviation']):.2e}, "
                   f"max per-orbital deviation = {diag['max_abs_deviation']:.2e}, {elapsed:.2f} s")


def test_criterion_3_galitskii_migdal():
    worst = 0.0
    for U in (1.0, 2.0, 4.0):
        ints = hubbard(1.0, U)
        gf = solve_fci(ints)
        roots = solve_matrix(exact_evaluator(gf), w_fermi=fermi_level(ints.eps, ints.n_e))
        worst = max(worst, abs(galitskii_migdal(roots, ints) - gf.total_energy))
    verdict(3, worst < 1e-6, f"max |E_GM - E_FCI| over U = 1, 2, 4: {worst:.2e}")


def test_criterion_4_second_order_cross_validation():
    ints = hubbard(1.0, 2.0)
    sing = SecondOrderSelfEnergy(ints).singularities
    cand = np.linspace(sing.min() - 2.0, sing.max() + 2.0, 4001)
    cand = cand[np.min(np.abs(cand[:, None] - sing), axis=1) >= 0.05]
    grid = cand[np.linspace(0, cand.size - 1, 50).astype(int)]
    exp = LambdaExpansion(ints, LambdaStencil(max_order=2))
    fit = exp.coefficients(grid, 2)[2]
    ref = np.array([sigma2_analytic(ints, w) for w in grid])
    dev = float(np.max(np.abs(fit - ref)))
    verdict(4, grid.size == 50 and dev <= 1e-6, f"max |delta2_fit - sigma2| on 50 points = {dev:.2e}")


def test_criterion_5_odd_order_pathology():
    ints = hubbard(1.0, 2.0, 4)  # half filling
    q = ints.homo
    wf = fermi_level(ints.eps, ints.n_e)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ev3 = OrderSelfEnergy(ints, 3, LambdaExpansion(ints, LambdaStencil(max_order=3)))
        br3, counts3, _ = roots_per_bracket(ev3, q, wf)
    c = central_bracket(br3, wf)
    constant_sign = []
    for k, (a, b) in enumerate(br3):
        if k == c:
            continue
        pad = 0.01 * (b - a)
        d2 = np.diff(ev3.diagonal(q, np.linspace(a + pad, b - pad, 201)), 2)
        constant_sign.append(bool(np.all(d2 > 0) or np.all(d2 < 0)))
    empty = [k for k, n in enumerate(counts3) if n == 0 and k != c]
    s2 = SecondOrderSelfEnergy(ints)
    _, counts2, _ = roots_per_bracket(s2, q, wf)
    ok = all(constant_sign) and len(empty) >= 1 and all(n == 1 for n in counts2)
    verdict(5, ok, f"order-3 roots per bracket {counts3} (central {c}), constant-sign second difference "
                   f"{constant_sign}, order-2 roots per bracket {counts2}")


def test_criterion_6_principal_root_convergence():
    ints = hubbard(1.0, 2.0)
    q = ints.homo
    wf = fermi_level(ints.eps, ints.n_e)
    gf = solve_fci(ints)
    poles, res, kinds = gf.poles.active()
    ip = kinds == "IP"
    exact_ip = poles[ip][np.argmax(res[ip][:, q, q])]
    exp = LambdaExpansion(ints, LambdaStencil(max_order=4))
    errors = []
    for n in (2, 3, 4):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            roots = solve_diagonal(OrderSelfEnergy(ints, n, exp), q, w_fermi=wf)
        principal = [r.omega for r in roots if r.principal][0]
        errors.append(abs(principal - exact_ip))
    monotone = errors[0] > errors[1] > errors[2]
    ok = monotone or errors[2] < errors[0]
    verdict(6, ok, "principal HOMO root errors for n = 2, 3, 4: " + ", ".join(f"{e:.2e}" for e in errors))


def test_criterion_7_tda_parity():
    ints = hubbard(1.0, 2.0, 4)
    q = ints.homo
    wf = fermi_level(ints.eps, ints.n_e)
    counts = {}
    for n in (20, 21):
        ev = TDA2SelfEnergy(ints, n)
        br, cnt, _ = roots_per_bracket(ev, q, wf)
        c = central_bracket(br, wf)
        counts[n] = [k for i, k in enumerate(cnt) if i != c]
    w = np.linspace(-6.0, 6.0, 241) + 1.234e-3
    ref = np.array([sigma2_analytic(ints, x) for x in w])
    # "exactly" read as agreement to rounding: relative to max(1, |sigma2|)
    lead = float(np.max(np.abs(TDA2SelfEnergy(ints, 1)(w) - ref) / np.maximum(1.0, np.abs(ref))))
    ok = counts[20] != counts[21] and lead < 1e-12
    verdict(7, ok, f"satellite root counts: 20 cycles {counts[20]}, 21 cycles {counts[21]}; "
                   f"max relative |TDA(1 cycle) - sigma2| = {lead:.1e}")


def test_criterion_8_scgf2_growth():
    ints = hubbard(1.0, 2.0)
    evs, states = scgf2_run(ints, 1)
    n0, n1 = states[0].pole_count, states[1].pole_count
    s2 = SecondOrderSelfEnergy(ints)
    w = np.arange(-6.0, 8.0, 0.01) + 1e-4
    bitwise = all(np.array_equal(evs[0].diagonal(q, w), s2.diagonal(q, w)) for q in range(ints.m))
    ok = n1 > n0 and n1 >= 3 * n0 and bitwise
    verdict(8, ok, f"propagator poles {n0} -> {n1} (x{n1 / n0:.2f}); cycle 0 bitwise equal to sigma2: {bitwise}")


@pytest.mark.skipif(not os.environ.get("MBGF_BH_FCIDUMP"), reason="set MBGF_BH_FCIDUMP to a minimal-basis BH file")
def test_criterion_8_optional_bh_tier():
    ints = read_fcidump(os.environ["MBGF_BH_FCIDUMP"])
    gf = solve_fci(ints)
    _, states = scgf2_run(ints, 1)
    counts = [s.pole_count for s in states]
    ok = (counts == [72, 4314] and gf.n_ip_states == 300 and gf.n_ea_states == 300
          and abs(ints.hf_energy() + 24.752788) < 1e-4 and abs(gf.total_energy + 24.809940) < 1e-4)
    verdict("8-BH", ok, f"poles {counts}, IP/EA states {gf.n_ip_states}/{gf.n_ea_states}, "
                        f"HF {ints.hf_energy():.6f}, FCI {gf.total_energy:.6f}")


def test_criterion_9_taylor_model():
    start = time.perf_counter()
    err0 = abs(taylor_partial_sum(DEFAULT_POLES, 0.0, 19) - model_g(DEFAULT_POLES, 0.0))
    exact = model_g(DEFAULT_POLES, 0.85)
    e11 = abs(taylor_partial_sum(DEFAULT_POLES, 0.85, 11) - exact)
    e19 = abs(taylor_partial_sum(DEFAULT_POLES, 0.85, 19) - exact)
    step = 0.01
    grid = np.round(np.arange(-3.0, 3.0 + step / 2, step), 10)
    lo, hi = convergence_map(DEFAULT_POLES, grid).central
    elapsed = time.perf_counter() - start
    ends = abs(lo + 1.1) <= step and abs(hi - 0.75) <= step
    ok = err0 < 1e-6 and e19 > e11 and ends and elapsed < 1.0
    verdict(9, ok, f"order-19 error at 0: {err0:.1e}; at 0.85 order 11 {e11:.3g} vs order 19 {e19:.3g}; "
                   f"central region ({lo:.2f}, {hi:.2f}) vs (-1.10, 0.75); {elapsed:.2f} s")


def test_criterion_10_determinism(tmp_path):
    commands = [
        ["exact", "--hubbard", "1,2,4,2"],
        ["pt", "--hubbard", "1,2", "--order", "3"],
        ["tda", "--hubbard", "1,2,4", "--cycles", "4"],
        ["scgf2", "--hubbard", "1,2", "--cycles", "1"],
        ["model"],
        ["roots", "--hubbard", "1,2,4,2", "--exact"],
    ]
    differing = []
    for k, argv in enumerate(commands):
        for fmt in ("csv", "json"):
            out = tmp_path / f"run{k}.{fmt}"
            blobs = []
            for _ in range(2):
                subprocess.run([sys.executable, "-m", "mbgf.cli", *argv, "--format", fmt, "--out", str(out)],
                               check=True, capture_output=True)
                blobs.append(out.read_bytes())
            if blobs[0] != blobs[1]:
                differing.append(f"{argv[0]}/{fmt}")
    verdict(10, not differing, f"{2 * len(commands)} outputs compared, differing: {differing or 'none'}")
