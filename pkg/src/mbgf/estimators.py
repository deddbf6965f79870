"""scikit-learn style front end: fit a self-energy to an integral set, then query it."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dyson import check_sum_rules, fermi_level, galitskii_migdal, solve_diagonal, solve_matrix
from .errors import InputError
from .fci import DEFAULT_SECTOR_CAP, solve_fci
from .integrals import IntegralSet
from .perturbation import LambdaExpansion, LambdaStencil, OrderSelfEnergy, SecondOrderSelfEnergy
from .resummation import DEFAULT_POLE_CAP, TDA2SelfEnergy, scgf2_run
from .selfenergy import ZeroSelfEnergy, exact_evaluator

__all__ = ["SelfEnergyEstimator"]

METHODS = ("exact", "order", "tda2", "scgf2")


def _frequencies(omega):
    w = np.asarray(omega, dtype=float)
    if w.ndim > 1:
        raise InputError("frequencies must be a scalar or 1-D array")
    w = np.atleast_1d(w)
    if not np.all(np.isfinite(w)):
        raise InputError("frequencies must be finite")
    return w


class SelfEnergyEstimator(BaseEstimator):
    """Build a self-energy for an :class:`IntegralSet` and solve its Dyson equation.

    ``fit(ints)`` sets ``evaluator_``, ``roots_``, ``sum_rules_`` and
    ``energy_`` (Galitskii-Migdal, matrix mode only).  ``transform(omega)``
    returns self-energy matrices and ``predict(omega)`` the propagator
    ``(w - eps - Sigma)^{-1}``.

    ``method`` is one of ``exact``, ``order`` (perturbation order ``order``),
    ``tda2`` (``cycles`` substitutions) or ``scgf2`` (``cycles`` cycles,
    diagonal only).
    """

    def __init__(self, method="exact", order=2, cycles=1, mode="matrix", n_scan=2001,
                 sector_cap=DEFAULT_SECTOR_CAP, pole_cap=DEFAULT_POLE_CAP, stencil_step=0.05):
        self.method = method
        self.order = order
        self.cycles = cycles
        self.mode = mode
        self.n_scan = n_scan
        self.sector_cap = sector_cap
        self.pole_cap = pole_cap
        self.stencil_step = stencil_step

    def _build(self, ints: IntegralSet):
        if self.method == "exact":
            return exact_evaluator(solve_fci(ints, cap=self.sector_cap))
        if self.method == "order":
            if self.order <= 1:
                return ZeroSelfEnergy(ints.eps)
            if self.order == 2:
                return SecondOrderSelfEnergy(ints)
            stencil = LambdaStencil(h=self.stencil_step, max_order=self.order)
            return OrderSelfEnergy(ints, self.order, LambdaExpansion(ints, stencil, cap=self.sector_cap))
        if self.method == "tda2":
            return TDA2SelfEnergy(ints, self.cycles)
        if self.method == "scgf2":
            evaluators, _ = scgf2_run(ints, self.cycles, pole_cap=self.pole_cap)
            return evaluators[-1]
        raise InputError(f"method must be one of {METHODS}, got {self.method!r}")

    def fit(self, ints: IntegralSet, y=None):
        if not isinstance(ints, IntegralSet):
            raise InputError("fit expects an IntegralSet")
        if self.mode not in ("matrix", "diagonal"):
            raise InputError("mode must be 'matrix' or 'diagonal'")
        if self.method == "scgf2" and self.mode == "matrix":
            raise InputError("sc-GF2 is diagonal only; use mode='diagonal'")
        ev = self._build(ints)
        ev.w_fermi = fermi_level(ints.eps, ints.n_e)
        if self.mode == "matrix":
            roots = solve_matrix(ev, n_scan=self.n_scan, w_fermi=ev.w_fermi)
            self.sum_rules_ = check_sum_rules(roots, ints.n_e, ints.m)
            self.energy_ = galitskii_migdal(roots, ints)
        else:
            roots = [r for q in range(ints.m)
                     for r in solve_diagonal(ev, q, n_scan=self.n_scan, w_fermi=ev.w_fermi)]
            self.sum_rules_ = check_sum_rules(roots)
            self.energy_ = None
        self.ints_ = ints
        self.evaluator_ = ev
        self.roots_ = roots
        return self

    def transform(self, omega):
        check_is_fitted(self, "evaluator_")
        return self.evaluator_(_frequencies(omega))

    def predict(self, omega):
        check_is_fitted(self, "evaluator_")
        return np.linalg.inv(self.evaluator_.dyson_matrix(_frequencies(omega)))
