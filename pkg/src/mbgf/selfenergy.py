"""Frequency-dependent self-energy evaluators.

Every evaluator maps real frequencies to real symmetric ``m x m`` matrices and
knows the frequencies where it is singular; the Dyson solvers only rely on
this interface.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, SingularFrequencyError

__all__ = [
    "SelfEnergy",
    "PoleSelfEnergy",
    "DiagonalPoleSelfEnergy",
    "ZeroSelfEnergy",
    "exact_evaluator",
    "merge_close",
    "pole_sum",
]

MERGE_TOL = 1e-10
DECOUPLED = 1e-20


def merge_close(values, tol=MERGE_TOL):
    """Sorted copy of ``values`` with runs closer than ``tol`` replaced by their mean."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        return v
    out, run = [], [v[0]]
    for x in v[1:]:
        if x - run[-1] < tol:
            run.append(x)
        else:
            out.append(np.mean(run))
            run = [x]
    out.append(np.mean(run))
    return np.array(out)


def pole_sum(omega, poles, strengths, power=1):
    """``sum_k strengths[k] / (omega - poles[k])**power`` for a 1-D frequency array."""
    d = omega[:, None] - poles[None, :]
    if np.any(d == 0.0):
        raise SingularFrequencyError("frequency coincides with a self-energy pole")
    return (d ** (-power)) @ strengths


class SelfEnergy:
    """Base class.

    Subclasses implement :meth:`evaluate` for a 1-D array of frequencies and
    set ``singularities`` (sorted).  ``monotone`` promises that every diagonal
    element is strictly decreasing between consecutive singularities.
    Root scans stay at least ``reliable_distance`` away from singularities.
    """

    provenance = "generic"
    monotone = False
    derivative_step = 1e-6
    reliable_distance = 0.0

    def __init__(self, eps):
        self.eps = np.asarray(eps, dtype=float)
        self.singularities = np.zeros(0)

    @property
    def m(self) -> int:
        return self.eps.shape[0]

    def evaluate(self, omega: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        out = self.evaluate(np.atleast_1d(w).ravel())
        return out.reshape(w.shape + (self.m, self.m))

    def diagonal(self, q: int, omega):
        return self(omega)[..., q, q]

    def derivative(self, omega):
        """Central difference with step ``derivative_step``."""
        w = np.asarray(omega, dtype=float)
        h = self.derivative_step
        return (self(w + h) - self(w - h)) / (2.0 * h)

    def diagonal_derivative(self, q: int, omega):
        return self.derivative(omega)[..., q, q]

    def singularities_for(self, q: int | None = None):
        return self.singularities

    def dyson_matrix(self, omega):
        """``omega - eps - Sigma(omega)``, the matrix whose null vectors are Dyson orbitals."""
        w = np.asarray(omega, dtype=float)
        S = self(w)
        eye = np.eye(self.m)
        return w[..., None, None] * eye - np.diag(self.eps) - S


class ZeroSelfEnergy(SelfEnergy):
    """The mean-field limit, Sigma = 0."""

    provenance = "zeroth-order"
    monotone = True

    def evaluate(self, omega):
        return np.zeros((omega.size, self.m, self.m))

    def derivative(self, omega):
        w = np.asarray(omega, dtype=float)
        return np.zeros(w.shape + (self.m, self.m))


class PoleSelfEnergy(SelfEnergy):
    """``Sigma(w) = sigma_inf + sum_k c_k c_k^T / (w - s_k)``.

    ``couplings`` has shape ``(m, K)``.  Residues are positive semidefinite, so
    the diagonal is monotonically decreasing between poles and the derivative
    is available in closed form.
    """

    monotone = True

    def __init__(self, eps, poles, couplings, sigma_inf=None, provenance="poles"):
        super().__init__(eps)
        poles = np.asarray(poles, dtype=float)
        couplings = np.asarray(couplings, dtype=float).reshape(self.m, poles.size)
        order = np.argsort(poles, kind="stable")
        self.poles = poles[order]
        self.couplings = couplings[:, order]
        self.sigma_inf = np.zeros((self.m, self.m)) if sigma_inf is None else np.asarray(sigma_inf)
        self.provenance = provenance
        self.singularities = merge_close(self.poles)

    def _inverse_denominators(self, omega, power):
        d = omega[:, None] - self.poles[None, :]
        if np.any(d == 0.0):
            raise SingularFrequencyError("frequency coincides with a self-energy pole")
        return d ** (-power)

    def evaluate(self, omega):
        return self.dynamic(omega) + self.sigma_inf

    def dynamic(self, omega):
        """Frequency-dependent part (``Sigma - sigma_inf``) for a 1-D frequency array."""
        r = self._inverse_denominators(omega, 1)
        C = self.couplings
        return np.einsum("wk,pk,qk->wpq", r, C, C)

    def derivative(self, omega):
        w = np.asarray(omega, dtype=float)
        r = self._inverse_denominators(np.atleast_1d(w).ravel(), 2)
        C = self.couplings
        out = -np.einsum("wk,pk,qk->wpq", r, C, C)
        return out.reshape(w.shape + (self.m, self.m))

    def diagonal(self, q, omega):
        w = np.asarray(omega, dtype=float)
        r = self._inverse_denominators(np.atleast_1d(w).ravel(), 1)
        out = r @ (self.couplings[q] ** 2) + self.sigma_inf[q, q]
        return out.reshape(w.shape)

    def diagonal_derivative(self, q, omega):
        w = np.asarray(omega, dtype=float)
        r = self._inverse_denominators(np.atleast_1d(w).ravel(), 2)
        return -(r @ (self.couplings[q] ** 2)).reshape(w.shape)

    def singularities_for(self, q=None):
        if q is None:
            return self.singularities
        keep = self.couplings[q] ** 2 > DECOUPLED
        return merge_close(self.poles[keep])


class DiagonalPoleSelfEnergy(SelfEnergy):
    """Diagonal self-energy with per-orbital pole lists ``(poles, strengths)``."""

    monotone = True

    def __init__(self, eps, terms, sigma_inf=None, provenance="diagonal-poles"):
        super().__init__(eps)
        if len(terms) != self.m:
            raise InputError("one (poles, strengths) pair per spin-orbital is required")
        self.terms = []
        for poles, strengths in terms:
            poles = np.asarray(poles, dtype=float)
            strengths = np.asarray(strengths, dtype=float)
            order = np.argsort(poles, kind="stable")
            self.terms.append((poles[order], strengths[order]))
            if np.any(strengths < 0):
                self.monotone = False
        self.sigma_inf = np.zeros(self.m) if sigma_inf is None else np.asarray(sigma_inf, dtype=float)
        self.provenance = provenance
        self.singularities = merge_close(np.concatenate([t[0] for t in self.terms]))

    @property
    def pole_count(self) -> int:
        return int(sum(t[0].size for t in self.terms))

    def _diag(self, q, omega, power):
        poles, strengths = self.terms[q]
        return pole_sum(omega, poles, strengths, power)

    def evaluate(self, omega):
        out = np.zeros((omega.size, self.m, self.m))
        for q in range(self.m):
            out[:, q, q] = self._diag(q, omega, 1) + self.sigma_inf[q]
        return out

    def diagonal(self, q, omega):
        w = np.asarray(omega, dtype=float)
        return (self._diag(q, np.atleast_1d(w).ravel(), 1) + self.sigma_inf[q]).reshape(w.shape)

    def diagonal_derivative(self, q, omega):
        w = np.asarray(omega, dtype=float)
        return -self._diag(q, np.atleast_1d(w).ravel(), 2).reshape(w.shape)

    def derivative(self, omega):
        w = np.asarray(omega, dtype=float)
        flat = np.atleast_1d(w).ravel()
        out = np.zeros((flat.size, self.m, self.m))
        for q in range(self.m):
            out[:, q, q] = -self._diag(q, flat, 2)
        return out.reshape(w.shape + (self.m, self.m))

    def singularities_for(self, q=None):
        if q is None:
            return self.singularities
        poles, strengths = self.terms[q]
        return merge_close(poles[strengths != 0.0])


def exact_evaluator(gf, completeness_tol=1e-8) -> PoleSelfEnergy:
    """Exact self-energy of a :class:`~mbgf.fci.GreensFunction` in pole form.

    With transition vectors as columns of ``X`` (``X X^T = 1`` by
    completeness) and ``Omega`` the diagonal of pole frequencies, partitioning
    the resolvent of ``Omega`` onto the span of ``X^T`` and its orthogonal
    complement ``Q`` gives

        Sigma(w) = X Omega X^T - eps + B (w - Q^T Omega Q)^{-1} B^T,
        B = X Omega Q,

    which equals ``w - eps - G(w)^{-1}`` but stays finite at poles of ``G``.
    """
    X = gf.poles.amplitudes.T
    Om = gf.poles.poles
    m = X.shape[0]
    dev = np.max(np.abs(X @ X.T - np.eye(m)))
    if dev > completeness_tol:
        raise InputError(f"transition amplitudes are incomplete (deviation {dev:.2e})")
    Qfull, _ = np.linalg.qr(X.T, mode="complete")
    Q = Qfull[:, m:]
    inner = Q.T @ (Om[:, None] * Q)
    s, V = np.linalg.eigh(0.5 * (inner + inner.T))
    B = (X * Om) @ Q @ V
    sigma_inf = (X * Om) @ X.T - np.diag(gf.eps)
    sigma_inf = 0.5 * (sigma_inf + sigma_inf.T)
    keep = np.sum(B**2, axis=0) > DECOUPLED
    ev = PoleSelfEnergy(gf.eps, s[keep], B[:, keep], sigma_inf, provenance="exact")
    ev.green = gf
    return ev
