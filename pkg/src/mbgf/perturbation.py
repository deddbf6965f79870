"""Order-by-order self-energy corrections.

``delta_n(w)`` is the n-th Taylor coefficient in ``lam`` of the exact
self-energy of ``H0 + lam (H - H0)``.  It is extracted by fitting a polynomial
in ``lam`` to exact self-energies on a symmetric stencil.  Because the
radius of convergence in ``lam`` shrinks to zero at the zeroth-order
many-body frequencies, the stencil is rescaled per frequency: its half-width
is kept below ``safety * d / (2 gamma)`` where ``d`` is the distance to the
nearest coupled zeroth-order frequency and ``gamma`` bounds how fast those
frequencies move with ``lam``.  Scales are quantized to powers of two so the
exact solutions can be cached.

The analytic second-order self-energy is provided as an independent check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditionedStencilError, InputError, SingularFrequencyError
from .fci import DEFAULT_SECTOR_CAP, SectorCache, solve_fci
from .integrals import IntegralSet
from .selfenergy import (
    DiagonalPoleSelfEnergy,
    PoleSelfEnergy,
    SelfEnergy,
    exact_evaluator,
    merge_close,
)

__all__ = [
    "MAX_ORDER",
    "second_order_terms",
    "SecondOrderSelfEnergy",
    "sigma2_analytic",
    "second_order_singularities",
    "LambdaStencil",
    "SingularityCatalogue",
    "LambdaExpansion",
    "OrderCorrections",
    "extract_order_corrections",
    "OrderSelfEnergy",
    "g_dyson_n",
]

MAX_ORDER = 9
COUPLING_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# analytic second order
# ---------------------------------------------------------------------------

def second_order_terms(ints: IntegralSet):
    """Poles and coupling vectors of the second-order self-energy.

    Returns ``(poles, couplings, diagonal_terms)``: ``couplings[:, k]`` is
    ``<ab||p i>`` for a 2p1h pole ``e_a + e_b - e_i`` (``a < b``) or
    ``<ij||p a>`` for a 2h1p pole ``e_i + e_j - e_a`` (``i < j``), and
    ``diagonal_terms[q]`` lists ``(poles, v*v)`` for the nonzero couplings of
    orbital ``q`` in the same order.
    """
    eps, v = ints.eps, ints.v_as
    occ, vir = list(ints.occ), list(ints.vir)
    poles, cols = [], []
    for i in occ:
        for ai, a in enumerate(vir):
            for b in vir[ai + 1:]:
                poles.append((eps[a] + eps[b]) - eps[i])
                cols.append(v[a, b, :, i])
    for ii, i in enumerate(occ):
        for j in occ[ii + 1:]:
            for a in vir:
                poles.append((eps[i] + eps[j]) - eps[a])
                cols.append(v[i, j, :, a])
    poles = np.array(poles)
    C = np.array(cols).T.reshape(ints.m, len(poles))
    diag = []
    for q in range(ints.m):
        c = C[q]
        nz = c != 0.0
        diag.append((poles[nz], c[nz] * c[nz]))
    return poles, C, diag


class SecondOrderSelfEnergy(PoleSelfEnergy):
    """Analytic second-order self-energy in pole form."""

    def __init__(self, ints: IntegralSet):
        poles, C, diag = second_order_terms(ints)
        keep = np.sum(C**2, axis=0) > 0.0
        super().__init__(ints.eps, poles[keep], C[:, keep], provenance="order-2")
        self.ints = ints
        self.order = 2
        self._diagonal_view = DiagonalPoleSelfEnergy(ints.eps, diag)

    def diagonal(self, q, omega):
        return self._diagonal_view.diagonal(q, omega)

    def diagonal_derivative(self, q, omega):
        return self._diagonal_view.diagonal_derivative(q, omega)


def second_order_singularities(ints: IntegralSet, q: int | None = None):
    """2p1h / 2h1p orbital-energy differences with a nonzero coupling (to ``q``)."""
    return SecondOrderSelfEnergy(ints).singularities_for(q)


def sigma2_analytic(ints: IntegralSet, omega: float):
    """Second-order self-energy matrix at one frequency, summed term by term."""
    eps, v = ints.eps, ints.v_as
    o, u = ints.occ, ints.vir
    d1 = omega + eps[o][:, None, None] - eps[u][None, :, None] - eps[u][None, None, :]
    d2 = omega + eps[u][:, None, None] - eps[o][None, :, None] - eps[o][None, None, :]
    n1 = np.einsum("qiab,abpi->iabpq", v[:, o][:, :, u][:, :, :, u], v[np.ix_(u, u, range(ints.m), o)])
    n2 = np.einsum("qaij,ijpa->aijpq", v[:, u][:, :, o][:, :, :, o], v[np.ix_(o, o, range(ints.m), u)])
    # only terms with nonzero numerators can diverge
    live1 = np.any(n1 != 0.0, axis=(3, 4))
    live2 = np.any(n2 != 0.0, axis=(3, 4))
    if np.any(np.abs(d1[live1]) < 1e-12) or np.any(np.abs(d2[live2]) < 1e-12):
        raise SingularFrequencyError(f"omega = {omega} is a second-order pole")
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(live1, 1.0 / d1, 0.0)
        r2 = np.where(live2, 1.0 / d2, 0.0)
    S = 0.5 * np.einsum("iabpq,iab->pq", n1, r1) + 0.5 * np.einsum("aijpq,aij->pq", n2, r2)
    return 0.5 * (S + S.T)


# ---------------------------------------------------------------------------
# lambda stencil
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaStencil:
    """Symmetric, uniformly spaced ``lam`` points ``j * h`` for ``|j| <= n_points // 2``.

    ``degree`` is the polynomial degree of the least-squares fit (default:
    interpolation).  The fit is done in the scaled variable ``lam / lam_max``.
    """

    h: float = 0.05
    max_order: int = 4
    n_points: int | None = None
    degree: int | None = None
    fit: str = "vandermonde-poly"

    def __post_init__(self):
        if self.fit != "vandermonde-poly":
            raise InputError(f"unsupported stencil fit {self.fit!r}")
        if not 0 <= self.max_order <= MAX_ORDER:
            raise InputError(f"order must lie in [0, {MAX_ORDER}]")
        if self.h <= 0:
            raise InputError("stencil spacing must be positive")
        if self.points_count % 2 == 0:
            raise InputError("stencil needs an odd point count to include lam = 0")
        if self.points_count < self.max_order + 1:
            raise InputError("stencil has fewer points than max_order + 1")
        if not self.max_order <= self.fit_degree < self.points_count:
            raise InputError("fit degree must lie in [max_order, n_points - 1]")
        if self.half_width > 1.5:
            raise InputError("stencil extends beyond |lam| = 1.5")
        cond = self.condition_number
        if cond > 1e12:
            raise IllConditionedStencilError(
                f"stencil condition number {cond:.2e} > 1e12; use a smaller max_order"
            )

    @property
    def points_count(self) -> int:
        if self.n_points is not None:
            return self.n_points
        return 2 * max(self.max_order, 6) + 1

    @property
    def fit_degree(self) -> int:
        return self.points_count - 1 if self.degree is None else self.degree

    @property
    def half_width(self) -> float:
        return self.h * (self.points_count // 2)

    @property
    def unit_points(self) -> np.ndarray:
        J = self.points_count // 2
        return np.arange(-J, J + 1) / J

    @property
    def points(self) -> np.ndarray:
        return self.half_width * self.unit_points

    def _vander(self, degree):
        return np.vander(self.unit_points, degree + 1, increasing=True)

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self._vander(self.fit_degree)))

    def projector(self, degree=None) -> np.ndarray:
        """Rows map stencil values to scaled Taylor coefficients."""
        return np.linalg.pinv(self._vander(self.fit_degree if degree is None else degree))


# ---------------------------------------------------------------------------
# zeroth-order many-body frequencies
# ---------------------------------------------------------------------------

class SingularityCatalogue:
    """Zeroth-order N-1 / N+1 determinant frequencies grouped by excitation rank.

    The rank counts particle-hole pairs beyond the Koopmans configuration
    (rank 1 = 2h1p or 2p1h).  The second- and third-order self-energies are
    singular only at the coupled rank-1 frequencies; order ``n >= 4`` adds
    frequencies of rank up to ``n // 2``.  The full non-Koopmans set bounds
    the singularities of the exact self-energy for small ``lam``.
    """

    def __init__(self, ints: IntegralSet, cache: SectorCache):
        self.ints = ints
        n = ints.n_e
        ref = (1 << n) - 1
        e_ref = float(np.sum(ints.eps[:n]))
        sz0 = 0.5 * ints.ms2
        freqs, ranks = [], []
        for n_target, dsz in ((n - 1, -0.5), (n - 1, 0.5), (n + 1, -0.5), (n + 1, 0.5)):
            dets, _, d0 = cache.get(n_target, sz0 + dsz)
            if not dets:
                continue
            if n_target < n:
                freqs.append(e_ref - d0)
                ranks.append([bin(d & ~ref).count("1") for d in dets])
            else:
                freqs.append(d0 - e_ref)
                ranks.append([bin(~d & ref).count("1") for d in dets])
        self.freq = np.concatenate(freqs)
        self.rank = np.concatenate([np.asarray(r, dtype=int) for r in ranks])
        self.second_order = SecondOrderSelfEnergy(ints)

    def frequencies(self, max_rank: int | None = None):
        """Non-Koopmans frequencies of rank ``1 .. max_rank`` (all if None)."""
        sel = self.rank >= 1
        if max_rank is not None:
            sel &= self.rank <= max_rank
        return merge_close(self.freq[sel])

    def for_order(self, n: int, q: int | None = None):
        if n < 2:
            return np.zeros(0)
        base = self.second_order.singularities_for(q)
        if n < 4:
            return base
        return merge_close(np.concatenate([base, self.frequencies(n // 2)]))


# ---------------------------------------------------------------------------
# lambda expansion of the exact self-energy
# ---------------------------------------------------------------------------

class LambdaExpansion:
    """Taylor coefficients of the exact self-energy in ``lam`` at arbitrary frequencies."""

    max_level = 40

    def __init__(self, ints: IntegralSet, stencil: LambdaStencil | None = None,
                 safety: float = 0.5, cap: int = DEFAULT_SECTOR_CAP):
        self.ints = ints
        self.stencil = stencil or LambdaStencil()
        self.safety = safety
        self.cache = SectorCache(ints, cap)
        self.catalogue = SingularityCatalogue(ints, self.cache)
        self.singular_set = self.catalogue.frequencies()
        self.gamma = self._gamma()
        self._proj = self.stencil.projector()
        K = self.stencil.fit_degree
        self._proj_low = self.stencil.projector(K - 2) if K - 2 >= self.stencil.max_order else None
        self._evaluators = {}
        self._static = None
        self.solves = 0

    def _gamma(self):
        """Largest spread of ``H - H0`` over the N-1, N, N+1 sectors (spectral norm)."""
        n = self.ints.n_e
        sz0 = 0.5 * self.ints.ms2
        best = 0.0
        for n_t, sz in ((n, sz0), (n - 1, sz0 - 0.5), (n - 1, sz0 + 0.5),
                        (n + 1, sz0 - 0.5), (n + 1, sz0 + 0.5)):
            dets, H, d0 = self.cache.get(n_t, sz)
            if not dets:
                continue
            W = H - np.diag(d0)
            W = W - np.mean(np.diagonal(W)) * np.eye(len(dets))
            best = max(best, float(np.linalg.norm(W, 2)))
        return max(best, 1e-12)

    def distance(self, omega):
        omega = np.asarray(omega, dtype=float)
        if self.singular_set.size == 0:
            return np.full(omega.shape, np.inf)
        return np.min(np.abs(omega[..., None] - self.singular_set), axis=-1)

    def levels(self, omega):
        """Power-of-two reduction level of the stencil for each frequency."""
        target = self.safety * self.distance(omega) / (2.0 * self.gamma)
        with np.errstate(divide="ignore"):
            k = np.ceil(np.log2(self.stencil.half_width / target))
        return np.clip(np.nan_to_num(k, posinf=self.max_level), 0, self.max_level).astype(int)

    def evaluators(self, level: int):
        if level not in self._evaluators:
            lams = self.stencil.points * 2.0 ** (-level)
            evs = []
            for lam in lams:
                if lam == 0.0:
                    evs.append(None)
                    continue
                evs.append(exact_evaluator(solve_fci(self.ints, lam, cache=self.cache)))
                self.solves += 1
            self._evaluators[level] = evs
        return self._evaluators[level]

    def _values(self, level, omega):
        """Frequency-dependent parts of the stencil self-energies, ``(J, W, m, m)``."""
        out = np.zeros((len(self.stencil.points), omega.size, self.ints.m, self.ints.m))
        for j, ev in enumerate(self.evaluators(level)):
            if ev is not None:
                out[j] = ev.dynamic(omega)
        return out

    def static_coefficients(self):
        """Taylor coefficients of the frequency-independent part (full stencil width).

        The static part is a ground-state property that is analytic well beyond
        the frequency-dependent radius, and fitting it separately avoids
        losing digits to cancellation at tiny ``lam``.
        """
        if self._static is None:
            vals = np.array([np.zeros((self.ints.m, self.ints.m)) if ev is None else ev.sigma_inf
                             for ev in self.evaluators(0)])
            n = np.arange(self.stencil.max_order + 1)
            a = np.einsum("nj,jpq->npq", self._proj[: n.size], vals)
            b = None
            if self._proj_low is not None:
                b = np.einsum("nj,jpq->npq", self._proj_low[: n.size], vals)
            scale = self.stencil.half_width ** (-n.astype(float))
            self._static = (a * scale[:, None, None],
                            None if b is None else np.abs(a - b) * scale[:, None, None])
        return self._static

    def stencil_distance(self, omega):
        """Distance from each frequency to the nearest pole of any stencil self-energy used."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        lv = self.levels(omega)
        dist = np.full(omega.shape, np.inf)
        for level in np.unique(lv):
            sel = lv == level
            for ev in self.evaluators(int(level)):
                if ev is not None and ev.poles.size:
                    d = np.min(np.abs(omega[sel, None] - ev.poles), axis=1)
                    dist[sel] = np.minimum(dist[sel], d)
        return dist

    def coefficients(self, omega, max_order: int | None = None, with_error: bool = False):
        """Array ``(max_order + 1, W, m, m)`` of ``delta_n`` (optionally with error estimates)."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float)).ravel()
        n_max = self.stencil.max_order if max_order is None else max_order
        if n_max > self.stencil.max_order:
            raise InputError(f"stencil supports orders up to {self.stencil.max_order}")
        m = self.ints.m
        coef = np.zeros((n_max + 1, omega.size, m, m))
        err = np.zeros_like(coef) if with_error else None
        lv = self.levels(omega)
        orders = np.arange(n_max + 1)
        for level in np.unique(lv):
            sel = np.flatnonzero(lv == level)
            vals = self._values(int(level), omega[sel])
            lam_max = self.stencil.half_width * 2.0 ** (-int(level))
            scale = lam_max ** (-orders.astype(float))
            a = np.einsum("nj,jwpq->nwpq", self._proj[: n_max + 1], vals)
            coef[:, sel] = a * scale[:, None, None, None]
            if with_error:
                if self._proj_low is None:
                    err[:, sel] = np.nan
                else:
                    b = np.einsum("nj,jwpq->nwpq", self._proj_low[: n_max + 1], vals)
                    err[:, sel] = np.abs(a - b) * scale[:, None, None, None]
        static, static_err = self.static_coefficients()
        coef += static[: n_max + 1, None]
        if with_error:
            err += np.nan if static_err is None else static_err[: n_max + 1, None]
        coef = 0.5 * (coef + np.swapaxes(coef, -1, -2))
        return (coef, err) if with_error else coef


@dataclass
class OrderCorrections:
    """Per-order corrections on a frequency grid (points too close to a pole are dropped)."""

    omega: np.ndarray
    delta: np.ndarray
    error: np.ndarray
    dropped: np.ndarray
    condition_number: float
    levels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def max_order(self) -> int:
        return self.delta.shape[0] - 1

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.delta, axis=0)


def extract_order_corrections(ints: IntegralSet, omega_grid, stencil: LambdaStencil | None = None,
                              margin: float = 1e-6, expansion: LambdaExpansion | None = None,
                              safety: float = 0.5, cap: int = DEFAULT_SECTOR_CAP) -> OrderCorrections:
    """Fit ``delta_0 .. delta_max_order`` of the exact self-energy on a frequency grid."""
    exp = expansion or LambdaExpansion(ints, stencil, safety=safety, cap=cap)
    grid = np.asarray(omega_grid, dtype=float).ravel()
    near = np.minimum(exp.stencil_distance(grid), exp.distance(grid)) < margin
    if np.any(near):
        warnings.warn(f"{int(near.sum())} grid points within {margin:g} of a pole were dropped",
                      RuntimeWarning)
    keep = grid[~near]
    coef, err = exp.coefficients(keep, with_error=True)
    return OrderCorrections(keep, coef, err, grid[near], exp.stencil.condition_number,
                            exp.levels(keep))


class OrderSelfEnergy(SelfEnergy):
    """Cumulative ``Sigma^(n) = sum_{k <= n} delta_k`` from the lambda expansion."""

    # closer to a pole the fitted values lose all digits
    reliable_distance = 1e-6

    def __init__(self, ints: IntegralSet, order: int, expansion: LambdaExpansion | None = None,
                 stencil: LambdaStencil | None = None, safety: float = 0.5,
                 cap: int = DEFAULT_SECTOR_CAP):
        super().__init__(ints.eps)
        if not 0 <= order <= MAX_ORDER:
            raise InputError(f"order must lie in [0, {MAX_ORDER}]")
        if expansion is None:
            stencil = stencil or LambdaStencil(max_order=max(order, 1))
            expansion = LambdaExpansion(ints, stencil, safety=safety, cap=cap)
        if expansion.stencil.max_order < order:
            raise InputError("expansion stencil does not reach the requested order")
        self.ints = ints
        self.order = order
        self.expansion = expansion
        self.provenance = f"order-{order}"
        self.singularities = expansion.catalogue.for_order(order)
        self._per_orbital = {}

    def evaluate(self, omega):
        coef = self.expansion.coefficients(omega, self.order)
        return coef.sum(axis=0)

    def singularities_for(self, q=None):
        if q is None:
            return self.singularities
        if q not in self._per_orbital:
            self._per_orbital[q] = self.expansion.catalogue.for_order(self.order, q)
        return self._per_orbital[q]

    def corrections(self, omega):
        """``delta_0 .. delta_order`` at the given frequencies."""
        return self.expansion.coefficients(omega, self.order)


def g_dyson_n(evaluator: SelfEnergy, omega: float, cond_limit: float = 1e13):
    """Bold-line propagator ``(w - eps - Sigma(w))^{-1}`` at one frequency."""
    M = evaluator.dyson_matrix(float(omega))
    if not np.all(np.isfinite(M)) or np.linalg.cond(M) > cond_limit:
        raise SingularFrequencyError(f"w - eps - Sigma is singular at omega = {omega}")
    G = np.linalg.inv(M)
    return 0.5 * (G + G.T)
