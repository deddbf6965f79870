"""Four-pole model propagator and the convergence of its Taylor series in lambda.

Each pole moves quadratically, ``E_i(lam) = c0 + c1 lam + c2 lam**2``, and
``g(w, lam) = sum_i 1 / (w - E_i(lam))``.  Expanding ``g`` in ``lam`` about 0
and summing at ``lam = 1`` converges only where every pole's reciprocal
quadratic has both roots in ``lam`` outside the unit disk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, SingularFrequencyError

__all__ = [
    "ModelPoles",
    "DEFAULT_POLES",
    "model_g",
    "taylor_coefficients",
    "taylor_partial_sum",
    "partial_sums",
    "convergence_radius",
    "ConvergenceMap",
    "convergence_map",
]


@dataclass(frozen=True)
class ModelPoles:
    """Rows ``(c0, c1, c2)`` for each pole."""

    coefficients: tuple

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim != 2 or c.shape[1] != 3:
            raise InputError("pole coefficients must be rows of (c0, c1, c2)")
        for lam in (0.0, 1.0):
            e = np.sort(self.energies(lam))
            if np.any(np.diff(e) == 0.0):
                raise InputError(f"poles coincide at lambda = {lam}")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=float)

    def energies(self, lam: float) -> np.ndarray:
        c = self.array
        return c[:, 0] + c[:, 1] * lam + c[:, 2] * lam * lam

    def mirrored(self) -> "ModelPoles":
        """Pole set reflected through zero, so ``g(-w) = -g(w)`` for the union."""
        return ModelPoles(tuple(tuple(-x for x in row) for row in self.coefficients))

    def union(self, other: "ModelPoles") -> "ModelPoles":
        return ModelPoles(tuple(self.coefficients) + tuple(other.coefficients))


DEFAULT_POLES = ModelPoles((
    (1.9, 0.2, 0.2),
    (0.75, 0.1, 0.1),
    (-1.1, -0.1, -0.1),
    (-2.2, -0.15, -0.15),
))


def model_g(poles: ModelPoles, omega, lam: float = 1.0):
    """``sum_i 1 / (w - E_i(lam))`` for scalar or array ``omega``."""
    w = np.asarray(omega, dtype=float)
    d = w[..., None] - poles.energies(lam)
    if np.any(d == 0.0):
        raise SingularFrequencyError("frequency coincides with a model pole")
    return np.sum(1.0 / d, axis=-1)


def taylor_coefficients(poles: ModelPoles, omega, max_order: int) -> np.ndarray:
    """Exact lambda-Taylor coefficients of ``g`` at ``lam = 0``, shape ``(max_order + 1,) + omega.shape``.

    For ``1 / (d0 + d1 lam + d2 lam**2)`` the coefficients obey
    ``y_n = -(d1 y_{n-1} + d2 y_{n-2}) / d0``.
    """
    w = np.asarray(omega, dtype=float)
    c = poles.array
    d0 = w[..., None] - c[:, 0]
    if np.any(d0 == 0.0):
        raise SingularFrequencyError("frequency coincides with a lambda = 0 pole")
    d1, d2 = -c[:, 1], -c[:, 2]
    y = np.zeros((max_order + 1,) + d0.shape)
    y[0] = 1.0 / d0
    if max_order >= 1:
        y[1] = -(d1 * y[0]) / d0
    for n in range(2, max_order + 1):
        y[n] = -(d1 * y[n - 1] + d2 * y[n - 2]) / d0
    return y.sum(axis=-1)


def partial_sums(poles: ModelPoles, omega, max_order: int, lam: float = 1.0) -> np.ndarray:
    """Partial sums for orders ``0..max_order`` at ``lam``."""
    y = taylor_coefficients(poles, omega, max_order)
    powers = lam ** np.arange(max_order + 1)
    return np.cumsum(y * powers.reshape((-1,) + (1,) * (y.ndim - 1)), axis=0)


def taylor_partial_sum(poles: ModelPoles, omega, order: int, lam: float = 1.0):
    """Sum of the Taylor terms through ``order`` evaluated at ``lam``."""
    return partial_sums(poles, omega, order, lam)[order]


def convergence_radius(poles: ModelPoles, omega) -> np.ndarray:
    """Smallest ``|lam|`` at which some pole reaches ``omega``."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.full(w.shape, np.inf)
    for c0, c1, c2 in poles.array:
        for k, x in enumerate(w):
            r = np.roots([c2, c1, c0 - x]) if c2 != 0 else (np.array([(x - c0) / c1]) if c1 != 0 else [])
            if len(r):
                out[k] = min(out[k], float(np.min(np.abs(r))))
    return out


@dataclass
class ConvergenceMap:
    omega: np.ndarray
    labels: np.ndarray
    ratio: np.ndarray
    central: tuple | None

    def regions(self, label: str = "convergent"):
        """Contiguous runs ``(first, last)`` of grid points carrying ``label``."""
        runs, start = [], None
        for k, lab in enumerate(self.labels):
            if lab == label and start is None:
                start = k
            if lab != label and start is not None:
                runs.append((float(self.omega[start]), float(self.omega[k - 1])))
                start = None
        if start is not None:
            runs.append((float(self.omega[start]), float(self.omega[-1])))
        return runs


def convergence_map(poles: ModelPoles, omega_grid, max_order: int = 19, window: int = 6,
                    tol: float = 0.02, margin: float = 1e-3, center: float = 0.0) -> ConvergenceMap:
    """Label each frequency convergent, divergent, undetermined or excluded.

    The label comes from the per-order error growth over the last ``window``
    orders: the root-mean-square error of the newest half of the window over
    that of the older half, taken to the power ``1 / (window / 2)``.  Below
    ``1 - tol`` is convergent, above ``1 + tol`` divergent.  Comparing
    half-window envelopes rather than single ratios keeps oscillating
    errors from flipping the label.  Points within ``margin`` of a pole at ``lam = 0``
    or ``lam = 1`` are excluded.  ``central`` is the convergent run that
    contains ``center``.
    """
    w = np.asarray(omega_grid, dtype=float)
    if max_order < window:
        raise InputError("max_order must be at least the ratio window")
    near = np.zeros(w.shape, dtype=bool)
    for lam in (0.0, 1.0):
        near |= np.min(np.abs(w[:, None] - poles.energies(lam)[None, :]), axis=1) < margin
    labels = np.full(w.shape, "excluded", dtype=object)
    ratio = np.full(w.shape, np.nan)
    ok = ~near
    if np.any(ok):
        exact = model_g(poles, w[ok], 1.0)
        sums = partial_sums(poles, w[ok], max_order)
        err = np.abs(sums[max_order - window + 1:] - exact)
        scale = np.finfo(float).eps * 16 * np.maximum(np.abs(exact), 1.0)
        half = window // 2
        old = np.sqrt(np.mean(err[:half] ** 2, axis=0))
        new = np.sqrt(np.mean(err[-half:] ** 2, axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            rat = (new / old) ** (1.0 / (window - half))
        lab = np.where(rat < 1 - tol, "convergent", np.where(rat > 1 + tol, "divergent", "undetermined"))
        lab = np.where(err[-1] <= scale, "convergent", lab)
        labels[ok] = lab
        ratio[ok] = rat
    cmap = ConvergenceMap(w, labels.astype(str), ratio, None)
    for run in cmap.regions("convergent"):
        if run[0] <= center <= run[1]:
            cmap.central = run
    return cmap
