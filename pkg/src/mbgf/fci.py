"""Determinant-based full CI in fixed particle-number sectors and the exact propagator.

Determinants are Python integers used as bit masks over spin-orbitals.  The
fermionic sign convention orders creation operators by ascending spin-orbital
index, so removing or adding an electron in spin-orbital ``p`` costs a factor
``(-1)**popcount(mask & ((1 << p) - 1))``.

The scaled Hamiltonian is ``H(lam) = H0 + lam * (H - H0)`` with
``H0 = sum_p eps[p] n_p``; constant shifts are dropped because only energy
differences enter the propagator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import CapExceededError, InputError, SingularFrequencyError
from .integrals import IntegralSet

__all__ = [
    "DEFAULT_SECTOR_CAP",
    "enumerate_sector",
    "determinant_sz",
    "build_hamiltonian",
    "SectorSpectrum",
    "SectorCache",
    "solve_sector",
    "PoleSet",
    "GreensFunction",
    "solve_fci",
    "lehmann_green",
    "lehmann_green_derivative",
    "exact_self_energy",
    "exact_self_energy_derivative",
]

DEFAULT_SECTOR_CAP = 20000
POLE_COLLISION = 1e-13
DEGENERACY_TOL = 1e-10


def _popcount(x: int) -> int:
    return bin(x).count("1")


def _bits(mask: int):
    out = []
    p = 0
    while mask:
        if mask & 1:
            out.append(p)
        mask >>= 1
        p += 1
    return out


def determinant_sz(mask: int) -> float:
    """Spin projection: alpha spin-orbitals are even, beta odd."""
    n_alpha = _popcount(mask & int("01" * 64, 2))
    n_beta = _popcount(mask) - n_alpha
    return 0.5 * (n_alpha - n_beta)


def enumerate_sector(m: int, n_e: int, sz: float | None = None):
    """All ``n_e``-electron determinants over ``m`` spin-orbitals, ascending by mask.

    >>> enumerate_sector(4, 2, sz=0.0)
    [3, 6, 9, 12]
    """
    if not 0 <= n_e <= m:
        raise InputError(f"electron count {n_e} outside [0, {m}]")
    dets = [sum(1 << p for p in occ) for occ in combinations(range(m), n_e)]
    if sz is not None:
        dets = [d for d in dets if determinant_sz(d) == sz]
    return sorted(dets)


def _sign_below(mask: int, p: int) -> int:
    return -1 if _popcount(mask & ((1 << p) - 1)) % 2 else 1


def _annihilate(mask: int, p: int):
    if not mask >> p & 1:
        return 0, mask
    return _sign_below(mask, p), mask ^ (1 << p)


def _create(mask: int, p: int):
    if mask >> p & 1:
        return 0, mask
    return _sign_below(mask, p), mask | (1 << p)


def _check_cap(n: int, cap: int):
    if n > cap:
        raise CapExceededError(
            f"sector dimension {n} exceeds the cap of {cap}; raise --max-sector-dim"
        )


def _physical_hamiltonian(ints: IntegralSet, dets):
    """Electronic Hamiltonian over ``dets`` by Slater-Condon rules."""
    h, v = ints.hcore, ints.v_as
    m = ints.m
    index = {d: k for k, d in enumerate(dets)}
    n = len(dets)
    H = np.zeros((n, n))
    for col, det in enumerate(dets):
        occ = _bits(det)
        vir = [p for p in range(m) if not det >> p & 1]
        o = np.array(occ, dtype=int)
        H[col, col] = np.trace(h[np.ix_(o, o)]) + 0.5 * np.einsum(
            "ijij->", v[np.ix_(o, o, o, o)]
        )
        # single excitations i -> a
        for i in occ:
            s1, d1 = _annihilate(det, i)
            for a in vir:
                row = index.get(d1 | (1 << a))
                if row is None:
                    continue
                s2, d2 = _create(d1, a)
                val = h[a, i] + np.sum(v[a, o, i, o])
                H[row, col] = s1 * s2 * val
        # double excitations i<j -> a<b, |D'> = a+_a a+_b a_j a_i |D>
        for i, j in combinations(occ, 2):
            s1, d1 = _annihilate(det, i)
            s2, d2 = _annihilate(d1, j)
            for a, b in combinations(vir, 2):
                row = index.get(d2 | (1 << a) | (1 << b))
                if row is None:
                    continue
                s3, d3 = _create(d2, b)
                s4, _ = _create(d3, a)
                H[row, col] = s1 * s2 * s3 * s4 * v[a, b, i, j]
    return H


def _zeroth_order_diagonal(ints: IntegralSet, dets):
    eps = ints.eps
    return np.array([sum(eps[p] for p in _bits(d)) for d in dets])


def build_hamiltonian(ints: IntegralSet, dets, lam: float = 1.0, cap: int = DEFAULT_SECTOR_CAP):
    """Matrix of ``H0 + lam (H - H0)`` over the determinant list."""
    if not -1.5 <= lam <= 1.5:
        raise InputError(f"lambda {lam} outside [-1.5, 1.5]")
    _check_cap(len(dets), cap)
    d0 = _zeroth_order_diagonal(ints, dets)
    H = _physical_hamiltonian(ints, dets)
    return lam * H + np.diag((1.0 - lam) * d0)


@dataclass(frozen=True, eq=False)
class SectorSpectrum:
    n_e: int
    sz: float
    dets: tuple
    energies: np.ndarray
    vectors: np.ndarray
    lam: float

    @property
    def dim(self) -> int:
        return len(self.dets)


class SectorCache:
    """Physical and zeroth-order matrices per sector, reused across lambda values."""

    def __init__(self, ints: IntegralSet, cap: int):
        self.ints = ints
        self.cap = cap
        self._store = {}

    def get(self, n_e, sz):
        key = (n_e, sz)
        if key not in self._store:
            dets = enumerate_sector(self.ints.m, n_e, sz)
            _check_cap(len(dets), self.cap)
            self._store[key] = (
                tuple(dets),
                _physical_hamiltonian(self.ints, dets),
                _zeroth_order_diagonal(self.ints, dets),
            )
        return self._store[key]


def solve_sector(ints, n_e, sz, lam=1.0, cap=DEFAULT_SECTOR_CAP, cache=None) -> SectorSpectrum:
    cache = cache or SectorCache(ints, cap)
    dets, H, d0 = cache.get(n_e, sz)
    if not dets:
        return SectorSpectrum(n_e, sz, dets, np.zeros(0), np.zeros((0, 0)), lam)
    w, V = np.linalg.eigh(lam * H + np.diag((1.0 - lam) * d0))
    return SectorSpectrum(n_e, sz, dets, w, V, lam)


@dataclass(frozen=True, eq=False)
class PoleSet:
    """Spectral representation ``G(w) = sum_k r_k r_k^T / (w - poles[k])``.

    ``amplitudes[k]`` is the transition vector ``r_k``: ``<I|a_p|0>`` for an
    ionization pole (``kinds[k] == "IP"``) and ``<A|a_p^+|0>`` for attachment.
    """

    poles: np.ndarray
    amplitudes: np.ndarray
    kinds: np.ndarray

    def __len__(self):
        return len(self.poles)

    @property
    def m(self):
        return self.amplitudes.shape[1]

    @property
    def weights(self):
        """Residue matrices, shape (P, m, m)."""
        r = self.amplitudes
        return r[:, :, None] * r[:, None, :]

    def completeness(self) -> float:
        return float(np.sum(self.amplitudes**2))

    def merged(self, tol: float = DEGENERACY_TOL):
        """Group poles closer than ``tol``; returns (poles, residue matrices, kinds)."""
        groups = []
        for k in range(len(self.poles)):
            if groups and self.poles[k] - self.poles[groups[-1][-1]] < tol:
                groups[-1].append(k)
            else:
                groups.append([k])
        W = self.weights
        poles = np.array([np.mean(self.poles[g]) for g in groups])
        res = np.array([W[g].sum(axis=0) for g in groups]).reshape(len(groups), self.m, self.m)
        kinds = np.array([self.kinds[g[0]] for g in groups])
        return poles, res, kinds

    def active(self, threshold: float = 1e-14):
        """Merged poles whose residue matrix has trace above ``threshold``."""
        poles, res, kinds = self.merged()
        keep = np.einsum("kpp->k", res) > threshold
        return poles[keep], res[keep], kinds[keep]


@dataclass(frozen=True, eq=False)
class GreensFunction:
    """Exact propagator data of one (scaled) Hamiltonian."""

    ints: IntegralSet
    lam: float
    e0: float
    poles: PoleSet
    n_ip_states: int
    n_ea_states: int

    @property
    def eps(self):
        return self.ints.eps

    @property
    def total_energy(self):
        """Ground energy including ``e_nuc`` (meaningful at ``lam == 1``)."""
        return self.e0 + self.ints.e_nuc

    def __call__(self, omega):
        return lehmann_green(self.poles, omega)

    def derivative(self, omega):
        return lehmann_green_derivative(self.poles, omega)


def _transition_matrix(src_dets, dst_dets, p, create):
    index = {d: k for k, d in enumerate(dst_dets)}
    rows, cols, vals = [], [], []
    for col, d in enumerate(src_dets):
        s, nd = _create(d, p) if create else _annihilate(d, p)
        if s and nd in index:
            rows.append(index[nd])
            cols.append(col)
            vals.append(s)
    A = np.zeros((len(dst_dets), len(src_dets)))
    A[rows, cols] = vals
    return A


def solve_fci(ints: IntegralSet, lam: float = 1.0, cap: int = DEFAULT_SECTOR_CAP,
              cache: SectorCache | None = None) -> GreensFunction:
    """Diagonalize the N-1, N, N+1 sectors and assemble the Lehmann pole set."""
    cache = cache or SectorCache(ints, cap)
    m, n = ints.m, ints.n_e
    sz0 = 0.5 * ints.ms2
    ground = solve_sector(ints, n, sz0, lam, cache=cache)
    if ground.dim > 1 and ground.energies[1] - ground.energies[0] < 1e-8:
        warnings.warn("degenerate ground state; using the lowest eigenvector", RuntimeWarning)
    e0 = float(ground.energies[0])
    c0 = ground.vectors[:, 0]
    poles, amps, kinds = [], [], []
    n_states = {"IP": 0, "EA": 0}
    for kind, n_target, create in (("IP", n - 1, False), ("EA", n + 1, True)):
        for dsz in (-0.5, 0.5):
            sec = solve_sector(ints, n_target, sz0 + dsz, lam, cache=cache)
            if sec.dim == 0:
                continue
            n_states[kind] += sec.dim
            amp = np.zeros((sec.dim, m))
            for p in range(m):
                # only spin-orbitals whose spin matches the sz change contribute
                if create != ((p % 2 == 0) == (dsz > 0)):
                    continue
                A = _transition_matrix(ground.dets, sec.dets, p, create)
                amp[:, p] = sec.vectors.T @ (A @ c0)
            if kind == "IP":
                w = e0 - sec.energies
            else:
                w = sec.energies - e0
            poles.append(w)
            amps.append(amp)
            kinds.extend([kind] * sec.dim)
    poles = np.concatenate(poles)
    amps = np.concatenate(amps)
    order = np.argsort(poles, kind="stable")
    ps = PoleSet(poles[order], amps[order], np.array(kinds)[order])
    return GreensFunction(ints, lam, e0, ps, n_states["IP"], n_states["EA"])


def _denominators(poles: PoleSet, omega):
    omega = np.asarray(omega, dtype=float)
    d = omega[..., None] - poles.poles
    if np.any(np.abs(d) < POLE_COLLISION):
        raise SingularFrequencyError("frequency coincides with a pole of G")
    return omega, d


def lehmann_green(poles: PoleSet, omega):
    """``G(omega)`` for scalar or array ``omega``; shape ``omega.shape + (m, m)``."""
    omega, d = _denominators(poles, omega)
    r = poles.amplitudes
    return np.einsum("...k,kp,kq->...pq", 1.0 / d, r, r)


def lehmann_green_derivative(poles: PoleSet, omega):
    omega, d = _denominators(poles, omega)
    r = poles.amplitudes
    return np.einsum("...k,kp,kq->...pq", -1.0 / d**2, r, r)


def exact_self_energy(eps, G, omega):
    """``omega - diag(eps) - G^{-1}`` with a condition-number guard."""
    G = np.asarray(G, dtype=float)
    if np.linalg.cond(G) > 1e12:
        raise SingularFrequencyError("G is numerically singular at this frequency")
    S = omega * np.eye(len(eps)) - np.diag(eps) - np.linalg.inv(G)
    return 0.5 * (S + S.T)


def exact_self_energy_derivative(gf: GreensFunction, omega_q: float, offset: float = 1e-9):
    """Average of ``dSigma/domega`` at ``omega_q +- offset`` (inverse-propagator route)."""
    poles = gf.poles.poles
    step = offset
    while np.any(np.abs(poles - (omega_q - step)) < 1e-12) or np.any(
        np.abs(poles - (omega_q + step)) < 1e-12
    ):
        # only a pole other than omega_q itself can collide at a nonzero offset
        step *= 10.0
        warnings.warn(f"derivative offset widened to {step:g}", RuntimeWarning)
        if step > 1e-3:
            raise SingularFrequencyError("cannot find a collision-free derivative offset")
    out = 0.0
    for w in (omega_q - step, omega_q + step):
        G = gf(w)
        if np.linalg.cond(G) > 1e12:
            raise SingularFrequencyError("G is numerically singular next to the root")
        Gi = np.linalg.inv(G)
        out = out + np.eye(gf.ints.m) + Gi @ gf.derivative(w) @ Gi
    out = 0.5 * out
    return 0.5 * (out + out.T)
