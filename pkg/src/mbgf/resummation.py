"""Infinite partial summations: TDA(2) ladders and diagonal self-consistent GF2.

TDA(2) amplitudes are obtained by plain Jacobi substitution starting from zero.
After ``n`` substitutions the amplitudes contain every ladder through ``n``
interaction rungs, so the self-energy is exact through order ``n + 1``; one
substitution gives the second-order self-energy.

sc-GF2 replaces the mean-field propagator lines of the diagonal second-order
self-energy by the pole/residue representation of the previous cycle.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dyson import fermi_level, find_brackets, solve_diagonal
from .errors import CapExceededError, InputError, SingularFrequencyError
from .integrals import IntegralSet
from .selfenergy import DiagonalPoleSelfEnergy, SelfEnergy, merge_close

__all__ = [
    "AmplitudePair",
    "jacobi_substitution",
    "tda2_iterate",
    "tda2_sigma",
    "TDA2SelfEnergy",
    "ScPoleState",
    "mean_field_state",
    "scgf2_cycle",
    "scgf2_run",
    "prune_poles",
]

DENOMINATOR_FLOOR = 1e-10
DEFAULT_POLE_CAP = 10**6
PRODUCT_FLOOR = 1e-18


def jacobi_substitution(source, denominator, kernel, n_cycles: int, start=None):
    """Iterate ``x <- (source + kernel(x)) / denominator`` ``n_cycles`` times from zero."""
    x = np.zeros_like(source) if start is None else start
    for _ in range(n_cycles):
        x = (source + kernel(x)) / denominator
    return x


@dataclass
class AmplitudePair:
    """2p1h amplitudes ``U[w, a, b, p, i]`` and 2h1p amplitudes ``V[w, q, a, i, j]``.

    Virtual indices ``a, b`` and occupied ``i, j`` are positions within the
    virtual and occupied blocks; ``p, q`` run over ``orbitals`` (all
    spin-orbitals by default; they are spectators in the ladder equations).
    """

    U: np.ndarray
    V: np.ndarray
    omega: np.ndarray
    cycles: int
    orbitals: np.ndarray | None = None


def _blocks(ints: IntegralSet, orbitals=None):
    v = ints.v_as
    o, u = ints.occ, ints.vir
    a = np.arange(ints.m) if orbitals is None else np.asarray(orbitals)
    return {
        "ab_pi": v[np.ix_(u, u, a, o)],
        "ak_ci": v[np.ix_(u, o, u, o)],
        "ab_cd": v[np.ix_(u, u, u, u)],
        "qa_ij": v[np.ix_(a, u, o, o)],
        "ka_ic": v[np.ix_(o, u, o, u)],
        "kl_ij": v[np.ix_(o, o, o, o)],
        "qi_ab": v[np.ix_(a, o, u, u)],
        "ij_pa": v[np.ix_(o, o, a, u)],
    }


def _denominators(ints: IntegralSet, omega):
    eo, ev = ints.eps[ints.occ], ints.eps[ints.vir]
    w = omega[:, None, None, None]
    d1 = w + eo[None, None, None, :] - ev[None, :, None, None] - ev[None, None, :, None]
    d2 = eo[None, None, :, None] + eo[None, None, None, :] - w - ev[None, :, None, None]
    return d1, d2  # (W, a, b, i) and (W, a, i, j)


def tda2_iterate(ints: IntegralSet, omega, n_cycles: int, orbitals=None) -> AmplitudePair:
    """TDA(2) amplitudes after ``n_cycles`` Jacobi substitutions from ``U = V = 0``."""
    if n_cycles < 0:
        raise InputError("n_cycles must be nonnegative")
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    d1, d2 = _denominators(ints, w)
    # a == b and i == j amplitudes vanish by antisymmetry; keep their denominators harmless
    nv, no = len(ints.vir), len(ints.occ)
    d1[:, np.arange(nv), np.arange(nv), :] = 1.0
    d2[:, :, np.arange(no), np.arange(no)] = 1.0
    if (no and nv) and (np.min(np.abs(d1)) < DENOMINATOR_FLOOR or np.min(np.abs(d2)) < DENOMINATOR_FLOOR):
        raise SingularFrequencyError("frequency within 1e-10 of a 2p1h/2h1p orbital-energy difference")
    B = _blocks(ints, orbitals)
    src_u = np.broadcast_to(B["ab_pi"], (w.size,) + B["ab_pi"].shape)
    src_v = np.broadcast_to(B["qa_ij"], (w.size,) + B["qa_ij"].shape)
    den_u = d1[:, :, :, None, :]
    den_v = d2[:, None, :, :, :]

    nv, no = len(ints.vir), len(ints.occ)
    # both kernels as matrices acting on flattened (particle, hole) index pairs
    ring_u = B["ak_ci"].transpose(0, 3, 2, 1).reshape(nv * no, nv * no)  # (a i), (c k)
    ladder_u = 0.5 * B["ab_cd"].reshape(nv * nv, nv * nv)
    ring_v = B["ka_ic"].transpose(1, 2, 3, 0).reshape(nv * no, nv * no)  # (a i), (c k)
    ladder_v = 0.5 * B["kl_ij"].reshape(no * no, no * no)

    def kernel_u(U):
        W, k = U.shape[0], U.shape[3]
        # X[a,b,p,i] = sum_{c,k} <ak||ci> U[c,b,p,k]
        Ut = U.transpose(0, 1, 4, 2, 3).reshape(W, nv * no, nv * k)  # (c k), (b p)
        X = np.matmul(ring_u, Ut).reshape(W, nv, no, nv, k).transpose(0, 1, 3, 4, 2)
        L = np.matmul(ladder_u, U.reshape(W, nv * nv, k * no)).reshape(U.shape)
        return -(X - X.swapaxes(1, 2)) + L

    def kernel_v(V):
        W, k = V.shape[0], V.shape[1]
        # Y[q,a,i,j] = sum_{c,k} <ka||ic> V[q,c,k,j]
        Vt = V.transpose(0, 2, 3, 1, 4).reshape(W, nv * no, k * no)  # (c k), (q j)
        Y = np.matmul(ring_v, Vt).reshape(W, nv, no, k, no).transpose(0, 3, 1, 2, 4)
        L = np.matmul(V.reshape(W, k * nv, no * no), ladder_v).reshape(V.shape)
        return -(Y - Y.swapaxes(3, 4)) + L

    U = jacobi_substitution(src_u, den_u, kernel_u, n_cycles)
    V = jacobi_substitution(src_v, den_v, kernel_v, n_cycles)
    sel = None if orbitals is None else np.asarray(orbitals)
    return AmplitudePair(np.array(U), np.array(V), w, n_cycles, sel)


def tda2_sigma(ints: IntegralSet, amps: AmplitudePair) -> np.ndarray:
    """Self-energy block ``(W, k, k)`` over the amplitudes' orbitals (all ``m`` by default)."""
    B = _blocks(ints, amps.orbitals)
    S = 0.5 * np.einsum("qiab,wabpi->wpq", B["qi_ab"], amps.U)
    S -= 0.5 * np.einsum("ijpa,wqaij->wpq", B["ij_pa"], amps.V)
    return 0.5 * (S + S.swapaxes(1, 2))


def _hf_differences(ints: IntegralSet):
    eo, ev = ints.eps[ints.occ], ints.eps[ints.vir]
    out = []
    for i in eo:
        for x, a in enumerate(ev):
            for b in ev[x + 1:]:
                out.append((a + b) - i)
    for x, i in enumerate(eo):
        for j in eo[x + 1:]:
            for a in ev:
                out.append((i + j) - a)
    return merge_close(out)


class TDA2SelfEnergy(SelfEnergy):
    """TDA(2) self-energy after a fixed number of substitution cycles."""

    provenance = "tda2"
    reliable_distance = 1e-8

    def __init__(self, ints: IntegralSet, n_cycles: int):
        super().__init__(ints.eps)
        self.ints = ints
        self.n_cycles = int(n_cycles)
        self.singularities = _hf_differences(ints)
        self.w_fermi = fermi_level(ints.eps, ints.n_e)

    def evaluate(self, omega):
        out = np.empty((omega.size, self.m, self.m))
        for s in range(0, omega.size, 512):
            chunk = omega[s:s + 512]
            out[s:s + 512] = tda2_sigma(self.ints, tda2_iterate(self.ints, chunk, self.n_cycles))
        return out

    def diagonal(self, q, omega):
        w = np.asarray(omega, dtype=float)
        flat = np.atleast_1d(w).ravel()
        out = np.empty(flat.size)
        for s in range(0, flat.size, 512):
            amps = tda2_iterate(self.ints, flat[s:s + 512], self.n_cycles, orbitals=[q])
            out[s:s + 512] = tda2_sigma(self.ints, amps)[:, 0, 0]
        return out.reshape(w.shape)


# ---------------------------------------------------------------------------
# diagonal self-consistent second order
# ---------------------------------------------------------------------------

@dataclass
class ScPoleState:
    """Per-orbital Green's function poles and residues of one sc-GF2 cycle."""

    poles: list
    residues: list
    cycle: int
    w_fermi: float
    report: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.poles)

    @property
    def pole_count(self) -> int:
        return int(sum(len(p) for p in self.poles))

    def ip(self, q):
        keep = self.poles[q] < self.w_fermi
        return self.poles[q][keep], self.residues[q][keep]

    def ea(self, q):
        keep = self.poles[q] >= self.w_fermi
        return self.poles[q][keep], self.residues[q][keep]

    def residue_sums(self):
        return np.array([float(np.sum(r)) for r in self.residues])

    def summary(self) -> dict:
        allp = np.concatenate(self.poles) if self.pole_count else np.zeros(0)
        allf = np.concatenate(self.residues) if self.pole_count else np.zeros(0)
        hist, edges = np.histogram(allp, bins=20, weights=allf) if allp.size else (np.zeros(0), np.zeros(0))
        sums = self.residue_sums()
        return {
            "cycle": self.cycle,
            "pole_count": self.pole_count,
            "min_pole": float(allp.min()) if allp.size else None,
            "max_pole": float(allp.max()) if allp.size else None,
            "max_sum_rule_deviation": float(np.max(np.abs(sums - 1.0))),
            "histogram": {"edges": edges.tolist(), "weights": hist.tolist()},
            **self.report,
        }


def mean_field_state(ints: IntegralSet) -> ScPoleState:
    """Cycle-0 input: one pole ``eps_q`` with unit residue per orbital."""
    return ScPoleState([np.array([e]) for e in ints.eps], [np.ones(1) for _ in ints.eps], 0,
                       fermi_level(ints.eps, ints.n_e))


def _line_sets(ints, attribution):
    """Orbital index sets for the hole line and the two particle lines of each term.

    ``"contour"`` lets every orbital carry both ionization and attachment
    poles; ``"literal"`` restricts hole lines to occupied and particle lines
    to virtual orbitals.  Both agree on the mean-field state.
    """
    if attribution == "contour":
        every = list(range(ints.m))
        return every, every
    if attribution == "literal":
        return list(ints.occ), list(ints.vir)
    raise InputError(f"unknown attribution {attribution!r}")


def _term_loops(ints, q, holes, parts):
    """Yield (kind, r, s, t, coupling) for nonzero antisymmetrized couplings.

    ``kind == 0``: hole line ``r``, particle lines ``s < t`` (2p1h type);
    ``kind == 1``: hole lines ``s < t``, particle line ``r`` (2h1p type).
    """
    v = ints.v_as
    for r in holes:
        for x, s in enumerate(parts):
            for t in parts[x + 1:]:
                c = v[s, t, q, r]
                if c != 0.0:
                    yield 0, r, s, t, c
    for x, s in enumerate(holes):
        for t in holes[x + 1:]:
            for r in parts:
                c = v[s, t, q, r]
                if c != 0.0:
                    yield 1, r, s, t, c


def _projected_count(ints, state, holes, parts):
    n_ip = [len(state.ip(p)[0]) for p in range(ints.m)]
    n_ea = [len(state.ea(p)[0]) for p in range(ints.m)]
    total = 0
    for q in range(ints.m):
        for kind, r, s, t, _ in _term_loops(ints, q, holes, parts):
            if kind == 0:
                total += n_ip[r] * n_ea[s] * n_ea[t]
            else:
                total += n_ea[r] * n_ip[s] * n_ip[t]
    return total


def _orbital_terms(ints, state, q, holes, parts):
    """Triple pole sums for orbital ``q``; returns (poles, strengths, skipped weight)."""
    poles, strengths = [], []
    skipped = 0.0
    for kind, r, s, t, c in _term_loops(ints, q, holes, parts):
        if kind == 0:
            wr, fr = state.ip(r)
            ws, fs = state.ea(s)
            wt, ft = state.ea(t)
            w = (ws[None, :, None] + wt[None, None, :]) - wr[:, None, None]
            f = fr[:, None, None] * fs[None, :, None] * ft[None, None, :]
        else:
            wr, fr = state.ea(r)
            ws, fs = state.ip(s)
            wt, ft = state.ip(t)
            w = (ws[:, None, None] + wt[None, :, None]) - wr[None, None, :]
            f = fs[:, None, None] * ft[None, :, None] * fr[None, None, :]
        keep = f >= PRODUCT_FLOOR
        skipped += float(c * c * np.sum(f[~keep]))
        poles.append(w[keep])
        strengths.append((c * c) * f[keep])
    if not poles:
        return np.zeros(0), np.zeros(0), skipped
    return np.concatenate(poles), np.concatenate(strengths), skipped


def scgf2_cycle(ints: IntegralSet, state: ScPoleState, pole_cap: int = DEFAULT_POLE_CAP,
                workers: int = 1, n_scan: int = 2001, attribution: str = "contour"):
    """One sc-GF2 cycle: build the diagonal self-energy from ``state``, solve for new poles.

    Hole lines take ionization poles and particle lines attachment poles;
    ``attribution`` selects which orbitals may carry each line (see
    :func:`_line_sets`).  Returns ``(evaluator, new_state)``.
    """
    holes, parts = _line_sets(ints, attribution)
    projected = _projected_count(ints, state, holes, parts)
    if projected > pole_cap:
        raise CapExceededError(
            f"cycle {state.cycle} would build {projected} self-energy poles (cap {pole_cap}); "
            "prune the pole state or raise --pole-cap")
    terms, skipped = [], 0.0
    for q in range(ints.m):
        p, s, sk = _orbital_terms(ints, state, q, holes, parts)
        terms.append((p, s))
        skipped += sk
    ev = DiagonalPoleSelfEnergy(ints.eps, terms, provenance="scgf2")
    ev.w_fermi = state.w_fermi
    ev.cycle = state.cycle

    def solve(q):
        roots = solve_diagonal(ev, q, brackets=find_brackets(ev, q), n_scan=n_scan, w_fermi=state.w_fermi)
        return np.array([r.omega for r in roots]), np.array([r.residue for r in roots])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve, range(ints.m)))
    else:
        results = [solve(q) for q in range(ints.m)]
    new = ScPoleState([r[0] for r in results], [r[1] for r in results], state.cycle + 1, state.w_fermi,
                      report={"sigma_pole_count": ev.pole_count, "skipped_weight": skipped})
    sums = new.residue_sums()
    if np.any(sums > 1.0 + 1e-6):
        warnings.warn(f"per-orbital residue sum exceeds 1 (max {sums.max():.8f})", RuntimeWarning)
    return ev, new


def scgf2_run(ints: IntegralSet, n_cycles: int, pole_cap: int = DEFAULT_POLE_CAP,
              residue_floor: float = 0.0, workers: int = 1, attribution: str = "contour"):
    """Evaluators for cycles ``0..n_cycles`` and the pole states they produce."""
    state = mean_field_state(ints)
    evaluators, states = [], []
    for _ in range(n_cycles + 1):
        ev, state = scgf2_cycle(ints, state, pole_cap=pole_cap, workers=workers, attribution=attribution)
        if residue_floor > 0:
            state = prune_poles(state, residue_floor)
        evaluators.append(ev)
        states.append(state)
    return evaluators, states


def prune_poles(state: ScPoleState, residue_floor: float) -> ScPoleState:
    """Drop poles with residue below ``residue_floor``; the largest per orbital always stays.

    Residues are not renormalized, so the sum-rule deficit remains visible.
    """
    if residue_floor < 0:
        raise InputError("residue_floor must be nonnegative")
    poles, res = [], []
    dropped = 0.0
    for p, f in zip(state.poles, state.residues):
        keep = f >= residue_floor
        if f.size and not keep.any():
            keep[np.argmax(f)] = True
        dropped += float(np.sum(f[~keep]))
        poles.append(p[keep])
        res.append(f[keep])
    report = dict(state.report)
    report["pruned_weight"] = report.get("pruned_weight", 0.0) + dropped
    return ScPoleState(poles, res, state.cycle, state.w_fermi, report)
