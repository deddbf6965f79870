"""Inverse Dyson equation: brackets, roots, residues, sum rules, total energy.

Roots are frequencies where ``M(w) = w - eps - Sigma(w)`` is singular.  Between
consecutive singularities of the self-energy (a bracket) ``M`` is continuous,
so its sorted eigenvalues are continuous too and every root is a sign change
of one of them.  Diagonal mode uses ``f_q(w) = w - eps_q - Sigma_qq(w)``.

For self-energies with positive semidefinite pole residues (exact, second
order, diagonal sc-GF2) ``M`` is strictly increasing, so every sorted
eigenvalue crosses zero at most once per bracket and roots are found without
scanning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import SingularFrequencyError
from .selfenergy import SelfEnergy

__all__ = [
    "DysonRoot",
    "fermi_level",
    "find_brackets",
    "central_bracket",
    "solve_diagonal",
    "solve_matrix",
    "residue",
    "check_sum_rules",
    "galitskii_migdal",
    "count_pole_sign_changes",
]

DEFAULT_SCAN = 2001
DEFAULT_TOL = 1e-10
DEGENERATE = 1e-9
JUMP_FACTOR = 100.0


@dataclass
class DysonRoot:
    omega: float
    residue: float
    kind: str
    bracket: int
    vector: np.ndarray | None = None
    orbital: int | None = None
    principal: bool = False
    flagged: bool = False
    residue_error: float = 0.0
    degeneracy: int = 1
    notes: list = field(default_factory=list)

    def as_dict(self, with_vector=False):
        out = {
            "omega": self.omega,
            "residue": self.residue,
            "residue_error": self.residue_error,
            "kind": self.kind,
            "bracket": self.bracket,
            "orbital": self.orbital,
            "principal": self.principal,
            "flagged": self.flagged,
            "degeneracy": self.degeneracy,
        }
        if with_vector and self.vector is not None:
            out["vector"] = [float(x) for x in self.vector]
        return out


def fermi_level(eps, n_e) -> float:
    """IP/EA dividing frequency: 0 when the mean-field gap straddles it, else the gap midpoint."""
    homo, lumo = eps[n_e - 1], eps[n_e]
    if homo < 0.0 < lumo:
        return 0.0
    return 0.5 * (homo + lumo)


def _kind(omega, w_fermi):
    return "IP" if omega < w_fermi else "EA"


def _terminal_ok(evaluator, q, w, side):
    """Lower end: f (or every eigenvalue of M) negative; upper end: positive."""
    if q is None:
        mu = np.linalg.eigvalsh(evaluator.dyson_matrix(w))
    else:
        mu = np.array([w - evaluator.eps[q] - evaluator.diagonal(q, w)])
    return bool(np.all(mu < 0)) if side == "lower" else bool(np.all(mu > 0))


def find_brackets(evaluator: SelfEnergy, q: int | None = None, window=None, pad: float = 1.0):
    """Intervals between consecutive singularities, terminal ones clipped to a window.

    Without ``window`` the terminal ends are pushed outward (doubling the
    distance) until ``M`` is negative definite below and positive definite
    above, so the terminal intervals contain all their roots.
    """
    sing = np.asarray(evaluator.singularities_for(q), dtype=float)
    if window is not None:
        lo, hi = float(window[0]), float(window[1])
        inner = sing[(sing > lo) & (sing < hi)]
        edges = np.concatenate([[lo], inner, [hi]])
        return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]
    eps = evaluator.eps if q is None else evaluator.eps[q:q + 1]
    anchor = np.concatenate([sing, eps])
    lo, hi = float(anchor.min()), float(anchor.max())
    step = pad + 0.1 * (hi - lo)
    lower, upper = lo - step, hi + step
    for _ in range(60):
        if _terminal_ok(evaluator, q, lower, "lower"):
            break
        step *= 2.0
        lower = lo - step
    step = pad + 0.1 * (hi - lo)
    for _ in range(60):
        if _terminal_ok(evaluator, q, upper, "upper"):
            break
        step *= 2.0
        upper = hi + step
    edges = np.concatenate([[lower], sing, [upper]])
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


def central_bracket(brackets, w_fermi) -> int:
    for k, (a, b) in enumerate(brackets):
        if a < w_fermi < b:
            return k
    return int(np.argmin([min(abs(a - w_fermi), abs(b - w_fermi)) for a, b in brackets]))


def _approach_points(a, b, sing_lo, sing_hi, floor=0.0):
    """Geometric approach toward singular bracket ends, no closer than ``floor``."""
    w = b - a
    pts = []
    for k in range(1, 15):
        d = w * 10.0 ** (-k)
        if sing_lo and d > max(16 * np.spacing(abs(a)), floor):
            pts.append(a + d)
        if sing_hi and d > max(16 * np.spacing(abs(b)), floor):
            pts.append(b - d)
    return pts


def _scan_grid(a, b, sing_lo, sing_hi, n_scan, floor=0.0):
    inner = np.linspace(a, b, n_scan + 2)[1:-1]
    if floor > 0:
        inner = inner[(inner - a > floor) & (b - inner > floor)]
    pts = np.concatenate([inner, _approach_points(a, b, sing_lo, sing_hi, floor)])
    if not sing_lo:
        pts = np.append(pts, a)
    if not sing_hi:
        pts = np.append(pts, b)
    return np.unique(pts)


def _innermost(a, b, sing_lo, sing_hi, floor=0.0):
    """Closest usable points to each end of a bracket."""
    mid = 0.5 * (a + b)
    pts = _approach_points(a, b, sing_lo, sing_hi, floor)
    lo = min([p for p in pts if p < mid], default=mid) if sing_lo else a
    hi = max([p for p in pts if p > mid], default=mid) if sing_hi else b
    return lo, hi


def _refine_jumps(x, y, fn):
    """Subdivide intervals whose jump is far above the median (one x4 pass)."""
    dy = np.abs(np.diff(y, axis=0))
    if dy.ndim > 1:
        dy = dy.max(axis=1)
    finite = dy[np.isfinite(dy)]
    if finite.size < 3:
        return x, y, False
    thresh = JUMP_FACTOR * max(np.median(finite), 1e-300)
    idx = np.flatnonzero(dy > thresh)
    if idx.size == 0:
        return x, y, False
    extra = np.concatenate([np.linspace(x[i], x[i + 1], 5)[1:-1] for i in idx])
    xs = np.concatenate([x, extra])
    order = np.argsort(xs)
    ys = np.concatenate([y, fn(extra)])
    return xs[order], ys[order], True


def _brent(fn, a, b, fa, fb):
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    return brentq(fn, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def _derivative_step(evaluator, omega, sing):
    h = evaluator.derivative_step
    if sing.size:
        h = min(h, 0.25 * float(np.min(np.abs(sing - omega))))
    return h


def residue(evaluator: SelfEnergy, omega: float, vector=None, q: int | None = None):
    """One-electron weight ``1 / (1 - u^T Sigma'(w) u)`` and an error estimate.

    Pole-form evaluators differentiate analytically; others use a central
    difference (step ``derivative_step``, shrunk near singularities) and
    report the change on halving the step as the error.
    """
    if q is not None:
        sing = evaluator.singularities_for(q)
        has_exact = type(evaluator).diagonal_derivative is not SelfEnergy.diagonal_derivative
        if has_exact:
            d = float(evaluator.diagonal_derivative(q, omega))
            return 1.0 / (1.0 - d), 0.0
        h = _derivative_step(evaluator, omega, sing)
        vals = []
        for step in (h, 0.5 * h):
            d = (evaluator.diagonal(q, omega + step) - evaluator.diagonal(q, omega - step)) / (2 * step)
            vals.append(1.0 / (1.0 - float(d)))
        return vals[0], abs(vals[0] - vals[1])
    u = np.asarray(vector, dtype=float)
    sing = evaluator.singularities
    if type(evaluator).derivative is not SelfEnergy.derivative:
        D = evaluator.derivative(omega)
        return 1.0 / (1.0 - float(u @ D @ u)), 0.0
    h = _derivative_step(evaluator, omega, sing)
    vals = []
    for step in (h, 0.5 * h):
        D = (evaluator(omega + step) - evaluator(omega - step)) / (2 * step)
        vals.append(1.0 / (1.0 - float(u @ D @ u)))
    return vals[0], abs(vals[0] - vals[1])


def _flag_principal_diagonal(roots):
    if roots:
        best = max(range(len(roots)), key=lambda k: roots[k].residue)
        roots[best].principal = True


def solve_diagonal(evaluator: SelfEnergy, q: int, brackets=None, tol: float = DEFAULT_TOL,
                   n_scan: int = DEFAULT_SCAN, w_fermi: float | None = None, bracket_offset: int = 0):
    """All real roots of ``w - eps_q - Sigma_qq(w)`` bracket by bracket."""
    if brackets is None:
        brackets = find_brackets(evaluator, q)
    if w_fermi is None:
        w_fermi = getattr(evaluator, "w_fermi", 0.0)
    sing = evaluator.singularities_for(q)
    eps_q = evaluator.eps[q]
    floor = evaluator.reliable_distance

    def f(w):
        return np.asarray(w) - eps_q - evaluator.diagonal(q, np.asarray(w, dtype=float))

    def f_scalar(w):
        return float(f(np.array([w]))[0])

    roots = []
    warned = False
    for k, (a, b) in enumerate(brackets):
        sing_lo = sing.size > 0 and np.min(np.abs(sing - a)) < 1e-12
        sing_hi = sing.size > 0 and np.min(np.abs(sing - b)) < 1e-12
        found = []
        if evaluator.monotone:
            lo, hi = _innermost(a, b, sing_lo, sing_hi, floor)
            flo, fhi = f_scalar(lo), f_scalar(hi)
            if flo <= 0.0 <= fhi and flo != fhi:
                found.append(_brent(f_scalar, lo, hi, flo, fhi))
        else:
            x = _scan_grid(a, b, sing_lo, sing_hi, n_scan, floor)
            y = f(x)
            x, y, refined = _refine_jumps(x, y, f)
            if refined and not warned:
                dy = np.abs(np.diff(y))
                if np.max(dy) > JUMP_FACTOR * 10 * max(np.median(dy), 1e-300):
                    warnings.warn("steep self-energy variation: near-vertical crossings may be missed",
                                  RuntimeWarning)
                    warned = True
            s = np.sign(y)
            for i in np.flatnonzero(s[:-1] * s[1:] <= 0):
                if s[i] == 0 and i > 0 and s[i - 1] == 0:
                    continue
                if s[i] == 0 and s[i + 1] == 0:
                    continue
                found.append(_brent(f_scalar, x[i], x[i + 1], y[i], y[i + 1]))
        for w in sorted(set(found)):
            F, err = residue(evaluator, w, q=q)
            root = DysonRoot(float(w), float(F), _kind(w, w_fermi), k + bracket_offset,
                             vector=None, orbital=q, residue_error=float(err))
            if abs(f_scalar(w)) > tol:
                root.flagged = True
                root.notes.append("steep crossing: |f| above tolerance at the refined root")
            if not 0.0 <= F <= 1.0:
                root.notes.append("residue outside [0, 1]")
            roots.append(root)
    _flag_principal_diagonal(roots)
    return roots


def _sorted_eigs(evaluator, x):
    return np.linalg.eigvalsh(evaluator.dyson_matrix(np.asarray(x, dtype=float)))


def _null_basis(evaluator, w, g):
    mu, V = np.linalg.eigh(evaluator.dyson_matrix(w))
    idx = np.argsort(np.abs(mu))[:g]
    return V[:, np.sort(idx)]


def _matrix_roots_at(evaluator, w, g, k, w_fermi, overlap=None):
    """Split a (possibly degenerate) root into orthonormal Dyson vectors with residues."""
    N = _null_basis(evaluator, w, g)
    exact_derivative = type(evaluator).derivative is not SelfEnergy.derivative
    if exact_derivative:
        D = evaluator.derivative(w)
        err = 0.0
    else:
        h = _derivative_step(evaluator, w, evaluator.singularities)
        D = (evaluator(w + h) - evaluator(w - h)) / (2 * h)
        D2 = (evaluator(w + h / 2) - evaluator(w - h / 2)) / h
        err = float(np.max(np.abs(D - D2)))
    A = np.eye(g) - N.T @ D @ N
    a, Y = np.linalg.eigh(0.5 * (A + A.T))
    out = []
    for j in range(g):
        u = N @ Y[:, j]
        u = u * (1.0 if u[np.argmax(np.abs(u))] >= 0 else -1.0)
        F = 1.0 / a[j]
        root = DysonRoot(float(w), float(F), _kind(w, w_fermi), k, vector=u, degeneracy=g,
                         residue_error=err * F * F)
        if overlap is not None and overlap < 0.5:
            root.flagged = True
            root.notes.append(f"eigenvector overlap {overlap:.2f} across the scan step")
        out.append(root)
    return out


def _group(values, tol=DEGENERATE):
    values = sorted(values)
    groups = []
    for v in values:
        if groups and v - groups[-1][-1] < tol:
            groups[-1].append(v)
        else:
            groups.append([v])
    return [(float(np.mean(g)), len(g)) for g in groups]


def _track_overlap(evaluator, a, b, zero_index):
    """Largest eigenvector overlap of curve ``zero_index`` between two scan points."""
    _, Va = np.linalg.eigh(evaluator.dyson_matrix(a))
    _, Vb = np.linalg.eigh(evaluator.dyson_matrix(b))
    return float(np.max(np.abs(Va[:, zero_index] @ Vb)))


def solve_matrix(evaluator: SelfEnergy, brackets=None, tol: float = DEFAULT_TOL,
                 n_scan: int = DEFAULT_SCAN, w_fermi: float | None = None):
    """Roots of ``det(w - eps - Sigma(w)) = 0`` with Dyson vectors and residues."""
    if brackets is None:
        brackets = find_brackets(evaluator)
    if w_fermi is None:
        w_fermi = getattr(evaluator, "w_fermi", 0.0)
    sing = evaluator.singularities
    floor = evaluator.reliable_distance
    roots = []
    for k, (a, b) in enumerate(brackets):
        sing_lo = sing.size > 0 and np.min(np.abs(sing - a)) < 1e-12
        sing_hi = sing.size > 0 and np.min(np.abs(sing - b)) < 1e-12
        found = []
        overlaps = {}
        if evaluator.monotone:
            lo, hi = _innermost(a, b, sing_lo, sing_hi, floor)
            mlo, mhi = _sorted_eigs(evaluator, lo), _sorted_eigs(evaluator, hi)
            for j in range(evaluator.m):
                if mlo[j] <= 0.0 <= mhi[j] and mlo[j] != mhi[j]:
                    fn = lambda w, j=j: float(_sorted_eigs(evaluator, w)[j])  # noqa: E731
                    found.append(_brent(fn, lo, hi, mlo[j], mhi[j]))
        else:
            x = _scan_grid(a, b, sing_lo, sing_hi, n_scan, floor)
            y = _sorted_eigs(evaluator, x)
            x, y, _ = _refine_jumps(x, y, lambda xs: _sorted_eigs(evaluator, xs))
            for j in range(evaluator.m):
                s = np.sign(y[:, j])
                for i in np.flatnonzero(s[:-1] * s[1:] < 0):
                    fn = lambda w, j=j: float(_sorted_eigs(evaluator, w)[j])  # noqa: E731
                    w = _brent(fn, x[i], x[i + 1], y[i, j], y[i + 1, j])
                    found.append(w)
                    overlaps[w] = _track_overlap(evaluator, x[i], x[i + 1], j)
        for w, g in _group(found):
            ov = min((overlaps[v] for v in overlaps if abs(v - w) < DEGENERATE), default=None)
            new = _matrix_roots_at(evaluator, w, g, k, w_fermi, ov)
            mu = np.min(np.abs(np.linalg.eigvalsh(evaluator.dyson_matrix(w))))
            if mu > tol:
                for r in new:
                    r.flagged = True
                    r.notes.append("steep crossing: smallest |eigenvalue| above tolerance")
            roots.extend(new)
    _flag_principal_matrix(roots, evaluator.m)
    return roots


def _flag_principal_matrix(roots, m):
    if not roots:
        return
    for p in range(m):
        best = max(roots, key=lambda r: r.residue * r.vector[p] ** 2)
        if best.vector[p] ** 2 > 0:
            best.principal = True
            if best.orbital is None:
                best.orbital = p


def check_sum_rules(roots, n_e: int | None = None, m: int | None = None, w_fermi: float | None = None):
    """Residue sums: matrix roots against ``n_e`` and ``m``; diagonal roots per orbital against 1."""
    report = {}
    if not roots:
        return report
    ip = [r for r in roots if r.kind == "IP"]
    if roots[0].vector is not None:
        s_ip = float(sum(r.residue for r in ip))
        s_all = float(sum(r.residue for r in roots))
        report["ip_sum"] = s_ip
        report["total_sum"] = s_all
        if n_e is not None:
            report["ip_deviation"] = s_ip - n_e
        if m is not None:
            report["total_deviation"] = s_all - m
    else:
        per = {}
        for r in roots:
            per.setdefault(r.orbital, 0.0)
            per[r.orbital] += r.residue
        report["per_orbital"] = per
        report["per_orbital_deviation"] = {q: v - 1.0 for q, v in per.items()}
        report["max_abs_deviation"] = max(abs(v - 1.0) for v in per.values())
    return report


def galitskii_migdal(roots, ints) -> float:
    """``e_nuc + 1/2 sum_IP (u^T h u + w) F`` over ionization roots."""
    h = np.asarray(ints.hcore)
    total = 0.0
    for r in roots:
        if r.kind != "IP":
            continue
        if r.vector is not None:
            u = r.vector
            one = float(u @ h @ u)
        else:
            one = float(h[r.orbital, r.orbital])
        total += (one + r.omega) * r.residue
    return float(ints.e_nuc + 0.5 * total)


def count_pole_sign_changes(evaluator: SelfEnergy, grid, q: int | None = None):
    """Frequencies where ``det M`` (or ``f_q``) changes sign, ignoring self-energy singularities."""
    grid = np.asarray(grid, dtype=float)
    sing = evaluator.singularities_for(q)
    if q is None:
        vals = np.linalg.det(evaluator.dyson_matrix(grid))
    else:
        vals = grid - evaluator.eps[q] - evaluator.diagonal(q, grid)
    out = []
    for i in range(grid.size - 1):
        a, b = grid[i], grid[i + 1]
        if np.any((sing > a) & (sing < b)):
            continue
        if vals[i] * vals[i + 1] < 0:
            out.append(0.5 * (a + b))
    return np.array(out)


def ensure_regular(evaluator, omega):
    sing = evaluator.singularities
    if sing.size and np.min(np.abs(sing - omega)) == 0.0:
        raise SingularFrequencyError(f"omega = {omega} is a self-energy singularity")
