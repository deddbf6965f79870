"""Integral sets: FCIDUMP ingestion, built-in Hubbard models, spin-orbital expansion.

Spin-orbitals are interleaved: spin-orbital ``2k`` is spatial orbital ``k`` with
alpha spin and ``2k + 1`` the same orbital with beta spin.  Occupied
spin-orbitals are therefore always the first ``n_e`` indices (aufbau filling of
energy-ordered spatial orbitals).

Hubbard mean-field convention
-----------------------------
Models are open chains of ``L`` sites (``L = 2`` is the dimer) with
nearest-neighbour hopping ``-t`` and on-site repulsion ``U``, described in the
restricted closed-shell mean-field basis.  At half filling the density is
uniform (one half electron per spin per site), so the Fock operator is
``h + U/2`` and the canonical orbitals are the tight-binding orbitals with
energies ``-2 t cos(k pi / (L + 1)) + U/2``.  For the dimer these are
``-t + U/2`` (bonding) and ``t + U/2`` (antibonding): the HOMO-LUMO gap is
``2|t|`` for every ``U``.  Other even fillings are solved by a plain
mean-field iteration; they break particle-hole symmetry, which at half filling
makes every odd-order self-energy correction beyond first order vanish.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import FCIDumpError, InputError, UnsupportedModelError

__all__ = [
    "IntegralSet",
    "ModelSpec",
    "spin_orbital_integrals",
    "fock_diagonal",
    "parse_fcidump",
    "read_fcidump",
    "write_fcidump",
    "generate_model",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class IntegralSet:
    """Spin-orbital Hamiltonian data (all energies in hartree).

    ``v_as[p, q, r, s]`` holds the antisymmetrized integral <pq||rs>.
    ``h1`` and ``eri`` keep the spatial-orbital source (chemists' notation)
    so the set can be written back to FCIDUMP.
    """

    n_e: int
    eps: np.ndarray
    hcore: np.ndarray
    v_as: np.ndarray
    e_nuc: float
    h1: np.ndarray
    eri: np.ndarray
    ms2: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("eps", "hcore", "v_as", "h1", "eri"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not 0 < self.n_e < self.m:
            raise InputError(f"electron count {self.n_e} outside (0, {self.m})")

    @property
    def m(self) -> int:
        return self.eps.shape[0]

    @property
    def norb(self) -> int:
        return self.h1.shape[0]

    @property
    def labels(self):
        return [(p // 2, "ab"[p % 2]) for p in range(self.m)]

    @property
    def occ(self):
        return np.arange(self.n_e)

    @property
    def vir(self):
        return np.arange(self.n_e, self.m)

    @property
    def homo(self) -> int:
        return self.n_e - 1

    @property
    def lumo(self) -> int:
        return self.n_e

    @property
    def fermi_level(self) -> float:
        return 0.5 * (self.eps[self.homo] + self.eps[self.lumo])

    def hf_energy(self) -> float:
        o = self.occ
        return float(
            self.e_nuc
            + np.trace(self.hcore[np.ix_(o, o)])
            + 0.5 * np.einsum("ijij->", self.v_as[np.ix_(o, o, o, o)])
        )


def spin_orbital_integrals(h1, eri):
    """Expand spatial ``h1`` and chemists' ``eri`` to spin-orbital hcore and <pq||rs>."""
    n = h1.shape[0]
    spin = np.arange(2 * n) % 2
    spatial = np.arange(2 * n) // 2
    same = (spin[:, None] == spin[None, :]).astype(float)
    hcore = h1[np.ix_(spatial, spatial)] * same
    # <pq|rs> = (pr|qs) with spin(p)=spin(r), spin(q)=spin(s)
    chem = eri[np.ix_(spatial, spatial, spatial, spatial)]
    phys = chem.transpose(0, 2, 1, 3) * same[:, None, :, None] * same[None, :, None, :]
    v_as = phys - phys.transpose(0, 1, 3, 2)
    return hcore, v_as


def fock_diagonal(hcore, v_as, n_e):
    """eps[p] = hcore[p, p] + sum_i <pi||pi> over the first ``n_e`` spin-orbitals."""
    o = slice(0, n_e)
    return np.diagonal(hcore) + np.einsum("pipi->p", v_as[:, o, :, o])


def _build(h1, eri, n_e, e_nuc=0.0, eps_spatial=None, ms2=0, meta=None):
    hcore, v_as = spin_orbital_integrals(h1, eri)
    if eps_spatial is None:
        eps = fock_diagonal(hcore, v_as, n_e)
    else:
        eps = np.repeat(np.asarray(eps_spatial, dtype=float), 2)
    return IntegralSet(
        n_e=n_e, eps=eps, hcore=hcore, v_as=v_as, e_nuc=float(e_nuc),
        h1=h1, eri=eri, ms2=ms2, meta=dict(meta or {}),
    )


# ---------------------------------------------------------------------------
# FCIDUMP
# ---------------------------------------------------------------------------

_KEY = re.compile(r"([A-Za-z][A-Za-z0-9_]*)\s*=")


def _parse_header(lines):
    """Return (fields, index of first body line)."""
    if not lines or not lines[0].lstrip().upper().startswith("&FCI"):
        raise FCIDumpError("header must start with '&FCI'", 1)
    chunks = []
    for k, line in enumerate(lines):
        text = line.strip()
        if k == 0:
            text = text[4:]
        up = text.upper()
        end = None
        if "&END" in up:
            end = up.index("&END")
        elif text.endswith("/") or text == "/":
            end = len(text) - 1
        chunks.append(text if end is None else text[:end])
        if end is not None:
            body_start = k + 1
            break
    else:
        raise FCIDumpError("header not terminated by '/' or '&END'", len(lines))
    header = " ".join(chunks)
    parts = _KEY.split(header)
    fields = {}
    for key, value in zip(parts[1::2], parts[2::2]):
        fields[key.upper()] = value.strip().strip(",").strip()
    for key in ("NORB", "NELEC"):
        if key not in fields:
            raise FCIDumpError(f"header lacks {key}", 1)
    try:
        out = {
            "NORB": int(fields["NORB"]),
            "NELEC": int(fields["NELEC"]),
            "MS2": int(fields.get("MS2", "0") or 0),
        }
    except ValueError as exc:
        raise FCIDumpError(f"malformed header value ({exc})", 1) from None
    # ORBSYM / ISYM are read and ignored
    out["ORBSYM"] = fields.get("ORBSYM", "")
    return out, body_start


def parse_fcidump(text: str) -> IntegralSet:
    """Parse FCIDUMP text (1-based spatial indices, chemists' notation)."""
    lines = text.splitlines()
    header, start = _parse_header(lines)
    n = header["NORB"]
    if n < 1:
        raise FCIDumpError("NORB must be positive", 1)
    h1 = np.zeros((n, n))
    eri = np.zeros((n, n, n, n))
    eps = {}
    e_nuc = 0.0
    for lineno, line in enumerate(lines[start:], start=start + 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise FCIDumpError(f"expected 'value i j k l', got {line.strip()!r}", lineno)
        try:
            value = float(parts[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(x) for x in parts[1:])
        except ValueError:
            raise FCIDumpError(f"non-numeric entry {line.strip()!r}", lineno) from None
        idx = (i, j, k, l)
        if any(x < 0 or x > n for x in idx):
            raise InputError(f"line {lineno}: index out of range 0..{n} in {idx}")
        if idx == (0, 0, 0, 0):
            e_nuc = value
        elif k == 0 and l == 0 and j == 0:
            eps[i - 1] = value
        elif k == 0 and l == 0:
            if i == 0:
                raise InputError(f"line {lineno}: invalid index pattern {idx}")
            h1[i - 1, j - 1] = h1[j - 1, i - 1] = value
        elif min(idx) == 0:
            raise InputError(f"line {lineno}: invalid index pattern {idx}")
        else:
            a, b, c, d = i - 1, j - 1, k - 1, l - 1
            for p, q, r, s in ((a, b, c, d), (b, a, c, d), (a, b, d, c), (b, a, d, c)):
                eri[p, q, r, s] = eri[r, s, p, q] = value
    eps_spatial = None
    if eps:
        if len(eps) != n:
            raise InputError(f"orbital energies given for {len(eps)} of {n} orbitals")
        eps_spatial = [eps[k] for k in range(n)]
    return _build(h1, eri, header["NELEC"], e_nuc, eps_spatial, header["MS2"],
                  meta={"source": "fcidump"})


def read_fcidump(path) -> IntegralSet:
    with open(path) as fh:
        return parse_fcidump(fh.read())


def write_fcidump(ints: IntegralSet, orbital_energies: bool = True) -> str:
    """Serialize to FCIDUMP text; nonzero unique elements only, 17 significant digits."""
    n = ints.norb
    out = [
        f"&FCI NORB={n},NELEC={ints.n_e},MS2={ints.ms2},",
        " ORBSYM=" + ",".join("1" * n) + ",",
        " ISYM=1,",
        "&END",
    ]
    fmt = "{: .16e} {:d} {:d} {:d} {:d}"
    eri = ints.eri
    for i in range(n):
        for j in range(i + 1):
            ij = i * (i + 1) // 2 + j
            for k in range(n):
                for l in range(k + 1):
                    if k * (k + 1) // 2 + l > ij:
                        continue
                    v = eri[i, j, k, l]
                    if v != 0.0:
                        out.append(fmt.format(v, i + 1, j + 1, k + 1, l + 1))
    for i in range(n):
        for j in range(i + 1):
            if ints.h1[i, j] != 0.0:
                out.append(fmt.format(ints.h1[i, j], i + 1, j + 1, 0, 0))
    if orbital_energies:
        for i in range(n):
            out.append(fmt.format(ints.eps[2 * i], i + 1, 0, 0, 0))
    out.append(fmt.format(ints.e_nuc, 0, 0, 0, 0))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Model request.  ``electrons=None`` means half filling (``electrons = sites``)."""

    kind: str
    t: float = 1.0
    U: float = 0.0
    sites: int = 2
    electrons: int | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind in ("hubbard-dimer", "hubbard-chain"):
            if self.t == 0:
                raise InputError("hopping t must be nonzero")
            if self.sites < 2:
                raise InputError("site count must be at least 2")
            if self.kind == "hubbard-dimer" and self.sites != 2:
                raise InputError("a dimer has two sites")
            n = self.n_electrons
            if n % 2 or not 0 < n < 2 * self.sites:
                raise InputError("closed-shell models need an even electron count in (0, 2*sites)")

    @property
    def n_electrons(self) -> int:
        return self.sites if self.electrons is None else self.electrons

    @classmethod
    def hubbard(cls, t, U, sites=2, electrons=None):
        kind = "hubbard-dimer" if sites == 2 else "hubbard-chain"
        return cls(kind, t=t, U=U, sites=sites, electrons=electrons)


def _fix_signs(C):
    # make the largest component of each column positive so output is reproducible
    big = C[np.argmax(np.abs(C), axis=0), np.arange(C.shape[1])]
    return C * np.where(big < 0, -1.0, 1.0)


def _hubbard_rhf(hop, U, n_occ, max_iter=500, tol=1e-13):
    """Restricted mean-field orbitals of an on-site Hubbard model.

    The Fock matrix is ``hop + diag(U * n_i / 2)`` with ``n_i`` the total site
    density.  Starting from the tight-binding orbitals the iteration is
    already converged at half filling of a bipartite chain.  Density mixing
    starts at 1/2 and is reduced when the iteration oscillates (large U/t).
    """
    for mix in (0.5, 0.3, 0.1, 0.03):
        f, C = np.linalg.eigh(hop)
        dens = None
        for _ in range(max_iter):
            occ = C[:, :n_occ]
            new = 2.0 * np.einsum("ik,ik->i", occ, occ)
            if dens is not None and np.max(np.abs(new - dens)) < tol:
                break
            dens = new if dens is None else (1.0 - mix) * dens + mix * new
            f, C = np.linalg.eigh(hop + np.diag(0.5 * U * dens))
        else:
            continue
        break
    else:
        raise UnsupportedModelError("mean-field iteration did not converge")
    if n_occ < len(f) and f[n_occ] - f[n_occ - 1] < 1e-8:
        raise UnsupportedModelError("mean-field HOMO and LUMO are degenerate (open shell)")
    return _fix_signs(C)


def _hubbard(t, U, L, n_e):
    hop = np.zeros((L, L))
    for k in range(L - 1):
        hop[k, k + 1] = hop[k + 1, k] = -t
    C = _hubbard_rhf(hop, U, n_e // 2)
    h1 = C.T @ hop @ C
    h1[np.abs(h1) < 1e-15] = 0.0
    eri = U * np.einsum("ip,iq,ir,is->pqrs", C, C, C, C)
    eri[np.abs(eri) < 1e-15] = 0.0
    return h1, eri


def generate_model(spec: ModelSpec) -> IntegralSet:
    """Build a model integral set in its canonical mean-field orbital basis."""
    if spec.kind == "fcidump-file":
        if spec.path is None:
            raise InputError("fcidump-file model needs a path")
        return read_fcidump(spec.path)
    if spec.kind not in ("hubbard-dimer", "hubbard-chain"):
        raise UnsupportedModelError(f"unsupported model kind {spec.kind!r}")
    h1, eri = _hubbard(spec.t, spec.U, spec.sites, spec.n_electrons)
    meta = {"source": spec.kind, "t": spec.t, "U": spec.U, "sites": spec.sites,
            "electrons": spec.n_electrons}
    ints = _build(h1, eri, n_e=spec.n_electrons, meta=meta)
    # canonical-basis contract: the mean-field Fock matrix must be diagonal
    o = slice(0, ints.n_e)
    fock = ints.hcore + np.einsum("piqi->pq", ints.v_as[:, o, :, o])
    off = fock - np.diag(np.diagonal(fock))
    if np.max(np.abs(off)) > 1e-10:
        raise UnsupportedModelError("mean-field orbitals are not canonical for this model")
    return ints
