"""Command-line front end: ``mbgf {exact,pt,tda,scgf2,model,roots} ...``."""

from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np

from . import __version__
from .dyson import (central_bracket, check_sum_rules, fermi_level, find_brackets, galitskii_migdal,
                    solve_diagonal, solve_matrix)
from .errors import InputError, MBGFError
from .fci import DEFAULT_SECTOR_CAP, solve_fci
from .integrals import ModelSpec, generate_model, read_fcidump, write_fcidump
from .perturbation import MAX_ORDER, LambdaExpansion, LambdaStencil, OrderSelfEnergy
from .resummation import DEFAULT_POLE_CAP, TDA2SelfEnergy, scgf2_run
from .selfenergy import exact_evaluator
from .tables import fmt, input_checksum, render_csv, render_json, write_output
from .taylor import DEFAULT_POLES, convergence_map, model_g, partial_sums

__all__ = ["build_parser", "main", "run"]

SINGULAR_MARGIN = 1e-8


def _hubbard(text):
    parts = text.split(",")
    if not 2 <= len(parts) <= 4:
        raise argparse.ArgumentTypeError("expected t,U[,sites[,electrons]]")
    try:
        t, U = float(parts[0]), float(parts[1])
        sites = int(parts[2]) if len(parts) > 2 else 2
        electrons = int(parts[3]) if len(parts) > 3 else None
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return t, U, sites, electrons


def _orders(text):
    try:
        out = sorted({int(x) for x in text.split(",")})
    except ValueError:
        raise argparse.ArgumentTypeError("expected a comma-separated list of integers") from None
    if not out or out[0] < 0:
        raise argparse.ArgumentTypeError("orders must be nonnegative")
    return out


def _orbitals(text):
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("expected orbital indices like 1 or 0,1") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("input")
    src.add_argument("--fcidump", metavar="PATH", help="integral file")
    src.add_argument("--hubbard", type=_hubbard, metavar="t,U[,sites[,electrons]]",
                     help="open Hubbard chain (default: dimer at half filling)")
    grid = common.add_argument_group("frequency grid (hartree)")
    grid.add_argument("--omega-min", type=float)
    grid.add_argument("--omega-max", type=float)
    grid.add_argument("--omega-step", type=float, default=0.01)
    out = common.add_argument_group("output")
    out.add_argument("--out", default="-", metavar="PATH", help="table destination (default stdout)")
    out.add_argument("--format", choices=("csv", "json"), default="csv")
    lim = common.add_argument_group("limits")
    lim.add_argument("--max-sector-dim", type=int, default=DEFAULT_SECTOR_CAP)
    lim.add_argument("--pole-cap", type=int, default=DEFAULT_POLE_CAP)
    lim.add_argument("--scan", type=int, default=2001, help="scan points per bracket")
    sel = common.add_argument_group("selection")
    sel.add_argument("--orbital", type=_orbitals, help="spin-orbital index or list (default HOMO)")
    mode = sel.add_mutually_exclusive_group()
    mode.add_argument("--diagonal", dest="mode", action="store_const", const="diagonal")
    mode.add_argument("--matrix", dest="mode", action="store_const", const="matrix")
    sel.add_argument("--min-residue", type=float, default=0.0)

    parser = argparse.ArgumentParser(prog="mbgf", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mbgf {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("exact", parents=[common], help="exact self-energy curves from FCI")
    p = sub.add_parser("pt", parents=[common], help="perturbation corrections and order-n roots")
    p.add_argument("--order", type=int, default=2)
    p = sub.add_parser("tda", parents=[common], help="TDA(2) self-energy after N substitution cycles")
    p.add_argument("--cycles", type=int, default=1)
    p = sub.add_parser("scgf2", parents=[common], help="diagonal self-consistent second order")
    p.add_argument("--cycles", type=int, default=1)
    p = sub.add_parser("model", parents=[common], help="four-pole Taylor model")
    p.add_argument("--orders", type=_orders, default=[0, 1, 2, 19])
    p = sub.add_parser("roots", parents=[common], help="Dyson roots and residues")
    p.add_argument("--method", choices=("exact", "order", "tda", "scgf2"), default=None)
    p.add_argument("--exact", dest="method", action="store_const", const="exact")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--cycles", type=int, default=1)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load(args):
    if args.fcidump and args.hubbard:
        raise InputError("give either --fcidump or --hubbard, not both")
    if args.fcidump:
        with open(args.fcidump, "rb") as fh:
            raw = fh.read()
        return read_fcidump(args.fcidump), input_checksum(raw.decode("utf-8", "replace"))
    t, U, sites, electrons = args.hubbard or (1.0, 2.0, 2, None)
    ints = generate_model(ModelSpec.hubbard(t, U, sites, electrons))
    return ints, input_checksum(write_fcidump(ints))


def _grid(args, lo, hi):
    lo = lo if args.omega_min is None else args.omega_min
    hi = hi if args.omega_max is None else args.omega_max
    if not lo < hi:
        raise InputError("omega-min must be below omega-max")
    if args.omega_step <= 0:
        raise InputError("omega-step must be positive")
    n = int(np.floor((hi - lo) / args.omega_step + 1e-9)) + 1
    if n > 10**6:
        raise InputError("frequency grid exceeds 10^6 points")
    return lo + args.omega_step * np.arange(n)


def _default_window(ev):
    anchor = np.concatenate([ev.singularities, ev.eps])
    lo, hi = float(np.floor(anchor.min() - 2.0)), float(np.ceil(anchor.max() + 2.0))
    return lo, hi


def _orbital_list(args, ints):
    qs = args.orbital if args.orbital is not None else [ints.homo]
    for q in qs:
        if not 0 <= q < ints.m:
            raise InputError(f"orbital {q} outside 0..{ints.m - 1}")
    return qs


def _near_singular(ev, grid):
    margin = max(SINGULAR_MARGIN, ev.reliable_distance)
    if ev.singularities.size == 0:
        return np.zeros(grid.shape, dtype=bool)
    return np.min(np.abs(grid[:, None] - ev.singularities[None, :]), axis=1) < margin


def _curves(ev, grid, qs, mode):
    """Columns and value matrix for self-energy curves; near-singular rows are NaN."""
    bad = _near_singular(ev, grid)
    good = grid[~bad]
    if mode == "matrix":
        cols = [f"eig_{k}" for k in range(ev.m)]
        vals = np.full((grid.size, ev.m), np.nan)
        if good.size:
            M = np.diag(ev.eps)[None] + ev(good)
            vals[~bad] = np.linalg.eigvalsh(M)
    else:
        cols = [f"sigma_{q}_{q}" for q in qs]
        vals = np.full((grid.size, len(qs)), np.nan)
        if good.size:
            S = ev(good)
            vals[~bad] = np.stack([S[:, q, q] for q in qs], axis=1)
    return cols, vals, int(bad.sum())


def _bracket_report(ev, q, n_scan):
    """Root count per bracket of orbital ``q`` and the satellite brackets without roots."""
    w_fermi = ev.w_fermi
    brackets = find_brackets(ev, q)
    roots = solve_diagonal(ev, q, brackets, n_scan=n_scan, w_fermi=w_fermi)
    counts = [0] * len(brackets)
    for r in roots:
        counts[r.bracket] += 1
    c = central_bracket(brackets, w_fermi)
    empty = [k for k, n in enumerate(counts) if n == 0 and k != c]
    return {
        "orbital": q,
        "brackets": [[a, b] for a, b in brackets],
        "roots_per_bracket": counts,
        "central_bracket": c,
        "satellite_brackets_without_roots": len(empty),
        "principal_root": next((r.omega for r in roots if r.principal), None),
    }


def _emit(args, columns, rows, summary, config, checksum, extra=None, stream=None):
    stream = stream or sys.stdout
    if args.format == "csv":
        text = render_csv(columns, rows, config, checksum)
    else:
        payload = {"columns": columns, "rows": rows, "summary": summary}
        payload.update(extra or {})
        text = render_json(payload, config, checksum)
    write_output(text, args.out, stream)
    dest = sys.stderr if args.out in (None, "-") else stream
    print("summary:", file=dest)
    for k, v in summary.items():
        print(f"  {k}: {fmt(v) if isinstance(v, float) else v}", file=dest)


def _config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


def _rows(grid, vals):
    return [[float(w)] + [float(x) for x in row] for w, row in zip(grid, vals)]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_exact(args, ints, checksum, stream):
    gf = solve_fci(ints, cap=args.max_sector_dim)
    ev = exact_evaluator(gf)
    grid = _grid(args, *_default_window(ev))
    qs = _orbital_list(args, ints)
    cols, vals, masked = _curves(ev, grid, qs, args.mode or "diagonal")
    poles = gf.poles.active()[0]
    summary = {
        "fci_energy": gf.total_energy,
        "hf_energy": ints.hf_energy(),
        "green_poles": int(poles.size),
        "ip_states": gf.n_ip_states,
        "ea_states": gf.n_ea_states,
        "completeness_deviation": gf.poles.completeness() - ints.m,
        "self_energy_poles": int(ev.singularities.size),
        "masked_grid_points": masked,
    }
    _emit(args, ["omega"] + cols, _rows(grid, vals), summary, _config(args), checksum,
          {"green_poles": poles.tolist()}, stream)


def _order_evaluator(args, ints, order):
    if not 0 <= order <= MAX_ORDER:
        raise InputError(f"--order must lie in [0, {MAX_ORDER}]")
    stencil = LambdaStencil(max_order=max(order, 1))
    return OrderSelfEnergy(ints, order, LambdaExpansion(ints, stencil, cap=args.max_sector_dim))


def _cmd_pt(args, ints, checksum, stream):
    ev = _order_evaluator(args, ints, args.order)
    ev.w_fermi = fermi_level(ints.eps, ints.n_e)
    grid = _grid(args, *_default_window(ev))
    qs = _orbital_list(args, ints)
    bad = _near_singular(ev, grid)
    good = grid[~bad]
    n = args.order
    cols, vals = [], np.full((grid.size, len(qs) * (n + 3)), np.nan)
    if good.size:
        coef, err = ev.expansion.coefficients(good, n, with_error=True)
    blocks = []
    for q in qs:
        cols += [f"delta{k}_{q}_{q}" for k in range(n + 1)] + [f"sigma{n}_{q}_{q}", f"error_{q}_{q}"]
        if good.size:
            d = coef[:, :, q, q].T
            blocks.append(np.column_stack([d, d.sum(axis=1), np.abs(err[:, :, q, q]).sum(axis=0)]))
    if good.size:
        vals[~bad] = np.hstack(blocks)
    report = _bracket_report(ev, qs[0], args.scan)
    summary = {
        "order": n,
        "stencil_condition_number": ev.expansion.stencil.condition_number,
        "fci_solves": ev.expansion.solves,
        "masked_grid_points": int(bad.sum()),
        "brackets": len(report["brackets"]),
        "roots_per_bracket": report["roots_per_bracket"],
        "central_bracket": report["central_bracket"],
        "satellite_brackets_without_roots": report["satellite_brackets_without_roots"],
        "principal_root": report["principal_root"],
    }
    _emit(args, ["omega"] + cols, _rows(grid, vals), summary, _config(args), checksum,
          {"bracket_report": report}, stream)


def _cmd_tda(args, ints, checksum, stream):
    if args.cycles < 0:
        raise InputError("--cycles must be nonnegative")
    ev = TDA2SelfEnergy(ints, args.cycles)
    grid = _grid(args, *_default_window(ev))
    qs = _orbital_list(args, ints)
    cols, vals, masked = _curves(ev, grid, qs, args.mode or "diagonal")
    report = _bracket_report(ev, qs[0], args.scan)
    summary = {
        "cycles": args.cycles,
        "exact_through_order": args.cycles + 1,
        "masked_grid_points": masked,
        "brackets": len(report["brackets"]),
        "roots_per_bracket": report["roots_per_bracket"],
        "central_bracket": report["central_bracket"],
        "satellite_brackets_without_roots": report["satellite_brackets_without_roots"],
    }
    _emit(args, ["omega"] + cols, _rows(grid, vals), summary, _config(args), checksum,
          {"bracket_report": report}, stream)


def _cmd_scgf2(args, ints, checksum, stream):
    if args.cycles < 0:
        raise InputError("--cycles must be nonnegative")
    if args.mode == "matrix":
        raise InputError("sc-GF2 is diagonal only")
    evs, states = scgf2_run(ints, args.cycles, pole_cap=args.pole_cap)
    qs = _orbital_list(args, ints)
    lo = min(_default_window(ev)[0] for ev in evs)
    hi = max(_default_window(ev)[1] for ev in evs)
    grid = _grid(args, lo, hi)
    cols, blocks = [], []
    for n, ev in enumerate(evs):
        c, v, _ = _curves(ev, grid, qs, "diagonal")
        cols += [f"{name}_c{n}" for name in c]
        blocks.append(v)
    reports = [s.summary() for s in states]
    summary = {
        "cycles": args.cycles,
        "pole_counts": [s.pole_count for s in states],
        "self_energy_poles": [ev.pole_count for ev in evs],
        "max_sum_rule_deviation": max(r["max_sum_rule_deviation"] for r in reports),
    }
    _emit(args, ["omega"] + cols, _rows(grid, np.hstack(blocks)), summary, _config(args), checksum,
          {"cycle_reports": reports}, stream)


def _cmd_model(args, stream):
    poles = DEFAULT_POLES
    grid = _grid(args, -3.0, 3.0)
    top = max(args.orders)
    cmap = convergence_map(poles, grid, max(top, 6))
    near = np.zeros(grid.shape, dtype=bool)
    for lam in (0.0, 1.0):
        near |= np.min(np.abs(grid[:, None] - poles.energies(lam)[None, :]), axis=1) < 1e-12
    ok = grid[~near]
    exact = np.full(grid.shape, np.nan)
    sums = np.full((top + 1, grid.size), np.nan)
    exact[~near] = model_g(poles, ok, 1.0)
    sums[:, ~near] = partial_sums(poles, ok, top)
    cols = ["omega", "exact"] + [f"order_{k}" for k in args.orders] + ["class"]
    rows = [[float(w), float(exact[i])] + [float(sums[k, i]) for k in args.orders] + [str(cmap.labels[i])]
            for i, w in enumerate(grid)]
    summary = {
        "orders": args.orders,
        "central_convergent_region": list(cmap.central) if cmap.central else None,
        "convergent_points": int(np.sum(cmap.labels == "convergent")),
        "divergent_points": int(np.sum(cmap.labels == "divergent")),
        "undetermined_points": int(np.sum(cmap.labels == "undetermined")),
    }
    checksum = input_checksum(repr(poles.coefficients))
    _emit(args, cols, rows, summary, _config(args), checksum, None, stream)


def _cmd_roots(args, ints, checksum, stream):
    method = args.method or "exact"
    mode = args.mode or "matrix"
    extra = {}
    if method == "exact":
        gf = solve_fci(ints, cap=args.max_sector_dim)
        ev = exact_evaluator(gf)
    elif method == "order":
        ev = _order_evaluator(args, ints, args.order)
    elif method == "tda":
        ev = TDA2SelfEnergy(ints, args.cycles)
    else:
        if mode == "matrix":
            raise InputError("sc-GF2 roots are diagonal only; add --diagonal")
        ev = scgf2_run(ints, args.cycles, pole_cap=args.pole_cap)[0][-1]
    ev.w_fermi = fermi_level(ints.eps, ints.n_e)
    if mode == "matrix":
        roots = solve_matrix(ev, n_scan=args.scan, w_fermi=ev.w_fermi)
        rules = check_sum_rules(roots, ints.n_e, ints.m)
    else:
        qs = args.orbital if args.orbital is not None else list(range(ints.m))
        roots = [r for q in qs for r in solve_diagonal(ev, q, n_scan=args.scan, w_fermi=ev.w_fermi)]
        rules = check_sum_rules(roots)
    summary = {"method": method, "mode": mode, "roots": len(roots),
               "ip_roots": sum(r.kind == "IP" for r in roots),
               "ea_roots": sum(r.kind == "EA" for r in roots),
               "flagged_roots": sum(r.flagged for r in roots)}
    if mode == "matrix":
        summary["ip_sum_rule_deviation"] = rules["ip_deviation"]
        summary["total_sum_rule_deviation"] = rules["total_deviation"]
        summary["galitskii_migdal_energy"] = galitskii_migdal(roots, ints)
    else:
        summary["max_orbital_sum_rule_deviation"] = rules["max_abs_deviation"]
    if method == "exact":
        summary["fci_energy"] = gf.total_energy
        poles = np.sort(gf.poles.active()[0])
        found = np.unique(np.array([r.omega for r in roots]))
        found = found[np.concatenate([[True], np.diff(found) > 1e-9])] if found.size else found
        if found.size == poles.size:
            summary["max_fci_pole_deviation"] = float(np.max(np.abs(found - poles)))
        else:
            summary["max_fci_pole_deviation"] = None
            summary["fci_pole_count"] = int(poles.size)
    kept = [r for r in roots if r.residue >= args.min_residue]
    summary["reported_roots"] = len(kept)
    cols = ["omega", "residue", "residue_error", "kind", "bracket", "orbital", "principal",
            "flagged", "degeneracy"]
    rows = [[r.omega, r.residue, r.residue_error, r.kind, r.bracket,
             -1 if r.orbital is None else r.orbital, r.principal, r.flagged, r.degeneracy] for r in kept]
    extra["roots"] = [r.as_dict(with_vector=True) for r in kept]
    _emit(args, cols, rows, summary, _config(args), checksum, extra, stream)


def run(args, stream=None) -> int:
    stream = stream or sys.stdout
    if args.command == "model":
        _cmd_model(args, stream)
        return 0
    ints, checksum = _load(args)
    handler = {"exact": _cmd_exact, "pt": _cmd_pt, "tda": _cmd_tda,
               "scgf2": _cmd_scgf2, "roots": _cmd_roots}[args.command]
    handler(args, ints, checksum, stream)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return run(args)
    except MBGFError as exc:
        print(f"mbgf: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"mbgf: error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
