"""Command-line driver: ``timely-sched <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bounds, experiments, sim
from .dual import ConvergenceError, price_cap, subgradient_search, write_trace
from .model import MODES, ValidationError, check, load_config
from .sps import table_to_csv

log = logging.getLogger("timely_sched")


def _system(args):
    system = load_config(args.config) if args.config else experiments.reference_preset()
    if args.capacity is not None:
        system = system.replace(capacity=args.capacity)
    return check(system)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _write_policies(sol, out: Path, prefix: str) -> list[Path]:
    paths = []
    for n, pol in enumerate(sol.policies, start=1):
        p = out / f"{prefix}_user{n}.csv"
        table_to_csv(pol, p)
        paths.append(p)
    return paths


def cmd_solve(args) -> int:
    system = _system(args)
    out = _out(args)
    sol = subgradient_search(system, args.mode, tol=args.tol)
    _write_json(out / f"solution_{args.mode}.json", sol.to_json())
    write_trace(sol, out / f"trace_{args.mode}.csv")
    _write_policies(sol, out, f"policy_{args.mode}")
    print(f"{args.mode}: lambda*={sol.lam:.6f} phi*={sol.phi:.6f} E_av={sol.E_av:.6f}")
    return 0


def cmd_simulate(args) -> int:
    system = _system(args)
    out = _out(args)
    sol = subgradient_search(system, args.mode, tol=args.tol)
    trace = out / f"sim_trace_{args.mode}.csv" if args.trace else None
    metrics = sim.run(system, sol, args.slots, args.seed, defer=args.defer, trace_path=trace)
    summary = metrics.to_json() | {"mode": args.mode, "phi_star": sol.phi}
    _write_json(out / f"sim_{args.mode}.json", summary)
    se = metrics.std_errors["phi"]
    print(f"{args.mode}: phi_sim={metrics.phi:.4f} (se {se:.4f}) phi*={sol.phi:.4f} E_av={metrics.E_av:.4f}")
    return 0


def cmd_bounds(args) -> int:
    system = _system(args)
    out = _out(args)
    hi = args.lam_max if args.lam_max is not None else price_cap(system)
    rows = bounds.bound_curve(system, args.mode, np.linspace(0.0, hi, args.points))
    bounds.bound_curve_csv(rows, out / f"bounds_{args.mode}.csv")
    summary = {"mode": args.mode}
    if args.mode != "zero":
        lo, up = bounds.improvement_bounds_general(system, args.mode)
        summary |= {"improvement_lower": lo, "improvement_upper": up}
        print(f"{args.mode}: improvement in [{lo:.4f}, {up:.4f}]")
    _write_json(out / f"bounds_{args.mode}.json", summary)
    return 0


def cmd_sweep(args) -> int:
    if not args.sweep:
        raise ValueError("sweep needs --sweep axis=lo:hi:step")
    system = _system(args)
    out = _out(args)
    axis, values = experiments.parse_sweep(args.sweep)
    points = experiments.run_sweep(system, axis, values, args.mode, with_budget=not args.no_budget)
    experiments.sweep_to_csv(points, out / f"sweep_{axis}_{args.mode}.csv")
    for pt in points:
        print(f"{axis}={pt.value:g}: phi0={pt.phi0:.4f} phi={pt.phi:.4f} equivalent B={pt.equivalent_budget:.4f}")
    return 0


def cmd_tables(args) -> int:
    system = _system(args)
    out = _out(args)
    compare = not args.config
    failures = 0
    for mode in MODES:
        sol = subgradient_search(system, mode, tol=args.tol)
        _write_policies(sol, out, f"table_{mode}")
        _write_json(out / f"solution_{mode}.json", sol.to_json())
        line = f"{mode}: lambda*={sol.lam:.6f} phi*={sol.phi:.6f}"
        if compare:
            bad = experiments.compare_tables(sol, mode, args.table_tol)
            line += f" reference mismatches={len(bad)}"
            for msg in bad:
                log.warning("%s: %s", mode, msg)
            failures += bool(bad)
        print(line)
    return 1 if args.strict and failures else 0


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "bounds": cmd_bounds,
    "sweep": cmd_sweep,
    "tables": cmd_tables,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="timely-sched", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="system JSON (default: built-in reference preset)")
    ap.add_argument("--mode", choices=MODES, default="imperfect")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--slots", type=int, default=10**6, help="simulation horizon")
    ap.add_argument("--sweep", help="axis=lo:hi:step with axis in deadline, window, p, q, B")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--capacity", type=int, help="per-slot transmission cap")
    ap.add_argument("--defer", action="store_true", help="keep truncated packets instead of discarding them")
    ap.add_argument("--trace", action="store_true", help="write a per-slot simulation trace")
    ap.add_argument("--tol", type=float, default=1e-6, help="price search tolerance")
    ap.add_argument("--table-tol", type=float, default=0.05, help="reference table tolerance")
    ap.add_argument("--strict", action="store_true", help="fail when reference tables mismatch")
    ap.add_argument("--points", type=int, default=51, help="price samples for bound curves")
    ap.add_argument("--lam-max", type=float, help="largest price on bound curves")
    ap.add_argument("--no-budget", action="store_true", help="skip the equivalent-budget column")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
