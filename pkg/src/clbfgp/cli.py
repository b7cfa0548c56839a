"""Command line interface.

Exit codes: 0 success, 1 bad input or configuration, 2 search or proof did
not succeed within its budget.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import controller as ctl
from .config import (ConfigError, ProblemFile, load_problem, parse_modes_arg, parse_vector,
                     split_list,
                     shipped_problems)
from .evolve import ConfigInvalid, run
from .expr import render
from .fitness import RSWS, Candidate, NonDifferentiableCandidate, build_conditions
from .grammar import GrammarError
from .interval import Box
from .parse import ExprSyntaxError
from .reach import lte_bounds_detailed
from .verify import BudgetExhausted, Proved, Refuted, prove_forall

log = logging.getLogger("clbfgp")

EXIT_OK, EXIT_CONFIG, EXIT_UNVERIFIED = 0, 1, 2

CONDITION_NAMES = {1: "initial set", 2: "safe boundary", 3: "decrease", 4: "goal boundary",
                   5: "goal decrease"}


def _box_arg(text: str) -> Box:
    """``"lo,hi;lo,hi"``."""
    try:
        pairs = [parse_vector(part) for part in text.split(";")]
    except ConfigError as e:
        raise argparse.ArgumentTypeError(str(e)) from e
    if any(len(pr) != 2 for pr in pairs):
        raise argparse.ArgumentTypeError(f"expected lo,hi pairs separated by ';': {text!r}")
    try:
        return Box([pr[0] for pr in pairs], [pr[1] for pr in pairs])
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _describe(out) -> str:
    if isinstance(out, Proved):
        return f"Proved ({out.boxes} boxes)"
    if isinstance(out, Refuted):
        kind = "exact" if out.exact else "delta"
        w = ", ".join(f"{v:.6g}" for v in out.witness)
        return f"Refuted ({kind}) at ({w}), claim {out.claim_value:.6g}"
    if isinstance(out, BudgetExhausted):
        return f"BudgetExhausted after {out.boxes} boxes, claim >= {out.claim_lo:.6g}"
    return str(out)


def _load(args, **overrides) -> ProblemFile:
    ov = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "G", None) is not None:
        ov["G"] = args.G
    return load_problem(args.problem, ov)


def _candidate(pf: ProblemFile, args) -> Candidate:
    return pf.candidate(getattr(args, "V", None), parse_modes_arg(getattr(args, "modes", None)))


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- subcommands ----------------------------------------------------------------------

def cmd_synth(args) -> int:
    pf = _load(args, seed=args.seed, generations=args.generations, time_limit=args.time_limit)
    report = run(pf.problem, pf.grammar, pf.gp, log=None if args.quiet else print)
    report.config = pf.effective()
    out = Path(args.out)
    _write(out / "report.json", report.to_json() + "\n")
    _write(out / "stats.csv", report.stats_csv())
    _write(out / "V.txt", report.best_V() + "\n")
    if report.best_modes() is not None:
        _write(out / "modes.txt", "\n".join(report.best_modes()) + "\n")
    state = "verified" if report.success else f"not verified ({report.stop_reason})"
    print(f"{pf.name} seed {pf.gp.seed}: {state} after {report.generations} generations, "
          f"{report.wall_time:.2f} s")
    print(f"V = {report.best_V()}")
    if report.best_modes() is not None:
        print("modes = {" + ", ".join(report.best_modes()) + "}")
    print(f"report written to {out}")
    return EXIT_OK if report.success else EXIT_UNVERIFIED


def cmd_verify(args) -> int:
    pf = _load(args, beta=args.beta, budget=args.budget)
    p = pf.problem
    cand = _candidate(pf, args)
    conds = build_conditions(p, cand)
    ok = True
    print(f"{pf.name}: V = {render(cand.V, pf.state_names)}"
          + (f", beta = {p.beta}" if p.spec == RSWS else ""))
    for cond in conds.verifiable():
        t0 = time.perf_counter()
        out = prove_forall(cond.query(cand.params, p.delta), budget=pf.verify.budget,
                           min_width=pf.verify.min_width)
        ok &= isinstance(out, Proved)
        print(f"  condition {cond.index} ({CONDITION_NAMES[cond.index]}): {_describe(out)} "
              f"[{time.perf_counter() - t0:.2f} s]")
    return EXIT_OK if ok else EXIT_UNVERIFIED


def cmd_epsilon(args) -> int:
    pf = _load(args)
    p = pf.problem
    t0 = time.perf_counter()
    eps, loose = lte_bounds_detailed(p.sys, pf.verify.lte_tol, pf.verify.lte_budget)
    dt = time.perf_counter() - t0
    print(f"{pf.name}: eps = ({', '.join(f'{v:.6g}' for v in eps)}) [{dt:.2f} s]")
    for i, (v, lz) in enumerate(zip(eps, loose)):
        line = f"  {pf.state_names[i]}: {v:.6g}" + ("  (loose upper bound)" if lz else "")
        if pf.eps_given:
            ref = float(p.eps[i])
            rel = abs(v - ref) / ref if ref else abs(v - ref)
            line += f"  file value {ref:.6g}, relative difference {rel:.2%}"
        print(line)
    return EXIT_OK


def cmd_beta(args) -> int:
    pf = _load(args, budget=args.budget)
    cand = _candidate(pf, args)
    res = ctl.find_beta(pf.problem, cand, seed=pf.gp.seed, budget=pf.verify.budget)
    if res.beta is None:
        print(f"{pf.name}: no beta found: {res.reason}")
        return EXIT_UNVERIFIED
    print(f"{pf.name}: beta = {res.beta:.6f}")
    return EXIT_OK


def cmd_alpha(args) -> int:
    pf = _load(args, budget=args.budget)
    cand = _candidate(pf, args)
    alpha = pf.alpha(None if args.alpha is None else split_list(args.alpha))
    if alpha is None:
        raise ConfigError("no alpha functions given (use --alpha or control.alpha)")
    c = ctl.SwitchedController.from_candidate(pf.problem, cand, ctl.RELAXED, alpha)
    outs = ctl.verify_alpha(pf.problem, c, budget=pf.verify.budget, min_width=pf.verify.min_width)
    for q, out in enumerate(outs):
        print(f"  mode {q + 1}: {_describe(out)}")
    return EXIT_OK if all(isinstance(o, Proved) for o in outs) else EXIT_UNVERIFIED


def _bench_one(problem: str, seed: int, generations: int | None, out: str | None):
    pf = load_problem(problem, {"seed": seed, "generations": generations})
    report = run(pf.problem, pf.grammar, pf.gp)
    report.config = pf.effective()
    if out:
        d = Path(out) / f"seed_{seed}"
        _write(d / "report.json", report.to_json() + "\n")
        _write(d / "stats.csv", report.stats_csv())
    return seed, report.success, report.generations, report.wall_time


def bench_table(rows: list[tuple[int, bool, int, float]]) -> str:
    ok = [r for r in rows if r[1]]
    lines = [f"{'':8}{'min':>10}{'max':>10}{'mu':>10}{'sigma':>10}"]
    for label, k, fmt in (("# gen.", 2, "{:>10.0f}"), ("t [s]", 3, "{:>10.2f}")):
        vals = [float(r[k]) for r in ok]
        if vals:
            sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
            cells = [min(vals), max(vals), statistics.fmean(vals)]
            lines.append(f"{label:8}" + "".join(fmt.format(v) for v in cells[:2])
                         + f"{cells[2]:>10.2f}{sd:>10.2f}")
        else:
            lines.append(f"{label:8}" + f"{'-':>10}" * 4)
    lines.append(f"solved {len(ok)}/{len(rows)} runs")
    return "\n".join(lines)


def cmd_bench(args) -> int:
    pf = _load(args)  # validates the file up front
    seeds = [pf.gp.seed + k for k in range(args.runs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = list(ex.map(_bench_one, [args.problem] * len(seeds), seeds,
                               [args.generations] * len(seeds), [args.out] * len(seeds)))
    else:
        rows = [_bench_one(args.problem, s, args.generations, args.out) for s in seeds]
    rows.sort()
    for seed, ok, gens, wall in rows:
        print(f"seed {seed}: {'solved' if ok else 'failed'} in {gens} generations, {wall:.2f} s")
    print(bench_table(rows))
    if args.out:
        _write(Path(args.out) / "bench.json", json.dumps(
            {"config": pf.effective(), "runs": [
                {"seed": s, "success": ok, "generations": g, "wall_time_s": round(w, 3)}
                for s, ok, g, w in rows]}, indent=2) + "\n")
    return EXIT_OK if any(r[1] for r in rows) else EXIT_UNVERIFIED


def cmd_simulate(args) -> int:
    pf = _load(args)
    p = pf.problem
    cand = _candidate(pf, args)
    alpha = pf.alpha(None if args.alpha is None else split_list(args.alpha))
    law = args.law or (ctl.RELAXED if alpha is not None else ctl.FULL)
    if law == ctl.FULL:
        alpha = None
    c = ctl.SwitchedController.from_candidate(p, cand, law, alpha)
    x0s = [parse_vector(t, pf.constants) for t in args.x0]
    out = Path(args.out)
    all_ok = True
    for k, x0 in enumerate(x0s):
        if len(x0) != p.n:
            raise ConfigError(f"initial state {x0} has {len(x0)} entries, expected {p.n}")
        if not p.S.contains(np.array(x0)):
            log.warning("initial state %s lies outside S; simulating anyway", x0)
        tr = ctl.simulate(p, c, x0, args.t_end, args.substeps)
        spec = ctl.check_spec(tr, p)
        bad = ctl.decrease_violations(tr, p, c)
        path = out / f"traj_{k}.csv"
        _write(path, tr.to_csv(pf.state_names))
        all_ok &= spec.rws
        reach = "never" if spec.reach_time is None else f"{spec.reach_time:.3f} s"
        print(f"x0 = {tuple(x0)}: rws={str(spec.rws).lower()} reach {reach}, "
              f"rsws={str(spec.rsws).lower()}, decrease violations {len(bad)}, "
              f"left domain {str(tr.left_domain).lower()} -> {path}")
    return EXIT_OK if all_ok else EXIT_UNVERIFIED


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clbfgp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def problem(sp):
        sp.add_argument("problem", help="problem file or shipped benchmark name "
                        f"({', '.join(shipped_problems())})")

    def certificate(sp):
        sp.add_argument("--V", help="certificate expression (default: [candidate] V)")
        sp.add_argument("--modes", action="append", metavar="MODE",
                        help="one mode of an evolved-mode problem (repeatable); separate "
                             "input components with ';', e.g. --modes='-2*x1 - x2'")

    sp = sub.add_parser("synth", help="evolve a certificate")
    problem(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", default="synth_out")
    sp.add_argument("--generations", type=int)
    sp.add_argument("--time-limit", type=float, help="wall clock limit in seconds")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("verify", help="prove the certificate conditions")
    problem(sp)
    certificate(sp)
    sp.add_argument("--beta", type=float, help="also prove the reach-and-stay conditions")
    sp.add_argument("--G", type=_box_arg, help="override the goal set, e.g. --G='-1,-0.5;-1.5,1.5'")
    sp.add_argument("--budget", type=int, help="prover box budget per condition")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("epsilon", help="certified truncation error constants")
    problem(sp)
    sp.set_defaults(func=cmd_epsilon)

    sp = sub.add_parser("beta", help="search the largest certifiable beta")
    problem(sp)
    certificate(sp)
    sp.add_argument("--G", type=_box_arg, help="override the goal set, e.g. --G='-1,-0.5;-1.5,1.5'")
    sp.add_argument("--budget", type=int)
    sp.set_defaults(func=cmd_beta)

    sp = sub.add_parser("alpha", help="prove the relaxed switching law per mode")
    problem(sp)
    certificate(sp)
    sp.add_argument("--alpha", metavar="EXPRS", help="comma separated, one per mode")
    sp.add_argument("--budget", type=int)
    sp.set_defaults(func=cmd_alpha)

    sp = sub.add_parser("bench", help="repeat synthesis over consecutive seeds")
    problem(sp)
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--generations", type=int)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", help="directory for per-seed reports")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("simulate", help="closed-loop simulation to CSV")
    problem(sp)
    certificate(sp)
    sp.add_argument("--alpha", metavar="EXPRS",
                    help="comma separated relaxed law offsets (default: control.alpha)")
    sp.add_argument("--law", choices=[ctl.FULL, ctl.RELAXED])
    sp.add_argument("--x0", action="append", required=True, metavar="X0",
                    help="initial state (repeatable), e.g. --x0=-pi,10")
    sp.add_argument("--t-end", type=float, default=10.0)
    sp.add_argument("--substeps", type=int, default=10)
    sp.add_argument("--out", default="sim_out")
    sp.set_defaults(func=cmd_simulate)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if getattr(args, "runs", 1) < 1 or getattr(args, "jobs", 1) < 1:
        print("error: --runs and --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, ConfigInvalid, ExprSyntaxError, GrammarError,
            NonDifferentiableCandidate) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
