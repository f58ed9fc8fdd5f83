"""Command-line entry point: gen, solve, bench, oracle, validate."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .generators import ArenaSpec, WarehouseSpec, generate_arenas, generate_warehouse
from .hierarchy import StateFeatures
from .mdp import ModelError, Objective, check_ssp_assumptions, parse_model, serialize_model
from .oracle import enumerate_policies

log = logging.getLogger("sharpmdp")

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--objective", choices=["pmax", "rmin"], help="default: from the generator, else pmax")
    p.add_argument("--goal", help="goal label (default: goal, or finished for arenas)")


def _engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--engine", choices=bench.ENGINES, default="sharp")
    pre = p.add_mutually_exclusive_group()
    pre.add_argument("--pre", dest="pre", action="store_true", help="pin Prob0 states before iterating")
    pre.add_argument("--nopre", dest="pre", action="store_false")
    p.set_defaults(pre=False)
    p.add_argument("--partition", default="grid:8x8", help="grid:NXxNY, scc or counter:<feature>:<width>")
    p.add_argument("--depth", type=int, default=1, help="maximum hierarchy depth D")
    p.add_argument("--theta", type=float, default=0.5, help="refinement threshold")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--eta-thr", type=float, default=None,
                   help="boundary-change threshold (default 1e-3 pmax, 1e-6 rmin)")
    p.add_argument("--beta", type=float, default=1e-6)
    p.add_argument("--spread", choices=["absolute", "normalized"], default="absolute")
    p.add_argument("--max-local-iters", type=int, default=None)
    p.add_argument("--cold-start", action="store_true", help="re-solve leaves from zero, not previous values")
    p.add_argument("--rmin-initial", type=float, default=0.0, help="starting value of free states (rmin)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sharpmdp", description="Explicit-state MDP solvers and benchmarks.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a generated model and its features sidecar")
    g.add_argument("family", choices=["warehouse", "arenas"])
    g.add_argument("--n", type=int, default=64)
    g.add_argument("--layout", choices=["nw", "sw", "mw", "randmw"], default="nw")
    g.add_argument("--variant", choices=["pmax", "rmin"], default="rmin")
    g.add_argument("--p-succ", type=float, default=0.9)
    g.add_argument("--p-fail", type=float, default=5e-4)
    g.add_argument("--p-move", type=float, default=0.8)
    g.add_argument("--walls", type=int, default=5, help="wall count for randmw")
    g.add_argument("--k", type=int, default=2, help="number of arenas")
    g.add_argument("--size", type=int, default=64, help="states per arena")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="model path; features go next to it with suffix .features")

    s = sub.add_parser("solve", help="solve one model")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model file in the explicit text format")
    src.add_argument("--gen", help="generator spec, e.g. warehouse:n=64:layout=nw:variant=rmin")
    s.add_argument("--features", help="features file (default: <model>.features if present)")
    _model_flags(s)
    _engine_flags(s)
    s.add_argument("--max-iterations", type=int, default=10**7)
    s.add_argument("--out", default=".", help="output directory")

    b = sub.add_parser("bench", help="run a named benchmark suite")
    b.add_argument("--suite", choices=sorted(bench.SUITES), default="desk")
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--parallel", action="store_true", help="run suite members concurrently")
    b.add_argument("--seed", type=int, default=0, help="arena seed for the desk suite")
    b.add_argument("--out", default="bench-out")

    o = sub.add_parser("oracle", help="exhaustive policy enumeration on a tiny model")
    o.add_argument("--model", required=True)
    _model_flags(o)
    o.add_argument("--out", help="CSV path (default: stdout)")

    v = sub.add_parser("validate", help="parse a model and check solver assumptions")
    v.add_argument("--model", required=True)
    _model_flags(v)
    return ap


def _load(args) -> bench.Instance:
    if getattr(args, "gen", None):
        inst = bench.build_instance(args.gen, args.goal)
        if args.objective:
            inst.objective = Objective.parse(args.objective, inst.objective.goal_label)
        return inst
    path = Path(args.model)
    with open(path) as fh:
        mdp = parse_model(fh)
    features = None
    fpath = getattr(args, "features", None) or path.with_suffix(".features")
    if Path(fpath).exists():
        with open(fpath) as fh:
            features = StateFeatures.read(fh, mdp.num_states)
    objective = Objective.parse(args.objective or "pmax", args.goal or "goal")
    return bench.Instance(str(path), mdp, features, objective)


def _fmt(x: float) -> str:
    return repr(float(x)) if np.isfinite(x) else ("inf" if x > 0 else "-inf")


def cmd_gen(args) -> int:
    if args.family == "warehouse":
        mdp, features = generate_warehouse(WarehouseSpec(
            args.n, args.layout, args.variant, args.p_succ, args.p_fail, args.p_move, args.seed, args.walls))
    else:
        mdp, features = generate_arenas(ArenaSpec(args.k, args.size, args.seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        serialize_model(mdp, fh)
    with open(out.with_suffix(".features"), "w") as fh:
        features.write(fh)
    print(f"{out}: {mdp.num_states} states, {mdp.num_choices} choices, {mdp.num_transitions} transitions")
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = _load(args)
    spec = bench.EngineSpec(
        args.engine, args.partition, args.depth, args.theta, args.epsilon, args.eta_thr, args.beta,
        args.spread, args.max_local_iters, not args.cold_start, args.rmin_initial, args.pre,
        args.max_iterations)
    out = bench.run_engine(inst, spec)
    for w in out.report.get("warnings", []):
        log.warning("%s", w)
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "values.csv", "w") as fh:
        fh.write("state,value\n")
        fh.write("".join(f"{s},{_fmt(v)}\n" for s, v in enumerate(out.values.tolist())))
    with open(d / "policy.csv", "w") as fh:
        fh.write("state,action\n")
        fh.write("".join(f"{s},{a}\n" for s, a in enumerate(out.policy.tolist())))
    report = dict(out.report)
    report["instance"] = inst.id
    report["engine"] = args.engine
    with open(d / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"value at initial state {inst.mdp.initial}: {_fmt(out.values[inst.mdp.initial])}")
    return EXIT_OK if out.converged else EXIT_NOT_CONVERGED


def cmd_bench(args) -> int:
    cases = bench.SUITES[args.suite](**({"seed": args.seed} if args.suite == "desk" else {}))
    result = bench.run_suite(cases, args.repeats, bench.suite_reference(args.suite), args.parallel)
    paths = bench.write_suite(result, Path(args.out))
    failed = sum(r.status != "ok" for r in result.rows)
    print(f"wrote {paths[0]} and {paths[1]} ({len(result.rows)} rows, {failed} failed)")
    return EXIT_OK if failed == 0 else EXIT_NOT_CONVERGED


def cmd_oracle(args) -> int:
    inst = _load(args)
    res = enumerate_policies(inst.mdp, inst.objective)
    lines = ["state,value,optimal_actions\n"]
    for s, (v, acts) in enumerate(zip(res.values.tolist(), res.optimal_actions)):
        lines.append(f"{s},{_fmt(v)},{' '.join(map(str, sorted(acts)))}\n")
    text = "".join(lines)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("enumerated %d policies", res.count)
    return EXIT_OK


def cmd_validate(args) -> int:
    inst = _load(args)
    mdp = inst.mdp
    print(f"ok: {mdp.num_states} states, {mdp.num_choices} choices, {mdp.num_transitions} transitions")
    check = check_ssp_assumptions(mdp, inst.objective)
    for s, msg in check.violations[:20]:
        print(f"state {s}: {msg}")
    if len(check.violations) > 20:
        print(f"... {len(check.violations) - 20} more")
    if check.alpha is not None:
        print(f"uniform absorption alpha = {check.alpha:g}")
    return EXIT_OK if check.ok else EXIT_NOT_CONVERGED


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "bench": cmd_bench, "oracle": cmd_oracle, "validate": cmd_validate}


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ModelError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
