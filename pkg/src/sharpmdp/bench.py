"""Benchmark harness: instance specs, engine runs, suites and CSV output."""

from __future__ import annotations

import csv
import logging
import re
import resource
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .engine import SharpConfig, SpreadMode, global_residual, sharp_solve
from .flat import Method, SolverConfig, value_iteration
from .generators import ArenaSpec, WarehouseSpec, generate_arenas, generate_warehouse
from .hierarchy import PartitionStrategy, StateFeatures
from .mdp import Mdp, Objective

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ENGINES = ("flat-vi", "flat-gs", "sharp")


@dataclass
class Instance:
    id: str
    mdp: Mdp
    features: StateFeatures | None
    objective: Objective


_WAREHOUSE_KEYS = {"n": int, "layout": str, "variant": str, "p_succ": float, "p_fail": float,
                   "p_move": float, "seed": int, "walls": int}
_ARENA_KEYS = {"k": int, "size": int, "seed": int}


def parse_generator(text: str) -> tuple[str, object]:
    """``warehouse:n=64:layout=nw:variant=rmin`` or ``arenas:k=2:size=40`` to a spec."""
    kind, *parts = text.split(":")
    allowed = {"warehouse": _WAREHOUSE_KEYS, "arenas": _ARENA_KEYS}.get(kind)
    if allowed is None:
        raise ValueError(f"unknown generator {kind!r} (expected warehouse or arenas)")
    args = {}
    for part in parts:
        m = re.fullmatch(r"([a-z_]+)=(.+)", part)
        if not m or m[1] not in allowed:
            raise ValueError(f"bad generator field {part!r} in {text!r}")
        try:
            args[m[1]] = allowed[m[1]](m[2])
        except ValueError:
            raise ValueError(f"bad value in {part!r}") from None
    if kind == "warehouse":
        if "n" not in args:
            raise ValueError("warehouse generator needs n=")
        if "walls" in args:
            args["wall_count"] = args.pop("walls")
        return kind, WarehouseSpec(**args)
    if "k" not in args or "size" not in args:
        raise ValueError("arenas generator needs k= and size=")
    return kind, ArenaSpec(args["k"], args["size"], args.get("seed", 0))


def build_instance(text: str, goal: str | None = None) -> Instance:
    kind, spec = parse_generator(text)
    if kind == "warehouse":
        mdp, features = generate_warehouse(spec)
        objective = Objective.parse(spec.variant, goal or "goal")
    else:
        mdp, features = generate_arenas(spec)
        objective = Objective.rmin(goal or "finished")
    return Instance(text, mdp, features, objective)


@dataclass(frozen=True)
class EngineSpec:
    engine: str
    partition: str = "grid:8x8"
    depth: int = 1
    theta: float = 0.5
    epsilon: float = 1e-6
    eta_thr: float | None = None
    beta: float = 1e-6
    spread: str = "absolute"
    max_local_iters: int | None = None
    warm_start: bool = True
    rmin_initial: float = 0.0
    pre: bool = False
    max_iterations: int = 10**7

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")

    @property
    def label(self) -> str:
        if self.engine != "sharp":
            return f"{self.engine}(eps={self.epsilon:g})"
        extra = ""
        if self.max_local_iters:
            extra += f",cap={self.max_local_iters}"
        if not self.warm_start:
            extra += ",cold"
        if self.rmin_initial:
            extra += f",init={self.rmin_initial:g}"
        eta = "default" if self.eta_thr is None else f"{self.eta_thr:g}"
        return (f"sharp({self.partition},D={self.depth},theta={self.theta:g},eps={self.epsilon:g},"
                f"eta={eta},{self.spread}{extra})")

    def sharp_config(self) -> SharpConfig:
        return SharpConfig(
            strategy=PartitionStrategy.parse(self.partition),
            max_depth=self.depth,
            theta=self.theta,
            epsilon=self.epsilon,
            eta_thr=self.eta_thr,
            beta=self.beta,
            spread_mode=SpreadMode(self.spread),
            max_local_iters=self.max_local_iters,
            warm_start=self.warm_start,
            rmin_initial=self.rmin_initial,
            use_precomputation=self.pre,
        )


@dataclass
class RunOutcome:
    values: np.ndarray
    policy: np.ndarray
    converged: bool
    seconds: float
    leaves: int = 1
    refinements: int = 0
    eta: float = 0.0
    residual: float = 0.0
    report: dict = field(default_factory=dict)


def run_engine(inst: Instance, spec: EngineSpec) -> RunOutcome:
    """Solve one instance; the clock covers only the solve."""
    mdp, obj = inst.mdp, inst.objective
    if spec.engine == "sharp":
        t0 = time.perf_counter()
        rep = sharp_solve(mdp, obj, inst.features, spec.sharp_config())
        dt = time.perf_counter() - t0
        return RunOutcome(rep.values, rep.policy, rep.converged, dt, rep.num_leaves,
                          rep.refinement_count, rep.eta_measured, rep.global_residual, rep.to_dict())
    method = Method.SYNC_VI if spec.engine == "flat-vi" else Method.GAUSS_SEIDEL
    cfg = SolverConfig(spec.epsilon, spec.max_iterations, method, spec.pre)
    t0 = time.perf_counter()
    res = value_iteration(mdp, obj, cfg)
    dt = time.perf_counter() - t0
    resid = global_residual(mdp, obj, res.values)
    report = {
        "converged": res.converged,
        "initial_state": mdp.initial,
        "initial_value": float(res.values[mdp.initial]),
        "iterations": res.iterations,
        "last_change": res.residual,
        "global_residual": resid,
        "warnings": list(res.warnings),
        "config": {"engine": spec.engine, "epsilon": spec.epsilon, "pre": spec.pre,
                   "objective": obj.kind.value},
    }
    return RunOutcome(res.values, res.policy, res.converged, dt, residual=resid, report=report)


@dataclass
class BenchRow:
    schema_version: int
    instance: str
    engine: str
    config: str
    partition: str
    depth: int | str
    theta: float | str
    epsilon: float
    eta_thr: float | str
    spread: str
    repeats: int
    time_mean: float | str
    time_std: float | str
    peak_mem_mb: float | str
    value: float | str
    leaves: int | str
    refinements: int | str
    eta: float | str
    residual: float | str
    converged: bool | str
    status: str
    timing_reliable: bool = True

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


TIMING_COLUMNS = ("time_mean", "time_std", "peak_mem_mb", "timing_reliable")


def peak_memory_mb() -> float:
    """Peak resident set of this process so far (whole harness, not one run)."""
    kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return kb / (1024 * 1024) if sys.platform == "darwin" else kb / 1024


@dataclass
class Case:
    instance: str
    engines: list[EngineSpec]


def _member(inst: Instance, spec: EngineSpec, repeats: int, reliable: bool):
    times, outcome = [], None
    try:
        for _ in range(repeats):
            outcome = run_engine(inst, spec)
            times.append(outcome.seconds)
    except Exception as exc:  # a failing member marks its row, the suite goes on
        log.error("%s on %s failed: %s", spec.label, inst.id, exc)
        return _row(inst.id, spec, repeats, status=f"failed: {exc}"), None
    std = statistics.stdev(times) if repeats >= 2 else ""
    value = float(outcome.values[inst.mdp.initial])
    row = _row(inst.id, spec, repeats, status="ok", time_mean=statistics.fmean(times), time_std=std,
               peak_mem_mb=round(peak_memory_mb(), 1), value=value, leaves=outcome.leaves,
               refinements=outcome.refinements, eta=outcome.eta, residual=outcome.residual,
               converged=outcome.converged, timing_reliable=reliable)
    return row, outcome


def _row(instance: str, spec: EngineSpec, repeats: int, status: str, **kw) -> BenchRow:
    sharp = spec.engine == "sharp"
    base = dict(
        schema_version=SCHEMA_VERSION, instance=instance, engine=spec.engine, config=spec.label,
        partition=spec.partition if sharp else "", depth=spec.depth if sharp else "",
        theta=spec.theta if sharp else "", epsilon=spec.epsilon,
        eta_thr=("default" if spec.eta_thr is None else spec.eta_thr) if sharp else "",
        spread=spec.spread if sharp else "", repeats=repeats, time_mean="", time_std="",
        peak_mem_mb="", value="", leaves="", refinements="", eta="", residual="", converged="",
        status=status,
    )
    base.update(kw)
    return BenchRow(**base)


@dataclass
class GapRow:
    instance: str
    engine: str
    config: str
    reference: str
    value: float
    reference_value: float
    gap: float
    sup_gap: float


@dataclass
class SuiteResult:
    rows: list[BenchRow]
    gaps: list[GapRow]


def run_suite(cases: list[Case], repeats: int = 1, reference: EngineSpec | None = None,
              parallel: bool = False) -> SuiteResult:
    """Run every case's engines; gaps are measured against ``reference``.

    The reference defaults to flat value iteration at epsilon 1e-6.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    reference = reference or EngineSpec("flat-vi")
    rows: list[BenchRow] = []
    gaps: list[GapRow] = []
    for case in cases:
        try:
            inst = build_instance(case.instance)
        except Exception as exc:
            log.error("cannot build %s: %s", case.instance, exc)
            rows.extend(_row(case.instance, e, repeats, status=f"failed: {exc}") for e in case.engines)
            continue
        _, ref_out = _member(inst, reference, 1, not parallel)
        if parallel:
            with ThreadPoolExecutor() as pool:
                results = list(pool.map(lambda e: _member(inst, e, repeats, False), case.engines))
        else:
            results = [_member(inst, e, repeats, True) for e in case.engines]
        for spec, (row, out) in zip(case.engines, results):
            rows.append(row)
            if out is None or ref_out is None:
                continue
            fin = np.isfinite(ref_out.values) & np.isfinite(out.values)
            same_inf = np.array_equal(np.isinf(ref_out.values), np.isinf(out.values))
            sup = float(np.abs(out.values[fin] - ref_out.values[fin]).max(initial=0.0)) if same_inf else float("inf")
            v, r = float(out.values[inst.mdp.initial]), float(ref_out.values[inst.mdp.initial])
            gaps.append(GapRow(inst.id, spec.engine, spec.label, reference.label, v, r,
                               abs(v - r) if np.isfinite(v - r) else (0.0 if v == r else float("inf")), sup))
    return SuiteResult(rows, gaps)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_suite(result: SuiteResult, out_dir: Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bench = out_dir / "bench.csv"
    gap = out_dir / "gap.csv"
    write_csv(bench, BenchRow.header(), [r.row() for r in result.rows])
    gap_header = [f.name for f in fields(GapRow)]
    write_csv(gap, gap_header, [[getattr(g, h) for h in gap_header] for g in result.gaps])
    return bench, gap


# -- named suites ----------------------------------------------------------

ETA_SWEEP = (1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.2, 0.5, 0.9, 0.99, 0.998, 1.0)


def _warehouse_engines(variant: str) -> list[EngineSpec]:
    if variant == "rmin":
        return [EngineSpec("flat-gs"),
                EngineSpec("sharp", "grid:8x8", 1, 500.0),
                EngineSpec("sharp", "grid:8x8", 2, 200.0),
                EngineSpec("sharp", "grid:4x4", 3, 200.0)]
    return [EngineSpec("flat-gs"),
            EngineSpec("sharp", "grid:8x8", 1, 0.5),
            EngineSpec("sharp", "grid:8x8", 2, 0.1),
            EngineSpec("sharp", "grid:4x4", 3, 0.05)]


def _arena_engines() -> list[EngineSpec]:
    return [EngineSpec("flat-gs"),
            EngineSpec("sharp", "counter:arena:1", 1, 0.5, spread="normalized"),
            EngineSpec("sharp", "counter:arena:2", 2, 0.5, spread="normalized"),
            EngineSpec("sharp", "scc", 2, 0.5, spread="normalized")]


def desk_suite(sizes=(64, 128, 256), arenas=(2, 4), arena_size: int = 64, seed: int = 0) -> list[Case]:
    cases = []
    for n in sizes:
        for layout in ("nw", "sw", "mw"):
            for variant in ("rmin", "pmax"):
                cases.append(Case(f"warehouse:n={n}:layout={layout}:variant={variant}",
                                  _warehouse_engines(variant)))
    for k in arenas:
        cases.append(Case(f"arenas:k={k}:size={arena_size}:seed={seed}", _arena_engines()))
    return cases


def eta_ablation_suite(n: int = 64, depths=(1, 2, 5), sweep=ETA_SWEEP, rmin_initial: float = 1e6) -> list[Case]:
    engines = [EngineSpec("sharp", "grid:8x8", d, 200.0, eta_thr=h, rmin_initial=rmin_initial)
               for d in depths for h in sweep]
    return [Case(f"warehouse:n={n}:layout=sw:variant=rmin", engines)]


def depth_ablation_suite(n: int = 512, depths=(1, 2, 3, 4, 5), cap: int = 300, theta: float = 0.05) -> list[Case]:
    engines = [EngineSpec("sharp", "grid:3x3", d, theta, max_local_iters=cap, warm_start=False)
               for d in depths]
    return [Case(f"warehouse:n={n}:layout=mw:variant=pmax", engines)]


def full_suite() -> list[Case]:
    """512 and 1024 grids; budget tens of minutes on one core."""
    cases = []
    for layout in ("nw", "sw", "mw"):
        cases.append(Case(f"warehouse:n=512:layout={layout}:variant=rmin", _warehouse_engines("rmin")))
        cases.append(Case(f"warehouse:n=512:layout={layout}:variant=pmax:p_succ=0.9", _warehouse_engines("pmax")))
    cases.append(Case("warehouse:n=1024:layout=nw:variant=pmax:p_succ=0.8", _warehouse_engines("pmax")[:2]))
    for layout in ("sw", "mw"):
        cases.append(Case(f"warehouse:n=1024:layout={layout}:variant=pmax:p_succ=0.9",
                          _warehouse_engines("pmax")[:2]))
    return cases


SUITES = {
    "desk": desk_suite,
    "eta-ablation": eta_ablation_suite,
    "depth-ablation": depth_ablation_suite,
    "full": full_suite,
}


def suite_reference(name: str) -> EngineSpec:
    # the depth ablation compares against a tight flat solve
    return EngineSpec("flat-vi", epsilon=1e-10) if name == "depth-ablation" else EngineSpec("flat-vi")
