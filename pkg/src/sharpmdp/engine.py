"""Hierarchical adaptive-refinement solver.

The state space is split into blocks (the leaves of a hierarchy tree).  Each
leaf is solved as an induced sub-MDP whose boundary states are pinned to the
current global values.  Passes re-solve leaves whose boundary moved, then
split leaves whose value spread is large, until nothing changes.
"""

from __future__ import annotations

import enum
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .flat import NO_ACTION, Pinning, pin_states
from .hierarchy import (
    HierarchyNode,
    PartitionStrategy,
    StateFeatures,
    check_tree,
    initial_partition,
    refine_block,
)
from .kernel import build_system
from .local import SubMdp, assign_boundary_values, induce_submdp, solve_local
from .mdp import Mdp, Objective, ObjectiveKind

log = logging.getLogger(__name__)


class SpreadMode(enum.Enum):
    ABSOLUTE = "absolute"
    NORMALIZED = "normalized"


@dataclass(frozen=True)
class SharpConfig:
    strategy: PartitionStrategy
    max_depth: int = 1
    theta: float = 0.5
    epsilon: float = 1e-6
    eta_thr: float | None = None      # None: 1e-3 for PMax, 1e-6 for RMin
    beta: float = 1e-6
    spread_mode: SpreadMode = SpreadMode.ABSOLUTE
    max_passes: int = 10**4
    max_local_iters: int | None = None
    uncertainty_filter: bool = True   # PMax only: refine just blocks with avg in (0.1, 0.9)
    local_gauss_seidel: bool = False
    warm_start: bool = True           # re-solves start from the leaf's previous values
    use_precomputation: bool = False
    rmin_initial: float = 0.0         # starting value of free states under RMin
    parallel: bool = False
    workers: int | None = None
    check_invariants: bool = False

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max depth D must be at least 1")
        for name in ("theta", "epsilon", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.eta_thr is not None and not self.eta_thr > 0:
            raise ValueError("eta_thr must be positive")
        if self.max_passes < 1:
            raise ValueError("max_passes must be at least 1")
        if not (np.isfinite(self.rmin_initial) and self.rmin_initial >= 0):
            raise ValueError("rmin_initial must be finite and nonnegative")
        if self.max_local_iters is not None and self.max_local_iters < 1:
            raise ValueError("max_local_iters must be at least 1")

    def eta_for(self, objective: Objective) -> float:
        if self.eta_thr is not None:
            return self.eta_thr
        return 1e-3 if objective.kind is ObjectiveKind.PMAX else 1e-6


@dataclass
class SolveReport:
    values: np.ndarray
    policy: np.ndarray
    passes: int
    leaf_solve_count: int
    refinement_count: int
    eta_measured: float
    global_residual: float
    converged: bool
    num_leaves: int
    max_leaf_depth: int
    initial_state: int
    pass_times: list[float] = field(default_factory=list)
    leaf_sizes: dict = field(default_factory=dict)
    capped_local_solves: int = 0
    warnings: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    tree: HierarchyNode | None = field(default=None, repr=False, compare=False)  # final hierarchy, not serialised

    @property
    def initial_value(self) -> float:
        return float(self.values[self.initial_state])

    def to_dict(self, include_timings: bool = False, include_vectors: bool = False) -> dict:
        d = {
            "converged": self.converged,
            "initial_state": self.initial_state,
            "initial_value": self.initial_value,
            "passes": self.passes,
            "leaf_solve_count": self.leaf_solve_count,
            "refinement_count": self.refinement_count,
            "num_leaves": self.num_leaves,
            "max_leaf_depth": self.max_leaf_depth,
            "eta_measured": self.eta_measured,
            "global_residual": self.global_residual,
            "capped_local_solves": self.capped_local_solves,
            "leaf_sizes": self.leaf_sizes,
            "warnings": list(self.warnings),
            "config": self.config,
        }
        if include_timings:
            d["pass_times"] = list(self.pass_times)
        if include_vectors:
            d["values"] = [float(x) for x in self.values]
            d["policy"] = [int(a) for a in self.policy]
        return d

    def to_json(self, include_timings: bool = False, include_vectors: bool = False) -> str:
        # INFINITY values serialise as the JSON extension token Infinity
        return json.dumps(self.to_dict(include_timings, include_vectors), indent=2, sort_keys=True)


def adapt_threshold(theta: float, depth: int, objective: Objective) -> float:
    if objective.kind is ObjectiveKind.PMAX:
        return theta
    return max(0.01, theta / (10 * (1 + depth)))


def _drift(current: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Elementwise |current - previous| with INFINITY == INFINITY counting as 0."""
    same = current == previous
    with np.errstate(invalid="ignore"):
        d = np.abs(current - previous)
    d[same] = 0.0
    return d


def boundary_changed(node: HierarchyNode, values: np.ndarray, eta_thr: float) -> bool:
    """Relative sup-norm move of the node's boundary since its last solve."""
    if not node.ever_solved or node.prev_boundary is None:
        return True
    prev = node.prev_boundary
    if len(prev) == 0:
        return False
    boundary = node.submdp.boundary
    change = float(_drift(values[boundary], prev).max())
    finite = prev[np.isfinite(prev)]
    scale = max(1.0, float(np.abs(finite).max()) if len(finite) else 0.0)
    return change / scale > eta_thr


def value_spread(leaf: HierarchyNode, objective: Objective, config: SharpConfig) -> tuple[float, float] | None:
    """(spread, average) over the leaf's finite internal values, or None if nothing is free."""
    sub: SubMdp = leaf.submdp
    m = len(leaf.block)
    internal = leaf.values[:m]
    free = ~sub.fixed & np.isfinite(internal)
    if not free.any():
        return None
    vals = internal[np.isfinite(internal)]
    spread = float(vals.max() - vals.min())
    avg = float(vals.mean())
    if config.spread_mode is SpreadMode.NORMALIZED:
        spread = spread / (abs(avg) + config.beta)
    return spread, avg


def should_refine(leaf: HierarchyNode, objective: Objective, config: SharpConfig) -> bool:
    if not leaf.is_leaf or not leaf.splittable or leaf.depth >= config.max_depth:
        return False
    if not leaf.ever_solved:
        return False
    stats = value_spread(leaf, objective, config)
    if stats is None:
        return False
    tau, avg = stats
    if objective.kind is ObjectiveKind.PMAX and config.uncertainty_filter and not 0.1 < avg < 0.9:
        return False
    return tau > adapt_threshold(config.theta, leaf.depth, objective)


def propagate_values(root: HierarchyNode) -> None:
    """Copy values and actions up from leaves; the root ends up with the global vectors."""
    for child in root.children:
        if child.children:
            propagate_values(child)
        m = len(child.block)
        root.values[child.positions] = child.values[:m]
        root.policy[child.positions] = child.policy


def check_propagation(root: HierarchyNode) -> None:
    owner = np.full(len(root.block), -1, dtype=np.int64)
    for leaf in root.leaves():
        pos = np.searchsorted(root.block, leaf.block)
        if (owner[pos] >= 0).any():
            raise AssertionError("state owned by more than one leaf")
        owner[pos] = leaf.node_id
        m = len(leaf.block)
        if not np.array_equal(root.values[pos], leaf.values[:m], equal_nan=True):
            raise AssertionError(f"root values disagree with leaf {leaf.node_id}")
        if not np.array_equal(root.policy[pos], leaf.policy):
            raise AssertionError(f"root policy disagrees with leaf {leaf.node_id}")
    if (owner < 0).any():
        raise AssertionError("state owned by no leaf")


def measure_eta(root: HierarchyNode, final_values: np.ndarray) -> float:
    """Largest gap between a boundary state's final value and the pin last used for it."""
    eta = 0.0
    for leaf in root.leaves():
        if leaf.prev_boundary is None or len(leaf.prev_boundary) == 0:
            continue
        d = _drift(final_values[leaf.submdp.boundary], leaf.prev_boundary)
        eta = max(eta, float(d.max()))
    return eta


def global_residual(mdp: Mdp, objective: Objective, values: np.ndarray, pins: Pinning | None = None) -> float:
    """sup-norm of TV - V over states that are updated by value iteration."""
    if pins is None:
        pins = pin_states(mdp, objective)
    states = pins.updated
    if len(states) == 0:
        return 0.0
    system = build_system(mdp.state_ptr, mdp.actions, mdp.trans_ptr, mdp.targets, mdp.probs,
                          mdp.costs if objective.kind is ObjectiveKind.RMIN else None,
                          states, None, mdp.num_states, objective.maximize)
    best = system.reduce(system.backup(values))
    return float(_drift(best, values[states]).max())


class _Run:
    """Mutable state of one solve."""

    def __init__(self, mdp, objective, features, config):
        self.mdp, self.objective, self.features, self.config = mdp, objective, features, config
        self.pins = pin_states(mdp, objective, config.use_precomputation)
        self.eta_thr = config.eta_for(objective)
        self.values = self.pins.values.copy()
        if objective.kind is ObjectiveKind.RMIN and config.rmin_initial:
            self.values[~self.pins.pinned] = config.rmin_initial
        self.root = HierarchyNode(np.arange(mdp.num_states, dtype=np.int64), 0, 0)
        self.root.values = self.values
        self.root.policy = np.full(mdp.num_states, NO_ACTION, dtype=np.int64)
        self.next_id = 1
        self.leaf_solves = 0
        self.refinements = 0
        self.capped = 0

    # leaves are solved against ``source`` and, unless deferred, written into the live vector
    def solve_leaf(self, leaf: HierarchyNode, source: np.ndarray | None = None, write: bool = True):
        if leaf.submdp is None:
            leaf.submdp = induce_submdp(self.mdp, leaf.block, self.objective, self.pins)
        sub = leaf.submdp
        assign_boundary_values(sub, self.values if source is None else source)
        if leaf.ever_solved and self.config.warm_start:
            warm = leaf.values
        elif self.config.rmin_initial and self.objective.kind is ObjectiveKind.RMIN:
            # climbing from zero to a large start value would take that many sweeps
            warm = self.values[leaf.block]
        else:
            warm = None
        sol = solve_local(sub, self.objective, self.config.epsilon, self.config.max_local_iters,
                          warm_start=warm, gauss_seidel=self.config.local_gauss_seidel)
        leaf.values = sol.values
        leaf.policy = sol.policy
        leaf.prev_boundary = sol.values[sub.num_internal:].copy()
        leaf.local_residual = sol.residual
        leaf.ever_solved = True
        self.leaf_solves += 1
        if not sol.converged:
            self.capped += 1
        if write:
            self.values[leaf.block] = sol.values[:sub.num_internal]

    def solve_many(self, leaves: list[HierarchyNode]) -> None:
        if not self.config.parallel or len(leaves) < 2:
            for leaf in leaves:
                self.solve_leaf(leaf)
            return
        snapshot = self.values.copy()
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            list(pool.map(lambda lf: self.solve_leaf(lf, snapshot, write=False), leaves))
        for leaf in leaves:
            self.values[leaf.block] = leaf.values[:len(leaf.block)]

    def make_children(self, node: HierarchyNode, blocks) -> list[HierarchyNode]:
        kids = node.add_children(blocks, self.next_id)
        self.next_id += len(kids)
        for kid in kids:
            kid.values = None
        return kids

    def refine(self, leaf: HierarchyNode) -> bool:
        blocks = refine_block(leaf.block, leaf.depth, self.config.strategy, self.features, self.mdp)
        if len(blocks) < 2:
            leaf.splittable = False
            return False
        kids = self.make_children(leaf, blocks)
        # the node is now inner: keep values over its own block only
        leaf.values = leaf.values[:len(leaf.block)].copy()
        leaf.submdp = None
        leaf.prev_boundary = None
        self.refinements += 1
        self.solve_many(kids)
        return True

    def leaves(self) -> list[HierarchyNode]:
        return sorted(self.root.leaves(), key=lambda n: n.node_id)

    def propagate(self) -> None:
        propagate_values(self.root)
        if self.config.check_invariants:
            check_tree(self.root, self.config.max_depth)
            check_propagation(self.root)


def sharp_solve(
    mdp: Mdp,
    objective: Objective,
    features: StateFeatures | None,
    config: SharpConfig,
) -> SolveReport:
    run = _Run(mdp, objective, features, config)
    root = run.root
    blocks = initial_partition(mdp, features, config.strategy)
    kids = run.make_children(root, blocks)
    run.solve_many(kids)
    run.propagate()

    converged = False
    passes = 0
    pass_times = []
    while passes < config.max_passes:
        t0 = time.perf_counter()
        passes += 1
        old = run.values.copy()
        stale = [leaf for leaf in run.leaves() if boundary_changed(leaf, run.values, run.eta_thr)]
        run.solve_many(stale)
        run.propagate()
        candidates = [leaf for leaf in run.leaves() if should_refine(leaf, objective, config)]
        split = [leaf for leaf in candidates if run.refine(leaf)]
        if split:
            run.propagate()
        pass_times.append(time.perf_counter() - t0)
        moved = float(_drift(run.values, old).max()) if mdp.num_states else 0.0
        if split or moved > config.epsilon:
            continue
        if not any(boundary_changed(leaf, run.values, run.eta_thr) for leaf in run.leaves()):
            converged = True
            break
    if not converged:
        log.warning("hierarchical solve stopped after max_passes=%d without converging", config.max_passes)

    leaves = run.leaves()
    sizes = np.array([len(leaf.block) for leaf in leaves])
    eta = measure_eta(root, run.values)
    residual = global_residual(mdp, objective, run.values, run.pins)
    warnings = list(run.pins.warnings)
    if run.capped:
        warnings.append(f"{run.capped} local solve(s) stopped at the iteration cap")
    cfg = asdict(config)
    cfg["strategy"] = str(config.strategy)
    cfg["spread_mode"] = config.spread_mode.value
    cfg["eta_thr"] = run.eta_thr
    cfg["objective"] = objective.kind.value
    return SolveReport(
        values=run.values,
        policy=root.policy,
        passes=passes,
        leaf_solve_count=run.leaf_solves,
        refinement_count=run.refinements,
        eta_measured=eta,
        global_residual=residual,
        converged=converged,
        num_leaves=len(leaves),
        max_leaf_depth=max(leaf.depth for leaf in leaves),
        initial_state=mdp.initial,
        pass_times=pass_times,
        leaf_sizes={"min": int(sizes.min()), "max": int(sizes.max()), "mean": float(sizes.mean())},
        capped_local_solves=run.capped,
        warnings=warnings,
        config=cfg,
        tree=root,
    )
