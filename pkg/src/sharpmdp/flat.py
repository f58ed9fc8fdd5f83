"""Monolithic baselines: synchronous value iteration and Gauss-Seidel."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .kernel import build_system, iterate
from .mdp import (
    INFINITY,
    Mdp,
    ModelError,
    Objective,
    ObjectiveKind,
    backward_reachable,
    almost_sure_states,
    precompute_prob0,
)

log = logging.getLogger(__name__)

NO_ACTION = -1


class Method(enum.Enum):
    SYNC_VI = "vi"
    GAUSS_SEIDEL = "gs"


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-6
    max_iterations: int = 10**7
    method: Method = Method.SYNC_VI
    use_precomputation: bool = False
    check_monotone: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


@dataclass
class Pinning:
    """Initial vector and the states that value iteration never updates."""

    values: np.ndarray
    pinned: np.ndarray
    goal: np.ndarray
    infinite: np.ndarray
    warnings: list[str] = field(default_factory=list)

    @property
    def updated(self) -> np.ndarray:
        return np.flatnonzero(~self.pinned)


def pin_states(mdp: Mdp, objective: Objective, use_precomputation: bool = False) -> Pinning:
    """Zero vector with goals fixed; improper RMin states fixed at INFINITY.

    Absorbing non-goal states are pinned at 0 under PMax (their value can never
    move); with precomputation, every Prob0 state is pinned too.
    """
    n = mdp.num_states
    goal = np.zeros(n, dtype=bool)
    goal[objective.goal_states(mdp)] = True
    v = np.zeros(n)
    infinite = np.zeros(n, dtype=bool)
    warnings = []
    if objective.kind is ObjectiveKind.PMAX:
        v[goal] = 1.0
        pinned = goal | mdp.absorbing
        if use_precomputation:
            pinned[precompute_prob0(mdp, np.flatnonzero(goal))] = True
    else:
        infinite = ~almost_sure_states(mdp, np.flatnonzero(goal))
        v[infinite] = INFINITY
        pinned = goal | infinite
        if infinite.any():
            warnings.append(f"{int(infinite.sum())} state(s) cannot reach the goal almost surely; "
                            "their expected cost is INFINITY")
    return Pinning(v, pinned, goal, infinite, warnings)


def bellman_backup(mdp: Mdp, objective: Objective, values: np.ndarray, state: int) -> tuple[float, int]:
    """One-step optimal value and the lowest-id action attaining it."""
    rows = mdp.choices(state)
    if len(rows) == 0:
        raise ModelError(f"state {state} has no enabled action")
    best, best_action = None, NO_ACTION
    for r in rows:
        targets, probs = mdp.distribution(r)
        succ = values[targets]
        if objective.kind is ObjectiveKind.RMIN:
            q = INFINITY if np.isinf(succ).any() else float(mdp.costs[r] + probs @ succ)
        else:
            q = float(probs @ succ)
        if best is None or (q > best if objective.maximize else q < best):
            best, best_action = q, int(mdp.actions[r])
    return best, best_action


@dataclass
class FlatResult:
    values: np.ndarray
    policy: np.ndarray
    iterations: int
    converged: bool
    residual: float
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        yield self.values
        yield self.policy
        yield self.iterations


def value_iteration(mdp: Mdp, objective: Objective, config: SolverConfig = SolverConfig()) -> FlatResult:
    pins = pin_states(mdp, objective, config.use_precomputation)
    v = pins.values.copy()
    updated = pins.updated
    system = build_system(mdp.state_ptr, mdp.actions, mdp.trans_ptr, mdp.targets, mdp.probs,
                          mdp.costs if objective.kind is ObjectiveKind.RMIN else None,
                          updated, None, mdp.num_states, objective.maximize)
    res = iterate(system, v, config.epsilon, config.max_iterations,
                  gauss_seidel=config.method is Method.GAUSS_SEIDEL,
                  check_monotone=config.check_monotone)
    if not res.converged:
        log.warning("value iteration hit max_iterations=%d (last change %.3g)",
                    config.max_iterations, res.residual)
    policy = extract_policy(mdp, objective, v, pins)
    return FlatResult(v, policy, res.iterations, res.converged, res.residual, list(pins.warnings))


def extract_policy(mdp: Mdp, objective: Objective, values: np.ndarray, pins: Pinning | None = None) -> np.ndarray:
    """Arg-optimal action per state; goal, absorbing and INFINITY states get NO_ACTION."""
    if pins is None:
        pins = pin_states(mdp, objective)
    skip = pins.goal | mdp.absorbing | pins.infinite
    states = np.flatnonzero(~skip)
    policy = np.full(mdp.num_states, NO_ACTION, dtype=np.int64)
    if len(states) == 0:
        return policy
    system = build_system(mdp.state_ptr, mdp.actions, mdp.trans_ptr, mdp.targets, mdp.probs,
                          mdp.costs if objective.kind is ObjectiveKind.RMIN else None,
                          states, None, mdp.num_states, objective.maximize)
    q = system.backup(values)
    best = system.reduce(q)
    policy[states] = system.argbest(q, best)
    if objective.kind is ObjectiveKind.PMAX:
        _repair_progress(mdp, system, q, best, values, pins.goal, policy)
    return policy


def _reaches_goal(mdp: Mdp, policy: np.ndarray, goal: np.ndarray) -> np.ndarray:
    rows = np.full(mdp.num_states, -1, dtype=np.int64)
    has = policy >= 0
    rows[has] = [mdp.choice_row(s, a) for s, a in zip(np.flatnonzero(has).tolist(), policy[has].tolist())]
    mask = np.zeros(mdp.num_choices, dtype=bool)
    mask[rows[has]] = True
    return backward_reachable(mdp, np.flatnonzero(goal), mask)


def _repair_progress(mdp, system, q, best, values, goal, policy) -> None:
    """Re-pick tied maximisers so every state with positive value can reach the goal.

    A greedy tie can select a self-loop whose value equals the optimum yet
    never reaches the goal.  Ties are resolved outward from the goal: a state
    takes its lowest-id optimal action having a successor already settled.
    """
    positive = values > 0
    if (_reaches_goal(mdp, policy, goal) | ~positive).all():
        return
    states = system.states
    counts = np.diff(system.row_ptr)
    optimal = q == np.repeat(best, counts)
    owner = np.repeat(np.arange(len(states)), counts)
    settled = goal | ~positive
    todo = positive[states] & ~goal[states]
    settled[states[todo]] = False
    while True:
        touches = (system.matrix @ settled.astype(np.float64)) > 0
        ok = optimal & touches & todo[owner]
        if not ok.any():
            break
        first = np.full(len(states), len(q))
        np.minimum.at(first, owner[ok], np.flatnonzero(ok))
        hit = first < len(q)
        policy[states[hit]] = system.actions[first[hit]]
        settled[states[hit]] = True
        todo[hit] = False
