"""Induced sub-MDPs with absorbing, value-pinned boundary states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flat import NO_ACTION, Pinning, pin_states
from .kernel import BellmanSystem, build_system, iterate
from .mdp import Mdp, Objective, ObjectiveKind


@dataclass
class SubMdp:
    """Block ``internal`` plus its one-step outside successors ``boundary``.

    Local index space: internal states first (ascending global id), then
    boundary states (ascending).  ``values`` is the working vector over that
    space; boundary entries and fixed internal entries (goals, INFINITY
    states) are pinned and never updated.
    """

    parent: Mdp
    internal: np.ndarray
    boundary: np.ndarray
    fixed: np.ndarray          # mask over internal states
    system: BellmanSystem
    values: np.ndarray
    _pinned_internal: np.ndarray = field(repr=False)

    @property
    def num_internal(self) -> int:
        return len(self.internal)

    @property
    def local_states(self) -> np.ndarray:
        return np.concatenate([self.internal, self.boundary])

    @property
    def pinned(self) -> dict[int, float]:
        """Global state id -> pinned value, for boundary and fixed internal states."""
        out = {int(t): float(v) for t, v in zip(self.boundary, self.values[self.num_internal:])}
        for s in np.flatnonzero(self.fixed).tolist():
            out[int(self.internal[s])] = float(self.values[s])
        return out

    def as_mdp(self) -> Mdp:
        """Materialise the induced sub-MDP over the local index space.

        Boundary states become probability-1 self-loops; internal choices keep
        their original distributions and costs.
        """
        p = self.parent
        m, b = self.num_internal, len(self.boundary)
        local = np.full(p.num_states, -1, dtype=np.int64)
        local[self.local_states] = np.arange(m + b)
        rows = np.concatenate([np.arange(p.state_ptr[s], p.state_ptr[s + 1]) for s in self.internal])
        counts = np.diff(p.state_ptr)[self.internal]
        tcount = p.trans_ptr[rows + 1] - p.trans_ptr[rows]
        entries = np.concatenate([np.arange(p.trans_ptr[r], p.trans_ptr[r + 1]) for r in rows])
        tg = local[p.targets[entries]]
        pr = p.probs[entries]
        # re-sort targets inside each row for the local numbering
        row_of = np.repeat(np.arange(len(rows)), tcount)
        o = np.lexsort((tg, row_of))
        tg, pr = tg[o], pr[o]
        state_ptr = np.concatenate([[0], np.cumsum(counts), np.cumsum(counts)[-1] + np.arange(1, b + 1)])
        trans_ptr = np.concatenate([[0], np.cumsum(tcount), np.cumsum(tcount)[-1] + np.arange(1, b + 1)])
        labels = {name: local[st][local[st] >= 0] for name, st in p.labels.items()}
        labels["boundary"] = np.arange(m, m + b)
        init = int(local[p.initial]) if 0 <= local[p.initial] < m else 0
        return Mdp(m + b, init, state_ptr,
                   np.concatenate([p.actions[rows], np.zeros(b, dtype=np.int64)]), trans_ptr,
                   np.concatenate([tg, np.arange(m, m + b)]), np.concatenate([pr, np.ones(b)]),
                   np.concatenate([p.costs[rows], np.zeros(b)]), labels, p.action_names)


def induce_submdp(mdp: Mdp, block, objective: Objective, pins: Pinning | None = None) -> SubMdp:
    block = np.unique(np.asarray(block, dtype=np.int64))
    if len(block) == 0:
        raise ValueError("block must be nonempty")
    if pins is None:
        pins = pin_states(mdp, objective)
    n = mdp.num_states
    inside = np.zeros(n, dtype=bool)
    inside[block] = True
    lo, hi = mdp.trans_ptr[mdp.state_ptr[block]], mdp.trans_ptr[mdp.state_ptr[block + 1]]
    counts = hi - lo
    entries = np.repeat(lo - np.concatenate(([0], np.cumsum(counts)[:-1])), counts) + np.arange(counts.sum())
    succ = mdp.targets[entries]
    boundary = np.unique(succ[~inside[succ]])
    m = len(block)
    columns = np.full(n, -1, dtype=np.int64)
    columns[block] = np.arange(m)
    columns[boundary] = m + np.arange(len(boundary))
    fixed = pins.pinned[block]
    system = build_system(mdp.state_ptr, mdp.actions, mdp.trans_ptr, mdp.targets, mdp.probs,
                          mdp.costs if objective.kind is ObjectiveKind.RMIN else None,
                          block[~fixed], columns, m + len(boundary), objective.maximize)
    values = np.zeros(m + len(boundary))
    pinned_internal = pins.values[block][fixed]
    values[:m][fixed] = pinned_internal
    return SubMdp(mdp, block, boundary, fixed, system, values, pinned_internal)


def assign_boundary_values(sub: SubMdp, global_values: np.ndarray) -> SubMdp:
    """Pin every boundary state to its current global value."""
    v = np.asarray(global_values)
    if v.shape != (sub.parent.num_states,):
        raise ValueError("global value vector does not cover the model")
    pins = v[sub.boundary]
    if np.isnan(pins).any():
        raise ValueError("missing global value for a boundary state")
    m = sub.num_internal
    sub.values[m:] = pins
    sub.values[:m][sub.fixed] = sub._pinned_internal
    return sub


@dataclass
class LocalSolution:
    values: np.ndarray     # over internal + boundary
    policy: np.ndarray     # over internal; NO_ACTION at fixed states
    residual: float
    iterations: int
    converged: bool


def solve_local(
    sub: SubMdp,
    objective: Objective,
    epsilon: float = 1e-6,
    max_local_iters: int | None = None,
    warm_start: np.ndarray | None = None,
    gauss_seidel: bool = False,
    check_monotone: bool = False,
) -> LocalSolution:
    """Value iteration on the internal non-fixed states of ``sub``.

    ``warm_start`` (over internal states) seeds the free entries; otherwise
    they start at zero.  Reaching the iteration cap is reported, not raised.
    """
    m = sub.num_internal
    free = ~sub.fixed
    v = sub.values
    v[:m][free] = 0.0 if warm_start is None else np.asarray(warm_start)[:m][free]
    cap = 10**7 if max_local_iters is None else max_local_iters
    res = iterate(sub.system, v, epsilon, cap, gauss_seidel=gauss_seidel, check_monotone=check_monotone)
    policy = np.full(m, NO_ACTION, dtype=np.int64)
    policy[free] = res.policy
    return LocalSolution(v.copy(), policy, res.residual, res.iterations, res.converged)
