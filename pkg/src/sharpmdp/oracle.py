"""Brute-force ground truth for tiny models.

Every memoryless deterministic policy is enumerated and its induced Markov
chain solved exactly with dense linear algebra.  Nothing here touches the
value-iteration code paths it is meant to validate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .mdp import INFINITY, Mdp, Objective, ObjectiveKind

MAX_POLICIES = 10**6
DENSE_LIMIT = 10**4


class PolicySpaceTooLarge(ValueError):
    pass


@dataclass
class OracleResult:
    values: np.ndarray
    optimal_actions: list[frozenset[int]]
    count: int


def _chain(mdp: Mdp, policy: np.ndarray, goal: np.ndarray):
    """Dense transition matrix and per-state cost of the policy's chain.

    Goal states, and states without an assigned action, become absorbing.
    """
    n = mdp.num_states
    P = np.zeros((n, n))
    cost = np.zeros(n)
    for s in range(n):
        a = int(policy[s])
        if goal[s] or a < 0:
            P[s, s] = 1.0
            continue
        row = mdp.choice_row(s, a)
        targets, probs = mdp.distribution(row)
        P[s, targets] += probs
        cost[s] = mdp.costs[row]
    return P, cost


def _reaches(P: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """States from which ``sources`` is reachable in the chain graph."""
    n = len(P)
    reach = np.zeros(n, dtype=bool)
    if len(sources) == 0:
        return reach
    # BFS over reversed edges from a virtual root wired to the sources
    rev = sp.csr_matrix(P.T > 0)
    root = sp.csr_matrix((np.ones(len(sources)), (np.zeros(len(sources), dtype=int), sources)), shape=(1, n))
    g = sp.bmat([[sp.csr_matrix((1, 1)), root], [sp.csr_matrix((n, 1)), rev]]).tocsr()
    order = breadth_first_order(g, 0, directed=True, return_predecessors=False)
    reach[order[order > 0] - 1] = True
    return reach


def _solve_chain(P: np.ndarray, cost: np.ndarray, goal: np.ndarray, kind: ObjectiveKind) -> np.ndarray:
    n = len(P)
    goal_idx = np.flatnonzero(goal)
    can_reach = _reaches(P, goal_idx)
    if kind is ObjectiveKind.PMAX:
        v = np.zeros(n)
        v[goal] = 1.0
        # states that can reach the goal: x = P_tt x + P_tg 1, others stay 0
        t = np.flatnonzero(can_reach & ~goal)
        if len(t):
            A = np.eye(len(t)) - P[np.ix_(t, t)]
            b = P[np.ix_(t, goal_idx)].sum(axis=1)
            v[t] = np.linalg.solve(A, b)
        return v
    # RMin: a state is proper iff it cannot reach any state that misses the goal
    improper = ~can_reach
    bad = _reaches(P, np.flatnonzero(improper))
    proper = ~bad | goal
    v = np.full(n, INFINITY)
    v[goal] = 0.0
    t = np.flatnonzero(proper & ~goal)
    if len(t):
        A = np.eye(len(t)) - P[np.ix_(t, t)]
        v[t] = np.linalg.solve(A, cost[t])
    return v


def evaluate_policy(mdp: Mdp, objective: Objective, policy) -> np.ndarray:
    """Exact value of ``policy`` (one action per state, -1 where none).

    A state without an action stops there: it scores 0 under PMax and
    INFINITY under RMin unless it is a goal.
    """
    if mdp.num_states > DENSE_LIMIT:
        raise ValueError(f"dense chain evaluation limited to {DENSE_LIMIT} states")
    policy = np.asarray(policy, dtype=np.int64)
    goal = objective.goal_states(mdp)
    gmask = np.zeros(mdp.num_states, dtype=bool)
    gmask[goal] = True
    P, cost = _chain(mdp, policy, gmask)
    return _solve_chain(P, cost, gmask, objective.kind)


def enumerate_policies(mdp: Mdp, objective: Objective, max_policies: int = MAX_POLICIES) -> OracleResult:
    n = mdp.num_states
    options = [mdp.enabled_actions(s) for s in range(n)]
    count = 1
    for o in options:
        count *= len(o)
        if count > max_policies:
            raise PolicySpaceTooLarge(f"more than {max_policies} policies")
    goal = np.zeros(n, dtype=bool)
    goal[objective.goal_states(mdp)] = True
    maximize = objective.maximize
    best = np.full(n, -np.inf if maximize else np.inf)
    table = []
    for choice in itertools.product(*options):
        policy = np.array(choice, dtype=np.int64)
        P, cost = _chain(mdp, policy, goal)
        v = _solve_chain(P, cost, goal, objective.kind)
        table.append((policy, v))
        best = np.maximum(best, v) if maximize else np.minimum(best, v)
    # an action is optimal at s if some optimal-at-s policy uses it; ties within
    # round-off of the dense solves count as equal
    tol = 1e-9
    optimal = [set() for _ in range(n)]
    for policy, v in table:
        with np.errstate(invalid="ignore"):
            close = (v == best) | (np.abs(v - best) <= tol * np.maximum(1.0, np.abs(best)))
        for s in np.flatnonzero(close):
            optimal[s].add(int(policy[s]))
    return OracleResult(best, [frozenset(o) for o in optimal], count)
