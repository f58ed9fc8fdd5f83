"""Shared fixtures: small random models."""

import numpy as np

from sharpmdp.generators import complement
from sharpmdp.mdp import Mdp


def random_mdp(seed: int, max_states: int = 8, max_actions: int = 2, goal_label: str = "goal") -> Mdp:
    """Random model with strictly positive costs and one random goal state.

    The goal is made absorbing so it is a valid target for both objectives.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_states + 1))
    goal = int(rng.integers(n))
    choices = []
    costs = {}
    for s in range(n):
        if s == goal:
            choices.append([(0, {s: 1.0})])
            continue
        k = int(rng.integers(1, max_actions + 1))
        acts = sorted(rng.choice(max_actions + 1, size=k, replace=False).tolist())
        row = []
        for a in acts:
            width = int(rng.integers(1, min(n, 3) + 1))
            targets = sorted(rng.choice(n, size=width, replace=False).tolist())
            if width == 1:
                dist = {targets[0]: 1.0}
            else:
                w = rng.integers(1, 10, size=width)
                p = [float(x) / float(w.sum()) for x in w[:-1]]
                dist = dict(zip(targets, p + [complement(*p)]))
            row.append((a, dist))
            costs[(s, a)] = float(rng.integers(1, 20)) / 4
        choices.append(row)
    return Mdp.from_lists(n, 0, choices, costs, {goal_label: [goal]})


def reachability(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure of a boolean adjacency matrix, O(n^3)."""
    n = len(adj)
    r = adj.astype(bool) | np.eye(n, dtype=bool)
    for k in range(n):
        r |= np.outer(r[:, k], r[k, :])
    return r


def adjacency(mdp: Mdp) -> np.ndarray:
    a = np.zeros((mdp.num_states, mdp.num_states), dtype=bool)
    a[mdp.transition_source, mdp.targets] = True
    return a


TWO_STATE = """\
STATES 2
INITIAL 0
LABEL goal: 1
TRANS 0 0 1 1
TRANS 1 0 1 1
"""


VERDICTS: list[str] = []


def verdict(criterion: str, ok: bool, detail: str) -> None:
    """Record and print one PASS/FAIL line, then fail the test if needed."""
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line
