"""Benchmark model generators: warehouse grids and sequential arenas."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .hierarchy import MISSING, StateFeatures
from .mdp import Mdp, ModelError

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))
ACTION_NAMES = {UP: "up", DOWN: "down", LEFT: "left", RIGHT: "right"}


def complement(*probs: float) -> float:
    """Float ``c`` with ``fsum(probs + (c,)) == 1`` exactly, if one exists nearby."""
    c = float(1 - sum(Fraction(p) for p in probs))
    for _ in range(4):
        total = math.fsum(probs + (c,))
        if total == 1.0:
            break
        c = math.nextafter(c, -math.inf if total > 1.0 else math.inf)
    return c


@dataclass(frozen=True)
class WarehouseSpec:
    n: int
    layout: str = "nw"          # nw | sw | mw | randmw | custom
    variant: str = "rmin"       # pmax | rmin
    p_succ: float = 0.9
    p_fail: float = 5e-4
    p_move: float = 0.8
    seed: int = 0
    wall_count: int = 5
    shelves: tuple = ()         # (x, y) cells, custom layout only

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid side must be at least 2")
        if self.layout not in ("nw", "sw", "mw", "randmw", "custom"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.variant not in ("pmax", "rmin"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant == "pmax" and not (0 < self.p_succ and 0 < self.p_fail and self.p_succ + self.p_fail <= 1):
            raise ValueError("need p_succ, p_fail > 0 and p_succ + p_fail <= 1")
        if self.variant == "rmin" and not 0 < self.p_move <= 1:
            raise ValueError("p_move must lie in (0, 1]")

    @property
    def start(self) -> tuple[int, int]:
        return (0, 0)

    @property
    def goal(self) -> tuple[int, int]:
        return (self.n - 1, self.n - 1)


def wall_mask(spec: WarehouseSpec) -> np.ndarray:
    """Boolean ``[y, x]`` mask of shelf cells."""
    n = spec.n
    walls = np.zeros((n, n), dtype=bool)
    if spec.layout == "sw":
        walls[1:n - 1, n // 2] = True
    elif spec.layout == "mw":
        # gaps at the bottom, both ends, and the top: a monotone path survives
        walls[1:n, n // 4] = True
        walls[1:n - 1, n // 2] = True
        walls[0:n - 1, (3 * n) // 4] = True
    elif spec.layout == "randmw":
        walls = _random_walls(spec)
    elif spec.layout == "custom":
        for x, y in spec.shelves:
            if not (0 <= x < n and 0 <= y < n):
                raise ValueError(f"shelf cell {(x, y)} lies outside the grid")
            if (x, y) in ((0, 0), (n - 1, n - 1)):
                raise ModelError("shelves may not cover the start or goal cell")
            walls[y, x] = True
    walls[0, 0] = walls[n - 1, n - 1] = False
    if _components(~walls) != 1:
        raise ModelError("wall layout disconnects the free cells")
    return walls


def _components(free: np.ndarray) -> int:
    _, count = ndimage.label(free)
    return count


def _random_walls(spec: WarehouseSpec) -> np.ndarray:
    n = spec.n
    rng = np.random.default_rng(spec.seed)
    walls = np.zeros((n, n), dtype=bool)
    placed = attempts = 0
    while placed < spec.wall_count and attempts < 50 * max(1, spec.wall_count):
        attempts += 1
        length = int(rng.integers(max(1, n // 4), max(2, n // 2) + 1))
        fixed = int(rng.integers(1, max(2, n - 1)))
        lo = int(rng.integers(0, max(1, n - length + 1)))
        cand = walls.copy()
        if rng.random() < 0.5:
            cand[lo:lo + length, fixed] = True
        else:
            cand[fixed, lo:lo + length] = True
        cand[0, 0] = cand[n - 1, n - 1] = False
        if _components(~cand) == 1:
            walls = cand
            placed += 1
    return walls


def generate_warehouse(spec: WarehouseSpec) -> tuple[Mdp, StateFeatures]:
    n = spec.n
    walls = wall_mask(spec)
    ys, xs = np.nonzero(~walls)  # row-major: ascending (y, x)
    num_cells = len(xs)
    index = np.full((n, n), -1, dtype=np.int64)
    index[ys, xs] = np.arange(num_cells)
    goal = int(index[n - 1, n - 1])
    pmax = spec.variant == "pmax"
    sink = num_cells if pmax else -1
    num_states = num_cells + (1 if pmax else 0)

    live = np.flatnonzero(np.arange(num_cells) != goal)
    cell = np.repeat(live, 4)
    act = np.tile(np.arange(4), len(live))
    dx = np.array([m[0] for m in MOVES])[act]
    dy = np.array([m[1] for m in MOVES])[act]
    tx, ty = xs[cell] + dx, ys[cell] + dy
    inside = (tx >= 0) & (tx < n) & (ty >= 0) & (ty < n)
    intended = np.full(len(cell), -1, dtype=np.int64)
    intended[inside] = index[ty[inside], tx[inside]]
    blocked = intended < 0
    intended[blocked] = cell[blocked]

    if pmax:
        p_stay = complement(spec.p_succ, spec.p_fail)
        p_merged = complement(spec.p_fail)
        slot_t = np.stack([intended, cell, np.full(len(cell), sink)], axis=1)
        slot_p = np.stack([np.full(len(cell), spec.p_succ), np.full(len(cell), p_stay),
                           np.full(len(cell), spec.p_fail)], axis=1)
        slot_p[blocked, 0] = p_merged
        slot_p[blocked, 1] = 0.0
        costs_live = np.zeros(len(cell))
    else:
        p_stay = complement(spec.p_move)
        slot_t = np.stack([intended, cell], axis=1)
        slot_p = np.stack([np.full(len(cell), spec.p_move), np.full(len(cell), p_stay)], axis=1)
        slot_p[blocked, 0] = 1.0
        slot_p[blocked, 1] = 0.0
        costs_live = np.ones(len(cell))

    # absorbing states get a single self-loop action
    absorbing = [goal] + ([sink] if pmax else [])
    width = slot_t.shape[1]
    pad_t = np.full((len(absorbing), width), -1, dtype=np.int64)
    pad_p = np.zeros((len(absorbing), width))
    pad_t[:, 0] = absorbing
    pad_p[:, 0] = 1.0
    row_state = np.concatenate([cell, absorbing])
    row_action = np.concatenate([act, np.zeros(len(absorbing), dtype=np.int64)])
    row_cost = np.concatenate([costs_live, np.zeros(len(absorbing))])
    slot_t = np.concatenate([slot_t, pad_t])
    slot_p = np.concatenate([slot_p, pad_p])

    order = np.lexsort((row_action, row_state))
    row_state, row_action, row_cost = row_state[order], row_action[order], row_cost[order]
    slot_t, slot_p = slot_t[order], slot_p[order]
    # sort the (at most three) slots of each row by target, then drop empty ones
    sorter = np.argsort(np.where(slot_p > 0, slot_t, np.iinfo(np.int64).max), axis=1, kind="stable")
    slot_t = np.take_along_axis(slot_t, sorter, axis=1)
    slot_p = np.take_along_axis(slot_p, sorter, axis=1)
    keep = slot_p > 0
    trans_ptr = np.zeros(len(row_state) + 1, dtype=np.int64)
    np.cumsum(keep.sum(axis=1), out=trans_ptr[1:])
    state_ptr = np.zeros(num_states + 1, dtype=np.int64)
    np.add.at(state_ptr, row_state + 1, 1)
    np.cumsum(state_ptr, out=state_ptr)

    labels = {"goal": [goal]}
    if pmax:
        labels["sink"] = [sink]
    mdp = Mdp(num_states, int(index[0, 0]), state_ptr, row_action, trans_ptr,
              slot_t[keep], slot_p[keep], row_cost, labels, ACTION_NAMES)
    fx = np.full(num_states, MISSING, dtype=np.int64)
    fy = np.full(num_states, MISSING, dtype=np.int64)
    fx[:num_cells], fy[:num_cells] = xs, ys
    return mdp, StateFeatures(num_states, {"x": fx, "y": fy})


def warehouse_closed_form(spec: WarehouseSpec) -> float:
    """Value at the start of an NW grid: 2(n-1) independent hops."""
    hops = 2 * (spec.n - 1)
    if spec.variant == "rmin":
        return hops / spec.p_move
    return (spec.p_succ / (spec.p_succ + spec.p_fail)) ** hops


@dataclass(frozen=True)
class ArenaSpec:
    k: int
    arena_size: int
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one arena")
        if self.arena_size < 2:
            raise ValueError("arena_size must be at least 2")


def generate_arenas(spec: ArenaSpec) -> tuple[Mdp, StateFeatures]:
    """K arenas in sequence, each a seeded chain of local positions.

    Action 0 steps forward with probability p (else stays); action 1 dashes
    two positions with probability q (else falls back one).  Leaving the last
    position enters the next arena; leaving the last arena finishes.
    """
    k, m = spec.k, spec.arena_size
    rng = np.random.default_rng(spec.seed)
    finished = k * m
    step_p = rng.integers(10, 20, size=(k, m)) / 20
    dash_q = rng.integers(8, 17, size=(k, m)) / 20

    def advance(i, j, hop):
        return (i * m + j + hop) if j + hop < m else ((i + 1) * m if i + 1 < k else finished)

    choices = []
    for i in range(k):
        for j in range(m):
            s = i * m + j
            p, q = float(step_p[i, j]), float(dash_q[i, j])
            step = {advance(i, j, 1): p, s: complement(p)}
            back = max(j - 1, 0) + i * m
            dash = {advance(i, j, 2): q, back: complement(q)}
            choices.append([(0, step), (1, dash)])
    choices.append([(0, {finished: 1.0})])
    costs = {(s, a): 1.0 for s in range(finished) for a in (0, 1)}
    mdp = Mdp.from_lists(finished + 1, 0, choices, costs, {"finished": [finished]},
                         {0: "step", 1: "dash"})
    arena = np.append(np.repeat(np.arange(k), m), k)
    pos = np.append(np.tile(np.arange(m), k), 0)
    return mdp, StateFeatures(finished + 1, {"arena": arena, "pos": pos})
