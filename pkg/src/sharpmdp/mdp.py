"""Explicit-state MDP data model, text format, and graph precomputation.

An :class:`Mdp` is stored in a two-level CSR layout:

* ``state_ptr`` groups choice rows by state (``state_ptr[s]:state_ptr[s+1]``),
* ``trans_ptr`` groups transitions by choice row.

Actions are small nonnegative integers local to each state and are kept
ascending inside a state; targets are kept ascending inside a choice.  The
arrays are frozen after construction, so one instance can be shared freely.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

INFINITY = math.inf
SUM_TOLERANCE = 1e-9


class ModelError(ValueError):
    """Raised for malformed or invalid models."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ObjectiveKind(enum.Enum):
    PMAX = "pmax"
    RMIN = "rmin"


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind
    goal_label: str = "goal"
    cost_name: str | None = None

    @classmethod
    def pmax(cls, goal_label: str = "goal") -> Objective:
        return cls(ObjectiveKind.PMAX, goal_label)

    @classmethod
    def rmin(cls, goal_label: str = "goal", cost_name: str | None = None) -> Objective:
        return cls(ObjectiveKind.RMIN, goal_label, cost_name)

    @classmethod
    def parse(cls, kind: str, goal_label: str = "goal") -> Objective:
        try:
            return cls(ObjectiveKind(kind.lower()), goal_label)
        except ValueError:
            raise ModelError(f"unknown objective {kind!r} (expected pmax or rmin)") from None

    @property
    def maximize(self) -> bool:
        return self.kind is ObjectiveKind.PMAX

    @property
    def goal_value(self) -> float:
        return 1.0 if self.kind is ObjectiveKind.PMAX else 0.0

    def goal_states(self, mdp: Mdp) -> np.ndarray:
        goal = mdp.labels.get(self.goal_label)
        if goal is None or len(goal) == 0:
            raise ModelError(f"goal label {self.goal_label!r} is empty or missing")
        return goal


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Mdp:
    num_states: int
    initial: int
    state_ptr: np.ndarray
    actions: np.ndarray
    trans_ptr: np.ndarray
    targets: np.ndarray
    probs: np.ndarray
    costs: np.ndarray
    labels: Mapping[str, np.ndarray] = field(default_factory=dict)
    action_names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "state_ptr", _frozen(self.state_ptr, np.int64))
        set_(self, "actions", _frozen(self.actions, np.int64))
        set_(self, "trans_ptr", _frozen(self.trans_ptr, np.int64))
        set_(self, "targets", _frozen(self.targets, np.int64))
        set_(self, "probs", _frozen(self.probs, np.float64))
        set_(self, "costs", _frozen(self.costs, np.float64))
        set_(self, "labels", {k: _frozen(np.unique(np.asarray(v, dtype=np.int64)), np.int64)
                              for k, v in sorted(self.labels.items())})
        set_(self, "action_names", dict(sorted(self.action_names.items())))
        self._validate()

    # -- construction -----------------------------------------------------

    @classmethod
    def from_lists(
        cls,
        num_states: int,
        initial: int,
        choices: Sequence[Sequence[tuple[int, Mapping[int, float] | Sequence[tuple[int, float]]]]],
        costs: Mapping[tuple[int, int], float] | None = None,
        labels: Mapping[str, Iterable[int]] | None = None,
        action_names: Mapping[int, str] | None = None,
    ) -> Mdp:
        """Build from ``choices[s] = [(action, {target: prob}), ...]``."""
        if len(choices) != num_states:
            raise ModelError(f"expected choices for {num_states} states, got {len(choices)}")
        costs = dict(costs or {})
        state_ptr = [0]
        acts, tptr, tg, pr, cs = [], [0], [], [], []
        for s, state_choices in enumerate(choices):
            for a, dist in sorted(state_choices, key=lambda c: c[0]):
                items = sorted(dist.items() if isinstance(dist, Mapping) else dist)
                acts.append(a)
                for t, p in items:
                    tg.append(t)
                    pr.append(p)
                tptr.append(len(tg))
                cs.append(costs.pop((s, a), 0.0))
            state_ptr.append(len(acts))
        if costs:
            raise ModelError(f"cost given for undefined choice {next(iter(costs))}")
        return cls(num_states, initial, state_ptr, acts, tptr, tg, pr, cs,
                   {k: list(v) for k, v in (labels or {}).items()}, dict(action_names or {}))

    def _validate(self):
        n = self.num_states
        if n < 1:
            raise ModelError("model has no states")
        if not 0 <= self.initial < n:
            raise ModelError(f"initial state {self.initial} out of range")
        sp_, tp = self.state_ptr, self.trans_ptr
        if len(sp_) != n + 1 or sp_[0] != 0 or sp_[-1] != len(self.actions):
            raise ModelError("state_ptr does not match action array")
        per_state = np.diff(sp_)
        if np.any(per_state < 1):
            s = int(np.flatnonzero(per_state < 1)[0])
            raise ModelError(f"state {s} has no enabled action")
        m = len(self.actions)
        if len(tp) != m + 1 or tp[0] != 0 or tp[-1] != len(self.targets) or len(self.probs) != len(self.targets):
            raise ModelError("trans_ptr does not match transition arrays")
        if len(self.costs) != m:
            raise ModelError("one cost per choice required")
        per_choice = np.diff(tp)
        if np.any(per_choice < 1):
            raise ModelError(f"choice row {int(np.flatnonzero(per_choice < 1)[0])} has an empty distribution")
        if np.any(self.actions < 0):
            raise ModelError("action ids must be nonnegative")
        # actions strictly ascending within each state
        if m > 1:
            bad = (np.diff(self.actions) <= 0) & (self.choice_state[1:] == self.choice_state[:-1])
            if np.any(bad):
                s = int(self.choice_state[1:][bad][0])
                raise ModelError(f"duplicate or unsorted action ids at state {s}")
        t = self.targets
        if len(t) and (t.min() < 0 or t.max() >= n):
            raise ModelError(f"dangling target state index (valid range 0..{n - 1})")
        if len(t) > 1:
            row = np.repeat(np.arange(m), per_choice)
            bad = (np.diff(t) <= 0) & (row[1:] == row[:-1])
            if np.any(bad):
                raise ModelError(f"duplicate or unsorted targets in choice row {int(row[1:][bad][0])}")
        if np.any(~(self.probs > 0)) or np.any(self.probs > 1):
            raise ModelError("probabilities must lie in (0, 1]")
        sums = np.add.reduceat(self.probs, tp[:-1])
        off = np.abs(sums - 1.0) > SUM_TOLERANCE
        if np.any(off):
            r = int(np.flatnonzero(off)[0])
            raise ModelError(
                f"distribution of state {int(self.choice_state[r])} action {int(self.actions[r])} "
                f"sums to {sums[r]:.12g}")
        if np.any(~np.isfinite(self.costs)) or np.any(self.costs < 0):
            raise ModelError("costs must be finite and nonnegative")
        for name, states in self.labels.items():
            if len(states) and (states[0] < 0 or states[-1] >= n):
                raise ModelError(f"label {name!r} refers to a state out of range")

    # -- derived views ----------------------------------------------------

    @property
    def num_choices(self) -> int:
        return len(self.actions)

    @property
    def num_transitions(self) -> int:
        return len(self.targets)

    @cached_property
    def choice_state(self) -> np.ndarray:
        """Owning state of every choice row."""
        out = np.repeat(np.arange(self.num_states, dtype=np.int64), np.diff(self.state_ptr))
        out.setflags(write=False)
        return out

    @cached_property
    def transition_source(self) -> np.ndarray:
        """Owning state of every transition entry."""
        out = self.choice_state[np.repeat(np.arange(self.num_choices), np.diff(self.trans_ptr))]
        out.setflags(write=False)
        return out

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Choice-by-state transition matrix."""
        return sp.csr_matrix((self.probs, self.targets, self.trans_ptr),
                             shape=(self.num_choices, self.num_states))

    @cached_property
    def absorbing(self) -> np.ndarray:
        """Mask of states whose every action is a probability-1 self-loop."""
        loop = (np.diff(self.trans_ptr) == 1) & (self.targets[self.trans_ptr[:-1]] == self.choice_state)
        mask = np.logical_and.reduceat(loop, self.state_ptr[:-1])
        mask.setflags(write=False)
        return mask

    def choices(self, s: int) -> range:
        return range(int(self.state_ptr[s]), int(self.state_ptr[s + 1]))

    def enabled_actions(self, s: int) -> list[int]:
        return [int(a) for a in self.actions[self.state_ptr[s]:self.state_ptr[s + 1]]]

    def choice_row(self, s: int, action: int) -> int:
        lo, hi = int(self.state_ptr[s]), int(self.state_ptr[s + 1])
        i = lo + int(np.searchsorted(self.actions[lo:hi], action))
        if i >= hi or self.actions[i] != action:
            raise KeyError(f"action {action} not enabled at state {s}")
        return i

    def distribution(self, row: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.trans_ptr[row], self.trans_ptr[row + 1]
        return self.targets[lo:hi], self.probs[lo:hi]

    def label_mask(self, name: str) -> np.ndarray:
        mask = np.zeros(self.num_states, dtype=bool)
        mask[self.labels.get(name, [])] = True
        return mask

    def __eq__(self, other):
        if not isinstance(other, Mdp):
            return NotImplemented
        arrays = ("state_ptr", "actions", "trans_ptr", "targets", "probs", "costs")
        return (self.num_states == other.num_states and self.initial == other.initial
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
                and self.labels.keys() == other.labels.keys()
                and all(np.array_equal(v, other.labels[k]) for k, v in self.labels.items())
                and self.action_names == other.action_names)

    __hash__ = object.__hash__


# -- text format ----------------------------------------------------------


def _int(tok: str, what: str, line: int) -> int:
    try:
        v = int(tok)
    except ValueError:
        raise ModelError(f"expected integer {what}, got {tok!r}", line) from None
    if v < 0:
        raise ModelError(f"{what} must be nonnegative, got {v}", line)
    return v


def _float(tok: str, what: str, line: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ModelError(f"expected number for {what}, got {tok!r}", line) from None


def parse_model(stream: TextIO | str) -> Mdp:
    """Parse the explicit text format into a validated :class:`Mdp`."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    n = initial = None
    labels: dict[str, list[int]] = {}
    names: dict[int, str] = {}
    costs: dict[tuple[int, int], float] = {}
    cost_line: dict[tuple[int, int], int] = {}
    trans: dict[tuple[int, int], dict[int, float]] = {}

    def state(tok, what, line):
        v = _int(tok, what, line)
        if n is None:
            raise ModelError("STATES must precede indexed lines", line)
        if v >= n:
            raise ModelError(f"dangling {what} {v} (model has {n} states)", line)
        return v

    for lineno, raw in enumerate(stream, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        key, _, rest = text.partition(" ")
        rest = rest.strip()
        if key == "STATES":
            if n is not None:
                raise ModelError("duplicate STATES line", lineno)
            n = _int(rest, "state count", lineno)
            if n < 1:
                raise ModelError("model has no states", lineno)
        elif key == "INITIAL":
            if initial is not None:
                raise ModelError("duplicate INITIAL line", lineno)
            initial = state(rest, "initial state", lineno)
        elif key == "LABEL":
            name, sep, members = rest.partition(":")
            name = name.strip()
            if not sep or not name or " " in name:
                raise ModelError("expected 'LABEL <name>: <states>'", lineno)
            if name in labels:
                raise ModelError(f"duplicate label {name!r}", lineno)
            labels[name] = [state(tok, "label state", lineno) for tok in members.split()]
        elif key == "ALIAS":
            toks = rest.split()
            if len(toks) != 2:
                raise ModelError("expected 'ALIAS <action> <name>'", lineno)
            names[_int(toks[0], "action", lineno)] = toks[1]
        elif key == "COST":
            toks = rest.split()
            if len(toks) != 3:
                raise ModelError("expected 'COST <s> <a> <c>'", lineno)
            s, a = state(toks[0], "state", lineno), _int(toks[1], "action", lineno)
            if (s, a) in costs:
                raise ModelError(f"duplicate cost for state {s} action {a}", lineno)
            c = _float(toks[2], "cost", lineno)
            if not (math.isfinite(c) and c >= 0):
                raise ModelError(f"cost must be finite and nonnegative, got {toks[2]}", lineno)
            costs[s, a] = c
            cost_line[s, a] = lineno
        elif key == "TRANS":
            toks = rest.split()
            if len(toks) != 4:
                raise ModelError("expected 'TRANS <s> <a> <t> <p>'", lineno)
            s, a = state(toks[0], "state", lineno), _int(toks[1], "action", lineno)
            t = state(toks[2], "target state", lineno)
            p = _float(toks[3], "probability", lineno)
            if not 0 < p <= 1:
                raise ModelError(f"probability must lie in (0, 1], got {toks[3]}", lineno)
            dist = trans.setdefault((s, a), {})
            if t in dist:
                raise ModelError(f"duplicate transition ({s}, {a}, {t})", lineno)
            dist[t] = p
        else:
            raise ModelError(f"unknown keyword {key!r}", lineno)

    if n is None:
        raise ModelError("missing STATES line")
    if initial is None:
        raise ModelError("missing INITIAL line")
    for key, line in cost_line.items():
        if key not in trans:
            raise ModelError(f"cost for state {key[0]} action {key[1]} which has no transitions", line)
    choices: list[list] = [[] for _ in range(n)]
    for (s, a), dist in trans.items():
        total = math.fsum(dist.values())
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ModelError(f"distribution of state {s} action {a} sums to {total:.12g}")
        choices[s].append((a, dist))
    return Mdp.from_lists(n, initial, choices, costs, labels, names)


def serialize_model(mdp: Mdp, stream: TextIO | None = None) -> str | None:
    """Write the canonical text form; return it as a string if no stream is given."""
    out = io.StringIO() if stream is None else stream
    w = out.write
    w(f"STATES {mdp.num_states}\n")
    w(f"INITIAL {mdp.initial}\n")
    for a, name in mdp.action_names.items():
        w(f"ALIAS {a} {name}\n")
    for name, states in mdp.labels.items():
        w(f"LABEL {name}:" + "".join(f" {s}" for s in states.tolist()) + "\n")
    cs, acts = mdp.choice_state.tolist(), mdp.actions.tolist()
    for r in np.flatnonzero(mdp.costs).tolist():
        w(f"COST {cs[r]} {acts[r]} {mdp.costs[r]:.17g}\n")
    tp, tg, pr = mdp.trans_ptr.tolist(), mdp.targets.tolist(), mdp.probs.tolist()
    lines = []
    for r in range(mdp.num_choices):
        head = f"TRANS {cs[r]} {acts[r]} "
        for i in range(tp[r], tp[r + 1]):
            lines.append(f"{head}{tg[i]} {pr[i]:.17g}\n")
        if len(lines) > 65536:
            w("".join(lines))
            lines.clear()
    w("".join(lines))
    return out.getvalue() if stream is None else None


# -- graph analysis -------------------------------------------------------


def backward_reachable(mdp: Mdp, sources: np.ndarray, choice_mask: np.ndarray | None = None) -> np.ndarray:
    """Mask of states that reach ``sources`` using only choices in ``choice_mask``."""
    n = mdp.num_states
    src, dst = mdp.transition_source, mdp.targets
    if choice_mask is not None:
        keep = np.repeat(choice_mask, np.diff(mdp.trans_ptr))
        src, dst = src[keep], dst[keep]
    # reverse edges t -> s, plus a virtual root n feeding every source
    rows = np.concatenate([dst, np.full(len(sources), n)])
    cols = np.concatenate([src, sources])
    g = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n + 1, n + 1))
    order = breadth_first_order(g, n, directed=True, return_predecessors=False)
    mask = np.zeros(n + 1, dtype=bool)
    mask[order] = True
    return mask[:n]


def precompute_prob0(mdp: Mdp, goal: np.ndarray) -> np.ndarray:
    """States from which ``goal`` is unreachable under every policy."""
    return np.flatnonzero(~backward_reachable(mdp, np.asarray(goal, dtype=np.int64)))


def almost_sure_states(mdp: Mdp, goal: np.ndarray) -> np.ndarray:
    """Mask of states with some policy reaching ``goal`` with probability 1.

    Greatest fixpoint over ``U``: keep states that can reach the goal using only
    actions whose successors all stay in ``U``.
    """
    goal = np.asarray(goal, dtype=np.int64)
    u = np.ones(mdp.num_states, dtype=bool)
    while True:
        stays = np.logical_and.reduceat(u[mdp.targets], mdp.trans_ptr[:-1])
        stays &= np.repeat(u, np.diff(mdp.state_ptr))
        new = backward_reachable(mdp, goal, stays) & u
        new[goal] = True
        if np.array_equal(new, u):
            return u
        u = new


@dataclass
class SspCheck:
    ok: bool
    violations: list[tuple[int, str]]
    alpha: float | None = None


def check_ssp_assumptions(mdp: Mdp, objective: Objective) -> SspCheck:
    """Diagnose the standing assumptions each objective relies on."""
    goal = objective.goal_states(mdp)
    goal_mask = np.zeros(mdp.num_states, dtype=bool)
    goal_mask[goal] = True
    violations: list[tuple[int, str]] = []
    if objective.kind is ObjectiveKind.RMIN:
        proper = almost_sure_states(mdp, goal)
        for s in np.flatnonzero(~proper).tolist():
            violations.append((s, "no policy reaches the goal with probability 1"))
        for s in goal.tolist():
            rows = mdp.choices(s)
            if not mdp.absorbing[s]:
                violations.append((s, "goal state is not absorbing"))
            if np.any(mdp.costs[rows.start:rows.stop] != 0):
                violations.append((s, "goal state has nonzero cost"))
        return SspCheck(not violations, violations)

    absorbing_set = goal_mask | mdp.absorbing
    mass = np.add.reduceat(mdp.probs * absorbing_set[mdp.targets], mdp.trans_ptr[:-1])
    live = ~absorbing_set[mdp.choice_state]
    if not np.any(live):
        return SspCheck(True, [], 1.0)
    alpha = float(mass[live].min())
    if alpha <= 0.0:
        alpha = 0.0
        bad = live & (mass <= 0.0)
        for r in np.flatnonzero(bad).tolist():
            violations.append((int(mdp.choice_state[r]),
                               f"action {int(mdp.actions[r])} has no one-step mass into goal or sink"))
    return SspCheck(alpha > 0.0, violations, alpha)
