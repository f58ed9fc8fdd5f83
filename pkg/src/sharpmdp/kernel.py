"""Bellman backup kernel shared by the flat and block-local solvers.

A :class:`BellmanSystem` holds the choice rows of the *updated* states only,
already remapped into some column space (the full state space for flat
solves, ``block + boundary`` for local ones).  Columns that are not updated
are pinned: their entries in the value vector are never written.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp


@dataclass
class BellmanSystem:
    states: np.ndarray      # column index of each updated state, ascending
    row_ptr: np.ndarray     # rows of updated state i are row_ptr[i]:row_ptr[i+1]
    actions: np.ndarray     # action id of each row
    matrix: sp.csr_matrix   # rows x columns
    costs: np.ndarray | None  # per row, None for probability objectives
    maximize: bool

    @property
    def num_updated(self) -> int:
        return len(self.states)

    def backup(self, v: np.ndarray) -> np.ndarray:
        q = self.matrix @ v
        if self.costs is not None:
            q += self.costs
        return q

    def reduce(self, q: np.ndarray) -> np.ndarray:
        op = np.maximum if self.maximize else np.minimum
        return op.reduceat(q, self.row_ptr[:-1])

    def argbest(self, q: np.ndarray, best: np.ndarray) -> np.ndarray:
        """Lowest action id attaining ``best`` for every updated state."""
        counts = np.diff(self.row_ptr)
        hit = q == np.repeat(best, counts)
        # rows are action-ascending, so the first hit is the lowest id
        idx = np.where(hit, np.arange(len(q)), len(q))
        first = np.minimum.reduceat(idx, self.row_ptr[:-1])
        return self.actions[first]


def build_system(
    state_ptr: np.ndarray,
    actions: np.ndarray,
    trans_ptr: np.ndarray,
    targets: np.ndarray,
    probs: np.ndarray,
    costs: np.ndarray | None,
    updated: np.ndarray,
    columns: np.ndarray | None,
    num_columns: int,
    maximize: bool,
) -> BellmanSystem:
    """Gather the rows of ``updated`` (global ids) into a system.

    ``columns`` maps global state ids to column indices (``None`` = identity);
    ``updated`` must be listed in ascending column order.
    """
    updated = np.asarray(updated, dtype=np.int64)
    lo, hi = state_ptr[updated], state_ptr[updated + 1]
    counts = hi - lo
    rows = _ranges(lo, counts)
    row_ptr = np.zeros(len(updated) + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    tlo, thi = trans_ptr[rows], trans_ptr[rows + 1]
    tcounts = thi - tlo
    entries = _ranges(tlo, tcounts)
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(tcounts, out=indptr[1:])
    cols = targets[entries] if columns is None else columns[targets[entries]]
    mat = sp.csr_matrix((probs[entries], cols, indptr), shape=(len(rows), num_columns))
    col_of_state = updated if columns is None else columns[updated]
    return BellmanSystem(
        states=col_of_state,
        row_ptr=row_ptr,
        actions=np.asarray(actions)[rows],
        matrix=mat,
        costs=None if costs is None else np.asarray(costs)[rows],
        maximize=maximize,
    )


def _ranges(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Concatenation of ``range(s, s + c)`` for every pair, vectorised."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offs = np.repeat(starts - np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
    return offs + np.arange(total, dtype=np.int64)


@dataclass
class IterationResult:
    iterations: int
    residual: float
    converged: bool
    policy: np.ndarray  # action per updated state


def iterate(
    system: BellmanSystem,
    v: np.ndarray,
    epsilon: float,
    max_iterations: int,
    gauss_seidel: bool = False,
    check_monotone: bool = False,
) -> IterationResult:
    """Run value iteration in place on ``v`` until the sweep change is < epsilon.

    The returned residual is the sup-norm change of the last sweep, which
    bounds the Bellman residual of the returned vector.
    """
    if system.num_updated == 0:
        return IterationResult(0, 0.0, True, np.zeros(0, dtype=np.int64))
    states = system.states
    it, diff = 0, np.inf
    if gauss_seidel:
        m = system.matrix
        costs = system.costs if system.costs is not None else np.zeros(0)
        while it < max_iterations:
            diff = _gs_sweep(m.indptr, m.indices, m.data, costs, system.costs is not None,
                             system.row_ptr, states, v, system.maximize, check_monotone)
            it += 1
            if diff < 0:
                raise AssertionError("value iterate decreased during a Gauss-Seidel sweep")
            if diff < epsilon:
                break
    else:
        m = system.matrix
        costs = system.costs if system.costs is not None else np.zeros(0)
        out = np.empty(len(states))
        while it < max_iterations:
            diff = _sync_sweep(m.indptr, m.indices, m.data, costs, system.costs is not None,
                               system.row_ptr, states, v, out, system.maximize, check_monotone)
            it += 1
            if diff < 0:
                raise AssertionError("value iterate decreased during a synchronous sweep")
            if diff < epsilon:
                break
    q = system.backup(v)
    policy = system.argbest(q, system.reduce(q))
    return IterationResult(it, float(diff), diff < epsilon, policy)


@numba.njit(cache=True)
def _gs_sweep(indptr, indices, data, costs, has_costs, row_ptr, states, v, maximize, check_monotone):
    diff = 0.0
    for i in range(len(states)):
        s = states[i]
        best = -np.inf if maximize else np.inf
        for r in range(row_ptr[i], row_ptr[i + 1]):
            acc = costs[r] if has_costs else 0.0
            for k in range(indptr[r], indptr[r + 1]):
                acc += data[k] * v[indices[k]]
            if maximize:
                if acc > best:
                    best = acc
            elif acc < best:
                best = acc
        d = best - v[s]
        if check_monotone and d < -1e-12 * max(1.0, abs(v[s])):
            return -1.0
        if d != d:  # inf - inf
            d = 0.0
        v[s] = best
        if abs(d) > diff:
            diff = abs(d)
    return diff


@numba.njit(cache=True)
def _sync_sweep(indptr, indices, data, costs, has_costs, row_ptr, states, v, out, maximize, check_monotone):
    """One Jacobi sweep: every backup reads the old ``v``; returns the sup change.

    Sums run in the same order as ``matrix @ v + costs`` so results match the
    vectorised backup bit for bit.
    """
    for i in range(len(states)):
        best = -np.inf if maximize else np.inf
        for r in range(row_ptr[i], row_ptr[i + 1]):
            acc = 0.0
            for k in range(indptr[r], indptr[r + 1]):
                acc += data[k] * v[indices[k]]
            if has_costs:
                acc += costs[r]
            if maximize:
                if acc > best:
                    best = acc
            elif acc < best:
                best = acc
        out[i] = best
    diff = 0.0
    for i in range(len(states)):
        s = states[i]
        d = out[i] - v[s]
        if check_monotone and d < -1e-12 * max(1.0, abs(v[s])):
            return -1.0
        if d != d:  # inf - inf
            d = 0.0
        v[s] = out[i]
        if abs(d) > diff:
            diff = abs(d)
    return diff
