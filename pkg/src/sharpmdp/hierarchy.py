"""Partition strategies, SCC decomposition and the hierarchy tree."""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from typing import Iterator, Sequence, TextIO

import numpy as np

from .mdp import Mdp, ModelError

MISSING = np.iinfo(np.int64).min
MAX_SCC_BLOCKS = 64
MAX_SCC_CHILDREN = 4


# -- state features -------------------------------------------------------


@dataclass
class StateFeatures:
    """Integer feature columns per state; ``MISSING`` marks an absent entry."""

    num_states: int
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, column) -> None:
        col = np.asarray(column, dtype=np.int64)
        if col.shape != (self.num_states,):
            raise ValueError(f"feature {name!r} needs {self.num_states} entries")
        self.values[name] = col

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def present(self, name: str) -> np.ndarray:
        col = self.values.get(name)
        if col is None:
            return np.zeros(self.num_states, dtype=bool)
        return col != MISSING

    def write(self, stream: TextIO | None = None) -> str | None:
        out = io.StringIO() if stream is None else stream
        for name in sorted(self.values):
            col = self.values[name]
            idx = np.flatnonzero(col != MISSING)
            out.write("".join(f"FEATURE {name} {s} {v}\n" for s, v in zip(idx.tolist(), col[idx].tolist())))
        return out.getvalue() if stream is None else None

    @classmethod
    def read(cls, stream: TextIO | str, num_states: int) -> StateFeatures:
        if isinstance(stream, str):
            stream = io.StringIO(stream)
        cols: dict[str, np.ndarray] = {}
        for lineno, raw in enumerate(stream, 1):
            text = raw.split("#", 1)[0].split()
            if not text:
                continue
            if len(text) != 4 or text[0] != "FEATURE":
                raise ModelError("expected 'FEATURE <name> <s> <value>'", lineno)
            try:
                s, v = int(text[2]), int(text[3])
            except ValueError:
                raise ModelError("feature state and value must be integers", lineno) from None
            if not 0 <= s < num_states:
                raise ModelError(f"feature refers to state {s} out of range", lineno)
            col = cols.setdefault(text[1], np.full(num_states, MISSING, dtype=np.int64))
            col[s] = v
        return cls(num_states, cols)


# -- strategies -----------------------------------------------------------


@dataclass(frozen=True)
class PartitionStrategy:
    kind: str  # "grid" | "scc" | "counter"
    nx: int = 1
    ny: int = 1
    feature: str = ""
    width: int = 1

    def __post_init__(self):
        if self.kind not in ("grid", "scc", "counter"):
            raise ValueError(f"unknown partition strategy {self.kind!r}")
        if self.nx < 1 or self.ny < 1 or self.width < 1:
            raise ValueError("grid sizes and group width must be at least 1")

    @classmethod
    def grid(cls, nx: int, ny: int) -> PartitionStrategy:
        return cls("grid", nx=nx, ny=ny)

    @classmethod
    def scc(cls) -> PartitionStrategy:
        return cls("scc")

    @classmethod
    def counter(cls, feature: str, width: int) -> PartitionStrategy:
        return cls("counter", feature=feature, width=width)

    @classmethod
    def parse(cls, text: str) -> PartitionStrategy:
        """Parse ``grid:NXxNY``, ``scc`` or ``counter:<feature>:<width>``."""
        if text == "scc":
            return cls.scc()
        m = re.fullmatch(r"grid:(\d+)x(\d+)", text)
        if m:
            return cls.grid(int(m[1]), int(m[2]))
        m = re.fullmatch(r"counter:([A-Za-z_][\w-]*):(\d+)", text)
        if m:
            return cls.counter(m[1], int(m[2]))
        raise ValueError(f"bad partition strategy {text!r}")

    def __str__(self) -> str:
        if self.kind == "grid":
            return f"grid:{self.nx}x{self.ny}"
        if self.kind == "counter":
            return f"counter:{self.feature}:{self.width}"
        return "scc"


def _group_by_key(states: np.ndarray, key: np.ndarray) -> list[np.ndarray]:
    order = np.lexsort((states, key))
    k = key[order]
    cuts = np.flatnonzero(np.diff(k)) + 1
    return [np.sort(g) for g in np.split(states[order], cuts)]


def _require(features: StateFeatures | None, names: Sequence[str]) -> StateFeatures:
    if features is None:
        raise ModelError(f"partition strategy needs features {', '.join(names)}")
    for name in names:
        if name not in features:
            raise ModelError(f"missing required feature {name!r}")
    return features


def initial_partition(mdp: Mdp, features: StateFeatures | None, strategy: PartitionStrategy) -> list[np.ndarray]:
    """First-level blocks: nonempty, disjoint, covering, each sorted ascending."""
    n = mdp.num_states
    if n == 0:
        raise ModelError("empty state space")
    states = np.arange(n, dtype=np.int64)
    if strategy.kind == "grid":
        f = _require(features, ("x", "y"))
        has = f.present("x") & f.present("y")
        if not has.any():
            raise ModelError("no state carries grid coordinates")
        x, y = f["x"][has], f["y"][has]
        x0, y0 = x.min(), y.min()
        w, h = x.max() - x0 + 1, y.max() - y0 + 1
        tx = (x - x0) * strategy.nx // w
        ty = (y - y0) * strategy.ny // h
        blocks = _group_by_key(states[has], ty * strategy.nx + tx)
        if not has.all():
            blocks.append(states[~has])  # overflow block for coordinate-less states
        return blocks
    if strategy.kind == "counter":
        f = _require(features, (strategy.feature,))
        has = f.present(strategy.feature)
        blocks = _group_by_key(states[has], f[strategy.feature][has] // strategy.width)
        if not has.all():
            blocks.append(states[~has])
        return blocks
    sccs = compute_sccs(mdp)
    return _group_sccs(sccs, MAX_SCC_BLOCKS)


def _group_sccs(sccs: list[np.ndarray], max_groups: int) -> list[np.ndarray]:
    """Merge consecutive SCCs into at most ``max_groups`` blocks of similar size."""
    total = sum(len(c) for c in sccs)
    groups: list[np.ndarray] = []
    current: list[np.ndarray] = []
    size = 0
    target = total / max_groups
    for c in sccs:
        current.append(c)
        size += len(c)
        # close the group once it reaches its share of the running total
        if size >= target * (len(groups) + 1) - 1e-9 and len(groups) < max_groups - 1:
            groups.append(np.sort(np.concatenate(current)))
            current = []
    if current:
        groups.append(np.sort(np.concatenate(current)))
    return groups


def refine_block(
    block: np.ndarray,
    depth: int,
    strategy: PartitionStrategy,
    features: StateFeatures | None = None,
    mdp: Mdp | None = None,
) -> list[np.ndarray]:
    """Split ``block`` (a node at ``depth``) into children.

    Returns ``[block]`` when the strategy cannot split it.
    """
    block = np.asarray(block, dtype=np.int64)
    if len(block) < 2:
        return [block]
    if strategy.kind == "grid":
        f = _require(features, ("x", "y"))
        if not (f.present("x")[block] & f.present("y")[block]).all():
            return [block]
        x, y = f["x"][block], f["y"][block]
        xm = x.min() + (x.max() - x.min() + 1) // 2
        ym = y.min() + (y.max() - y.min() + 1) // 2
        key = (y >= ym).astype(np.int64) * 2 + (x >= xm)
        children = _group_by_key(block, key)
    elif strategy.kind == "counter":
        f = _require(features, (strategy.feature,))
        if not f.present(strategy.feature)[block].all():
            return [block]
        width = max(1, strategy.width >> depth)
        children = _group_by_key(block, f[strategy.feature][block] // width)
    else:
        if mdp is None:
            raise ValueError("SCC refinement needs the model")
        sccs = compute_sccs(mdp, block)
        children = _group_sccs(sccs, MAX_SCC_CHILDREN)
    return children if len(children) > 1 else [block]


# -- strongly connected components ----------------------------------------


def _successor_lists(mdp: Mdp, block: np.ndarray | None):
    """CSR adjacency (indptr, indices) over local ids, dropping edges leaving ``block``."""
    src, dst = mdp.transition_source, mdp.targets
    n = mdp.num_states
    if block is None:
        local = None
        m = n
    else:
        local = np.full(n, -1, dtype=np.int64)
        local[block] = np.arange(len(block))
        keep = (local[src] >= 0) & (local[dst] >= 0)
        src, dst = local[src[keep]], local[dst[keep]]
        m = len(block)
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    uniq = np.ones(len(src), dtype=bool)
    uniq[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
    src, dst = src[uniq], dst[uniq]
    indptr = np.zeros(m + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, dst, local


def compute_sccs(mdp: Mdp, block: np.ndarray | None = None) -> list[np.ndarray]:
    """Strongly connected components in reverse topological order.

    Iterative Tarjan over the transition graph (restricted to ``block`` when
    given); roots are visited in ascending state order, so output is
    deterministic.  Each component is returned as a sorted array of global ids.
    """
    indptr, succ, _ = _successor_lists(mdp, block)
    comps = tarjan(len(indptr) - 1, indptr.tolist(), succ.tolist())
    ids = np.arange(mdp.num_states) if block is None else np.asarray(block, dtype=np.int64)
    return [np.sort(ids[np.asarray(c, dtype=np.int64)]) for c in comps]


def tarjan(n: int, indptr: Sequence[int], succ: Sequence[int]) -> list[list[int]]:
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    out: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        # frames of (vertex, next edge position)
        work = [(root, indptr[root])]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            end = indptr[v + 1]
            descended = False
            while pos < end:
                w = succ[pos]
                pos += 1
                if index[w] == -1:
                    work[-1] = (v, pos)
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, indptr[w]))
                    descended = True
                    break
                if on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
            if descended:
                continue
            work.pop()
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                out.append(comp)
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
    return out


# -- hierarchy tree -------------------------------------------------------


@dataclass(eq=False)
class HierarchyNode:
    block: np.ndarray
    depth: int
    node_id: int
    parent: HierarchyNode | None = None
    children: list[HierarchyNode] = field(default_factory=list)
    values: np.ndarray | None = None   # leaves: over block + boundary; inner nodes: over block
    policy: np.ndarray | None = None   # over block
    prev_boundary: np.ndarray | None = None
    ever_solved: bool = False
    local_residual: float = 0.0
    splittable: bool = True
    submdp: object | None = None       # cached induced sub-MDP (structure only)
    positions: np.ndarray | None = None  # where this block sits inside the parent's block

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def add_children(self, blocks: Sequence[np.ndarray], first_id: int) -> list[HierarchyNode]:
        kids = []
        for i, b in enumerate(blocks):
            kid = HierarchyNode(np.asarray(b, dtype=np.int64), self.depth + 1, first_id + i, parent=self)
            kid.positions = np.searchsorted(self.block, kid.block)
            kids.append(kid)
        self.children = kids
        return kids

    def leaves(self) -> Iterator[HierarchyNode]:
        if self.is_leaf:
            yield self
            return
        for c in self.children:
            yield from c.leaves()

    def walk(self) -> Iterator[HierarchyNode]:
        yield self
        for c in self.children:
            yield from c.walk()


def check_partition(blocks: Sequence[np.ndarray], universe: np.ndarray) -> None:
    """Assert that ``blocks`` are nonempty, disjoint and cover ``universe``."""
    if any(len(b) == 0 for b in blocks):
        raise AssertionError("empty block in partition")
    allb = np.concatenate(list(blocks)) if blocks else np.zeros(0, dtype=np.int64)
    if len(allb) != len(universe) or not np.array_equal(np.sort(allb), np.sort(universe)):
        raise AssertionError("blocks are not a disjoint cover of the parent block")


def check_tree(root: HierarchyNode, max_depth: int | None = None) -> None:
    """Partition laws at every inner node and for the leaf set."""
    for node in root.walk():
        if node.children:
            check_partition([c.block for c in node.children], node.block)
            for c in node.children:
                if c.depth != node.depth + 1:
                    raise AssertionError("child depth is not parent depth + 1")
        if max_depth is not None and node.depth > max_depth:
            raise AssertionError(f"node depth {node.depth} exceeds {max_depth}")
    check_partition([leaf.block for leaf in root.leaves()], root.block)
