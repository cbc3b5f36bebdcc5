"""Prerequisite hierarchies over binary attributes.

Attributes are 0-based inside the library.  An edge ``(k, l)`` means
attribute ``k`` is a prerequisite of ``l``: no allowed pattern has
``alpha[k] == 0`` and ``alpha[l] == 1``.  The text file format uses
1-based indices.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import networkx as nx
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import PatternSet, as_binary

MAX_ENUM_K = 25


class HierarchyError(ValueError):
    pass


class CycleDetected(HierarchyError):
    def __init__(self, cycle: list[int]):
        self.cycle = cycle
        shown = " -> ".join(str(k + 1) for k in cycle + cycle[:1])
        super().__init__(f"hierarchy contains a cycle: {shown}")


class SelfLoop(HierarchyError):
    pass


class IndexOutOfRange(HierarchyError):
    pass


@dataclass(frozen=True, eq=False)
class Hierarchy:
    """Validated prerequisite DAG on ``K`` attributes."""

    K: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        edges = frozenset((int(k), int(l)) for k, l in self.edges)
        for k, l in edges:
            if not (0 <= k < self.K and 0 <= l < self.K):
                raise IndexOutOfRange(f"edge ({k + 1} -> {l + 1}) outside 1..{self.K}")
            if k == l:
                raise SelfLoop(f"self-loop on attribute {k + 1}")
        object.__setattr__(self, "edges", edges)
        g = self.graph
        try:
            cyc = nx.find_cycle(g)
        except nx.NetworkXNoCycle:
            return
        raise CycleDetected([u for u, _ in cyc])

    def __eq__(self, other):
        if not isinstance(other, Hierarchy):
            return NotImplemented
        return self.K == other.K and self.closure == other.closure

    def __hash__(self):
        return hash((self.K, self.closure))

    @cached_property
    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.K))
        g.add_edges_from(self.edges)
        return g

    @cached_property
    def closure(self) -> frozenset[tuple[int, int]]:
        reach = self.reach_matrix
        return frozenset((int(k), int(l)) for k, l in zip(*np.nonzero(reach)))

    @cached_property
    def reduction(self) -> frozenset[tuple[int, int]]:
        return frozenset(nx.transitive_reduction(self.graph).edges())

    @cached_property
    def reach_matrix(self) -> NDArray[np.bool_]:
        """``reach[k, l]`` is True iff ``k`` is a (direct or indirect) prerequisite of ``l``."""
        reach = np.zeros((self.K, self.K), dtype=bool)
        for k, l in self.edges:
            reach[k, l] = True
        for m in range(self.K):
            reach |= reach[:, m:m + 1] & reach[m:m + 1, :]
        return reach

    @cached_property
    def topological_order(self) -> list[int]:
        return list(nx.lexicographical_topological_sort(self.graph))

    def ancestors(self, l: int) -> NDArray[np.intp]:
        return np.flatnonzero(self.reach_matrix[:, l])

    def descendants(self, k: int) -> NDArray[np.intp]:
        return np.flatnonzero(self.reach_matrix[k, :])

    def relabel(self, perm: ArrayLike) -> Hierarchy:
        """Hierarchy with attribute ``perm[k]`` renamed to ``k``."""
        inv = np.argsort(np.asarray(perm))
        return Hierarchy(self.K, frozenset((int(inv[k]), int(inv[l])) for k, l in self.edges))

    def __repr__(self):
        shown = ", ".join(f"{k + 1}->{l + 1}" for k, l in sorted(self.reduction))
        return f"Hierarchy(K={self.K}, {{{shown}}})"


def validate(edges: Iterable[tuple[int, int]], K: int, one_based: bool = False) -> Hierarchy:
    """Build a :class:`Hierarchy`, raising on cycles, self-loops or bad indices."""
    off = 1 if one_based else 0
    return Hierarchy(K, frozenset((k - off, l - off) for k, l in edges))


def transitive_closure(h: Hierarchy) -> frozenset[tuple[int, int]]:
    return h.closure


def transitive_reduction(h: Hierarchy) -> frozenset[tuple[int, int]]:
    return h.reduction


def induce_patterns(h: Hierarchy, max_k: int = MAX_ENUM_K) -> PatternSet:
    """All patterns respecting the hierarchy, in canonical order.

    Attributes are assigned in topological order; a 1 is only branched on
    when every direct prerequisite is already 1, so forbidden patterns are
    never generated.
    """
    if h.K > max_k:
        raise ValueError(f"K={h.K} exceeds the enumeration limit {max_k}")
    parents = [sorted(h.graph.predecessors(l)) for l in range(h.K)]
    order = h.topological_order
    pos = {attr: i for i, attr in enumerate(order)}
    partial = np.zeros((1, 0), dtype=np.uint8)
    for attr in order:
        cols = [pos[p] for p in parents[attr]]
        allowed = partial[:, cols].all(axis=1) if cols else np.ones(partial.shape[0], dtype=bool)
        zeros = np.hstack([partial, np.zeros((partial.shape[0], 1), dtype=np.uint8)])
        ones = np.hstack([partial[allowed], np.ones((int(allowed.sum()), 1), dtype=np.uint8)])
        partial = np.vstack([zeros, ones])
    pats = partial[:, [pos[k] for k in range(h.K)]]
    return PatternSet.from_rows(pats)


def respects(alpha: ArrayLike, h: Hierarchy) -> bool:
    alpha = as_binary(alpha, ndim=1, name="alpha")
    if alpha.shape[0] != h.K:
        raise ValueError("pattern length differs from K")
    return all(alpha[l] <= alpha[k] for k, l in h.closure)


@dataclass(frozen=True)
class ExtractedHierarchy:
    hierarchy: Hierarchy
    closure: frozenset[tuple[int, int]]
    reduction: frozenset[tuple[int, int]]
    indistinguishable: list[tuple[int, int]]

    @property
    def diagnostics(self) -> list[str]:
        return [f"attributes {k + 1} and {l + 1} are indistinguishable (identical columns)"
                for k, l in self.indistinguishable]


def extract_hierarchy(D: ArrayLike | PatternSet) -> ExtractedHierarchy:
    """Read prerequisite edges off the column order of a selected-pattern matrix.

    ``k -> l`` whenever column ``k`` dominates column ``l`` and they differ.
    Identical columns produce no edge and are reported instead.
    """
    if isinstance(D, PatternSet):
        D = D.patterns
    D = as_binary(np.asarray(D), ndim=2, name="D")
    if D.shape[0] == 0:
        raise ValueError("pattern matrix is empty")
    K = D.shape[1]
    cols = D.T.astype(bool)
    geq = np.all(cols[:, None, :] >= cols[None, :, :], axis=2)
    same = geq & geq.T
    edges = frozenset((k, l) for k in range(K) for l in range(K) if k != l and geq[k, l] and not same[k, l])
    ties = [(k, l) for k in range(K) for l in range(k + 1, K) if same[k, l]]
    h = Hierarchy(K, edges)
    return ExtractedHierarchy(h, h.closure, h.reduction, ties)


_EDGE_RE = re.compile(r"^\s*(\d+)\s*->\s*(\d+)\s*$")
_K_RE = re.compile(r"^\s*K\s*=\s*(\d+)\s*$")


def parse_hierarchy(text: str) -> Hierarchy:
    K = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _K_RE.match(line):
            K = int(m.group(1))
        elif m := _EDGE_RE.match(line):
            edges.append((int(m.group(1)), int(m.group(2))))
        else:
            raise HierarchyError(f"line {lineno}: cannot parse {raw!r}")
    if K is None:
        raise HierarchyError("missing 'K=<n>' header")
    return validate(edges, K, one_based=True)


def format_hierarchy(h: Hierarchy, edges: Iterable[tuple[int, int]] | None = None) -> str:
    edges = h.edges if edges is None else edges
    lines = [f"K={h.K}"] + [f"{k + 1} -> {l + 1}" for k, l in sorted(edges)]
    return "\n".join(lines) + "\n"


def read_hierarchy(path: str | Path) -> Hierarchy:
    return parse_hierarchy(Path(path).read_text())


def write_hierarchy(h: Hierarchy, path: str | Path) -> None:
    Path(path).write_text(format_hierarchy(h))
