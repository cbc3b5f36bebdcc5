"""Executable identifiability conditions for (Q, hierarchy) pairs.

Prerequisite relations ``k -> h`` are always taken over the transitive
closure of the hierarchy.  Conditions B and C only ever improve when rows
are added to the non-designated part of Q, so the checker searches over
the designated K rows (one reducing to each unit vector) and keeps the
remaining rows as the "star" block.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .hierarchy import Hierarchy
from .model import ItemNoise, ModelKind, PatternSet, all_binary_vectors, as_binary, response_pmf_all, theta_matrix

MAX_EXACT_COMBOS = 10_000


def operation_a_reduce(row: ArrayLike, h: Hierarchy) -> NDArray[np.uint8]:
    """Zero every prerequisite of an attribute the row loads on."""
    row = as_binary(row, ndim=1, name="row")
    reach = h.reach_matrix
    loaded = row.astype(bool)
    # k is zeroed if it reaches some loaded h
    drop = (reach[:, loaded]).any(axis=1) if loaded.any() else np.zeros(h.K, dtype=bool)
    return np.where(drop, 0, row).astype(np.uint8)


def operation_b(Qstar: ArrayLike, h: Hierarchy) -> NDArray[np.uint8]:
    """Add every prerequisite of each loaded attribute (row-wise closure)."""
    Q = as_binary(np.atleast_2d(Qstar), name="Qstar").reshape(-1, h.K)
    reach = h.reach_matrix.astype(np.int64)
    # q_k <- 1 if q_k or k reaches a loaded attribute
    add = (Q.astype(np.int64) @ reach.T) > 0
    return (Q.astype(bool) | add).astype(np.uint8)


def operation_c(Qstar: ArrayLike, h: Hierarchy) -> NDArray[np.uint8]:
    """Remove every attribute that has a loaded prerequisite."""
    Q = as_binary(np.atleast_2d(Qstar), name="Qstar").reshape(-1, h.K)
    reach = h.reach_matrix.astype(np.int64)
    drop = (Q.astype(np.int64) @ reach) > 0
    return np.where(drop, 0, Q).astype(np.uint8)


@dataclass
class ConditionA:
    holds: bool
    witness_rows: list[int] | None
    missing_attributes: list[int] = field(default_factory=list)


@dataclass
class ConditionB:
    holds: bool
    duplicate_column_pairs: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class ConditionC:
    holds: bool
    deficient_columns: list[int] = field(default_factory=list)
    column_sums: list[int] = field(default_factory=list)


def witness_candidates(Q: ArrayLike, h: Hierarchy) -> list[list[int]]:
    """For each attribute ``k``, the rows whose A-reduction equals ``e_k``."""
    Q = as_binary(Q, ndim=2, name="Q")
    cands: list[list[int]] = [[] for _ in range(h.K)]
    for j, row in enumerate(Q):
        red = operation_a_reduce(row, h)
        if red.sum() == 1:
            cands[int(np.flatnonzero(red)[0])].append(j)
    return cands


def condition_a(Q: ArrayLike, h: Hierarchy) -> ConditionA:
    cands = witness_candidates(Q, h)
    missing = [k for k, c in enumerate(cands) if not c]
    if missing:
        return ConditionA(False, None, missing)
    return ConditionA(True, [c[0] for c in cands])


def condition_b(QstarB: ArrayLike) -> ConditionB:
    Q = np.asarray(QstarB)
    K = Q.shape[1]
    dups = [(k, l) for k in range(K) for l in range(k + 1, K) if np.array_equal(Q[:, k], Q[:, l])]
    return ConditionB(not dups, dups)


def condition_c(QstarC: ArrayLike) -> ConditionC:
    Q = np.asarray(QstarC)
    sums = Q.sum(axis=0).astype(int)
    deficient = [int(k) for k in np.flatnonzero(sums < 2)]
    return ConditionC(not deficient, deficient, sums.tolist())


def contains_identity(Q: ArrayLike) -> bool:
    Q = as_binary(Q, ndim=2, name="Q")
    K = Q.shape[1]
    rows = {tuple(r) for r in Q.tolist()}
    return all(tuple(int(k == m) for m in range(K)) in rows for k in range(K))


@dataclass
class IdentifiabilityReport:
    condition_a: ConditionA
    condition_b: ConditionB
    condition_c: ConditionC
    contains_identity: bool
    q0_selection: list[int] | None
    search: str  # "exact" | "greedy" | "none"
    indeterminate_if_false: bool

    @property
    def part_i_sufficient(self) -> bool:
        return self.condition_a.holds and self.condition_b.holds and self.condition_c.holds

    @property
    def part_ii_sufficient(self) -> bool:
        return self.part_i_sufficient and self.contains_identity

    @property
    def condition_a_necessity_violated(self) -> bool:
        # Condition A is necessary, so its failure proves non-identifiability.
        return not self.condition_a.holds

    def to_dict(self, one_based: bool = True) -> dict:
        off = 1 if one_based else 0
        a = asdict(self.condition_a)
        if a["witness_rows"] is not None:
            a["witness_rows"] = [j + off for j in a["witness_rows"]]
        a["missing_attributes"] = [k + off for k in a["missing_attributes"]]
        b = asdict(self.condition_b)
        b["duplicate_column_pairs"] = [[k + off, l + off] for k, l in b["duplicate_column_pairs"]]
        c = asdict(self.condition_c)
        c["deficient_columns"] = [k + off for k in c["deficient_columns"]]
        return {
            "index_base": off,
            "condition_a": a,
            "condition_b": b,
            "condition_c": c,
            "contains_identity": self.contains_identity,
            "part_i_sufficient": self.part_i_sufficient,
            "part_ii_sufficient": self.part_ii_sufficient,
            "q0_selection": None if self.q0_selection is None else [j + off for j in self.q0_selection],
            "search": self.search,
            "indeterminate_if_false": self.indeterminate_if_false,
            "non_identifiable_proven": self.condition_a_necessity_violated,
        }


def _evaluate_selection(Q: NDArray, h: Hierarchy, sel: list[int]) -> tuple[ConditionB, ConditionC]:
    rest = np.delete(Q, sel, axis=0)
    return condition_b(operation_b(rest, h)), condition_c(operation_c(rest, h))


def _score(b: ConditionB, c: ConditionC) -> tuple:
    return (b.holds and c.holds, c.holds, b.holds, -len(c.deficient_columns), -len(b.duplicate_column_pairs))


def check_identifiability(Q: ArrayLike, h: Hierarchy, max_combos: int = MAX_EXACT_COMBOS) -> IdentifiabilityReport:
    """Check the sufficient conditions and the identity-submatrix requirement."""
    Q = as_binary(Q, ndim=2, name="Q")
    J, K = Q.shape
    if K != h.K:
        raise ValueError(f"Q has {K} columns but the hierarchy has K={h.K}")
    if J < K:
        raise ValueError(f"Q needs at least K={K} rows, got {J}")
    has_id = contains_identity(Q)
    cands = witness_candidates(Q, h)
    missing = [k for k, c in enumerate(cands) if not c]
    if missing:
        empty_b, empty_c = ConditionB(False), ConditionC(False, list(range(K)))
        return IdentifiabilityReport(ConditionA(False, None, missing), empty_b, empty_c,
                                     has_id, None, "none", False)

    n_combos = math.prod(len(c) for c in cands)
    best = None
    if n_combos <= max_combos:
        search = "exact"
        for sel in itertools.product(*cands):
            b, c = _evaluate_selection(Q, h, list(sel))
            if best is None or _score(b, c) > _score(best[1], best[2]):
                best = (list(sel), b, c)
            if b.holds and c.holds:
                break
        indeterminate = False
    else:
        search = "greedy"
        # keep the rows that contribute most to the C-reduced column sums in Q-star
        sel = []
        for c in cands:
            weights = [int(operation_c(Q[j], h).sum()) for j in c]
            sel.append(c[int(np.argmin(weights))])
        b, c = _evaluate_selection(Q, h, sel)
        best = (sel, b, c)
        indeterminate = not (b.holds and c.holds)
    sel, b, c = best
    return IdentifiabilityReport(ConditionA(True, sel), b, c, has_id, sel, search, indeterminate)


# name fixed by the public interface
check_theorem1 = check_identifiability


def t_matrix(Q: ArrayLike, patterns: ArrayLike | PatternSet, noise: ItemNoise,
             rows: ArrayLike | None = None, max_items: int = 20) -> NDArray[np.float64]:
    """Marginal positive-response probabilities ``T[r, alpha] = prod_{j: r_j = 1} theta_{j, alpha}``.

    ``rows=None`` enumerates all ``2**J`` response vectors.
    """
    theta = theta_matrix(Q, patterns, noise)
    J = theta.shape[0]
    if rows is None:
        if J > max_items:
            raise ValueError(f"J={J} too large for full enumeration (limit {max_items})")
        rows = all_binary_vectors(J)
    rows = as_binary(np.atleast_2d(rows), ndim=2, name="rows").astype(np.float64)
    return np.exp(rows @ np.log(theta))


@dataclass(frozen=True)
class ModelParams:
    Q: NDArray[np.uint8]
    noise: ItemNoise
    patterns: PatternSet  # with proportions


def distributions_equal(params1: ModelParams, params2: ModelParams, tol: float = 1e-9,
                        max_items: int = 12) -> bool:
    """Whether two parameterizations give the same response distribution."""
    J1, J2 = np.asarray(params1.Q).shape[0], np.asarray(params2.Q).shape[0]
    if J1 != J2:
        raise ValueError("both models must have the same number of items")
    if J1 > max_items:
        raise ValueError(f"J={J1} too large for full enumeration (limit {max_items})")
    f1 = response_pmf_all(params1.Q, params1.noise, params1.patterns, ModelKind.AND, max_items)
    f2 = response_pmf_all(params2.Q, params2.noise, params2.patterns, ModelKind.AND, max_items)
    return bool(np.max(np.abs(f1 - f2)) <= tol)
