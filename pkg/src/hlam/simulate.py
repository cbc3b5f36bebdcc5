"""Synthetic designs, data generation, reconstruction and evaluation metrics."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linear_sum_assignment

from .hierarchy import Hierarchy, induce_patterns, validate
from .model import ItemNoise, PatternSet, as_binary, gamma_matrix

EXHAUSTIVE_ALIGN_MAX_K = 9
ALIGN_CHUNK = 5040


# --------------------------------------------------------------------------
# structural matrices and hierarchies

def build_q1(K: int) -> NDArray[np.uint8]:
    """K x K band: ones on the diagonal and the first superdiagonal."""
    return (np.eye(K, dtype=np.uint8) + np.eye(K, k=1, dtype=np.uint8)).astype(np.uint8)


def build_qblock(K: int) -> NDArray[np.uint8]:
    """``(I_K; Q1; Q1)``, a 3K x K block."""
    q1 = build_q1(K)
    return np.vstack([np.eye(K, dtype=np.uint8), q1, q1])


def build_q(J: int, K: int) -> NDArray[np.uint8]:
    """``J / (3K)`` vertically stacked copies of :func:`build_qblock`."""
    if J % (3 * K):
        raise ValueError(f"J={J} must be a multiple of 3K={3 * K}")
    return np.tile(build_qblock(K), (J // (3 * K), 1))


def build_q2() -> NDArray[np.uint8]:
    """7 x 7 circulant band with the wrap-around row (1000001)."""
    K = 7
    q2 = build_q1(K)
    q2[K - 1, 0] = 1
    return q2


def build_q_factorization(J: int = 1000, K: int = 7) -> NDArray[np.uint8]:
    """Half the rows stacked copies of I_K, half stacked copies of Q2 (last partial block truncated)."""
    if K != 7:
        raise ValueError("the Q2 design is defined for K=7")
    half = J // 2
    top = np.tile(np.eye(K, dtype=np.uint8), (-(-half // K), 1))[:half]
    rest = J - half
    bottom = np.tile(build_q2(), (-(-rest // K), 1))[:rest]
    return np.vstack([top, bottom])


def diamond_hierarchy() -> Hierarchy:
    edges = [(1, 2), (1, 3)]
    edges += [(a, b) for a in (2, 3) for b in (4, 5, 6)]
    edges += [(a, b) for a in (4, 5, 6) for b in (7, 8)]
    return validate(edges, 8, one_based=True)


def tree_hierarchy() -> Hierarchy:
    return validate([(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (6, 8)], 8, one_based=True)


def rbforest_hierarchy() -> Hierarchy:
    return validate([(1, 2), (3, 1), (2, 4), (5, 2), (3, 6), (7, 3)], 7, one_based=True)


# --------------------------------------------------------------------------
# data generation

@dataclass
class SimDesign:
    """One synthetic scenario; ``noise`` is the common value of 1 - theta+ = theta-."""

    N: int
    J: int
    K: int
    hierarchy: Hierarchy | None = None
    q_design: str = "block"  # "block" | "q2_stack" | "explicit"
    Q: NDArray | None = None
    noise: float = 0.2
    proportions: NDArray | None = None  # aligned with induce_patterns(hierarchy); uniform if None
    missing_rate: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.noise < 0.5:
            raise ValueError("noise must lie in [0, 0.5)")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError("missing_rate must lie in [0, 1)")
        if self.hierarchy is None:
            self.hierarchy = Hierarchy(self.K)
        if self.hierarchy.K != self.K:
            raise ValueError("hierarchy K differs from design K")

    def build_Q(self) -> NDArray[np.uint8]:
        if self.q_design == "block":
            return build_q(self.J, self.K)
        if self.q_design == "q2_stack":
            return build_q_factorization(self.J, self.K)
        if self.q_design == "explicit":
            Q = as_binary(self.Q, ndim=2, name="Q")
            if Q.shape != (self.J, self.K):
                raise ValueError(f"explicit Q has shape {Q.shape}, expected {(self.J, self.K)}")
            return Q
        raise ValueError(f"unknown q_design {self.q_design!r}")

    def true_patterns(self) -> PatternSet:
        pats = induce_patterns(self.hierarchy)
        if self.proportions is None:
            return pats.with_proportions(np.full(len(pats), 1.0 / len(pats)))
        return pats.with_proportions(self.proportions)


@dataclass
class SimData:
    responses: NDArray[np.uint8]
    observed: NDArray[np.bool_]
    assignments: NDArray[np.uint8]
    Q: NDArray[np.uint8]
    theta: ItemNoise
    patterns: PatternSet
    ideal: NDArray[np.uint8] = field(repr=False, default=None)


def draw_mask(N: int, J: int, missing_rate: float, rng: np.random.Generator,
              max_redraws: int = 1000) -> NDArray[np.bool_]:
    """Independent missingness; empty rows/columns get their cells redrawn."""
    obs = rng.random((N, J)) >= missing_rate
    for _ in range(max_redraws):
        bad_rows = ~obs.any(axis=1)
        bad_cols = ~obs.any(axis=0)
        if not bad_rows.any() and not bad_cols.any():
            return obs
        if bad_rows.any():
            obs[bad_rows] = rng.random((int(bad_rows.sum()), J)) >= missing_rate
        if bad_cols.any():
            obs[:, bad_cols] = rng.random((N, int(bad_cols.sum()))) >= missing_rate
    raise RuntimeError("could not draw a mask with every row and column observed")


def sample_data(design: SimDesign, rng: np.random.Generator | None = None) -> SimData:
    rng = rng if rng is not None else np.random.default_rng(design.seed)
    Q = design.build_Q()
    pats = design.true_patterns()
    idx = rng.choice(len(pats), size=design.N, p=pats.proportions)
    A = pats.patterns[idx]
    ideal = gamma_matrix(Q, A).T  # N x J
    tp = 1.0 - design.noise
    tm = design.noise
    prob = np.where(ideal == 1, tp, tm)
    R = (rng.random(prob.shape) < prob).astype(np.uint8)
    if design.missing_rate > 0:
        obs = draw_mask(design.N, design.J, design.missing_rate, rng)
    else:
        obs = np.ones(R.shape, dtype=bool)
    # the noiseless limit is represented by the clamped values
    theta = ItemNoise(np.full(design.J, min(tp, 1 - 1e-4)), np.full(design.J, max(tm, 1e-4)))
    return SimData(R, obs, A, Q, theta, pats, ideal)


def replication_seed(master_seed: int, replication: int) -> int:
    return int(np.random.SeedSequence([master_seed, replication]).generate_state(1, np.uint64)[0])


# --------------------------------------------------------------------------
# reconstruction and metrics

def reconstruct(A_hat: ArrayLike, Q_hat: ArrayLike, theta: ItemNoise) -> NDArray[np.uint8]:
    """Nearest 0/1 value to the posterior mean of every cell."""
    G = gamma_matrix(Q_hat, A_hat).T.astype(bool)
    mean = np.where(G, theta.theta_plus[None, :], theta.theta_minus[None, :])
    return (mean > 0.5).astype(np.uint8)


def reconstruction_error(R_hat: ArrayLike, R_true: ArrayLike) -> float:
    return float(np.mean(np.asarray(R_hat) != np.asarray(R_true)))


@dataclass
class Alignment:
    perm: NDArray[np.intp]  # estimated column perm[k] plays the role of true attribute k
    agreement: float
    exhaustive: bool


def _unique_row_pairs(Q_hat: NDArray, Q_true: NDArray) -> tuple[NDArray, NDArray, NDArray]:
    both = np.hstack([Q_hat, Q_true])
    uniq, counts = np.unique(both, axis=0, return_counts=True)
    K = Q_hat.shape[1]
    return uniq[:, :K], uniq[:, K:], counts


def align_columns(Q_hat: ArrayLike, Q_true: ArrayLike, patterns: ArrayLike | PatternSet) -> Alignment:
    """Column permutation of ``Q_hat`` maximizing ideal-response agreement with ``Q_true``.

    Exhaustive for K <= 9; above that a linear assignment on per-column
    agreement is used.  Ties go to the permutation with the smaller raw
    Hamming distance, then to the lexicographically first one.
    """
    if isinstance(patterns, PatternSet):
        patterns = patterns.patterns
    Q_hat = as_binary(Q_hat, ndim=2, name="Q_hat")
    Q_true = as_binary(Q_true, ndim=2, name="Q_true")
    if Q_hat.shape != Q_true.shape:
        raise ValueError(f"dimension mismatch: {Q_hat.shape} vs {Q_true.shape}")
    P = as_binary(np.atleast_2d(patterns), ndim=2, name="patterns")
    K = Q_hat.shape[1]
    qh, qt, counts = _unique_row_pairs(Q_hat, Q_true)
    G_true = gamma_matrix(qt, P).astype(np.int64)
    total = Q_hat.shape[0] * P.shape[0]

    def score(perm):
        G_hat = gamma_matrix(qh[:, perm], P).astype(np.int64)
        agree = int(((G_hat == G_true).sum(axis=1) * counts).sum())
        ham = int(((qh[:, perm] != qt).sum(axis=1) * counts).sum())
        return agree, -ham

    if K <= EXHAUSTIVE_ALIGN_MAX_K:
        perms = np.array(list(itertools.permutations(range(K))), dtype=np.intp)
        lacks = (1 - P).T.astype(np.int64)  # K x L
        best_i, best_s = 0, None
        for start in range(0, len(perms), ALIGN_CHUNK):
            chunk = perms[start:start + ALIGN_CHUNK]
            moved = qh.astype(np.int64)[:, chunk]  # U x B x K
            G_hat = (moved @ lacks == 0)
            agree = ((G_hat == G_true[:, None, :].astype(bool)).sum(axis=2) * counts[:, None]).sum(axis=0)
            ham = ((moved != qt[:, None, :]).sum(axis=2) * counts[:, None]).sum(axis=0)
            # lexicographic (agree, -ham); argmax returns the first, i.e. lexicographically first perm
            key = agree.astype(np.float64) * (Q_hat.size + 1) - ham
            i = int(np.argmax(key))
            s = (int(agree[i]), -int(ham[i]))
            if best_s is None or s > best_s:
                best_i, best_s = start + i, s
        return Alignment(perms[best_i].copy(), best_s[0] / total, True)

    # per-column agreement as an assignment problem, refined by the exact score
    cost = np.zeros((K, K))
    for k in range(K):
        for m in range(K):
            cost[k, m] = -np.sum((Q_hat[:, m] == Q_true[:, k]))
    _, cols = linear_sum_assignment(cost)
    perm = list(cols)
    s = score(perm)
    improved = True
    while improved:
        improved = False
        for a, b in itertools.combinations(range(K), 2):
            cand = perm.copy()
            cand[a], cand[b] = cand[b], cand[a]
            cs = score(cand)
            if cs > s:
                perm, s, improved = cand, cs, True
    return Alignment(np.array(perm), s[0] / total, False)


def metric_acc_q(Q_hat: ArrayLike, Q_true: ArrayLike, patterns: ArrayLike | PatternSet,
                 align: bool = True) -> float:
    """Fraction of (item, pattern) pairs whose ideal response is recovered, after column alignment."""
    if align:
        return align_columns(Q_hat, Q_true, patterns).agreement
    G1 = gamma_matrix(Q_hat, patterns)
    G2 = gamma_matrix(Q_true, patterns)
    return float(np.mean(G1 == G2))


def metric_mismatch_q(Q_hat: ArrayLike, Q_true: ArrayLike, patterns: ArrayLike | PatternSet) -> float:
    return 1.0 - metric_acc_q(Q_hat, Q_true, patterns)


def _as_set(patterns) -> set[tuple[int, ...]]:
    if isinstance(patterns, PatternSet):
        return set(patterns.as_tuples())
    arr = np.atleast_2d(np.asarray(patterns))
    return {tuple(int(v) for v in row) for row in arr}


def metric_tpr(selected, truth) -> float:
    t = _as_set(truth)
    if not t:
        raise ValueError("true pattern set is empty")
    return len(_as_set(selected) & t) / len(t)


def metric_one_minus_fdr(selected, truth) -> float:
    s = _as_set(selected)
    if not s:
        raise ValueError("1-FDR is undefined for an empty selection")
    return len(s & _as_set(truth)) / len(s)


def entry_diff(Q_hat: ArrayLike, Q_true: ArrayLike) -> int:
    """Smallest Hamming distance between ``Q_true`` and a column permutation of ``Q_hat``."""
    Q_hat = as_binary(Q_hat, ndim=2, name="Q_hat").astype(np.int64)
    Q_true = as_binary(Q_true, ndim=2, name="Q_true").astype(np.int64)
    if Q_hat.shape != Q_true.shape:
        raise ValueError("dimension mismatch")
    # column-pair mismatch counts; the column permutation is an assignment problem
    cost = (Q_true.T @ (1 - Q_hat)) + ((1 - Q_true).T @ Q_hat)
    rows, cols = linear_sum_assignment(cost)
    return int(cost[rows, cols].sum())


def permute_patterns(patterns: ArrayLike | PatternSet, perm: ArrayLike) -> PatternSet:
    """Reorder pattern columns so estimated attribute ``perm[k]`` becomes attribute ``k``."""
    if isinstance(patterns, PatternSet):
        p = patterns.proportions
        return PatternSet.from_rows(patterns.patterns[:, np.asarray(perm)], p)
    return PatternSet.from_rows(np.atleast_2d(patterns)[:, np.asarray(perm)])
