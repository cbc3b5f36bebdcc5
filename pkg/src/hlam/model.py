"""Core types and the ideal-response / likelihood kernel.

Binary matrices are plain ``uint8`` numpy arrays with 0/1 entries:

* ``Q``  -- (J, K) structural matrix, row ``j`` is the loading vector of item ``j``
* ``A``  -- (N, K) attribute patterns, one row per subject
* ``R``  -- (N, J) responses, paired with an (N, J) boolean observed mask
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

PROPORTION_TOL = 1e-10


class ModelKind(str, enum.Enum):
    AND = "and"
    OR = "or"


def as_binary(x: ArrayLike, ndim: int | None = None, name: str = "array") -> NDArray[np.uint8]:
    """Coerce ``x`` to a uint8 array, raising if any entry is not 0 or 1."""
    arr = np.asarray(x)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 entries")
    return arr.astype(np.uint8, copy=False)


def dominates(a: ArrayLike, b: ArrayLike) -> bool:
    """Partial order ``a >= b`` elementwise."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("length mismatch")
    return bool(np.all(a >= b))


def canonical_order(patterns: NDArray) -> NDArray[np.intp]:
    """Indices sorting pattern rows lexicographically (first attribute most significant)."""
    patterns = np.asarray(patterns)
    if patterns.shape[0] == 0:
        return np.arange(0)
    return np.lexsort(patterns.T[::-1])


@dataclass(frozen=True)
class ItemNoise:
    """Item-level Bernoulli parameters with ``0 < theta_minus < theta_plus < 1``."""

    theta_plus: NDArray[np.float64]
    theta_minus: NDArray[np.float64]

    def __post_init__(self):
        tp = np.asarray(self.theta_plus, dtype=np.float64).ravel()
        tm = np.asarray(self.theta_minus, dtype=np.float64).ravel()
        if tp.shape != tm.shape:
            raise ValueError("theta_plus and theta_minus must have the same length")
        if not (np.all(tm > 0) and np.all(tp < 1) and np.all(tp > tm)):
            raise ValueError("item noise requires 0 < theta_minus < theta_plus < 1 for every item")
        object.__setattr__(self, "theta_plus", tp)
        object.__setattr__(self, "theta_minus", tm)

    @classmethod
    def constant(cls, J: int, theta_plus: float = 0.8, theta_minus: float = 0.2) -> ItemNoise:
        return cls(np.full(J, theta_plus), np.full(J, theta_minus))

    @property
    def J(self) -> int:
        return self.theta_plus.shape[0]


@dataclass(frozen=True)
class PatternSet:
    """Duplicate-free, lexicographically sorted attribute patterns.

    ``proportions`` is optional; when present it is aligned with ``patterns``
    and sums to one.
    """

    patterns: NDArray[np.uint8]
    proportions: NDArray[np.float64] | None = None

    def __post_init__(self):
        pats = as_binary(self.patterns, ndim=2, name="patterns")
        if pats.shape[0] > 1:
            order = canonical_order(pats)
            if not np.array_equal(order, np.arange(len(order))):
                raise ValueError("patterns must be in canonical order; use PatternSet.from_rows")
            if np.any(np.all(pats[1:] == pats[:-1], axis=1)):
                raise ValueError("patterns must be distinct")
        object.__setattr__(self, "patterns", pats)
        if self.proportions is not None:
            p = np.asarray(self.proportions, dtype=np.float64).ravel()
            if p.shape[0] != pats.shape[0]:
                raise ValueError("one proportion per pattern is required")
            if np.any(p < 0) or abs(p.sum() - 1.0) > PROPORTION_TOL:
                raise ValueError("proportions must be nonnegative and sum to 1")
            object.__setattr__(self, "proportions", p)

    @classmethod
    def from_rows(cls, rows: ArrayLike, proportions: ArrayLike | None = None) -> PatternSet:
        """Sort and deduplicate ``rows``; proportions of duplicate rows are summed."""
        rows = as_binary(np.atleast_2d(rows), ndim=2, name="patterns")
        uniq, inverse = np.unique(rows, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).ravel()
        order = canonical_order(uniq)
        uniq = uniq[order]
        p = None
        if proportions is not None:
            p_in = np.asarray(proportions, dtype=np.float64).ravel()
            if p_in.shape[0] != rows.shape[0]:
                raise ValueError("one proportion per row is required")
            summed = np.bincount(inverse, weights=p_in, minlength=len(order))
            p = summed[order]
        return cls(uniq, p)

    @classmethod
    def uniform(cls, rows: ArrayLike) -> PatternSet:
        ps = cls.from_rows(rows)
        return ps.with_proportions(np.full(len(ps), 1.0 / len(ps)))

    def with_proportions(self, proportions: ArrayLike) -> PatternSet:
        return PatternSet(self.patterns, np.asarray(proportions, dtype=np.float64))

    def __len__(self) -> int:
        return self.patterns.shape[0]

    @property
    def K(self) -> int:
        return self.patterns.shape[1]

    def as_tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(v) for v in row) for row in self.patterns]

    def as_strings(self) -> list[str]:
        return ["".join(str(int(v)) for v in row) for row in self.patterns]


@dataclass(frozen=True)
class ResponseData:
    """Binary responses with an observed-entry mask.

    Entries of ``responses`` at unobserved cells are zeroed on construction
    so that no consumer can accidentally read them.
    """

    responses: NDArray[np.uint8]
    observed: NDArray[np.bool_] = None
    item_names: tuple[str, ...] | None = field(default=None, compare=False)
    require_coverage: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        raw = np.asarray(self.responses)
        if raw.ndim != 2:
            raise ValueError("responses must be an N x J matrix")
        if self.observed is None:
            obs = np.ones(raw.shape, dtype=bool)
        else:
            obs = np.asarray(self.observed, dtype=bool)
            if obs.shape != raw.shape:
                raise ValueError("observed mask must have the same shape as responses")
        R = np.where(obs, raw, 0)
        R = as_binary(R, ndim=2, name="responses")
        if self.require_coverage:
            if not obs.any(axis=1).all():
                bad = np.flatnonzero(~obs.any(axis=1))
                raise ValueError(f"rows without any observed entry: {bad[:10].tolist()}")
            if not obs.any(axis=0).all():
                bad = np.flatnonzero(~obs.any(axis=0))
                raise ValueError(f"columns without any observed entry: {bad[:10].tolist()}")
        object.__setattr__(self, "responses", R)
        object.__setattr__(self, "observed", obs)

    @property
    def N(self) -> int:
        return self.responses.shape[0]

    @property
    def J(self) -> int:
        return self.responses.shape[1]

    @property
    def missing_rate(self) -> float:
        return 1.0 - float(self.observed.mean())

    @property
    def fully_observed(self) -> bool:
        return bool(self.observed.all())


def diagnose_q(Q: ArrayLike) -> list[str]:
    """Messages about items that carry no information (all-zero loading rows)."""
    Q = as_binary(Q, ndim=2, name="Q")
    empty = np.flatnonzero(Q.sum(axis=1) == 0)
    if empty.size == 0:
        return []
    return [f"items {empty.tolist()} have all-zero loading vectors; their ideal response is constant 1"]


def gamma(q: ArrayLike, alpha: ArrayLike, kind: ModelKind | str = ModelKind.AND) -> int:
    """Ideal response of pattern ``alpha`` to an item with loading ``q``."""
    q = as_binary(q, ndim=1, name="q")
    alpha = as_binary(alpha, ndim=1, name="alpha")
    if q.shape != alpha.shape:
        raise ValueError(f"length mismatch: q has {q.size} entries, alpha has {alpha.size}")
    if ModelKind(kind) is ModelKind.AND:
        return int(np.all(alpha >= q))
    return int(np.any((q == 1) & (alpha == 1)))


def gamma_matrix(Q: ArrayLike, patterns: ArrayLike | PatternSet,
                 kind: ModelKind | str = ModelKind.AND) -> NDArray[np.uint8]:
    """J x L matrix of ideal responses; column ``l`` belongs to pattern ``l``."""
    if isinstance(patterns, PatternSet):
        patterns = patterns.patterns
    Q = as_binary(Q, ndim=2, name="Q").astype(np.int64)
    P = as_binary(np.atleast_2d(patterns), ndim=2, name="patterns").astype(np.int64)
    if Q.shape[1] != P.shape[1]:
        raise ValueError(f"K mismatch: Q has {Q.shape[1]} columns, patterns have {P.shape[1]}")
    if ModelKind(kind) is ModelKind.AND:
        # count of required-but-missing attributes
        return (Q @ (1 - P).T == 0).astype(np.uint8)
    return (Q @ P.T > 0).astype(np.uint8)


def q_equivalent(Q1: ArrayLike, Q2: ArrayLike, patterns: ArrayLike | PatternSet,
                 kind: ModelKind | str = ModelKind.AND) -> bool:
    Q1 = as_binary(Q1, ndim=2, name="Q1")
    Q2 = as_binary(Q2, ndim=2, name="Q2")
    if Q1.shape != Q2.shape:
        raise ValueError(f"dimension mismatch: {Q1.shape} vs {Q2.shape}")
    return bool(np.array_equal(gamma_matrix(Q1, patterns, kind), gamma_matrix(Q2, patterns, kind)))


def theta_of(j: int, alpha: ArrayLike, Q: ArrayLike, noise: ItemNoise,
             kind: ModelKind | str = ModelKind.AND) -> float:
    Q = np.asarray(Q)
    if gamma(Q[j], alpha, kind):
        return float(noise.theta_plus[j])
    return float(noise.theta_minus[j])


def theta_matrix(Q: ArrayLike, patterns: ArrayLike | PatternSet, noise: ItemNoise,
                 kind: ModelKind | str = ModelKind.AND) -> NDArray[np.float64]:
    """J x L matrix of positive-response probabilities."""
    G = gamma_matrix(Q, patterns, kind).astype(bool)
    return np.where(G, noise.theta_plus[:, None], noise.theta_minus[:, None])


def _require_proportions(patterns: PatternSet) -> NDArray[np.float64]:
    if patterns.proportions is None:
        raise ValueError("pattern set has no proportions attached")
    return patterns.proportions


def _component_loglik(R: NDArray, observed: NDArray, theta: NDArray) -> NDArray[np.float64]:
    """N x L matrix of per-subject log-likelihoods under each pattern, summed over observed cells."""
    Rf = np.asarray(R, dtype=np.float64)
    obs = np.asarray(observed, dtype=np.float64)
    with np.errstate(divide="ignore"):
        log_t = np.log(theta)
        log_1mt = np.log1p(-theta)
    pos = Rf * obs
    neg = (1.0 - Rf) * obs
    # 0 * -inf must contribute 0 for unobserved or impossible cells
    return _safe_matmul(pos, log_t) + _safe_matmul(neg, log_1mt)


def _safe_matmul(weights: NDArray, logs: NDArray) -> NDArray:
    if np.isfinite(logs).all():
        return weights @ logs
    finite = np.where(np.isfinite(logs), logs, 0.0)
    out = weights @ finite
    hits = weights @ (~np.isfinite(logs)).astype(np.float64)
    out[hits > 0] = -np.inf
    return out


def response_pmf(r: ArrayLike, Q: ArrayLike, noise: ItemNoise, patterns: PatternSet,
                 kind: ModelKind | str = ModelKind.AND) -> float:
    """Marginal probability of a full response vector under the mixture."""
    p = _require_proportions(patterns)
    r = as_binary(np.atleast_2d(r), ndim=2, name="r")
    theta = theta_matrix(Q, patterns, noise, kind)
    ll = _component_loglik(r, np.ones_like(r, dtype=bool), theta)[0]
    return float(np.exp(ll) @ p)


def response_pmf_all(Q: ArrayLike, noise: ItemNoise, patterns: PatternSet,
                     kind: ModelKind | str = ModelKind.AND, max_items: int = 20) -> NDArray[np.float64]:
    """pmf of every response vector in ``{0,1}^J``, rows in :func:`all_binary_vectors` order."""
    p = _require_proportions(patterns)
    J = np.asarray(Q).shape[0]
    if J > max_items:
        raise ValueError(f"J={J} too large for full enumeration (limit {max_items})")
    r = all_binary_vectors(J)
    theta = theta_matrix(Q, patterns, noise, kind)
    ll = _component_loglik(r, np.ones_like(r, dtype=bool), theta)
    return np.exp(ll) @ p


def all_binary_vectors(n: int) -> NDArray[np.uint8]:
    """All ``2**n`` binary vectors, first coordinate most significant."""
    idx = np.arange(2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def loglik_complete(R: ArrayLike | ResponseData, assignments: ArrayLike, Q: ArrayLike,
                    noise: ItemNoise, observed: ArrayLike | None = None) -> float:
    """Complete-data log-likelihood of responses given every subject's pattern (AND model)."""
    if isinstance(R, ResponseData):
        observed = R.observed
        R = R.responses
    R = as_binary(R, ndim=2, name="R")
    obs = np.ones(R.shape, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    G = gamma_matrix(Q, assignments).T.astype(bool)  # N x J
    tp, tm = noise.theta_plus[None, :], noise.theta_minus[None, :]
    pos = np.where(G, np.log(tp), np.log(tm))
    neg = np.where(G, np.log1p(-tp), np.log1p(-tm))
    terms = np.where(R == 1, pos, neg)
    return float(terms[obs].sum())


def loglik_observed(R: ArrayLike | ResponseData, patterns: ArrayLike | PatternSet,
                    proportions: ArrayLike | None, theta: ArrayLike,
                    observed: ArrayLike | None = None) -> float:
    """Marginal log-likelihood of a mixture over ``patterns``.

    ``theta`` is the J x L matrix of positive-response probabilities per
    pattern (see :func:`theta_matrix`).  Evaluated in log space.
    """
    if isinstance(R, ResponseData):
        observed = R.observed
        R = R.responses
    if isinstance(patterns, PatternSet) and proportions is None:
        proportions = _require_proportions(patterns)
    p = np.asarray(proportions, dtype=np.float64)
    R = as_binary(R, ndim=2, name="R")
    obs = np.ones(R.shape, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[1] != p.shape[0]:
        raise ValueError("theta must have one column per pattern")
    ll = _component_loglik(R, obs, theta)
    with np.errstate(divide="ignore"):
        per_row = logsumexp(ll + np.log(p)[None, :], axis=1)
    if not np.all(np.isfinite(per_row)):
        bad = np.flatnonzero(~np.isfinite(per_row))
        raise ValueError(f"rows {bad[:10].tolist()} have zero probability under every pattern with p > 0")
    return float(per_row.sum())


def warn_uninformative(Q: ArrayLike) -> list[str]:
    msgs = diagnose_q(Q)
    for m in msgs:
        warnings.warn(m, stacklevel=2)
    return msgs
