"""Stochastic EM with alternating-direction Gibbs sampling (ADG-EM).

Jointly estimates the structural matrix Q, subject attribute patterns and
item noise from binary responses, and screens a candidate pattern set.

Full conditionals follow from the complete-data log-likelihood, which is
``const + sum_{ij} Gamma_ij * psi_ij`` with ``psi`` the per-cell log
likelihood ratio.  Hence

* ``logit P(a_ik = 1 | rest) = + sum_j q_jk * Gamma^{(-k)}_ij * psi_ij``
* ``logit P(q_jk = 1 | rest) = - sum_i (1 - a_ik) * Gamma^{(-k)}_ij * psi_ij``

where ``Gamma^{(-k)}`` is the ideal response ignoring attribute ``k``.

The Q vote after each E step keeps an entry only if it won the majority
and at least one subject carried information about it.  Under a hierarchy
the prerequisite entries of an item are exactly uninformative, and voting
them to 0 picks the sparsest member of the equivalence class instead of a
coin flip that changes every iteration.

Rows of A and Q are packed into ``uint64`` bitsets (K <= 64) so the
``prod_{m != k}`` factor becomes a single masked test.  Uniform draws are
generated up front in a fixed order, which keeps results independent of
the number of numba threads.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numba
import numpy as np
from numpy.typing import ArrayLike, NDArray

from .model import ItemNoise, PatternSet, ResponseData, as_binary, diagnose_q

log = logging.getLogger(__name__)

# an outdated system TBB only disables that layer; numba falls back to omp/workqueue
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

THETA_CLAMP = 1e-4
THETA_SEPARATION = 1e-6
DENOM_GUARD = 1e-8
MAX_K = 64


@dataclass
class AdgConfig:
    M: int = 3
    max_outer_iters: int = 100
    theta_tol: float = 1e-4
    seed: int | None = None
    init: Literal["random", "provided", "perturbed"] = "random"
    Q_init: NDArray | None = None  # provided Q, or the reference Q to perturb
    A_init: NDArray | None = None
    flip_fraction: float = 1.0 / 3.0
    theta_plus_init: float = 0.8
    theta_minus_init: float = 0.2
    fixed_iters: int | None = None  # run exactly this many outer iterations

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not 0 < self.theta_minus_init < self.theta_plus_init < 1:
            raise ValueError("need 0 < theta_minus_init < theta_plus_init < 1")
        if self.init not in ("random", "provided", "perturbed"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class AdgState:
    A: NDArray[np.uint8]
    Q: NDArray[np.uint8]
    theta_plus: NDArray[np.float64]
    theta_minus: NDArray[np.float64]
    A_ave: NDArray[np.float64]
    t: int = 1
    psi: NDArray[np.float64] | None = None
    A_s: NDArray[np.float64] | None = None
    Q_s: NDArray[np.float64] | None = None
    I_ave: NDArray[np.float64] | None = None

    @property
    def noise(self) -> ItemNoise:
        return ItemNoise(self.theta_plus, self.theta_minus)


@dataclass
class AdgResult:
    Q_hat: NDArray[np.uint8]
    A_hat: NDArray[np.uint8]
    A_ave: NDArray[np.float64]
    candidates: PatternSet
    theta: ItemNoise
    trace: list[dict]
    converged: bool
    n_iter: int
    Q_init: NDArray[np.uint8]
    diagnostics: list[str] = field(default_factory=list)


# --------------------------------------------------------------------------
# bitset helpers and kernels

def pack_rows(M: ArrayLike) -> NDArray[np.uint64]:
    M = np.asarray(M, dtype=np.uint64)
    if M.shape[1] > MAX_K:
        raise ValueError(f"K={M.shape[1]} exceeds the bitset width {MAX_K}")
    weights = np.left_shift(np.uint64(1), np.arange(M.shape[1], dtype=np.uint64))
    return np.bitwise_or.reduce(M * weights[None, :], axis=1) if M.shape[1] else np.zeros(M.shape[0], np.uint64)


def unpack_rows(bits: NDArray[np.uint64], K: int) -> NDArray[np.uint8]:
    shifts = np.arange(K, dtype=np.uint64)
    return ((bits[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)


@numba.njit(cache=True, parallel=True)
def _sweep_a(abits, qbits, psi, u, K):
    N, J = psi.shape
    one = np.uint64(1)
    for i in numba.prange(N):
        a = abits[i]
        for k in range(K):
            bit = one << np.uint64(k)
            others = ~(a | bit)
            s = 0.0
            for j in range(J):
                q = qbits[j]
                if (q & bit) and (q & others) == 0:
                    s += psi[i, j]
            if u[i, k] * (1.0 + np.exp(-s)) < 1.0:
                a = a | bit
            else:
                a = a & ~bit
        abits[i] = a


@numba.njit(cache=True, parallel=True)
def _sweep_q(abits, qbits, psi_t, u, K, informed):
    J, N = psi_t.shape
    one = np.uint64(1)
    for j in numba.prange(J):
        q = qbits[j]
        for k in range(K):
            bit = one << np.uint64(k)
            need = q & ~bit
            s = 0.0
            hits = 0
            for i in range(N):
                a = abits[i]
                if (a & bit) == 0 and (need & ~a) == 0:
                    s += psi_t[j, i]
                    hits += 1
            if hits > 0:
                informed[j, k] += 1
            # P(q = 1) = sigmoid(-s)
            if u[j, k] * (1.0 + np.exp(s)) < 1.0:
                q = q | bit
            else:
                q = q & ~bit
        qbits[j] = q


# --------------------------------------------------------------------------
# reference conditionals (plain numpy, used for checks and small problems)

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def a_logit(a_row: ArrayLike, Q: ArrayLike, psi_row: ArrayLike, k: int) -> float:
    """Log-odds of ``a_ik = 1`` given the rest of the row, Q and psi."""
    a = np.asarray(a_row, dtype=np.int64)
    Q = np.asarray(Q, dtype=np.int64)
    others = np.ones_like(a)
    others[k] = 0
    missing_other = (Q * (1 - a) * others).sum(axis=1)
    return float(np.sum(Q[:, k] * (missing_other == 0) * np.asarray(psi_row)))


def q_logit(q_row: ArrayLike, A: ArrayLike, psi_col: ArrayLike, k: int) -> float:
    """Log-odds of ``q_jk = 1`` given the rest of the loading row, A and psi."""
    q = np.asarray(q_row, dtype=np.int64).copy()
    A = np.asarray(A, dtype=np.int64)
    q[k] = 0
    missing_other = ((1 - A) * q[None, :]).sum(axis=1)
    return float(-np.sum((1 - A[:, k]) * (missing_other == 0) * np.asarray(psi_col)))


# --------------------------------------------------------------------------

def compute_psi(R: ArrayLike, observed: ArrayLike | None, theta_plus: ArrayLike,
                theta_minus: ArrayLike) -> NDArray[np.float64]:
    """Per-cell log-likelihood ratio of ideal response 1 vs 0; zero off the mask."""
    R = np.asarray(R)
    tp = np.asarray(theta_plus, dtype=np.float64)
    tm = np.asarray(theta_minus, dtype=np.float64)
    pos = np.log(tp / tm)
    neg = np.log((1.0 - tp) / (1.0 - tm))
    psi = np.where(R == 1, pos[None, :], neg[None, :])
    if observed is not None:
        psi = np.where(np.asarray(observed, dtype=bool), psi, 0.0)
    return np.ascontiguousarray(psi, dtype=np.float64)


def gibbs_sweep_a(A: ArrayLike, Q: ArrayLike, psi: ArrayLike, rng: np.random.Generator) -> NDArray[np.uint8]:
    """One systematic-scan sweep over every ``a_ik``; returns the new A."""
    A = as_binary(A, ndim=2, name="A")
    Q = as_binary(Q, ndim=2, name="Q")
    K = A.shape[1]
    abits, qbits = pack_rows(A), pack_rows(Q)
    u = rng.random((A.shape[0], K))
    _sweep_a(abits, qbits, np.ascontiguousarray(psi, dtype=np.float64), u, K)
    return unpack_rows(abits, K)


def gibbs_sweep_q(A: ArrayLike, Q: ArrayLike, psi: ArrayLike, rng: np.random.Generator) -> NDArray[np.uint8]:
    """One systematic-scan sweep over every ``q_jk``; returns the new Q."""
    A = as_binary(A, ndim=2, name="A")
    Q = as_binary(Q, ndim=2, name="Q")
    K = Q.shape[1]
    abits, qbits = pack_rows(A), pack_rows(Q)
    u = rng.random((Q.shape[0], K))
    informed = np.zeros((Q.shape[0], K), dtype=np.int64)
    _sweep_q(abits, qbits, np.ascontiguousarray(np.asarray(psi).T, dtype=np.float64), u, K, informed)
    return unpack_rows(qbits, K)


def init_state(data: ResponseData, K: int, config: AdgConfig, rng: np.random.Generator) -> AdgState:
    N, J = data.N, data.J
    if config.init == "random":
        Q0 = rng.integers(0, 2, size=(J, K), dtype=np.uint8)
        A0 = rng.integers(0, 2, size=(N, K), dtype=np.uint8)
    elif config.init == "provided":
        if config.Q_init is None:
            raise ValueError("init='provided' needs Q_init")
        Q0 = as_binary(config.Q_init, ndim=2, name="Q_init").copy()
        if config.A_init is not None:
            A0 = as_binary(config.A_init, ndim=2, name="A_init").copy()
        else:
            A0 = rng.integers(0, 2, size=(N, K), dtype=np.uint8)
    else:
        if config.Q_init is None:
            raise ValueError("init='perturbed' needs the reference Q in Q_init")
        ref = as_binary(config.Q_init, ndim=2, name="Q_init")
        flips = rng.random(ref.shape) < config.flip_fraction
        Q0 = (ref ^ flips).astype(np.uint8)
        A0 = rng.integers(0, 2, size=(N, K), dtype=np.uint8)
    if Q0.shape != (J, K) or A0.shape != (N, K):
        raise ValueError(f"initial Q/A shapes {Q0.shape}/{A0.shape} do not match (J,K)=({J},{K}), N={N}")
    return AdgState(
        A=A0, Q=Q0,
        theta_plus=np.full(J, config.theta_plus_init),
        theta_minus=np.full(J, config.theta_minus_init),
        A_ave=np.zeros((N, K)),
    )


def e_step(state: AdgState, data: ResponseData, config: AdgConfig, rng: np.random.Generator) -> AdgState:
    """Stochastic E step: 2M sweeps along A, running average update, 2M sweeps along Q, Q vote."""
    M = config.M
    N, K = state.A.shape
    J = state.Q.shape[0]
    state.psi = compute_psi(data.responses, data.observed, state.theta_plus, state.theta_minus)
    abits, qbits = pack_rows(state.A), pack_rows(state.Q)

    A_s = np.zeros((N, K))
    for r in range(2 * M):
        _sweep_a(abits, qbits, state.psi, rng.random((N, K)), K)
        if r >= M:
            A_s += unpack_rows(abits, K)
    w = 1.0 / state.t
    state.A_ave = w * A_s / M + (1.0 - w) * state.A_ave
    state.t += 1
    state.A_s = A_s

    psi_t = np.ascontiguousarray(state.psi.T)
    Q_s = np.zeros((J, K))
    informed = np.zeros((J, K), dtype=np.int64)
    for r in range(2 * M):
        hits = np.zeros((J, K), dtype=np.int64)
        _sweep_q(abits, qbits, psi_t, rng.random((J, K)), K, hits)
        if r >= M:
            Q_s += unpack_rows(qbits, K)
            informed += hits
    state.Q_s = Q_s
    # entries no subject informed in any kept sweep are free within the
    # equivalence class; vote them to 0 so Q_hat is the sparsest representative
    state.Q = ((Q_s / M > 0.5) & (informed > 0)).astype(np.uint8)
    state.A = unpack_rows(abits, K)
    return state


def expected_ideal(A_ave: ArrayLike, Q: ArrayLike) -> NDArray[np.float64]:
    """``I_ave[i, j] = prod_k A_ave[i, k] ** Q[j, k]``."""
    logs = np.log(np.maximum(np.asarray(A_ave, dtype=np.float64), 1e-300))
    return np.exp(logs @ np.asarray(Q, dtype=np.float64).T)


def update_theta(R: NDArray, observed: NDArray | None, weight_pos: NDArray,
                 prev_plus: NDArray, prev_minus: NDArray) -> tuple[NDArray, NDArray]:
    """Ratio updates of item parameters with degenerate-class and range guards.

    ``weight_pos[i, j]`` is the (expected) indicator that cell ``(i, j)`` has
    ideal response 1.
    """
    obs = np.ones(R.shape) if observed is None else np.asarray(observed, dtype=np.float64)
    Rf = np.asarray(R, dtype=np.float64) * obs
    w1 = weight_pos * obs
    w0 = (1.0 - weight_pos) * obs
    d1, d0 = w1.sum(axis=0), w0.sum(axis=0)
    n1, n0 = (Rf * weight_pos).sum(axis=0), (Rf * (1.0 - weight_pos)).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tp = np.where(d1 >= DENOM_GUARD, n1 / d1, prev_plus)
        tm = np.where(d0 >= DENOM_GUARD, n0 / d0, prev_minus)
    return clamp_theta(tp, tm)


def clamp_theta(tp: NDArray, tm: NDArray) -> tuple[NDArray, NDArray]:
    lo, hi = THETA_CLAMP, 1.0 - THETA_CLAMP
    tp = np.clip(tp, lo + THETA_SEPARATION, hi)
    tm = np.clip(tm, lo, hi)
    tm = np.minimum(tm, tp - THETA_SEPARATION)
    return tp, tm


def m_step(state: AdgState, data: ResponseData) -> AdgState:
    state.I_ave = expected_ideal(state.A_ave, state.Q)
    state.theta_plus, state.theta_minus = update_theta(
        data.responses, data.observed, state.I_ave, state.theta_plus, state.theta_minus)
    return state


def prune_loadings(Q: ArrayLike, A: ArrayLike, psi: ArrayLike, threshold: float) -> NDArray[np.uint8]:
    """Drop loadings whose complete-data log-likelihood gain is below ``threshold``.

    The gain of keeping ``q_jk = 1`` over ``0`` with A held fixed is exactly
    the Q-direction log-odds.  Entries of one row are visited in index order
    and each decision sees the earlier ones.
    """
    Q = as_binary(Q, ndim=2, name="Q").copy()
    A = np.asarray(A, dtype=np.int64)
    lacks = 1 - A
    psi = np.asarray(psi, dtype=np.float64)
    for j in range(Q.shape[0]):
        for k in np.flatnonzero(Q[j]):
            q = Q[j].astype(np.int64)
            q[k] = 0
            ok = (lacks @ q) == 0
            gain = -float(np.sum(lacks[:, k] * ok * psi[:, j]))
            if gain < threshold:
                Q[j, k] = 0
    return Q


def run(data: ResponseData, K: int, config: AdgConfig | None = None,
        rng: np.random.Generator | None = None) -> AdgResult:
    """Run ADG-EM to convergence (or for ``config.fixed_iters`` iterations)."""
    config = config or AdgConfig()
    if K > MAX_K:
        raise ValueError(f"K={K} exceeds {MAX_K}")
    if not (data.observed.any(axis=1).all() and data.observed.any(axis=0).all()):
        raise ValueError("every row and column needs at least one observed entry")
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    state = init_state(data, K, config, rng)
    Q_init = state.Q.copy()
    trace = []
    converged = False
    n_iter = config.fixed_iters if config.fixed_iters is not None else config.max_outer_iters
    it = 0
    for it in range(1, n_iter + 1):
        Q_prev = state.Q.copy()
        tp_prev, tm_prev = state.theta_plus.copy(), state.theta_minus.copy()
        e_step(state, data, config, rng)
        m_step(state, data)
        changes = int(np.sum(state.Q != Q_prev))
        dtheta = float(max(np.max(np.abs(state.theta_plus - tp_prev)),
                           np.max(np.abs(state.theta_minus - tm_prev))))
        trace.append({
            "iter": it,
            "q_entry_changes": changes,
            "theta_plus_mean": float(state.theta_plus.mean()),
            "theta_minus_mean": float(state.theta_minus.mean()),
            "max_theta_change": dtheta,
        })
        log.debug("iter %d: %d Q changes, max dtheta %.2e", it, changes, dtheta)
        if changes == 0 and dtheta < config.theta_tol:
            converged = True
            if config.fixed_iters is None:
                break
    A_hat = (state.A_ave > 0.5).astype(np.uint8)
    diagnostics = diagnose_q(state.Q)
    if not converged and config.fixed_iters is None:
        diagnostics.append(f"ADG-EM did not converge within {config.max_outer_iters} iterations")
    return AdgResult(
        Q_hat=state.Q.copy(),
        A_hat=A_hat,
        A_ave=state.A_ave,
        candidates=PatternSet.from_rows(A_hat),
        theta=ItemNoise(state.theta_plus, state.theta_minus),
        trace=trace,
        converged=converged,
        n_iter=it,
        Q_init=Q_init,
        diagnostics=diagnostics,
    )
