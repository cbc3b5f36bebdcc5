"""Second stage: penalized EM over candidate patterns and EBIC selection.

With the structural matrix frozen, each candidate pattern fixes which items
it answers "ideally" correctly, so the mixture has one proportion per
candidate and two noise parameters per item.  A negative ``lam`` times the
log-proportions pushes unsupported candidates down to the floor ``c``; the
survivors above ``rho_select`` form the selected set.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import gammaln, logsumexp

from .adgem import update_theta
from .hierarchy import ExtractedHierarchy, extract_hierarchy
from .model import ItemNoise, PatternSet, ResponseData, as_binary, gamma_matrix

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = tuple(-0.2 * i for i in range(1, 21))
TABLE_COLUMNS = ("lambda", "n_selected", "loglik", "ebic", "iterations",
                 "loglik_penalized_fit", "ebic_penalized_fit")


@dataclass
class PemConfig:
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID
    c: float = 1e-8
    rho_log: float | None = None  # N**-2 when None
    rho_select: float | None = None  # 1/(2N) when None
    gamma_ebic: float = 1.0
    max_iters: int = 500
    obj_tol: float = 1e-6
    seed: int | None = None
    warm_start: bool = True

    def __post_init__(self):
        self.lambda_grid = tuple(float(x) for x in self.lambda_grid)
        if not self.lambda_grid:
            raise ValueError("lambda grid is empty")
        if any(lam >= 0 for lam in self.lambda_grid):
            raise ValueError("every lambda must be negative")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if not 0.0 <= self.gamma_ebic <= 1.0:
            raise ValueError("gamma_ebic must lie in [0, 1]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def thresholds(self, N: int) -> tuple[float, float]:
        rho = self.rho_log if self.rho_log is not None else float(N) ** -2
        rho_n = self.rho_select if self.rho_select is not None else 1.0 / (2.0 * N)
        if not 0 < rho < rho_n < 1:
            raise ValueError(f"need 0 < rho_log < rho_select < 1, got {rho}, {rho_n}")
        return rho, rho_n


@dataclass
class PemFit:
    lam: float
    candidates: PatternSet  # without proportions
    p: NDArray[np.float64]
    theta: ItemNoise
    loglik: float  # unpenalized, at the returned parameters
    objective: float  # penalized, at the returned parameters
    selected: PatternSet  # proportions renormalized over the survivors
    selected_index: NDArray[np.intp]
    n_iter: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list)
    truncated_trace: list[bool] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def _log_rho(p: NDArray, rho: float) -> NDArray:
    return np.log(np.maximum(p, rho))


class _Mixture:
    """Precomputed pieces of the frozen-Q mixture likelihood."""

    def __init__(self, data: ResponseData, Q_hat: ArrayLike, patterns: NDArray):
        self.R = data.responses.astype(np.float64)
        self.obs = data.observed.astype(np.float64)
        self.G = gamma_matrix(Q_hat, patterns).astype(np.float64)  # J x L
        self.pos = self.R * self.obs
        self.neg = (1.0 - self.R) * self.obs

    def component_loglik(self, tp: NDArray, tm: NDArray) -> NDArray:
        # log f(r_i | alpha_l) = base_i + sum_j G_jl * diff_ij
        lp, lm = np.log(tp), np.log(tm)
        l1p, l1m = np.log1p(-tp), np.log1p(-tm)
        base = self.pos @ lm + self.neg @ l1m
        diff = self.pos * (lp - lm)[None, :] + self.neg * (l1p - l1m)[None, :]
        return base[:, None] + diff @ self.G

    def responsibilities(self, log_p: NDArray, comp: NDArray) -> tuple[NDArray, float]:
        joint = comp + log_p[None, :]
        norm = logsumexp(joint, axis=1)
        return np.exp(joint - norm[:, None]), float(norm.sum())

    def update_theta(self, phi: NDArray, tp: NDArray, tm: NDArray) -> tuple[NDArray, NDArray]:
        return update_theta(self.R, self.obs, phi @ self.G.T, tp, tm)

    def loglik(self, p: NDArray, tp: NDArray, tm: NDArray) -> float:
        with np.errstate(divide="ignore"):
            log_p = np.log(p)
        return float(logsumexp(self.component_loglik(tp, tm) + log_p[None, :], axis=1).sum())


def _em(mix: _Mixture, lam: float, p0: NDArray, tp0: NDArray, tm0: NDArray, c: float,
        rho: float, max_iters: int, tol: float):
    """Shared EM loop; ``lam = 0`` gives the unpenalized refit."""
    delta = np.maximum(np.asarray(p0, dtype=np.float64), c)
    p = delta / delta.sum()
    tp, tm = np.asarray(tp0, dtype=np.float64).copy(), np.asarray(tm0, dtype=np.float64).copy()
    objs: list[float] = []
    truncated: list[bool] = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        comp = mix.component_loglik(tp, tm)
        with np.errstate(divide="ignore"):
            phi, ll = mix.responsibilities(np.log(p), comp)
        obj = ll + lam * float(_log_rho(p, rho).sum())
        if objs and abs(obj - objs[-1]) <= tol * max(1.0, abs(objs[-1])):
            objs.append(obj)
            converged = True
            break
        objs.append(obj)
        raw = lam + phi.sum(axis=0)
        hit = bool(np.any(raw < c))
        delta = np.maximum(raw, c)
        p = delta / delta.sum()
        tp, tm = mix.update_theta(phi, tp, tm)
        # the log_rho kink also breaks the ascent argument
        truncated.append(hit or bool(np.any(p < rho)))
    else:
        comp = mix.component_loglik(tp, tm)
        with np.errstate(divide="ignore"):
            _, ll = mix.responsibilities(np.log(p), comp)
        objs.append(ll + lam * float(_log_rho(p, rho).sum()))
    final_ll = mix.loglik(p, tp, tm)
    return p, tp, tm, final_ll, objs[-1], it, converged, objs, truncated


def _as_candidates(candidates: ArrayLike | PatternSet) -> PatternSet:
    if isinstance(candidates, PatternSet):
        return PatternSet(candidates.patterns)
    rows = as_binary(np.atleast_2d(candidates), ndim=2, name="candidates")
    return PatternSet.from_rows(rows)


def _initial_theta(J: int, theta_init: ItemNoise | None) -> tuple[NDArray, NDArray]:
    if theta_init is None:
        return np.full(J, 0.8), np.full(J, 0.2)
    return np.asarray(theta_init.theta_plus, dtype=np.float64), np.asarray(theta_init.theta_minus, dtype=np.float64)


def pem_fit(data: ResponseData, Q_hat: ArrayLike, candidates: ArrayLike | PatternSet, lam: float,
            config: PemConfig | None = None, p_init: ArrayLike | None = None,
            theta_init: ItemNoise | None = None) -> PemFit:
    """Penalized EM for one ``lam`` with Q frozen."""
    config = config or PemConfig()
    if lam >= 0:
        raise ValueError("lam must be negative")
    cands = _as_candidates(candidates)
    L = len(cands)
    if L == 0:
        raise ValueError("candidate set is empty")
    Q_hat = as_binary(Q_hat, ndim=2, name="Q_hat")
    if Q_hat.shape != (data.J, cands.K):
        raise ValueError(f"Q_hat has shape {Q_hat.shape}, expected {(data.J, cands.K)}")
    rho, rho_n = config.thresholds(data.N)
    mix = _Mixture(data, Q_hat, cands.patterns)
    p0 = np.full(L, 1.0 / L) if p_init is None else np.asarray(p_init, dtype=np.float64)
    tp0, tm0 = _initial_theta(data.J, theta_init)
    p, tp, tm, ll, obj, n_iter, converged, objs, trunc = _em(
        mix, lam, p0, tp0, tm0, config.c, rho, config.max_iters, config.obj_tol)
    keep = np.flatnonzero(p > rho_n)
    diagnostics = []
    if keep.size == 0:
        keep = np.array([int(np.argmax(p))])
        diagnostics.append(f"lambda={lam}: every pattern fell below the selection threshold; kept the largest")
    sel_p = p[keep] / p[keep].sum()
    selected = PatternSet(cands.patterns[keep], sel_p)
    return PemFit(lam, cands, p, ItemNoise(tp, tm), ll, obj, selected, keep, n_iter, converged,
                  objs, trunc, diagnostics)


def refit(data: ResponseData, Q_hat: ArrayLike, patterns: PatternSet, config: PemConfig | None = None,
          p_init: ArrayLike | None = None, theta_init: ItemNoise | None = None):
    """Unpenalized EM restricted to ``patterns``; returns ``(p, theta, loglik)``."""
    config = config or PemConfig()
    rho, _ = config.thresholds(data.N)
    L = len(patterns)
    mix = _Mixture(data, Q_hat, patterns.patterns)
    p0 = np.full(L, 1.0 / L) if p_init is None else np.asarray(p_init, dtype=np.float64)
    tp0, tm0 = _initial_theta(data.J, theta_init)
    p, tp, tm, ll, *_ = _em(mix, 0.0, p0, tp0, tm0, config.c, rho, config.max_iters, config.obj_tol)
    return p, ItemNoise(tp, tm), ll


def reduce_candidates(Q_hat: ArrayLike, candidates: ArrayLike | PatternSet) -> PatternSet:
    """Replace each candidate by the smallest pattern with the same ideal responses.

    Under the AND rule that pattern is the union of the loading rows of the
    items the candidate satisfies.  Candidates with identical ideal responses
    cannot be told apart by the likelihood, so they collapse to one.
    """
    Q = as_binary(Q_hat, ndim=2, name="Q_hat").astype(np.int64)
    cands = _as_candidates(candidates).patterns
    G = gamma_matrix(Q, cands).T.astype(np.int64)  # L x J
    reduced = ((G @ Q) > 0).astype(np.uint8)
    return PatternSet.from_rows(reduced)


def log_binomial(n: int, k: int) -> float:
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def ebic(loglik: float, n_selected: int, n_candidates: int, N: int, gamma: float = 1.0) -> float:
    """Extended BIC: ``-2 ll + s log N + 2 gamma log C(m, s)``."""
    if not 0 <= n_selected <= n_candidates:
        raise ValueError("need 0 <= n_selected <= n_candidates")
    return -2.0 * loglik + n_selected * np.log(N) + 2.0 * gamma * log_binomial(n_candidates, n_selected)


@dataclass
class PathRow:
    lam: float
    n_selected: int
    loglik: float
    ebic: float
    iterations: int
    loglik_penalized_fit: float
    ebic_penalized_fit: float

    def as_tuple(self) -> tuple:
        return (self.lam, self.n_selected, self.loglik, self.ebic, self.iterations,
                self.loglik_penalized_fit, self.ebic_penalized_fit)


@dataclass
class PathResult:
    best_lambda: float
    A_final: PatternSet  # with refit proportions
    theta: ItemNoise  # refit on A_final
    loglik: float
    table: list[PathRow]
    fits: list[PemFit]
    diagnostics: list[str] = field(default_factory=list)

    def table_csv(self) -> str:
        return format_path_table(self.table)


def lambda_path(data: ResponseData, Q_hat: ArrayLike, candidates: ArrayLike | PatternSet,
                config: PemConfig | None = None, theta_init: ItemNoise | None = None) -> PathResult:
    """Fit every lambda (weakest penalty first), refit each selection, pick the EBIC minimizer."""
    config = config or PemConfig()
    cands = _as_candidates(candidates)
    grid = sorted(config.lambda_grid, key=abs)
    m = len(cands)
    rows: list[PathRow] = []
    fits: list[PemFit] = []
    refits = []
    p_prev, th_prev = None, theta_init
    for lam in grid:
        fit = pem_fit(data, Q_hat, cands, lam, config, p_init=p_prev, theta_init=th_prev)
        if config.warm_start:
            p_prev, th_prev = fit.p, fit.theta
        p_sel, th_sel, ll_sel = refit(data, Q_hat, fit.selected, config, fit.selected.proportions, fit.theta)
        s = len(fit.selected)
        rows.append(PathRow(lam, s, ll_sel, ebic(ll_sel, s, m, data.N, config.gamma_ebic), fit.n_iter,
                            fit.loglik, ebic(fit.loglik, s, m, data.N, config.gamma_ebic)))
        fits.append(fit)
        refits.append((p_sel, th_sel, ll_sel))
        log.debug("lambda=%.2f selected=%d ebic=%.2f", lam, s, rows[-1].ebic)
    low = min(r.ebic for r in rows)
    tied = [i for i, r in enumerate(rows) if r.ebic - low <= 1e-9 * max(1.0, abs(low))]
    best = max(tied, key=lambda i: abs(rows[i].lam))
    p_sel, th_sel, ll_sel = refits[best]
    chosen = fits[best].selected
    diagnostics = [d for f in fits for d in f.diagnostics]
    order = [grid.index(lam) for lam in config.lambda_grid]
    return PathResult(rows[best].lam, PatternSet(chosen.patterns, p_sel / p_sel.sum()), th_sel, ll_sel,
                      [rows[i] for i in order], [fits[i] for i in order], diagnostics)


def format_path_table(rows: Sequence[PathRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        w.writerow([repr(float(r.lam)), r.n_selected, repr(float(r.loglik)), repr(float(r.ebic)), r.iterations,
                    repr(float(r.loglik_penalized_fit)), repr(float(r.ebic_penalized_fit))])
    return buf.getvalue()


def parse_path_table(text: str) -> list[PathRow]:
    rd = csv.reader(io.StringIO(text))
    header = next(rd)
    if tuple(header) != TABLE_COLUMNS:
        raise ValueError(f"unexpected table header {header}")
    return [PathRow(float(a), int(b), float(c), float(d), int(e), float(f), float(g))
            for a, b, c, d, e, f, g in rd]


def write_path_table(rows: Sequence[PathRow], path: str | Path) -> None:
    Path(path).write_text(format_path_table(rows))


def finalize(A_final: PatternSet | ArrayLike) -> ExtractedHierarchy:
    return extract_hierarchy(A_final)


def enforce_identity(Q_hat: ArrayLike) -> tuple[NDArray[np.uint8], list[int]]:
    """Overwrite, for each attribute, the row closest to its unit vector.

    Ties go to the lowest row index; a row already claimed by an earlier
    attribute is skipped so all K unit vectors survive.
    """
    Q = as_binary(Q_hat, ndim=2, name="Q_hat").copy()
    J, K = Q.shape
    if J < K:
        raise ValueError(f"need at least K={K} rows to hold an identity block")
    used: list[int] = []
    eye = np.eye(K, dtype=np.uint8)
    for k in range(K):
        dist = np.abs(Q.astype(np.int64) - eye[k]).sum(axis=1)
        dist[used] = np.iinfo(np.int64).max
        j = int(np.argmin(dist))
        Q[j] = eye[k]
        used.append(j)
    return Q, used
