"""Two-stage estimation pipeline and the simulation campaign runner.

Stage one screens candidate patterns and estimates Q with ADG-EM; stage two
selects patterns with penalized EM along a lambda path, and the hierarchy is
read off the selected patterns.

OR-model data are handled through the duality ``Gamma_or(q, a) = 1 -
Gamma_and(q, 1 - a)``: complemented responses follow an AND model with the
same Q, complemented patterns and swapped item parameters
(``theta_plus' = 1 - theta_minus``, ``theta_minus' = 1 - theta_plus``).
Results are mapped back before reporting.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from . import adgem, pem
from .hierarchy import ExtractedHierarchy, Hierarchy, extract_hierarchy
from .io import RunReport
from .model import ItemNoise, ModelKind, PatternSet, ResponseData
from .simulate import (SimData, SimDesign, align_columns, permute_patterns, reconstruct,
                       reconstruction_error, entry_diff, metric_one_minus_fdr, metric_tpr, replication_seed,
                       sample_data)

log = logging.getLogger(__name__)


@dataclass
class FitConfig:
    K: int
    model: ModelKind = ModelKind.AND
    adg: adgem.AdgConfig = field(default_factory=adgem.AdgConfig)
    pem: pem.PemConfig = field(default_factory=pem.PemConfig)
    enforce_identity: bool = False
    prune: bool = True
    prune_threshold: float | None = None  # 0.5 * log N when None
    reduce_candidates: bool = True

    def __post_init__(self):
        self.model = ModelKind(self.model)
        if self.K < 1:
            raise ValueError("K must be positive")

    def echo(self) -> dict:
        a, p = self.adg, self.pem
        return {
            "K": self.K, "model": self.model.value,
            "M": a.M, "max_outer_iters": a.max_outer_iters, "theta_tol": a.theta_tol, "init": a.init,
            "fixed_iters": a.fixed_iters, "lambda_grid": list(p.lambda_grid), "c": p.c,
            "rho_log": p.rho_log, "rho_select": p.rho_select, "gamma_ebic": p.gamma_ebic,
            "pem_max_iters": p.max_iters, "obj_tol": p.obj_tol, "enforce_identity": self.enforce_identity,
            "prune": self.prune, "prune_threshold": self.prune_threshold,
            "reduce_candidates": self.reduce_candidates,
        }


@dataclass
class FitResult:
    Q_hat: NDArray[np.uint8]
    adg: adgem.AdgResult
    candidates: PatternSet  # raw unique rows of A_hat, original orientation
    reduced: PatternSet  # what stage two saw, original orientation
    path: pem.PathResult
    A_final: PatternSet
    theta: ItemNoise
    hierarchy: ExtractedHierarchy
    model: ModelKind
    timing: dict
    diagnostics: list[str]


def _flip_patterns(ps: PatternSet) -> PatternSet:
    return PatternSet.from_rows(1 - ps.patterns, ps.proportions)


def _flip_noise(theta: ItemNoise) -> ItemNoise:
    return ItemNoise(1.0 - theta.theta_minus, 1.0 - theta.theta_plus)


def fit(data: ResponseData, config: FitConfig, rng: np.random.Generator | None = None) -> FitResult:
    t0 = time.perf_counter()
    is_or = config.model is ModelKind.OR
    work = ResponseData(1 - data.responses, data.observed) if is_or else data
    res = adgem.run(work, config.K, config.adg, rng)
    t1 = time.perf_counter()
    diagnostics = list(res.diagnostics)

    Q_hat = res.Q_hat
    if config.prune:
        thr = config.prune_threshold if config.prune_threshold is not None else 0.5 * np.log(work.N)
        psi = adgem.compute_psi(work.responses, work.observed, res.theta.theta_plus, res.theta.theta_minus)
        Q_hat = adgem.prune_loadings(Q_hat, res.A_hat, psi, thr)
    if config.enforce_identity:
        Q_hat, rows = pem.enforce_identity(Q_hat)
        diagnostics.append("identity rows enforced at items " + ", ".join(str(j + 1) for j in rows))
    cands = res.candidates
    stage2 = pem.reduce_candidates(Q_hat, cands) if config.reduce_candidates else cands
    path = pem.lambda_path(work, Q_hat, stage2, config.pem, theta_init=res.theta)
    t2 = time.perf_counter()
    diagnostics += path.diagnostics

    A_final, theta = path.A_final, path.theta
    if is_or:
        cands, stage2 = _flip_patterns(cands), _flip_patterns(stage2)
        A_final, theta = _flip_patterns(A_final), _flip_noise(theta)
    hier = extract_hierarchy(A_final)
    diagnostics += hier.diagnostics
    return FitResult(Q_hat, res, cands, stage2, path, A_final, theta, hier, config.model,
                     {"adg_em_seconds": t1 - t0, "pem_seconds": t2 - t1,
                      "total_seconds": time.perf_counter() - t0}, diagnostics)


def _edges(edges) -> list[list[int]]:
    return [[k + 1, l + 1] for k, l in sorted(edges)]


def make_report(data: ResponseData, config: FitConfig, result: FitResult, seed: int) -> RunReport:
    return RunReport(
        input={"N": data.N, "J": data.J, "missing_rate": data.missing_rate},
        config=config.echo(),
        seed=int(seed),
        model=result.model.value,
        Q_hat=result.Q_hat,
        n_candidates=len(result.candidates),
        n_candidates_reduced=len(result.reduced),
        A_final=result.A_final.patterns,
        p_hat=result.A_final.proportions,
        theta_plus=result.theta.theta_plus,
        theta_minus=result.theta.theta_minus,
        hierarchy_closure=_edges(result.hierarchy.closure),
        hierarchy_reduction=_edges(result.hierarchy.reduction),
        indistinguishable=_edges(result.hierarchy.indistinguishable),
        best_lambda=result.path.best_lambda,
        per_lambda_table=[dict(zip(pem.TABLE_COLUMNS, (float(v) if isinstance(v, float) else v
                                                       for v in row.as_tuple())))
                          for row in result.path.table],
        converged=result.adg.converged,
        n_iter=result.adg.n_iter,
        timing=result.timing,
        diagnostics=result.diagnostics,
    )


# --------------------------------------------------------------------------
# simulation campaigns

RESULT_COLUMNS = ("replication", "seed", "acc_q", "tpr", "one_minus_fdr", "n_candi", "n_final",
                  "recon_error", "entry_diff", "converged", "n_iter")


@dataclass
class Replication:
    row: dict
    edges: frozenset[tuple[int, int]]  # estimated closure in true attribute labels
    data: SimData
    result: FitResult
    seconds: float


def evaluate(sim: SimData, result: FitResult) -> tuple[dict, frozenset]:
    al = align_columns(result.Q_hat, sim.Q, sim.patterns)
    selected = permute_patterns(result.A_final, al.perm)
    truth = sim.patterns
    fdr = metric_one_minus_fdr(selected, truth) if len(selected) else float("nan")
    R_hat = reconstruct(result.adg.A_hat, result.adg.Q_hat, result.adg.theta)
    row = {
        "acc_q": al.agreement,
        "tpr": metric_tpr(selected, truth),
        "one_minus_fdr": fdr,
        "n_candi": len(result.candidates),
        "n_final": len(result.A_final),
        "recon_error": reconstruction_error(R_hat, sim.ideal),
        "entry_diff": entry_diff(result.adg.Q_hat, sim.Q),
    }
    edges = extract_hierarchy(selected).closure
    return row, edges


def run_replication(design: SimDesign, config: FitConfig, master_seed: int, index: int) -> Replication:
    seed = replication_seed(master_seed, index)
    ss = np.random.SeedSequence(seed)
    data_rng, fit_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    sim = sample_data(design, data_rng)
    data = ResponseData(sim.responses, sim.observed)
    if config.adg.init == "perturbed" and config.adg.Q_init is None:
        config = replace(config, adg=replace(config.adg, Q_init=sim.Q))
    t = time.perf_counter()
    result = fit(data, config, fit_rng)
    row, edges = evaluate(sim, result)
    row.update(replication=index, seed=seed, converged=int(result.adg.converged), n_iter=result.adg.n_iter)
    return Replication({c: row[c] for c in RESULT_COLUMNS}, edges, sim, result, time.perf_counter() - t)


def edge_recovery(reps: list[Replication], hierarchy: Hierarchy) -> dict[tuple[int, int], int]:
    """How often each true edge (transitive reduction) appears in the estimated closure."""
    return {e: sum(e in r.edges for r in reps) for e in sorted(hierarchy.reduction)}
