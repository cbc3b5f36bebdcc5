"""Command-line front end.

Exit codes: 0 success, 1 numerical failure (iteration cap hit without
convergence; outputs are still written), 2 input error.  Errors are printed
to stderr as one JSON object with ``code`` and ``message``.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import adgem, io, pem
from .hierarchy import Hierarchy, HierarchyError, read_hierarchy, validate
from .identifiability import check_identifiability
from .model import ModelKind, ResponseData
from .pipeline import FitConfig, RESULT_COLUMNS, edge_recovery, fit, make_report, run_replication
from .simulate import SimDesign, diamond_hierarchy, reconstruct, reconstruction_error, tree_hierarchy

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2

OR_HELP = ("response rule: 'and' (all required attributes needed) or 'or' (any one suffices). "
           "OR data are fitted by complementing the responses, fitting the AND model and mapping "
           "patterns and item parameters back; the roles of theta_plus and theta_minus swap "
           "under that transform and are reported in the original orientation.")


class CliError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = EXIT_INPUT):
        super().__init__(message)
        self.code, self.message, self.exit_code = code, message, exit_code


# --------------------------------------------------------------------------
# settings: config file first, flags win

def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _grid(v: str) -> list[float]:
    return [float(x) for x in str(v).replace(";", ",").split(",") if x.strip()]


def _opt_int(v):
    return None if v in (None, "", "none", "None") else int(v)


CONFIG_KEYS = {
    "K": int, "model": str, "seed": int, "M": int, "max_iters": int, "theta_tol": float,
    "init": str, "q_init": str, "fixed_iters": _opt_int, "flip_fraction": float,
    "theta_plus_init": float, "theta_minus_init": float,
    "lambda_grid": _grid, "c": float, "gamma_ebic": float, "pem_max_iters": int, "obj_tol": float,
    "enforce_identity": _bool, "prune": _bool, "reduce_candidates": _bool, "missing_na_token": str,
    "threads": int,
}


def load_settings(config_path: str | None, args: argparse.Namespace) -> dict:
    raw = io.read_config(config_path) if config_path else {}
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise CliError("config_error", f"unknown config keys: {', '.join(unknown)}")
    settings = {}
    for key, value in raw.items():
        try:
            settings[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise CliError("config_error", f"config key {key}: {exc}") from exc
    flag_map = {"K": "K", "model": "model", "seed": "seed", "M": "M", "max_iters": "max_iters",
                "lambda_grid": "lambda_grid", "missing_na_token": "missing_na_token", "threads": "threads"}
    for key, attr in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            settings[key] = _grid(v) if key == "lambda_grid" else v
    if getattr(args, "enforce_identity", False):
        settings["enforce_identity"] = True
    return settings


def _seed(settings: dict) -> int:
    if settings.get("seed") is not None:
        return int(settings["seed"])
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0] >> np.uint64(1))


def build_fit_config(settings: dict, seed: int) -> FitConfig:
    if "K" not in settings:
        raise CliError("config_error", "number of attributes K is required (config key or --K)")
    q_init = None
    if settings.get("q_init"):
        q_init = io.read_q(settings["q_init"])
    try:
        adg = adgem.AdgConfig(
            M=settings.get("M", 3), max_outer_iters=settings.get("max_iters", 100),
            theta_tol=settings.get("theta_tol", 1e-4), seed=seed, init=settings.get("init", "random"),
            Q_init=q_init, flip_fraction=settings.get("flip_fraction", 1.0 / 3.0),
            theta_plus_init=settings.get("theta_plus_init", 0.8),
            theta_minus_init=settings.get("theta_minus_init", 0.2),
            fixed_iters=settings.get("fixed_iters"))
        kw = {}
        if "lambda_grid" in settings:
            kw["lambda_grid"] = settings["lambda_grid"]
        pcfg = pem.PemConfig(c=settings.get("c", 1e-8), gamma_ebic=settings.get("gamma_ebic", 1.0),
                             max_iters=settings.get("pem_max_iters", 500),
                             obj_tol=settings.get("obj_tol", 1e-6), seed=seed, **kw)
        return FitConfig(K=settings["K"], model=ModelKind(settings.get("model", "and")), adg=adg, pem=pcfg,
                         enforce_identity=settings.get("enforce_identity", False),
                         prune=settings.get("prune", True),
                         reduce_candidates=settings.get("reduce_candidates", True))
    except ValueError as exc:
        raise CliError("config_error", str(exc)) from exc


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    import numba
    if n < 1:
        raise CliError("config_error", "--threads must be at least 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _load_data(path: str, na_token: str) -> ResponseData:
    try:
        return io.read_responses(path, na_token)
    except io.InputError as exc:
        raise CliError("parse_error", f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# commands

def cmd_fit(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, args)
    _set_threads(settings.get("threads"))
    data = _load_data(args.data, settings.get("missing_na_token", "NA"))
    seed = _seed(settings)
    config = build_fit_config(settings, seed)
    if config.adg.Q_init is not None and config.adg.Q_init.shape != (data.J, config.K):
        raise CliError("config_error", f"q_init has shape {config.adg.Q_init.shape}, expected {(data.J, config.K)}")
    result = fit(data, config)
    report = make_report(data, config, result, seed)
    report.write(args.out)
    if args.table:
        pem.write_path_table(result.path.table, args.table)
    if args.trace:
        Path(args.trace).write_text(io.format_trace(result.adg.trace))
    return EXIT_OK if result.adg.converged or config.adg.fixed_iters is not None else EXIT_NUMERIC


def cmd_reconstruct(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, args)
    _set_threads(settings.get("threads"))
    na = settings.get("missing_na_token", "NA")
    data = _load_data(args.data, na)
    seed = _seed(settings)
    config = build_fit_config(settings, seed)
    work = ResponseData(1 - data.responses, data.observed) if config.model is ModelKind.OR else data
    res = adgem.run(work, config.K, config.adg)
    R_hat = reconstruct(res.A_hat, res.Q_hat, res.theta)
    if config.model is ModelKind.OR:
        R_hat = 1 - R_hat
    Path(args.out).write_text(io.format_binary_csv(R_hat, header=data.item_names))
    stats = {"seed": seed, "N": data.N, "J": data.J, "missing_rate": data.missing_rate,
             "converged": res.converged, "n_iter": res.n_iter,
             "q_entry_changes": [r["q_entry_changes"] for r in res.trace]}
    if args.truth:
        truth = _load_data(args.truth, na)
        if truth.responses.shape != R_hat.shape:
            raise CliError("dimension_error", "truth file has a different shape than the data")
        stats["reconstruction_error"] = reconstruction_error(R_hat, truth.responses)
    if args.stats:
        Path(args.stats).write_text(io.dumps(stats))
    else:
        print(io.dumps(stats), end="")
    if args.trace:
        Path(args.trace).write_text(io.format_trace(res.trace))
    return EXIT_OK if res.converged or config.adg.fixed_iters is not None else EXIT_NUMERIC


def cmd_check_id(args: argparse.Namespace) -> int:
    try:
        Q = io.read_q(args.q)
        h = read_hierarchy(args.hierarchy)
    except (io.InputError, HierarchyError) as exc:
        raise CliError(type(exc).__name__, str(exc)) from exc
    try:
        report = check_identifiability(Q, h)
    except ValueError as exc:
        raise CliError("validation_error", str(exc)) from exc
    text = io.dumps(report.to_dict())
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


def _manifest_hierarchy(spec, K: int) -> Hierarchy:
    if spec in (None, "none"):
        return Hierarchy(K)
    if spec == "tree":
        return tree_hierarchy()
    if spec == "diamond":
        return diamond_hierarchy()
    if isinstance(spec, list):
        return validate([tuple(e) for e in spec], K, one_based=True)
    if isinstance(spec, str):
        return read_hierarchy(spec)
    raise CliError("manifest_error", f"cannot interpret hierarchy {spec!r}")


MANIFEST_DESIGN_KEYS = {"N", "J", "K", "hierarchy", "q_design", "noise", "missing_rate"}


def load_manifest(path: str) -> tuple[str, SimDesign, int, int, dict]:
    try:
        m = io.read_json(path)
    except io.InputError as exc:
        raise CliError("parse_error", str(exc)) from exc
    if not isinstance(m, dict) or "design" not in m:
        raise CliError("manifest_error", "manifest needs a 'design' object")
    d = m["design"]
    extra = set(d) - MANIFEST_DESIGN_KEYS
    if extra:
        raise CliError("manifest_error", f"unknown design keys: {sorted(extra)}")
    try:
        K = int(d["K"])
        design = SimDesign(N=int(d["N"]), J=int(d["J"]), K=K, hierarchy=_manifest_hierarchy(d.get("hierarchy"), K),
                           q_design=d.get("q_design", "block"), noise=float(d.get("noise", 0.2)),
                           missing_rate=float(d.get("missing_rate", 0.0)))
        reps = int(m.get("replications", 1))
        seed = int(m.get("seed", 0))
    except (KeyError, TypeError, ValueError, HierarchyError) as exc:
        raise CliError("manifest_error", f"invalid design: {exc}") from exc
    if reps < 1:
        raise CliError("manifest_error", "replications must be at least 1")
    fit_settings = dict(m.get("fit", {}))
    return str(m.get("name", Path(path).stem)), design, reps, seed, fit_settings


def manifest_echo(design: SimDesign) -> dict:
    return {"N": design.N, "J": design.J, "K": design.K, "q_design": design.q_design, "noise": design.noise,
            "missing_rate": design.missing_rate,
            "hierarchy": [[k + 1, l + 1] for k, l in sorted(design.hierarchy.reduction)]}


def cmd_simulate(args: argparse.Namespace) -> int:
    name, design, reps, seed, fit_settings = load_manifest(args.manifest)
    if args.seed is not None:
        seed = args.seed
    _set_threads(args.threads)
    unknown = set(fit_settings) - set(CONFIG_KEYS)
    if unknown:
        raise CliError("manifest_error", f"unknown fit keys: {sorted(unknown)}")
    settings = {k: (CONFIG_KEYS[k](v) if isinstance(v, str) else v) for k, v in fit_settings.items()}
    settings["K"] = design.K
    if args.M is not None:
        settings["M"] = args.M
    if args.max_iters is not None:
        settings["max_iters"] = args.max_iters
    if args.lambda_grid is not None:
        settings["lambda_grid"] = _grid(args.lambda_grid)
    if args.enforce_identity:
        settings["enforce_identity"] = True
    config = build_fit_config(settings, seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    replications = []
    for i in range(reps):
        rep = run_replication(design, replace(config), seed, i)
        replications.append(rep)
        print(f"replication {i + 1}/{reps}: " + ", ".join(f"{k}={rep.row[k]}" for k in
                                                        ("acc_q", "tpr", "one_minus_fdr", "n_final")),
              file=sys.stderr)
    rows = [r.row for r in replications]
    (out / "results.csv").write_text(io.format_rows(rows, RESULT_COLUMNS))
    counts = edge_recovery(replications, design.hierarchy)
    (out / "edge_recovery.csv").write_text(io.format_rows(
        [{"from": k + 1, "to": l + 1, "recovered": c, "replications": reps} for (k, l), c in counts.items()],
        ("from", "to", "recovered", "replications")))
    summary = {"name": name, "replications": reps, "seed": seed, "design": manifest_echo(design)}
    (out / "summary.json").write_text(io.dumps(summary))
    # wall times live apart so the other outputs are byte-reproducible
    timing = {"total_seconds": time.perf_counter() - t, "per_replication": [r.seconds for r in replications]}
    (out / "timing.json").write_text(io.dumps(timing))
    return EXIT_OK


# --------------------------------------------------------------------------

def _common_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value configuration file (flags override it)")
    p.add_argument("--K", type=int, help="number of latent attributes")
    p.add_argument("--model", choices=["and", "or"], help=OR_HELP)
    p.add_argument("--seed", type=int, help="master seed; drawn from entropy and reported when omitted")
    p.add_argument("--threads", type=int, help="cap on worker threads (results do not depend on it)")
    p.add_argument("--lambda-grid", dest="lambda_grid", help="comma-separated negative penalty values")
    p.add_argument("--M", type=int, help="Gibbs samples kept per direction in each E step")
    p.add_argument("--max-iters", dest="max_iters", type=int, help="cap on stochastic EM iterations")
    p.add_argument("--enforce-identity", dest="enforce_identity", action="store_true",
                   help="overwrite the rows of Q closest to unit vectors before pattern selection")
    p.add_argument("--missing-na-token", dest="missing_na_token", help="cell text marking a missing response")
    p.add_argument("--trace", help="write per-iteration JSON lines here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlam", description="Structure learning for hierarchical latent attribute models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate Q, the pattern set and the hierarchy from a response CSV")
    p.add_argument("data")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--table", help="write the per-lambda table CSV here")
    _common_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("reconstruct", help="run stage one only and write the completed response matrix")
    p.add_argument("data")
    p.add_argument("--out", required=True, help="reconstructed CSV path")
    p.add_argument("--truth", help="noiseless reference CSV; reports the error rate")
    p.add_argument("--stats", help="write stats JSON here instead of stdout")
    _common_fit_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("check-id", help="check the identifiability conditions for Q and a hierarchy")
    p.add_argument("q", help="Q-matrix CSV")
    p.add_argument("hierarchy", help="edge list file ('K=<n>' then 'k -> l' lines, 1-based)")
    p.add_argument("--out", help="report JSON path (stdout when omitted)")
    p.set_defaults(func=cmd_check_id)

    p = sub.add_parser("simulate", help="run a replicated simulation campaign from a JSON manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--lambda-grid", dest="lambda_grid")
    p.add_argument("--enforce-identity", dest="enforce_identity", action="store_true")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(json.dumps({"code": exc.code, "message": exc.message}), file=sys.stderr)
        return exc.exit_code
    except (io.InputError, HierarchyError) as exc:
        print(json.dumps({"code": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
