"""Command line front end.

Subcommands: fit-em, fit-skeptic, simulate, roc, select.  Options resolve
as CLI > config file > built-in defaults; the resolved configuration is
echoed to manifest.json in the output directory together with library
versions and the wall time.  Exit codes: 0 success, 2 usage errors
(including unreadable input files), 1 for failures inside a computation.

Reruns with the same inputs and seed write byte-identical outputs
(figures included); the manifest differs only in its wall-time field.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
import time
from pathlib import Path

import matplotlib
import numpy as np
import scipy

from . import __version__, report
from .copulaem import EmSettings, em_fit, em_path, information_criteria, select_model
from .copulatau import skeptic_fit
from .dataio import load_dataset
from .glasso import SolverSettings
from .simulate import (METHODS, GraphModel, SimDesign, generate_mixed_data,
                       inject_outliers, random_sparse_precision, run_comparison)
from .tmvn import McSettings


class UsageError(Exception):
    pass


_SOLVER_DEFAULTS = {"tol": 1e-4, "max_sweeps": 200, "penalize_diagonal": False}
_EM_DEFAULTS = {"variant": "partitioned", "max_iters": 10, "conv_tol": 1e-3,
                "n_samples": 100, "burn_in": 20}
_IC_DEFAULTS = {"criterion": "bic", "h_mode": "omit", "ghk_draws": 200}
_DESIGN_DEFAULTS = {"n": 200, "p": 50, "blocks": None, "ordinal_levels": 4,
                    "graph": "erdos_renyi", "edge_prob": 0.1, "bandwidth": 2,
                    "outlier_rate": 0.0, "outlier_scheme": "sign"}

_DEFAULTS = {
    "fit-em": {"lam": None, "lambda_grid": None, "n_lambdas": 10, "seed": 0,
               **_SOLVER_DEFAULTS, **_EM_DEFAULTS, **_IC_DEFAULTS},
    "fit-skeptic": {"lam": None, "mode": "sample", "estimator": "tau", "seed": 0,
                    **_SOLVER_DEFAULTS},
    "simulate": {"seed": 0, **_DESIGN_DEFAULTS},
    "roc": {"seed": 0, "reps": 20, "methods": ",".join(METHODS), "n_lambdas": 10,
            "estimator": "tau", **_DESIGN_DEFAULTS, **_SOLVER_DEFAULTS,
            **_EM_DEFAULTS},
    "select": {"lambda_grid": None, "n_lambdas": 10, "seed": 0,
               **_SOLVER_DEFAULTS, **_EM_DEFAULTS, **_IC_DEFAULTS},
}


def _parse_floats(value, label: str) -> list[float] | None:
    if value is None:
        return None
    items = [s for s in value.split(",")] if isinstance(value, str) else list(value)
    try:
        out = [float(x) for x in items if str(x).strip() != ""]
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value in {label}: {exc}") from None
    if not out:
        raise UsageError(f"{label} is empty")
    return out


def _parse_ints(value, label: str) -> list[int] | None:
    floats = _parse_floats(value, label)
    if floats is None:
        return None
    out = [int(x) for x in floats]
    if any(f != i for f, i in zip(floats, out)):
        raise UsageError(f"{label} must contain integers")
    return out


def _parse_names(value) -> tuple[str, ...]:
    items = [s.strip() for s in value.split(",")] if isinstance(value, str) else list(value)
    return tuple(s for s in items if s)


def _resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS[command])
    if getattr(args, "config", None):
        with open(args.config) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"config is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _solver_from(cfg: dict) -> SolverSettings:
    return SolverSettings(tol=float(cfg["tol"]), max_sweeps=int(cfg["max_sweeps"]),
                          penalize_diagonal=bool(cfg["penalize_diagonal"]))


def _em_from(cfg: dict) -> EmSettings:
    mc = McSettings(n_samples=int(cfg["n_samples"]), burn_in=int(cfg["burn_in"]),
                    seed=int(cfg["seed"]))
    return EmSettings(max_iters=int(cfg["max_iters"]), conv_tol=float(cfg["conv_tol"]),
                      variant=cfg["variant"], mc=mc, solver=_solver_from(cfg))


def _design_from(cfg: dict) -> SimDesign:
    if cfg["graph"] == "erdos_renyi":
        graph = GraphModel.erdos_renyi(float(cfg["edge_prob"]))
    elif cfg["graph"] == "banded":
        graph = GraphModel.banded(int(cfg["bandwidth"]))
    else:
        raise UsageError(f"unknown graph model '{cfg['graph']}'")
    blocks = _parse_ints(cfg["blocks"], "blocks")
    return SimDesign(n=int(cfg["n"]), p=int(cfg["p"]),
                     blocks=tuple(blocks) if blocks is not None else None,
                     ordinal_levels=int(cfg["ordinal_levels"]),
                     outlier_rate=float(cfg["outlier_rate"]),
                     graph=graph, seed=int(cfg["seed"]))


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_fit_outputs(out: Path, estimate, dataset) -> None:
    names = dataset.column_names
    report.write_theta_csv(out / "theta.csv", estimate, names)
    report.write_edges_tsv(out / "edges.tsv", estimate, names)
    report.write_dot(out / "graph.dot", estimate, dataset=dataset)


def _print_trace(result) -> None:
    for step in result.trace:
        print("iter={iteration} q={q:.6g} penalized={q_penalized:.6g} "
              "max_change={max_change:.3g} edges={edge_count} kkt={kkt:.3g}"
              .format(**step))


def _select_on_path(dataset, cfg, out: Path, no_figures: bool, verbose: bool):
    grid = _parse_floats(cfg["lambda_grid"], "lambda_grid")
    results = em_path(dataset, lambdas=grid, settings=_em_from(cfg),
                      n_lambdas=int(cfg["n_lambdas"]))
    reports = [information_criteria(r, h_mode=cfg["h_mode"],
                                    ghk_draws=int(cfg["ghk_draws"]))
               for r in results]
    best = select_model(reports, criterion=cfg["criterion"])
    report.write_ic_tsv(out / "ic.tsv", reports)
    if not no_figures:
        report.render_ic_figure(out / "ic.png", reports, selected=best,
                                criterion=cfg["criterion"])
    _write_fit_outputs(out, best.estimate, dataset)
    value = best.bic if cfg["criterion"] == "bic" else best.aic
    print(f"selected lambda={best.lam:.10g} {cfg['criterion']}={value:.10g} "
          f"edges={best.d}")
    if verbose:
        for r in results:
            print(f"lambda={r.lam:.10g}")
            _print_trace(r)


def _cmd_fit_em(args):
    cfg = _resolve("fit-em", args)
    dataset = load_dataset(args.data, args.schema)
    out = _outdir(args)
    if cfg["lam"] is not None:
        result = em_fit(dataset, float(cfg["lam"]), settings=_em_from(cfg))
        if args.verbose:
            _print_trace(result)
        _write_fit_outputs(out, result.theta, dataset)
        print(f"fit lambda={result.lam:.10g} edges={result.theta.edge_count} "
              f"iterations={result.iterations} converged={result.converged}")
    else:
        _select_on_path(dataset, cfg, out, args.no_figures, args.verbose)
    return out, cfg


def _cmd_fit_skeptic(args):
    cfg = _resolve("fit-skeptic", args)
    if cfg["lam"] is None:
        raise UsageError("fit-skeptic requires --lam (or 'lam' in the config)")
    dataset = load_dataset(args.data, args.schema)
    out = _outdir(args)
    if args.pair_report:
        estimate, taus, fits = skeptic_fit(dataset, float(cfg["lam"]),
                                           mode=cfg["mode"], estimator=cfg["estimator"],
                                           settings=_solver_from(cfg),
                                           return_pair_fits=True)
        report.write_pair_report_tsv(out / "pairs.tsv", fits, dataset.column_names)
    else:
        estimate = skeptic_fit(dataset, float(cfg["lam"]), mode=cfg["mode"],
                               estimator=cfg["estimator"], settings=_solver_from(cfg))
    _write_fit_outputs(out, estimate, dataset)
    print(f"fit lambda={estimate.lam:.10g} edges={estimate.edge_count} "
          f"converged={estimate.converged}")
    return out, cfg


def _cmd_simulate(args):
    cfg = _resolve("simulate", args)
    design = _design_from(cfg)
    out = _outdir(args)
    truth = random_sparse_precision(design.p, design.graph, seed=design.seed)
    dataset, _ = generate_mixed_data(truth, design)
    if design.outlier_rate > 0:
        dataset = inject_outliers(dataset, design.outlier_rate, seed=design.seed,
                                  scheme=cfg["outlier_scheme"])
    report.write_data_csv(out / "data.csv", dataset)
    report.write_schema_json(out / "schema.json", dataset)
    report.write_theta_csv(out / "truth_theta.csv", truth, dataset.column_names)
    report.write_edges_tsv(out / "truth_edges.tsv", truth, dataset.column_names)
    print(f"simulated n={design.n} p={design.p} edges={truth.edge_count}")
    return out, cfg


def _cmd_roc(args):
    cfg = _resolve("roc", args)
    design = _design_from(cfg)
    methods = _parse_names(cfg["methods"])
    out = _outdir(args)
    comparison = run_comparison(design, methods=methods, reps=int(cfg["reps"]),
                                n_lambdas=int(cfg["n_lambdas"]),
                                em_settings=_em_from(cfg), solver=_solver_from(cfg),
                                estimator=cfg["estimator"], threads=args.threads)
    report.write_roc_tsv(out / "roc.tsv", comparison)
    report.write_auc_tsv(out / "auc.tsv", comparison)
    if not args.no_figures:
        report.render_roc_figure(out / "roc.png", comparison)
    for method in methods:
        print(f"{method} auc={comparison.curves[method].auc:.10g}")
    return out, cfg


def _cmd_select(args):
    cfg = _resolve("select", args)
    dataset = load_dataset(args.data, args.schema)
    out = _outdir(args)
    _select_on_path(dataset, cfg, out, args.no_figures, args.verbose)
    return out, cfg


def _add_io(parser, data=True):
    if data:
        parser.add_argument("--data", required=True, help="CSV data file")
        parser.add_argument("--schema", required=True, help="JSON schema file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--config", help="JSON file of option overrides")
    parser.add_argument("--seed", type=int)


def _add_solver(parser):
    parser.add_argument("--tol", type=float)
    parser.add_argument("--max-sweeps", type=int, dest="max_sweeps")
    parser.add_argument("--penalize-diagonal", action="store_const", const=True,
                        default=None, dest="penalize_diagonal")


def _add_em(parser):
    parser.add_argument("--variant", choices=("full", "partitioned"))
    parser.add_argument("--max-iters", type=int, dest="max_iters")
    parser.add_argument("--conv-tol", type=float, dest="conv_tol")
    parser.add_argument("--n-samples", type=int, dest="n_samples")
    parser.add_argument("--burn-in", type=int, dest="burn_in")


def _add_ic(parser):
    parser.add_argument("--criterion", choices=("aic", "bic"))
    parser.add_argument("--h-mode", choices=("omit", "monte_carlo"), dest="h_mode")
    parser.add_argument("--ghk-draws", type=int, dest="ghk_draws")


def _add_grid(parser):
    parser.add_argument("--lambda-grid", dest="lambda_grid",
                        help="comma separated decreasing penalties")
    parser.add_argument("--n-lambdas", type=int, dest="n_lambdas")


def _add_design(parser):
    parser.add_argument("--n", type=int)
    parser.add_argument("--p", type=int)
    parser.add_argument("--blocks", help="comma separated block sizes "
                        "(binary,ordinal,count,chisquare,normal)")
    parser.add_argument("--ordinal-levels", type=int, dest="ordinal_levels")
    parser.add_argument("--graph", choices=("erdos_renyi", "banded"))
    parser.add_argument("--edge-prob", type=float, dest="edge_prob")
    parser.add_argument("--bandwidth", type=int)
    parser.add_argument("--outlier-rate", type=float, dest="outlier_rate")
    parser.add_argument("--outlier-scheme", choices=("sign", "replace"),
                        dest="outlier_scheme")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="copulagm",
        description="Sparse latent-correlation graphs for mixed data")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-em", help="rank-based EM fit of a sparse precision")
    _add_io(p)
    p.add_argument("--lam", type=float, help="single penalty (omit to fit a grid)")
    _add_grid(p)
    _add_em(p)
    _add_solver(p)
    _add_ic(p)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=_cmd_fit_em)

    p = sub.add_parser("fit-skeptic", help="pairwise rank-correlation fit")
    _add_io(p)
    p.add_argument("--lam", type=float)
    p.add_argument("--mode", choices=("sample", "copula"))
    p.add_argument("--estimator", choices=("tau", "mle"))
    p.add_argument("--pair-report", action="store_true", dest="pair_report",
                   help="also write per-pair family fits")
    _add_solver(p)
    p.set_defaults(func=_cmd_fit_skeptic)

    p = sub.add_parser("simulate", help="draw a synthetic mixed dataset")
    _add_io(p, data=False)
    _add_design(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("roc", help="structure-recovery comparison")
    _add_io(p, data=False)
    _add_design(p)
    p.add_argument("--reps", type=int)
    p.add_argument("--methods", help=f"comma separated from {', '.join(METHODS)}")
    p.add_argument("--estimator", choices=("tau", "mle"))
    _add_grid(p)
    _add_em(p)
    _add_solver(p)
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads over replicates (results independent)")
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=_cmd_roc)

    p = sub.add_parser("select", help="fit a penalty path and pick by AIC/BIC")
    _add_io(p)
    _add_grid(p)
    _add_em(p)
    _add_solver(p)
    _add_ic(p)
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--no-figures", action="store_true", dest="no_figures")
    p.set_defaults(func=_cmd_select)
    return parser


def _versions() -> dict:
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__,
            "copulagm": __version__}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    start = time.perf_counter()
    try:
        out, cfg = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        kind = type(exc)
        print(f"error: {kind.__module__}.{kind.__name__}: {exc}", file=sys.stderr)
        return 1
    manifest = {"command": args.command, "config": cfg, "versions": _versions(),
                "seed": cfg.get("seed"), "wall_time_s": time.perf_counter() - start}
    report.write_manifest(out / "manifest.json", manifest)
    return 0


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
