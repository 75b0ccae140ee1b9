"""Command-line entry point.

Subcommands: ``neighbors``, ``fit``, ``predict``, ``variogram``, ``simulate``,
``experiment`` and ``score``.  Every error is reported on stderr with a
nonzero exit status.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import __version__
from .config import ExperimentConfig, read_flat_config
from .errors import BoraError

log = logging.getLogger("boragp")

ORDERS = ("x", "y", "sum", "product-desc", "file")


def _common(p: argparse.ArgumentParser, points=True, points_required=True):
    if points:
        p.add_argument("--points", required=points_required, help="CSV with header x,y,value[,cov...]")
    p.add_argument("--barriers", help="WKT file, one geometry per line")
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True)


def _dag_args(p):
    p.add_argument("--m", type=int, default=15)
    p.add_argument("--order", choices=ORDERS, default="x")
    p.add_argument("--order-file", help="permutation file used with --order file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boragp", description="Barrier-aware sparse-DAG Gaussian processes")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("neighbors", help="build the reference DAG and export its edges")
    _common(p)
    _dag_args(p)

    p = sub.add_parser("fit", help="run the sampler and write a chain checkpoint")
    _common(p)
    _dag_args(p)

    p = sub.add_parser("predict", help="predict at new sites from a checkpoint")
    _common(p)
    p.add_argument("--chain", required=True, help="checkpoint written by fit")
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--clamp-nonnegative", action="store_true")

    p = sub.add_parser("variogram", help="empirical variogram and Matérn fit")
    _common(p)
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--max-dist", type=float)
    p.add_argument("--nu", type=float, default=0.5)

    p = sub.add_parser("simulate", help="draw the latent process at given locations")
    _common(p)
    _dag_args(p)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--nu", type=float, default=0.5)
    p.add_argument("--dump-factors", help="also write per-node factors to this CSV")

    p = sub.add_parser("experiment", help="run a canned study")
    _common(p, points=False)
    p.add_argument("--name", choices=("faults", "sliding_doors", "ordering"))

    p = sub.add_parser("score", help="score a prediction CSV against held-out values")
    _common(p, points=False)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True, help="CSV x,y,value in the same row order")
    p.add_argument("--method", default="model")
    return parser


def _ordering(args, locs):
    from .dag import order_reference
    from .io import read_permutation

    if args.order == "file":
        if not args.order_file:
            raise BoraError("--order file needs --order-file")
        return order_reference(locs, read_permutation(args.order_file))
    return order_reference(locs, args.order)


def _dag(args, locs, barriers):
    from .dag import build_reference_dag

    order = _ordering(args, locs)
    return build_reference_dag(order.apply(locs), args.m, barriers, order)


def _config(args) -> dict:
    return read_flat_config(args.config) if args.config else {}


def _pick(cls, mapping: dict, **extra):
    names = {f.name: f.type for f in fields(cls)}
    kw = {}
    for key, raw in mapping.items():
        if key in names:
            default = getattr(cls(), key) if key != "seed" else 0
            kw[key] = (raw.lower() in ("1", "true", "yes")) if isinstance(default, bool) else type(default)(raw)
    kw.update({k: v for k, v in extra.items() if v is not None})
    return cls(**kw)


def cmd_neighbors(args):
    from .dag import export_edges
    from .io import read_points, write_edges
    from .wkt import read_barriers

    locs, _, _ = read_points(args.points, require_value=False)
    dag = _dag(args, locs, read_barriers(args.barriers))
    for msg in dag.warnings:
        log.warning(msg)
    write_edges(args.out, export_edges(dag))


def _priors_for(cfg: dict, locs, nu_default=0.5):
    from .evaluation import phi_bounds
    from .inference import PriorSpec

    nu = float(cfg.get("nu", nu_default))
    if "phi_low" not in cfg or "phi_high" not in cfg:
        span = locs.max(axis=0) - locs.min(axis=0)
        lo, hi = phi_bounds(float(np.hypot(*span)), nu)
        cfg = {"phi_low": lo, "phi_high": hi, **cfg}
    return _pick(PriorSpec, cfg, nu=nu)


def cmd_fit(args):
    from .inference import Dataset, McmcConfig, gibbs_fit, save_chain, summarize
    from .io import read_points
    from .wkt import read_barriers

    cfg = _config(args)
    locs, y, cov = read_points(args.points)
    barriers = read_barriers(args.barriers)
    data = Dataset(locs, y, cov)
    dag = _dag(args, locs, barriers)
    priors = _priors_for(cfg, locs)
    mcmc = _pick(McmcConfig, cfg, seed=args.seed)
    chain = gibbs_fit(data, dag, None, priors, mcmc, barriers)
    save_chain(args.out, chain, dag, data, barriers)
    for name, s in summarize(chain).items():
        print(f"{name}\tmean={s.mean:.6g}\tsd={s.sd:.6g}\tess={s.ess:.1f}")


def cmd_predict(args):
    from .dag import batch_nonref_neighbors
    from .inference import load_chain, predict, project_nonnegative
    from .io import read_points, write_prediction

    chain, dag, data, barriers = load_chain(args.chain)
    locs, _, cov = read_points(args.points, require_value=False)
    if cov.shape[1] == 0:
        cov = None
    nbrs = batch_nonref_neighbors(locs, dag, barriers, threads=args.threads)
    pred = predict(chain, dag, data, locs, barriers, new_covariates=cov, thin=args.thin, seed=args.seed,
                   keep_draws=args.clamp_nonnegative, neighbor_sets=nbrs)
    if args.clamp_nonnegative:
        pred = project_nonnegative(pred)
    write_prediction(args.out, pred)


def cmd_variogram(args):
    from .evaluation import empirical_variogram, fit_matern_variogram
    from .inference import Dataset
    from .io import read_points

    locs, y, cov = read_points(args.points)
    emp = empirical_variogram(Dataset(locs, y, cov), args.bins, args.max_dist)
    fit = fit_matern_variogram(emp, args.nu)
    with open(args.out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["distance", "semivariance", "pairs", "fitted"])
        for h, g, c, f in zip(emp.centers, emp.gamma, emp.counts, fit.model(emp.centers)):
            wr.writerow([repr(float(h)), repr(float(g)), int(c), repr(float(f))])
    print(f"tau2={fit.tau2:.6g} sigma2={fit.sigma2:.6g} phi={fit.phi:.6g} nu={fit.nu:g}")


def cmd_simulate(args):
    from .covariance import CovarianceSpec, assemble_precision, sample_prior_w
    from .io import read_points, write_factor_dump, write_points
    from .wkt import read_barriers

    locs, _, _ = read_points(args.points, require_value=False)
    barriers = read_barriers(args.barriers)
    dag = _dag(args, locs, barriers)
    fac = assemble_precision(dag, CovarianceSpec(args.sigma2, args.phi, args.nu))
    w = sample_prior_w(dag, fac, seed=args.seed)
    write_points(args.out, dag.refs, w)
    if args.dump_factors:
        write_factor_dump(args.dump_factors, fac)


def cmd_experiment(args):
    from .experiments import run_experiment

    over = dict(out_dir=args.out, threads=args.threads)
    if args.name:
        over["experiment"] = args.name
    if args.seed is not None:
        over["seeds"] = (args.seed,)
    cfg = ExperimentConfig.from_mapping(_config(args), **over)
    run_experiment(cfg, write=True)


def cmd_score(args):
    from .evaluation import metric_row, score, write_metrics
    from .io import read_points, read_prediction

    pred = read_prediction(args.pred)
    locs, truth, _ = read_points(args.truth)
    if len(locs) != len(pred["x"]) or not np.allclose(locs, np.column_stack([pred["x"], pred["y"]])):
        raise BoraError("truth and prediction locations do not line up")
    rep = score(pred["y_mean"], truth, pred["y_q025"], pred["y_q975"])
    write_metrics(args.out, [metric_row(args.method, 0, 0, len(truth), rep)])
    print(" ".join(f"{k}={v}" for k, v in asdict(rep).items()))


COMMANDS = dict(neighbors=cmd_neighbors, fit=cmd_fit, predict=cmd_predict, variogram=cmd_variogram,
                simulate=cmd_simulate, experiment=cmd_experiment, score=cmd_score)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (BoraError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
