"""Canned synthetic studies: faults, sliding doors and ordering robustness."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .covariance import CovarianceSpec, assemble_precision, base_cov, covariance_field, sample_prior_w
from .dag import batch_nonref_neighbors, build_reference_dag, order_reference
from .evaluation import metric_row, phi_bounds, score, write_metrics
from .geometry import EMPTY, BarrierSet, load_barriers
from .inference import Dataset, McmcConfig, PriorSpec, gibbs_fit, predict, summarize

log = logging.getLogger(__name__)

# faults study: true process and priors
FAULTS_DOMAIN = (0.0, 2.0)
FAULTS_TRUTH = dict(beta0=1.0, beta1=0.5, tau2=0.1, sigma2=1.0, phi=4.0, nu=1.5, m=15)
FAULTS_PRIORS = PriorSpec(tau2_a=2.0, tau2_b=0.1, sigma2_a=2.0, sigma2_b=1.0, phi_low=2.240, phi_high=6.710, nu=1.5)
FAULTS_TRAIN_STRIDE = (6, 2)  # x, y grid strides giving the 12 x 34 training grid

# sliding doors demo
DOORS_DOMAIN = (2.0, 8.0)
DOORS_GRID = 57
DOORS_REF_STRIDE = 4
DOORS_OPENING = (4.5, 5.5)
DOORS_BAND = (4.5, 5.5)  # vertical extent of both doors
DOORS_SPEC = CovarianceSpec(sigma2=1.0, phi=0.5, nu=0.5, family="exponential")
DOORS_M = 10
# probe (x index, y index) on the 57-point grid; each is mirrored to y index 56 - j
DOORS_PROBES = ((14, 19), (28, 19), (42, 19))

# ordering robustness synthetic: a long, bent island in a rectangle
ISLAND = np.array([[1.2, 0.45], [1.45, 0.85], [1.6, 1.25], [2.0, 1.75]])
ISLAND_DOMAIN = ((0.0, 3.0), (0.0, 2.0))
ISLAND_TRUTH = dict(beta0=0.0, tau2=0.02, sigma2=1.0, phi=2.0, nu=0.5, m=15)


def grid(lo: float, hi: float, size: int):
    """Row-major ``size x size`` lattice with integer indices."""
    axis = np.linspace(lo, hi, size)
    iy, ix = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    pts = np.column_stack([axis[ix.ravel()], axis[iy.ravel()]])
    return pts, ix.ravel(), iy.ravel()


def faults_barriers(cfg: ExperimentConfig) -> BarrierSet:
    lines = [np.array([[x0, y], [x1, y]]) for x0, x1, y in (cfg.fault1, cfg.fault2)]
    return load_barriers(polylines=lines)


@dataclass
class FaultsData:
    locations: np.ndarray
    covariate: np.ndarray
    w: np.ndarray
    y: np.ndarray
    train: np.ndarray
    test: np.ndarray


class FaultsTruth:
    """Full-grid DAG and factors of the generating process (seed independent)."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.barriers = faults_barriers(cfg)
        pts, ix, iy = grid(*FAULTS_DOMAIN, cfg.grid_size)
        keep = ~self.barriers.contains(pts)
        self.points, self.ix, self.iy = pts[keep], ix[keep], iy[keep]
        self.order = order_reference(self.points, "y")
        self.dag = build_reference_dag(self.order.apply(self.points), FAULTS_TRUTH["m"], self.barriers, self.order)
        spec = CovarianceSpec(FAULTS_TRUTH["sigma2"], FAULTS_TRUTH["phi"], FAULTS_TRUTH["nu"])
        self.factors = assemble_precision(self.dag, spec)
        sx, sy = FAULTS_TRAIN_STRIDE
        self.train_mask = (self.ix % sx == 0) & (self.iy % sy == 0)

    def simulate(self, seed: int) -> FaultsData:
        rng = np.random.default_rng(seed)
        w_ordered = sample_prior_w(self.dag, self.factors, seed=rng.integers(2**63))
        w = np.empty_like(w_ordered)
        w[self.order.permutation] = w_ordered
        x = rng.standard_normal(len(w))
        t = FAULTS_TRUTH
        y = t["beta0"] + t["beta1"] * x + w + rng.normal(0.0, np.sqrt(t["tau2"]), len(w))
        return FaultsData(self.points, x, w, y, np.flatnonzero(self.train_mask), np.flatnonzero(~self.train_mask))


def fit_and_score(train: Dataset, test_locs, test_cov, test_y, m: int, barriers: BarrierSet, priors: PriorSpec,
                  mcmc: McmcConfig, ordering="y", predict_thin: int = 1):
    """Fit one model, predict held-out sites and return (report, summary, timings)."""
    t0 = time.perf_counter()
    order = order_reference(train.locations, ordering)
    dag = build_reference_dag(order.apply(train.locations), m, barriers, order)
    nbrs = batch_nonref_neighbors(test_locs, dag, barriers)
    t1 = time.perf_counter()
    chain = gibbs_fit(train, dag, None, priors, mcmc, barriers)
    t2 = time.perf_counter()
    pred = predict(chain, dag, train, test_locs, barriers, priors, mcmc, new_covariates=test_cov,
                   thin=predict_thin, keep_draws=False, neighbor_sets=nbrs)
    t3 = time.perf_counter()
    report = score(pred, test_y)
    timing = dict(preprocess_sec=t1 - t0, fit_sec=t2 - t1, predict_sec=t3 - t2,
                  sec_per_iteration=(t2 - t1) / mcmc.iterations, acceptance=chain.acceptance_rate)
    return report, summarize(chain), timing, pred


PARAM_FIELDS = ["beta0", "beta1", "tau2", "sigma2", "phi", "microergodic"]
TIMING_FIELDS = ["preprocess_sec", "fit_sec", "predict_sec", "sec_per_iteration", "acceptance"]


def run_faults_experiment(cfg: ExperimentConfig, write: bool = True) -> list[dict]:
    """Replicated faults study; one row per (method, replicate, m)."""
    truth = FaultsTruth(cfg)
    rows = []
    for rep, seed in enumerate(cfg.seeds):
        data = truth.simulate(seed)
        tr, te = data.train, data.test
        train = Dataset(data.locations[tr], data.y[tr], data.covariate[tr, None])
        for method, barriers in (("BORA-GP", truth.barriers), ("NNGP", EMPTY)):
            for m in cfg.m_values:
                mcmc = McmcConfig(cfg.iterations, cfg.burn_in, cfg.thin, seed=seed * 7919 + m,
                                  phi_proposal_sd=cfg.phi_proposal_sd)
                report, summ, timing, _ = fit_and_score(
                    train, data.locations[te], data.covariate[te, None], data.y[te], m, barriers,
                    FAULTS_PRIORS, mcmc, "y", cfg.predict_thin)
                row = metric_row(method, rep, m, len(tr), report)
                row.update({name: summ[name].mean for name in PARAM_FIELDS})
                row.update(timing)
                row["seed"] = seed
                rows.append(row)
                log.info("faults %s rep=%d m=%d rmspe=%.4f coverage=%.3f", method, rep, m, report.rmspe,
                         report.coverage)
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(out / "faults_replicates.csv", rows, PARAM_FIELDS + TIMING_FIELDS + ["seed"])
        write_summary_table(out / "faults_summary.csv", rows)
    return rows


def write_summary_table(path, rows) -> None:
    """Average (standard error) over replicates, one column per (method, m)."""
    keys = sorted({(r["method"], r["m"]) for r in rows})
    stats = ["rmspe", "mape", "coverage", "ci_width"] + PARAM_FIELDS + ["sec_per_iteration"]
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["statistic"] + [f"{meth} m={m}" for meth, m in keys])
        for stat in stats:
            cells = []
            for meth, m in keys:
                v = np.array([r[stat] for r in rows if r["method"] == meth and r["m"] == m], dtype=float)
                se = v.std(ddof=1) if len(v) > 1 else 0.0
                cells.append(f"{v.mean():.3f} ({se:.3f})")
            wr.writerow([stat] + cells)


def doors_barriers() -> BarrierSet:
    lo, hi = DOORS_DOMAIN
    y0, y1 = DOORS_BAND
    a, b = DOORS_OPENING
    left = np.array([[lo, y0], [a, y0], [a, y1], [lo, y1], [lo, y0]])
    right = np.array([[b, y0], [hi, y0], [hi, y1], [b, y1], [b, y0]])
    return load_barriers([left, right])


@dataclass
class DoorsSetup:
    barriers: BarrierSet
    points: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    dag: object
    factors: object

    def point(self, ix: int, iy: int) -> np.ndarray:
        axis = np.linspace(*DOORS_DOMAIN, DOORS_GRID)
        return np.array([axis[ix], axis[iy]])


def sliding_doors_setup() -> DoorsSetup:
    barriers = doors_barriers()
    pts, ix, iy = grid(*DOORS_DOMAIN, DOORS_GRID)
    keep = ~barriers.contains(pts)
    pts, ix, iy = pts[keep], ix[keep], iy[keep]
    is_ref = (ix % DOORS_REF_STRIDE == 0) & (iy % DOORS_REF_STRIDE == 0)
    refs = pts[is_ref]
    order = order_reference(refs, "y")
    dag = build_reference_dag(order.apply(refs), DOORS_M, barriers, order)
    return DoorsSetup(barriers, pts, ix, iy, dag, assemble_precision(dag, DOORS_SPEC))


def run_sliding_doors_demo(cfg: ExperimentConfig | None = None, write: bool = True) -> dict:
    """Nonstationary and stationary covariance fields from three probes."""
    setup = sliding_doors_setup()
    fields_out = {}
    for ix, iy in DOORS_PROBES:
        probe = setup.point(ix, iy)
        ns = covariance_field(probe, setup.points, setup.dag, setup.factors, setup.barriers)
        st = base_cov(np.hypot(*(setup.points - probe).T), DOORS_SPEC)
        fields_out[(ix, iy)] = (probe, ns, st)
    if write:
        out = Path(cfg.out_dir if cfg else ".")
        out.mkdir(parents=True, exist_ok=True)
        with (out / "sliding_doors_fields.csv").open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["probe", "probe_x", "probe_y", "x", "y", "is_reference", "nonstationary", "stationary"])
            refset = {r.tobytes() for r in setup.dag.refs}
            for p, (probe, ns, st) in enumerate(fields_out.values()):
                for s, a, b in zip(setup.points, ns, st):
                    wr.writerow([p, repr(probe[0]), repr(probe[1]), repr(s[0]), repr(s[1]),
                                 int(s.tobytes() in refset), repr(float(a)), repr(float(b))])
    return dict(setup=setup, fields=fields_out)


def island_barriers() -> BarrierSet:
    return load_barriers(polylines=[ISLAND])


def run_ordering_experiment(cfg: ExperimentConfig, write: bool = True, n_train: int = 500,
                            grid_shape=(61, 41)) -> list[dict]:
    """Same data, same model, different reference orderings."""
    barriers = island_barriers()
    (x0, x1), (y0, y1) = ISLAND_DOMAIN
    gx, gy = np.meshgrid(np.linspace(x0, x1, grid_shape[0]), np.linspace(y0, y1, grid_shape[1]))
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[~barriers.contains(pts)]
    t = ISLAND_TRUTH
    order = order_reference(pts, "y")
    dag = build_reference_dag(order.apply(pts), t["m"], barriers, order)
    spec = CovarianceSpec(t["sigma2"], t["phi"], t["nu"])
    fac = assemble_precision(dag, spec)
    max_dist = float(np.hypot(x1 - x0, y1 - y0))
    lo, hi = phi_bounds(max_dist, t["nu"])
    priors = PriorSpec(tau2_a=2.0, tau2_b=t["tau2"], sigma2_a=2.0, sigma2_b=t["sigma2"], phi_low=lo, phi_high=hi,
                       nu=t["nu"])
    rows = []
    for rep, seed in enumerate(cfg.seeds):
        rng = np.random.default_rng(seed)
        w = np.empty(len(pts))
        w[order.permutation] = sample_prior_w(dag, fac, seed=rng.integers(2**63))
        y = t["beta0"] + w + rng.normal(0.0, np.sqrt(t["tau2"]), len(pts))
        idx = rng.permutation(len(pts))
        tr, te = np.sort(idx[:n_train]), np.sort(idx[n_train:])
        train = Dataset(pts[tr], y[tr])
        for ordering in cfg.orderings:
            mcmc = McmcConfig(cfg.iterations, cfg.burn_in, cfg.thin, seed=seed * 7919 + 1,
                              phi_proposal_sd=cfg.phi_proposal_sd)
            report, summ, timing, _ = fit_and_score(train, pts[te], None, y[te], t["m"], barriers, priors, mcmc,
                                                    ordering, cfg.predict_thin)
            row = metric_row(f"BORA-GP[{ordering}]", rep, t["m"], n_train, report)
            row.update(ordering=ordering, seed=seed)
            row.update({name: summ[name].mean for name in ("beta0", "tau2", "sigma2", "phi")})
            row.update(timing)
            rows.append(row)
            log.info("ordering %s rep=%d rmspe=%.4f", ordering, rep, report.rmspe)
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(out / "ordering_metrics.csv", rows,
                      ["ordering", "seed", "beta0", "tau2", "sigma2", "phi"] + TIMING_FIELDS)
    return rows


def run_experiment(cfg: ExperimentConfig, write: bool = True):
    if cfg.experiment == "faults":
        return run_faults_experiment(cfg, write)
    if cfg.experiment == "sliding_doors":
        return run_sliding_doors_demo(cfg, write)
    if cfg.experiment == "ordering":
        return run_ordering_experiment(cfg, write)
    raise ValueError("custom experiments are run through the fit/predict subcommands")
