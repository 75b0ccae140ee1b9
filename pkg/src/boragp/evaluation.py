"""Prediction metrics and variogram-based starting values."""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.distance import pdist

from .covariance import matern_correlation
from .errors import DegenerateBins, EmptyEvaluation, LengthMismatch, TooFewPoints


@dataclass(frozen=True)
class MetricReport:
    rmspe: float
    mape: float
    coverage: float
    ci_width: float
    n_eval: int


def score(pred, truth, lower=None, upper=None) -> MetricReport:
    """Score posterior predictive summaries against held-out values.

    ``pred`` is either a prediction result (anything with ``y_mean``,
    ``y_lower`` and ``y_upper``) or a plain array of point predictions, in
    which case ``lower`` and ``upper`` give the interval.
    """
    if hasattr(pred, "y_mean"):
        mean, lo, hi = pred.y_mean, pred.y_lower, pred.y_upper
    else:
        mean, lo, hi = pred, lower, upper
    mean = np.asarray(mean, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if len(mean) != len(truth):
        raise LengthMismatch(f"{len(mean)} predictions but {len(truth)} truths")
    if len(truth) == 0:
        raise EmptyEvaluation("nothing to evaluate")
    if not np.all(np.isfinite(truth)):
        raise ValueError("truth must be finite")
    err = mean - truth
    rmspe = float(np.sqrt(np.mean(err * err)))
    mape = float(np.mean(np.abs(err)))
    if lo is None or hi is None:
        coverage, width = float("nan"), float("nan")
    else:
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        if len(lo) != len(truth) or len(hi) != len(truth):
            raise LengthMismatch("interval bounds do not match truth length")
        coverage = float(np.mean((truth >= lo) & (truth <= hi)))
        width = float(np.mean(hi - lo))
    return MetricReport(rmspe, mape, coverage, width, len(truth))


@dataclass(frozen=True)
class EmpiricalVariogram:
    centers: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    max_dist: float


@dataclass(frozen=True)
class VariogramFit:
    tau2: float
    sigma2: float
    phi: float
    nu: float
    objective: float
    centers: np.ndarray
    gamma: np.ndarray
    start_objectives: np.ndarray | None = None

    def model(self, h):
        return matern_variogram(h, self.tau2, self.sigma2, self.phi, self.nu)


def matern_variogram(h, tau2, sigma2, phi, nu):
    h = np.asarray(h, dtype=float)
    return np.where(h > 0, tau2 + sigma2 * (1.0 - matern_correlation(h, phi, nu)), 0.0)


def residuals(response, covariates=None) -> np.ndarray:
    """Intercept-only residuals, or least-squares residuals with covariates."""
    y = np.asarray(response, dtype=float)
    if covariates is None or np.size(covariates) == 0:
        return y - y.mean()
    X = np.column_stack([np.ones(len(y)), np.asarray(covariates, dtype=float).reshape(len(y), -1)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return y - X @ coef


def empirical_variogram(data, n_bins: int = 15, max_dist: float | None = None) -> EmpiricalVariogram:
    """Binned semivariance of residuals over equal-width distance bins."""
    locs = np.asarray(data.locations, dtype=float)
    if len(locs) < 2:
        raise TooFewPoints("need at least two points for a variogram")
    r = residuals(data.response, getattr(data, "covariates", None))
    if max_dist is None:
        span = locs.max(axis=0) - locs.min(axis=0)
        max_dist = 0.5 * float(np.hypot(*span))
    if not max_dist > 0:
        raise ValueError("max_dist must be positive")
    d = pdist(locs)
    sq = pdist(r[:, None], "sqeuclidean")
    keep = (d > 0) & (d <= max_dist)
    edges = np.linspace(0.0, max_dist, n_bins + 1)
    b = np.clip(np.searchsorted(edges, d[keep], side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    sums = np.bincount(b, weights=sq[keep], minlength=n_bins)
    dsum = np.bincount(b, weights=d[keep], minlength=n_bins)
    nz = counts > 0
    return EmpiricalVariogram(
        centers=dsum[nz] / counts[nz],
        gamma=sums[nz] / (2.0 * counts[nz]),
        counts=counts[nz],
        max_dist=float(max_dist),
    )


def phi_bounds(max_dist: float, nu: float, corr: float = 0.05, lo_frac: float = 0.25, hi_frac: float = 0.75):
    """Decay values giving correlation ``corr`` at two fractions of ``max_dist``.

    Returns ``(phi_low, phi_high)``: the long-range end maps to the small decay.
    """
    from scipy.optimize import brentq

    def solve(dist):
        return brentq(lambda p: matern_correlation(dist, p, nu) - corr, 1e-8, 1e8 / dist)

    return solve(hi_frac * max_dist), solve(lo_frac * max_dist)


def fit_matern_variogram(emp: EmpiricalVariogram, nu_fixed: float, phi_range=None, n_starts: int = 5) -> VariogramFit:
    """Weighted least-squares Matérn fit with a fixed grid of starting points."""
    h, g, w = np.asarray(emp.centers), np.asarray(emp.gamma), np.asarray(emp.counts, dtype=float)
    if len(h) < 3:
        raise DegenerateBins("need at least three nonempty bins")
    if np.ptp(h) == 0:
        raise DegenerateBins("all bin distances are identical")
    if phi_range is None:
        phi_range = phi_bounds(float(h.max()), nu_fixed)
    lo_phi, hi_phi = phi_range
    sw = np.sqrt(w / w.sum())
    top = max(float(g.max()), 1e-12)

    def resid(theta):
        tau2, sigma2, phi = theta
        return sw * (g - matern_variogram(h, tau2, sigma2, phi, nu_fixed))

    def objective(theta):
        r = resid(theta)
        return float(r @ r)

    lower = np.array([0.0, 0.0, lo_phi])
    upper = np.array([2.0 * top, 2.0 * top, hi_phi])
    best = None
    starts = []
    for frac in np.linspace(0.1, 0.9, 3):
        for phi0 in np.geomspace(lo_phi, hi_phi, n_starts):
            starts.append(np.array([frac * top, (1 - frac) * top, phi0]))
    for x0 in starts:
        x0 = np.clip(x0, lower, upper)
        sol = least_squares(resid, x0, bounds=(lower, upper), method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14)
        val = objective(sol.x)
        if best is None or val < best[1]:
            best = (sol.x, val)
    # never return something worse than the best start
    for x0 in starts:
        x0 = np.clip(x0, lower, upper)
        if objective(x0) < best[1]:
            best = (x0, objective(x0))
    tau2, sigma2, phi = best[0]
    at_starts = np.array([objective(np.clip(x0, lower, upper)) for x0 in starts])
    return VariogramFit(float(tau2), float(sigma2), float(phi), float(nu_fixed), best[1], h, g, at_starts)


METRIC_FIELDS = ["method", "replicate", "m", "n", "rmspe", "mape", "coverage", "ci_width", "n_eval"]


def metric_row(method: str, replicate: int, m: int, n: int, report: MetricReport) -> dict:
    row = dict(method=method, replicate=replicate, m=m, n=n)
    row.update(asdict(report))
    return row


def write_metrics(path, rows, extra_fields=()) -> None:
    fields = METRIC_FIELDS + [f for f in extra_fields if f not in METRIC_FIELDS]
    with Path(path).open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
