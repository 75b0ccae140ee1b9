from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boragp.covariance import CovarianceSpec, base_cov
from boragp.errors import DegenerateBins, EmptyEvaluation, LengthMismatch, TooFewPoints
from boragp.evaluation import (
    EmpiricalVariogram,
    empirical_variogram,
    fit_matern_variogram,
    matern_variogram,
    metric_row,
    phi_bounds,
    score,
    write_metrics,
)
from boragp.inference import Dataset

from oracles import dense_cov_matrix


def test_score_examples():
    y = np.array([0.3, -1.0, 2.0])
    r = score(y, y)
    assert r.rmspe == 0 and r.mape == 0
    r = score(y + 1, y)
    assert r.rmspe == pytest.approx(1.0) and r.mape == pytest.approx(1.0)
    r = score([1.0, -1.0, 2.0], [0.0, 0.0, 0.0])
    assert r.rmspe == pytest.approx(np.sqrt(2.0)) and r.mape == pytest.approx(4 / 3)


def test_score_intervals():
    r = score([0, 0, 0, 0], [0.5, 2.0, -0.5, 0.0], [-1, -1, -1, -1], [1, 1, 1, 1])
    assert r.coverage == 0.75 and r.ci_width == 2.0 and r.n_eval == 4
    assert np.isnan(score([1.0], [1.0]).coverage)


def test_score_errors():
    with pytest.raises(LengthMismatch):
        score([1.0, 2.0], [1.0])
    with pytest.raises(EmptyEvaluation):
        score([], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=40),
       st.randoms(use_true_random=False))
def test_score_permutation_and_power_mean(pairs, rnd):
    pred = np.array([p for p, _ in pairs])
    truth = np.array([t for _, t in pairs])
    a = score(pred, truth, pred - 1, pred + 1)
    idx = list(range(len(pairs)))
    rnd.shuffle(idx)
    b = score(pred[idx], truth[idx], pred[idx] - 1, pred[idx] + 1)
    assert a.rmspe == pytest.approx(b.rmspe, rel=1e-12, abs=1e-12)
    assert a.mape == pytest.approx(b.mape, rel=1e-12, abs=1e-12)
    assert a.coverage == b.coverage
    assert 0 <= a.mape <= a.rmspe * (1 + 1e-12) + 1e-12
    assert 0 <= a.coverage <= 1


def test_variogram_two_points():
    a = 0.7
    emp = empirical_variogram(Dataset(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([a, -a])), 3, 2.0)
    assert len(emp.gamma) == 1
    assert emp.gamma[0] == pytest.approx(2 * a * a)
    assert emp.centers[0] == pytest.approx(1.0)
    with pytest.raises(TooFewPoints):
        empirical_variogram(Dataset(np.array([[0.0, 0.0]]), np.array([1.0])))


def test_variogram_of_white_noise_is_flat():
    rng = np.random.default_rng(0)
    n, tau2 = 10_000, 0.4
    locs = rng.uniform(0, 1, (n, 2))
    emp = empirical_variogram(Dataset(locs, np.sqrt(tau2) * rng.standard_normal(n)), 10, 0.5)
    np.testing.assert_allclose(emp.gamma, tau2, rtol=0.03)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(0, 2**31 - 1))
def test_variogram_shift_invariance(c, seed):
    rng = np.random.default_rng(seed)
    locs = rng.uniform(0, 1, (40, 2))
    y = rng.standard_normal(40)
    a = empirical_variogram(Dataset(locs, y), 6)
    b = empirical_variogram(Dataset(locs, y + c), 6)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_allclose(a.gamma, b.gamma, rtol=1e-6, atol=1e-9 * (1 + abs(c)) ** 2)


def exact_curve(tau2, sigma2, phi, nu, h):
    return EmpiricalVariogram(h, matern_variogram(h, tau2, sigma2, phi, nu), np.full(len(h), 100), float(h.max()))


def test_fit_recovers_exact_curve():
    h = np.linspace(0.05, 2.0, 15)
    fit = fit_matern_variogram(exact_curve(0.1, 1.0, 4.0, 1.5, h), 1.5)
    assert fit.tau2 == pytest.approx(0.1, abs=1e-3)
    assert fit.sigma2 == pytest.approx(1.0, abs=1e-3)
    assert fit.phi == pytest.approx(4.0, abs=1e-3)
    assert np.all(fit.objective <= fit.start_objectives)


def test_fit_flat_curve():
    h = np.linspace(0.1, 1.5, 12)
    emp = EmpiricalVariogram(h, np.full(12, 0.8), np.full(12, 50), 1.5)
    fit = fit_matern_variogram(emp, 0.5)
    lo, hi = phi_bounds(1.5, 0.5)
    assert fit.tau2 + fit.sigma2 == pytest.approx(0.8, rel=1e-3)
    # either no spatial part, or a decay pinned at its fastest bound
    assert fit.sigma2 < 1e-3 or fit.phi == pytest.approx(hi, rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.1, 2.0), st.floats(1.0, 8.0), st.integers(0, 1000))
def test_fit_never_worse_than_any_start(tau2, sigma2, phi, seed):
    rng = np.random.default_rng(seed)
    h = np.sort(rng.uniform(0.05, 2.0, 10))
    g = matern_variogram(h, tau2, sigma2, phi, 1.0) * rng.uniform(0.8, 1.2, 10)
    fit = fit_matern_variogram(EmpiricalVariogram(h, g, rng.integers(1, 100, 10), 2.0), 1.0)
    assert np.all(fit.objective <= fit.start_objectives + 1e-15)
    assert fit.tau2 >= 0 and fit.sigma2 >= 0


def test_fit_on_simulated_gp():
    rng = np.random.default_rng(1)
    n = 1500
    locs = rng.uniform(0, 1, (n, 2))
    spec = CovarianceSpec(1.0, 4.0, 0.5)
    C = dense_cov_matrix(locs, lambda d: base_cov(d, spec)) + 0.1 * np.eye(n)
    y = np.linalg.cholesky(C) @ rng.standard_normal(n)
    emp = empirical_variogram(Dataset(locs, y), 15, 0.7)
    fit = fit_matern_variogram(emp, 0.5, phi_range=(0.5, 30.0))
    mid = emp.centers[4:11]
    truth = matern_variogram(mid, 0.1, 1.0, 4.0, 0.5)
    np.testing.assert_allclose(fit.model(mid), truth, rtol=0.2)


def test_degenerate_bins():
    with pytest.raises(DegenerateBins):
        fit_matern_variogram(EmpiricalVariogram(np.ones(4), np.ones(4), np.ones(4), 1.0), 0.5)
    with pytest.raises(DegenerateBins):
        fit_matern_variogram(EmpiricalVariogram(np.arange(1.0, 3.0), np.ones(2), np.ones(2), 2.0), 0.5)


def test_phi_bounds_hit_target_correlation():
    lo, hi = phi_bounds(10.0, 1.5)
    assert lo < hi
    assert base_cov(7.5, CovarianceSpec(1.0, lo, 1.5)) == pytest.approx(0.05, rel=1e-8)
    assert base_cov(2.5, CovarianceSpec(1.0, hi, 1.5)) == pytest.approx(0.05, rel=1e-8)


def test_metric_csv(tmp_path):
    rep = score([1.0, 2.0], [1.5, 2.0], [0.0, 1.0], [2.0, 3.0])
    path = tmp_path / "m.csv"
    write_metrics(path, [metric_row("BORA-GP", 3, 15, 408, rep)])
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["method"] == "BORA-GP" and rows[0]["replicate"] == "3"
    assert float(rows[0]["coverage"]) == 1.0
