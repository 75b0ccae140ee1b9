from __future__ import annotations

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boragp.covariance import (
    CovarianceSpec,
    assemble_precision,
    base_cov,
    covariance_field,
    local_factors,
    matern_correlation,
    nonstationary_cov,
    sample_prior_w,
)
from boragp.dag import build_reference_dag
from boragp.errors import InvalidSpec, NegativeDistance

from oracles import dag_implied_covariance, dense_cov_matrix


def mp_matern(d, phi, nu):
    """High-precision Matérn correlation through mpmath's Bessel K."""
    mp.mp.dps = 40
    x = mp.mpf(phi) * mp.mpf(d)
    if x == 0:
        return 1.0
    nu = mp.mpf(nu)
    return float(x**nu * mp.besselk(nu, x) / (2 ** (nu - 1) * mp.gamma(nu)))


def test_base_cov_examples():
    assert base_cov(0.0, CovarianceSpec(2.5, 3.0, 1.0)) == 2.5
    assert base_cov(2.0, CovarianceSpec(1.0, 0.5, 0.5)) == pytest.approx(np.exp(-1.0), rel=1e-15)
    assert base_cov(0.25, CovarianceSpec(1.0, 4.0, 1.5)) == pytest.approx(2 * np.exp(-1.0), rel=1e-15)
    # mpmath gives 0.60190723019723457...
    v = base_cov(1.0, CovarianceSpec(1.0, 1.0, 1.0))
    assert v == pytest.approx(0.6019072301972346, rel=1e-13)
    assert v == pytest.approx(mp_matern(1.0, 1.0, 1.0), rel=1e-13)


def test_exponential_family_forces_half():
    s = CovarianceSpec(1.0, 2.0, 1.5, family="exponential")
    assert s.nu == 0.5
    assert base_cov(1.0, s) == pytest.approx(np.exp(-2.0))


@pytest.mark.parametrize("nu", [1.0, 1.5, 2.5])
def test_continuity_smooth(nu):
    assert abs(base_cov(1e-8, CovarianceSpec(1.0, 1.0, nu)) - 1.0) <= 1e-9


def test_continuity_exponential_gap_is_linear():
    # slope at the origin is -sigma2 * phi, so the gap is about phi * d
    for phi in (0.05, 1.0, 10.0):
        gap = 1.0 - base_cov(1e-8, CovarianceSpec(1.0, phi, 0.5))
        assert 0 < gap <= phi * 1e-8 * (1 + 1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 5.0), st.sampled_from([0.5, 0.8, 1.0, 1.5, 2.0, 2.5, 3.3]), st.floats(0.0, 4.0))
def test_monotone_and_bounded(phi, nu, d):
    spec = CovarianceSpec(1.7, phi, nu)
    a = base_cov(d, spec)
    b = base_cov(d + 0.1, spec)
    assert 0 <= b <= a <= 1.7 + 1e-15


def test_general_nu_against_mpmath():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(300):
        nu = float(rng.uniform(0.3, 4.0))
        phi = float(rng.uniform(0.1, 5.0))
        d = float(rng.uniform(1e-3, 3.0))
        want = mp_matern(d, phi, nu)
        if want < 1e-250:
            continue
        got = float(matern_correlation(d, phi, nu))
        worst = max(worst, abs(got - want) / want)
    assert worst < 1e-12


def test_invalid_inputs():
    with pytest.raises(NegativeDistance):
        base_cov(-0.1, CovarianceSpec())
    for bad in (dict(sigma2=0.0), dict(phi=-1.0), dict(nu=0.0), dict(phi=np.inf), dict(family="gaussian")):
        with pytest.raises(InvalidSpec):
            CovarianceSpec(**bad)


def test_local_factors_empty_and_one():
    spec = CovarianceSpec(2.0, 1.3, 0.5)
    w, V = local_factors((0, 0), np.zeros((0, 2)), spec)
    assert len(w) == 0 and V == 2.0
    d = 0.7
    w, V = local_factors((0, 0), [(d, 0)], spec)
    assert w[0] == pytest.approx(np.exp(-1.3 * d), rel=1e-12)
    assert V == pytest.approx(2.0 * (1 - np.exp(-2 * 1.3 * d)), rel=1e-12)


def test_local_factors_two_neighbours_dense_oracle():
    rng = np.random.default_rng(8)
    for _ in range(50):
        P = rng.uniform(0, 2, (3, 2))
        spec = CovarianceSpec(float(rng.uniform(0.5, 2)), float(rng.uniform(0.3, 3)), float(rng.choice([0.5, 1.0, 1.5])))
        w, V = local_factors(P[0], P[1:], spec)
        C = dense_cov_matrix(P, lambda d: base_cov(d, spec))
        Cinv = np.linalg.inv(C)
        # conditional of node 0 given the rest from the joint precision
        want_V = 1.0 / Cinv[0, 0]
        want_w = -Cinv[0, 1:] / Cinv[0, 0]
        assert V == pytest.approx(want_V, rel=1e-10)
        np.testing.assert_allclose(w, want_w, rtol=1e-10, atol=1e-12)
        assert 0 < V <= spec.sigma2


def test_single_node_precision():
    dag = build_reference_dag(np.array([[0.3, 0.4]]), 5)
    f = assemble_precision(dag, CovarianceSpec(2.5, 1.0))
    np.testing.assert_allclose(f.precision.toarray(), [[1 / 2.5]])
    assert f.cond_var[0] == 2.5


@pytest.mark.parametrize("nu", [0.5, 1.0, 1.5])
def test_exact_conditioning(nu):
    rng = np.random.default_rng(12)
    pts = rng.uniform(0, 3, (20, 2))
    dag = build_reference_dag(pts, 19)
    spec = CovarianceSpec(1.4, 1.1, nu)
    f = assemble_precision(dag, spec)
    C = dense_cov_matrix(dag.refs, lambda d: base_cov(d, spec))
    np.testing.assert_allclose(f.dense_covariance(), C, rtol=1e-8, atol=1e-8 * spec.sigma2)
    Q = f.precision.toarray()
    Qd = np.linalg.inv(C)
    assert np.abs(Q - Qd).max() <= 1e-8 * np.abs(Qd).max()


def test_sparse_covariance_matches_entry_recursion():
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 3, (40, 2))
    dag = build_reference_dag(pts, 4)
    spec = CovarianceSpec(1.0, 1.5, 1.5)
    f = assemble_precision(dag, spec)
    want = dag_implied_covariance(dag.refs, dag.neighbors, lambda d: base_cov(d, spec))
    np.testing.assert_allclose(f.dense_covariance(), want, rtol=0, atol=1e-12)


def test_precision_positive_definite_random():
    rng = np.random.default_rng(21)
    for _ in range(20):
        pts = rng.uniform(0, 2, (int(rng.integers(5, 60)), 2))
        m = int(rng.integers(1, 10))
        spec = CovarianceSpec(float(rng.uniform(0.2, 3)), float(rng.uniform(0.3, 5)), float(rng.choice([0.5, 1.5, 2.5])))
        f = assemble_precision(build_reference_dag(pts, m), spec)
        assert f.cholesky_ok()


def test_nonstationary_reduces_to_base_in_free_domain():
    rng = np.random.default_rng(2)
    pts = rng.uniform(0, 2, (15, 2))
    dag = build_reference_dag(pts, 14)
    spec = CovarianceSpec(1.0, 1.2, 0.5)
    f = assemble_precision(dag, spec)
    for a in range(15):
        for b in range(15):
            got = nonstationary_cov(dag.refs[a], dag.refs[b], dag, f)
            want = base_cov(np.hypot(*(dag.refs[a] - dag.refs[b])), spec)
            assert got == pytest.approx(want, abs=1e-8)
    assert nonstationary_cov(dag.refs[0], dag.refs[0], dag, f) == pytest.approx(spec.sigma2, rel=1e-14)


def test_nonreference_cases():
    rng = np.random.default_rng(9)
    pts = rng.uniform(0, 2, (30, 2))
    dag = build_reference_dag(pts, 6)
    spec = CovarianceSpec(1.3, 1.0, 1.5)
    f = assemble_precision(dag, spec)
    u, v = np.array([0.51, 0.77]), np.array([1.4, 0.2])
    r = dag.refs[7]
    # symmetry, including the mixed case
    assert nonstationary_cov(u, v, dag, f) == pytest.approx(nonstationary_cov(v, u, dag, f), rel=1e-12)
    assert nonstationary_cov(u, r, dag, f) == pytest.approx(nonstationary_cov(r, u, dag, f), rel=1e-12)
    # marginal variance never exceeds the sill
    assert 0 < nonstationary_cov(u, u, dag, f) <= spec.sigma2 * (1 + 1e-12)
    # field evaluation agrees with the pairwise call
    T = np.vstack([u, v, r])
    field = covariance_field(u, T, dag, f)
    np.testing.assert_allclose(field, [nonstationary_cov(u, t, dag, f) for t in T], rtol=1e-12)


def test_nonreference_variance_equals_sill_when_dense():
    # with m = k-1 the non-reference conditional is exact, so the variance is sigma2
    rng = np.random.default_rng(4)
    pts = rng.uniform(0, 2, (12, 2))
    dag = build_reference_dag(pts, 11)
    spec = CovarianceSpec(0.8, 1.0, 0.5)
    f = assemble_precision(dag, spec)
    u = np.array([1.01, 0.99])
    assert nonstationary_cov(u, u, dag, f) == pytest.approx(0.8, rel=1e-8)


def test_prior_draws():
    pts = np.array([[0.0, 0.0]])
    dag = build_reference_dag(pts, 3)
    f = assemble_precision(dag, CovarianceSpec(2.0, 1.0))
    W = sample_prior_w(dag, f, seed=1, size=100_000)[:, 0]
    assert abs(W.mean()) <= 4 * np.sqrt(2.0) / np.sqrt(1e5)
    np.testing.assert_array_equal(sample_prior_w(dag, f, seed=7), sample_prior_w(dag, f, seed=7))


def test_prior_draw_covariance_monte_carlo():
    rng = np.random.default_rng(6)
    pts = rng.uniform(0, 1, (5, 2))
    dag = build_reference_dag(pts, 4)
    spec = CovarianceSpec(1.0, 2.0, 0.5)
    f = assemble_precision(dag, spec)
    W = sample_prior_w(dag, f, seed=3, size=100_000)
    n = len(W)
    S = W.T @ W / n
    C = dense_cov_matrix(dag.refs, lambda d: base_cov(d, spec))
    # standard error of a Gaussian second moment: sqrt((C_ii C_jj + C_ij^2) / n)
    se = np.sqrt((np.outer(np.diag(C), np.diag(C)) + C**2) / n)
    assert np.all(np.abs(S - C) <= 5 * se)
