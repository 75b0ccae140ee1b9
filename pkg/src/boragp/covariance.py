"""Matérn covariance, per-node conditional factors and the sparse precision.

For a node ``s`` with neighbour set ``N(s)`` the conditional law is
``w(s) | w_N ~ N(M_s w_N, V_s)`` with ``M_s = C_{s,N} C_N^{-1}`` and
``V_s = C_s - M_s C_{N,s}``.  Stacking the rows gives the reference
precision ``(I - M)^T V^{-1} (I - M)``; covariance entries are recovered by
two sparse triangular solves against that factorisation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular
from scipy.special import gammaln, kve

from ._kernels import CLOSED_FORM_CODES, closed_form_factors, solve_from_corr
from .errors import InvalidSpec, LocationInBarrier, NegativeDistance, SingularNeighborGram
from .geometry import EMPTY, BarrierSet, as_points

JITTER = 1e-10
_CLOSED_FORMS = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class CovarianceSpec:
    sigma2: float = 1.0
    phi: float = 1.0
    nu: float = 0.5
    family: str = "matern"

    def __post_init__(self):
        if self.family not in ("matern", "exponential"):
            raise InvalidSpec(f"unknown covariance family {self.family!r}")
        if self.family == "exponential" and self.nu != 0.5:
            object.__setattr__(self, "nu", 0.5)
        for name in ("sigma2", "phi", "nu"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidSpec(f"{name} must be positive and finite, got {v}")

    def with_params(self, **kw) -> "CovarianceSpec":
        params = dict(sigma2=self.sigma2, phi=self.phi, nu=self.nu, family=self.family)
        params.update(kw)
        return CovarianceSpec(**params)

    @property
    def microergodic(self) -> float:
        return self.sigma2 * self.phi ** (2 * self.nu)


def matern_correlation(d, phi: float, nu: float) -> np.ndarray:
    """Unit-sill Matérn correlation at distances ``d`` (any shape)."""
    x = phi * np.asarray(d, dtype=float)
    if nu == 0.5:
        return np.exp(-x)
    if nu == 1.5:
        return (1.0 + x) * np.exp(-x)
    if nu == 2.5:
        return (1.0 + x + x * x / 3.0) * np.exp(-x)
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    with np.errstate(divide="ignore", under="ignore"):
        log_c = (1.0 - nu) * np.log(2.0) - gammaln(nu) + nu * np.log(xp) + np.log(kve(nu, xp)) - xp
    out[pos] = np.exp(log_c)
    return np.minimum(out, 1.0)


def base_cov(d, spec: CovarianceSpec):
    """Stationary Matérn covariance; scalar in, scalar out."""
    arr = np.asarray(d, dtype=float)
    if np.any(arr < 0):
        raise NegativeDistance("distance must be nonnegative")
    if not isinstance(spec, CovarianceSpec):
        raise InvalidSpec("spec must be a CovarianceSpec")
    val = spec.sigma2 * matern_correlation(arr, spec.phi, spec.nu)
    return float(val) if np.ndim(val) == 0 else val


def _pairwise(a, b):
    return np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])


def local_factors(target, nbrs, spec: CovarianceSpec, node=None):
    """Kriging weights ``M_s`` and conditional variance ``V_s`` of one node."""
    t = as_points(target, "target")[0]
    if len(nbrs) == 0:
        return np.zeros(0), spec.sigma2
    N = as_points(nbrs, "nbrs")
    G = base_cov(_pairwise(N, N), spec)
    c = base_cov(np.hypot(*(N - t).T), spec)
    weights = _solve_spd(G, c, spec.sigma2, node)
    V = spec.sigma2 - float(c @ weights)
    return weights, max(V, 0.0)


def _solve_spd(G, c, scale, node):
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        try:
            L = np.linalg.cholesky(G + JITTER * scale * np.eye(len(G)))
        except np.linalg.LinAlgError:
            raise SingularNeighborGram(f"neighbour Gram matrix is singular at node {node}", node) from None
    z = np.linalg.solve(L, c)
    return np.linalg.solve(L.T, z)


class NeighborGeometry:
    """Distances needed to evaluate factors for a fixed set of neighbour lists.

    Rows of ``nbr_index`` are left-packed and padded with -1.  The geometry
    never changes during sampling, so only the correlations are recomputed
    when the decay moves.
    """

    def __init__(self, targets, nbr_index, ref_points):
        self.targets = np.asarray(targets, dtype=float)
        self.index = np.asarray(nbr_index, dtype=np.int64)
        mask = self.index >= 0
        self.counts = mask.sum(axis=1).astype(np.int64)
        if not np.array_equal(mask, np.arange(self.index.shape[1])[None, :] < self.counts[:, None]):
            raise ValueError("neighbour rows must be left-packed")
        P = np.asarray(ref_points, dtype=float)[np.where(mask, self.index, 0)]
        self.d_tn = np.hypot(*(P - self.targets[:, None, :]).transpose(2, 0, 1))
        diff = P[:, :, None, :] - P[:, None, :, :]
        self.d_nn = np.hypot(diff[..., 0], diff[..., 1])

    def factors(self, phi: float, nu: float, nodes_offset: int = 0):
        """Unit-sill weights (n, m) and conditional variances (n,)."""
        n, m = self.index.shape
        A = np.zeros((n, m))
        D = np.empty(n)
        code = CLOSED_FORM_CODES.get(float(nu))
        if code is not None:
            bad = closed_form_factors(self.d_nn, self.d_tn, self.counts, float(phi), code, JITTER, A, D)
        else:
            G = matern_correlation(self.d_nn, phi, nu)
            c = matern_correlation(self.d_tn, phi, nu)
            bad = solve_from_corr(G, c, self.counts, A, D, JITTER)
        if bad >= 0:
            node = int(bad) + nodes_offset
            raise SingularNeighborGram(f"neighbour Gram matrix is singular at node {node}", node)
        return A, D


class SparseGpFactors:
    """Per-node factors of a DAG plus the assembled sparse precision.

    ``weights`` is a (k, m) array aligned with ``index`` (padded with -1);
    ``cond_var`` holds the ``V`` of every node on the covariance scale.
    """

    def __init__(self, index, weights, cond_var, spec: CovarianceSpec):
        self.index = np.asarray(index, dtype=np.int64)
        self.weights = np.asarray(weights, dtype=float)
        self.cond_var = np.asarray(cond_var, dtype=float)
        self.spec = spec
        self.k = len(self.cond_var)
        rows = np.repeat(np.arange(self.k), self.index.shape[1])
        cols = self.index.ravel()
        keep = cols >= 0
        M = sp.csr_matrix((self.weights.ravel()[keep], (rows[keep], cols[keep])), shape=(self.k, self.k))
        self.I_minus_M = (sp.identity(self.k, format="csr") - M).tocsr()
        self._upper = self.I_minus_M.T.tocsr()
        self._site_cache: dict = {}

    @property
    def precision(self) -> sp.csr_matrix:
        Vinv = sp.diags(1.0 / self.cond_var)
        return (self.I_minus_M.T @ Vinv @ self.I_minus_M).tocsr()

    def weight_rows(self):
        """Per-node (neighbour indices, weights) pairs without padding."""
        out = []
        for idx, w in zip(self.index, self.weights):
            keep = idx >= 0
            out.append((idx[keep], w[keep]))
        return out

    def cov_columns(self, cols) -> np.ndarray:
        """Columns of the implied reference covariance, shape (k, len(cols))."""
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        E = np.zeros((self.k, len(cols)))
        E[cols, np.arange(len(cols))] = 1.0
        x = spsolve_triangular(self._upper, E, lower=False, unit_diagonal=True)
        x = x.reshape(self.k, len(cols)) * self.cond_var[:, None]
        z = spsolve_triangular(self.I_minus_M, x, lower=True, unit_diagonal=True)
        return z.reshape(self.k, len(cols))

    def dense_covariance(self) -> np.ndarray:
        """Full implied covariance via triangular solves (small k only)."""
        return self.cov_columns(np.arange(self.k))

    def cholesky_ok(self) -> bool:
        """Factorize the assembled precision densely; True on success."""
        Q = self.precision.toarray()
        try:
            np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            return False
        return bool(np.allclose(Q, Q.T, rtol=0, atol=1e-12 * np.abs(Q).max()))


def assemble_precision(dag, spec: CovarianceSpec) -> SparseGpFactors:
    """Evaluate every node's factors over ``dag`` and assemble the precision."""
    index = dag.padded()
    geom = NeighborGeometry(dag.refs, index, dag.refs)
    A, D = geom.factors(spec.phi, spec.nu)
    if np.any(D <= 1e-14):
        bad = int(np.flatnonzero(D <= 1e-14)[0])
        raise SingularNeighborGram(f"conditional variance vanishes at node {bad}", bad)
    return SparseGpFactors(index, A, spec.sigma2 * D, spec)


def _site(s, dag, factors: SparseGpFactors, barriers):
    """(reference index or None, neighbours, weights, V) for a location."""
    key = np.ascontiguousarray(np.asarray(s, dtype=float).reshape(2)).tobytes()
    hit = factors._site_cache.get(key)
    if hit is not None:
        return hit
    j = dag.index_of(s)
    if j is not None:
        hit = (j, None, None, None)
    else:
        from .dag import nonref_neighbors

        if not barriers.is_empty and barriers.contains(np.asarray(s, dtype=float).reshape(1, 2))[0]:
            raise LocationInBarrier(f"location {tuple(np.ravel(s))} lies inside a barrier")
        nb = nonref_neighbors(s, dag, barriers).neighbor_indices
        w, V = local_factors(s, dag.refs[nb], factors.spec)
        hit = (None, nb, w, V)
    factors._site_cache[key] = hit
    return hit


def nonstationary_cov(s1, s2, dag, factors: SparseGpFactors, barriers: BarrierSet = EMPTY,
                      spec: CovarianceSpec | None = None) -> float:
    """Covariance of the barrier-conforming process between two locations."""
    if spec is not None and spec != factors.spec:
        raise InvalidSpec("spec does not match the assembled factors")
    a = _site(s1, dag, factors, barriers)
    b = _site(s2, dag, factors, barriers)
    if a[0] is None and b[0] is not None:
        a, b = b, a
    if a[0] is not None and b[0] is not None:
        return float(factors.cov_columns([b[0]])[a[0], 0])
    if a[0] is not None:
        _, nb, w, _ = b
        col = factors.cov_columns([a[0]])[:, 0]
        return float(w @ col[nb])
    _, nb1, w1, V1 = a
    _, nb2, w2, _ = b
    cols = factors.cov_columns(nb2)
    val = float(w1 @ cols[nb1] @ w2)
    if np.array_equal(np.ravel(s1), np.ravel(s2)):
        val += V1
    return val


def covariance_field(probe, targets, dag, factors: SparseGpFactors, barriers: BarrierSet = EMPTY) -> np.ndarray:
    """Nonstationary covariance from one probe location to many targets."""
    T = as_points(targets, "targets")
    p = _site(probe, dag, factors, barriers)
    if p[0] is not None:
        col = factors.cov_columns([p[0]])[:, 0]
    else:
        _, nb, w, _ = p
        col = factors.cov_columns(nb) @ w
    out = np.empty(len(T))
    probe_arr = np.asarray(probe, dtype=float).reshape(2)
    for t, s in enumerate(T):
        site = _site(s, dag, factors, barriers)
        if site[0] is not None:
            out[t] = col[site[0]]
        else:
            _, nb, w, V = site
            out[t] = w @ col[nb]
            if p[0] is None and np.array_equal(s, probe_arr):
                out[t] += V
    return out


def sample_prior_w(dag, factors: SparseGpFactors, seed=None, size=None) -> np.ndarray:
    """Ancestral draw(s) of the reference process.

    Equivalent to the node-by-node recursion ``w_i = M_i w_N(i) + sqrt(V_i) z_i``
    in reference order, carried out as one forward substitution.
    """
    rng = np.random.default_rng(seed)
    n = 1 if size is None else int(size)
    z = rng.standard_normal((n, factors.k))
    rhs = (np.sqrt(factors.cond_var)[None, :] * z).T
    w = spsolve_triangular(factors.I_minus_M, rhs, lower=True, unit_diagonal=True)
    w = np.asarray(w).reshape(factors.k, n).T
    return w[0] if size is None else w
