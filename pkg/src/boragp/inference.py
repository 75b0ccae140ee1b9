"""Hierarchical spatial regression with a sparse-DAG latent process.

Model: ``y(s) = b0 + x(s)^T b1 + w(s) + eps(s)`` with ``eps ~ N(0, tau2)``
and ``w`` following the DAG process with Matérn factors.  The sampler
cycles through the latent values (sequential scan), the regression
coefficients, both variances (conjugate inverse-gamma draws) and the decay
(random-walk Metropolis on a logit scale).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import conditional_residuals, gibbs_w_sweep
from .covariance import CovarianceSpec, NeighborGeometry
from .errors import DimensionMismatch, LocationInBarrier, MissingCovariates, NonFinite, NonFiniteLikelihood
from .geometry import EMPTY, BarrierSet, as_points

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    locations: np.ndarray
    response: np.ndarray
    covariates: np.ndarray | None = None

    def __post_init__(self):
        self.locations = as_points(self.locations, "locations")
        self.response = np.asarray(self.response, dtype=float).ravel()
        n = len(self.locations)
        if n < 1:
            raise ValueError("dataset needs at least one location")
        if len(self.response) != n:
            raise DimensionMismatch(f"{n} locations but {len(self.response)} responses")
        if not np.all(np.isfinite(self.response)):
            raise NonFinite("response contains non-finite values")
        if self.covariates is None:
            self.covariates = np.zeros((n, 0))
        self.covariates = np.asarray(self.covariates, dtype=float).reshape(n, -1)
        if not np.all(np.isfinite(self.covariates)):
            raise NonFinite("covariates contain non-finite values")

    @property
    def n(self) -> int:
        return len(self.response)

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n), self.covariates])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.locations[idx], self.response[idx], self.covariates[idx])


@dataclass(frozen=True)
class PriorSpec:
    """Flat prior on the coefficients; IG on both variances; uniform decay."""

    tau2_a: float = 2.0
    tau2_b: float = 0.1
    sigma2_a: float = 2.0
    sigma2_b: float = 1.0
    phi_low: float = 0.1
    phi_high: float = 10.0
    nu: float = 0.5

    def __post_init__(self):
        for name in ("tau2_a", "tau2_b", "sigma2_a", "sigma2_b", "nu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.phi_low < self.phi_high:
            raise ValueError("need 0 < phi_low < phi_high")


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 25_000
    burn_in: int = 10_000
    thin: int = 1
    seed: int = 0
    phi_proposal_sd: float = 0.3
    adapt: bool = True
    target_acceptance: float = 0.3

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if not self.phi_proposal_sd > 0:
            raise ValueError("phi_proposal_sd must be positive")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class McmcChain:
    """Stored draws; latent values are in reference (DAG) order."""

    beta: np.ndarray
    tau2: np.ndarray
    sigma2: np.ndarray
    phi: np.ndarray
    w: np.ndarray
    nu: float
    acceptance_rate: float
    seed: int
    phi_proposal_sd: float
    config: McmcConfig | None = None
    priors: PriorSpec | None = None
    extra: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return len(self.tau2)

    @property
    def microergodic(self) -> np.ndarray:
        """Per-draw sigma2 * phi^(2 nu)."""
        return self.sigma2 * self.phi ** (2.0 * self.nu)

    def parameters(self) -> dict:
        out = {f"beta{j}": self.beta[:, j] for j in range(self.beta.shape[1])}
        out.update(tau2=self.tau2, sigma2=self.sigma2, phi=self.phi, microergodic=self.microergodic)
        return out


def _children(nbr: np.ndarray):
    """CSR arrays listing (child, slot) for every parent node."""
    k, m = nbr.shape
    child, slot = np.nonzero(nbr >= 0)
    parent = nbr[child, slot]
    order = np.lexsort((child, parent))
    parent, child, slot = parent[order], child[order], slot[order]
    ptr = np.zeros(k + 1, dtype=np.int64)
    np.add.at(ptr, parent + 1, 1)
    return np.cumsum(ptr), child.astype(np.int64), slot.astype(np.int64)


def _align(data: Dataset, dag) -> np.ndarray:
    if data.n != dag.k:
        raise DimensionMismatch(f"dataset has {data.n} locations but the DAG has {dag.k} references")
    perm = np.empty(dag.k, dtype=np.int64)
    seen = np.zeros(dag.k, dtype=bool)
    for i, loc in enumerate(data.locations):
        j = dag.index_of(loc)
        if j is None or seen[j]:
            raise DimensionMismatch(f"data location {tuple(loc)} is not a distinct DAG reference")
        perm[j] = i
        seen[j] = True
    return perm


def initial_values(data: Dataset, priors: PriorSpec) -> dict:
    """Least-squares coefficients, variogram variances, midpoint decay."""
    from .evaluation import empirical_variogram, fit_matern_variogram

    X = data.design()
    beta, *_ = np.linalg.lstsq(X, data.response, rcond=None)
    resid = data.response - X @ beta
    var = float(np.var(resid))
    phi = 0.5 * (priors.phi_low + priors.phi_high)
    tau2 = sigma2 = None
    try:
        fit = fit_matern_variogram(empirical_variogram(data), priors.nu, (priors.phi_low, priors.phi_high))
        tau2, sigma2 = fit.tau2, fit.sigma2
    except (ValueError, ArithmeticError) as exc:
        log.info("variogram initialisation skipped: %s", exc)
    floor = max(0.05 * var, 1e-6)
    tau2 = max(tau2 if tau2 is not None else 0.5 * var, floor)
    sigma2 = max(sigma2 if sigma2 is not None else 0.5 * var, floor)
    return dict(beta=beta, tau2=tau2, sigma2=sigma2, phi=phi, w=resid)


def _to_unbounded(phi, lo, hi):
    return np.log((phi - lo) / (hi - phi))


def _to_bounded(theta, lo, hi):
    return lo + (hi - lo) / (1.0 + np.exp(-theta))


def gibbs_fit(data: Dataset, dag, spec_init: CovarianceSpec | None = None, priors: PriorSpec | None = None,
              cfg: McmcConfig | None = None, barriers: BarrierSet = EMPTY, fixed: dict | None = None,
              init: dict | None = None, progress=None) -> McmcChain:
    """Run the Gibbs/Metropolis sampler over the reference set of ``dag``.

    Parameters
    ----------
    data
        Observations; locations must be exactly the DAG references (any order).
    spec_init
        Optional starting sill and decay; the smoothness comes from ``priors``.
    fixed
        Parameters held at given values instead of sampled (any of
        ``beta``, ``tau2``, ``sigma2``, ``phi``).
    """
    priors = priors or PriorSpec()
    cfg = cfg or McmcConfig()
    fixed = dict(fixed or {})
    if not barriers.is_empty and np.any(barriers.contains(data.locations)):
        raise LocationInBarrier("a data location lies inside a barrier")
    perm = _align(data, dag)
    y = data.response[perm]
    X = data.design()[perm]
    k, q = X.shape
    nu = priors.nu

    start = initial_values(data, priors)
    start["w"] = start["w"][perm]
    if spec_init is not None:
        start.update(sigma2=spec_init.sigma2, phi=float(np.clip(spec_init.phi, priors.phi_low, priors.phi_high)))
    start.update(init or {})
    start.update(fixed)
    beta = np.array(start["beta"], dtype=float).reshape(q)
    tau2, sigma2, phi = float(start["tau2"]), float(start["sigma2"]), float(start["phi"])
    w = np.array(start["w"], dtype=float).copy()
    if not priors.phi_low < phi < priors.phi_high:
        phi = 0.5 * (priors.phi_low + priors.phi_high)

    nbr = dag.padded()
    geom = NeighborGeometry(dag.refs, nbr, dag.refs)
    ptr, child, slot = _children(nbr)
    A, D = geom.factors(phi, nu)
    XtX_inv = np.linalg.inv(X.T @ X) if q else np.zeros((0, 0))
    chol_XtX_inv = np.linalg.cholesky(XtX_inv)
    rng = np.random.default_rng(cfg.seed)

    lo, hi = priors.phi_low, priors.phi_high
    theta = _to_unbounded(phi, lo, hi)
    step = cfg.phi_proposal_sd
    n_keep = cfg.n_draws
    out_beta = np.empty((n_keep, q))
    out_tau2 = np.empty(n_keep)
    out_sigma2 = np.empty(n_keep)
    out_phi = np.empty(n_keep)
    out_w = np.empty((n_keep, k))
    accepted = 0
    proposals = 0
    saved = 0

    def quad_and_logdet(A_, D_):
        e = conditional_residuals(w, nbr, A_)
        return float(np.sum(e * e / D_)), float(np.sum(np.log(D_)))

    for it in range(cfg.iterations):
        # latent values
        z = rng.standard_normal(k)
        gibbs_w_sweep(w, y - X @ beta, 1.0 / tau2, sigma2, nbr, A, D, ptr, child, slot, z)

        # coefficients
        if "beta" not in fixed:
            mean = XtX_inv @ (X.T @ (y - w))
            beta = mean + np.sqrt(tau2) * (chol_XtX_inv @ rng.standard_normal(q))

        # nugget
        if "tau2" not in fixed:
            r = y - X @ beta - w
            tau2 = (priors.tau2_b + 0.5 * float(r @ r)) / rng.gamma(priors.tau2_a + 0.5 * k)

        # partial sill, using the unit-sill factors
        quad, logdet = quad_and_logdet(A, D)
        if "sigma2" not in fixed:
            sigma2 = (priors.sigma2_b + 0.5 * quad) / rng.gamma(priors.sigma2_a + 0.5 * k)

        # decay
        if "phi" not in fixed:
            cur = -0.5 * logdet - 0.5 * quad / sigma2 + np.log(phi - lo) + np.log(hi - phi)
            theta_new = theta + step * rng.standard_normal()
            phi_new = float(_to_bounded(theta_new, lo, hi))
            u = np.log(rng.uniform())
            proposals += 1
            if lo < phi_new < hi:
                A_new, D_new = geom.factors(phi_new, nu)
                quad_new, logdet_new = quad_and_logdet(A_new, D_new)
                new = (-0.5 * logdet_new - 0.5 * quad_new / sigma2
                       + np.log(phi_new - lo) + np.log(hi - phi_new))
                if not np.isfinite(new):
                    raise NonFiniteLikelihood(f"non-finite log-likelihood at iteration {it}", it)
                ok = u < new - cur
            else:
                ok = False
            if ok:
                theta, phi, A, D = theta_new, phi_new, A_new, D_new
                accepted += 1 if it >= cfg.burn_in else 0
            if cfg.adapt and it < cfg.burn_in:
                rate = 1.0 if ok else 0.0
                step *= np.exp((rate - cfg.target_acceptance) / (it + 1) ** 0.6)

        if not (np.isfinite(tau2) and np.isfinite(sigma2) and np.all(np.isfinite(w))):
            raise NonFiniteLikelihood(f"non-finite state at iteration {it}", it)

        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0 and saved < n_keep:
            out_beta[saved] = beta
            out_tau2[saved] = tau2
            out_sigma2[saved] = sigma2
            out_phi[saved] = phi
            out_w[saved] = w
            saved += 1
        if progress is not None:
            progress(it)

    post = cfg.iterations - cfg.burn_in
    rate = accepted / post if "phi" not in fixed and post else float("nan")
    return McmcChain(out_beta, out_tau2, out_sigma2, out_phi, out_w, nu, rate, cfg.seed, float(step),
                     config=cfg, priors=priors)


@dataclass
class PredictionResult:
    locations: np.ndarray
    w_mean: np.ndarray
    w_sd: np.ndarray
    w_lower: np.ndarray
    w_upper: np.ndarray
    y_mean: np.ndarray
    y_sd: np.ndarray
    y_lower: np.ndarray
    y_upper: np.ndarray
    quantiles: tuple = (0.025, 0.975)
    y_draws: np.ndarray | None = None
    projected: bool = False


def _summaries(draws, quantiles):
    lo, hi = np.quantile(draws, quantiles, axis=0)
    return draws.mean(axis=0), draws.std(axis=0, ddof=1) if len(draws) > 1 else np.zeros(draws.shape[1]), lo, hi


def predict(chain: McmcChain, dag, data: Dataset | None, new_locations, barriers: BarrierSet = EMPTY,
            priors: PriorSpec | None = None, cfg: McmcConfig | None = None, new_covariates=None,
            thin: int = 1, quantiles=(0.025, 0.975), seed: int | None = None, keep_draws: bool = True,
            neighbor_sets=None, batch: int = 2048) -> PredictionResult:
    """Posterior predictive draws of ``w`` and ``y`` at new locations.

    Neighbour sets are found once; for each retained draw the local factors
    are re-evaluated under that draw's decay and sill.  ``thin`` uses every
    ``thin``-th stored draw.
    """
    from .dag import batch_nonref_neighbors

    U = as_points(new_locations, "new_locations")
    n_u = len(U)
    p = chain.beta.shape[1] - 1
    if p > 0:
        if new_covariates is None:
            raise MissingCovariates("covariates are required at prediction sites")
        Xu = np.asarray(new_covariates, dtype=float).reshape(n_u, -1)
        if Xu.shape[1] != p:
            raise DimensionMismatch(f"expected {p} covariates, got {Xu.shape[1]}")
    else:
        Xu = np.zeros((n_u, 0))
    if chain.n_draws == 0:
        raise ValueError("chain has no draws")
    if not barriers.is_empty and np.any(barriers.contains(U)):
        raise LocationInBarrier("a prediction location lies inside a barrier")
    if neighbor_sets is None:
        neighbor_sets = batch_nonref_neighbors(U, dag, barriers)
    width = max(1, max(len(s.neighbor_indices) for s in neighbor_sets))
    idx = np.full((n_u, width), -1, dtype=np.int64)
    for r, s in enumerate(neighbor_sets):
        idx[r, :len(s.neighbor_indices)] = s.neighbor_indices
    geom = NeighborGeometry(U, idx, dag.refs)
    safe = np.where(idx >= 0, idx, 0)

    if seed is None:
        seed = (cfg.seed if cfg is not None else chain.seed) + 1
    rng = np.random.default_rng(seed)
    use = np.arange(0, chain.n_draws, max(1, int(thin)))
    T = len(use)
    Xfull = np.column_stack([np.ones(n_u), Xu])
    y_draws = np.empty((T, n_u))
    w_draws = np.empty((T, n_u))
    last_phi, A, D = None, None, None
    for t, d in enumerate(use):
        phi = chain.phi[d]
        if phi != last_phi:
            A, D = geom.factors(phi, chain.nu)
            last_phi = phi
        mu = np.einsum("ij,ij->i", A, chain.w[d][safe])
        wu = mu + np.sqrt(chain.sigma2[d] * D) * rng.standard_normal(n_u)
        w_draws[t] = wu
        y_draws[t] = Xfull @ chain.beta[d] + wu + np.sqrt(chain.tau2[d]) * rng.standard_normal(n_u)
    wm, ws, wl, wh = _summaries(w_draws, quantiles)
    ym, ys, yl, yh = _summaries(y_draws, quantiles)
    return PredictionResult(U, wm, ws, wl, wh, ym, ys, yl, yh, tuple(quantiles),
                            y_draws if keep_draws else None)


def project_nonnegative(pred: PredictionResult) -> PredictionResult:
    """Clamp each predictive draw of ``y`` at zero, then re-summarise."""
    if pred.y_draws is None:
        raise ValueError("prediction was made without keeping draws")
    draws = np.maximum(pred.y_draws, 0.0)
    ym, ys, yl, yh = _summaries(draws, pred.quantiles)
    return PredictionResult(pred.locations, pred.w_mean, pred.w_sd, pred.w_lower, pred.w_upper,
                            ym, ys, yl, yh, pred.quantiles, draws, projected=True)


def effective_sample_size(x) -> float:
    """Univariate ESS from the initial positive sequence of autocorrelations."""
    x = np.asarray(x, dtype=float).ravel()
    n = len(x)
    if n < 2:
        return float(n)
    xc = x - x.mean()
    var = float(xc @ xc) / n
    if var <= 0 or not np.isfinite(var):
        return 1.0
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    rho = acov / acov[0]
    total = 0.0
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        total += pair
    tau = max(2.0 * total - 1.0, 1.0 / n)
    return float(min(max(n / tau, 1.0), n))


@dataclass(frozen=True)
class ParameterSummary:
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float
    ess: float


def summarize(chain: McmcChain | dict) -> dict:
    """Mean, sd, 2.5/50/97.5% quantiles and ESS for each scalar parameter."""
    params = chain.parameters() if isinstance(chain, McmcChain) else chain
    out = {}
    for name, draws in params.items():
        d = np.asarray(draws, dtype=float)
        if len(d) == 0:
            raise ValueError("chain has no draws")
        q = np.quantile(d, [0.025, 0.5, 0.975])
        sd = float(d.std(ddof=1)) if len(d) > 1 else 0.0
        out[name] = ParameterSummary(float(d.mean()), sd, float(q[0]), float(q[1]), float(q[2]),
                                     effective_sample_size(d))
    return out


def save_chain(path, chain: McmcChain, dag, data: Dataset, barriers: BarrierSet = EMPTY) -> None:
    """Write draws, seed and everything needed to rebuild the DAG to ``.npz``."""
    perm = _align(data, dag)
    cfg = chain.config or McmcConfig()
    pri = chain.priors or PriorSpec(nu=chain.nu)
    np.savez_compressed(
        path,
        beta=chain.beta, tau2=chain.tau2, sigma2=chain.sigma2, phi=chain.phi, w=chain.w,
        nu=chain.nu, acceptance_rate=chain.acceptance_rate, seed=chain.seed,
        phi_proposal_sd=chain.phi_proposal_sd,
        config=np.array([cfg.iterations, cfg.burn_in, cfg.thin, cfg.seed, cfg.phi_proposal_sd, cfg.adapt,
                         cfg.target_acceptance], dtype=float),
        priors=np.array([pri.tau2_a, pri.tau2_b, pri.sigma2_a, pri.sigma2_b, pri.phi_low, pri.phi_high, pri.nu]),
        refs=dag.refs, m=dag.m,
        response=data.response[perm], covariates=data.covariates[perm],
        barriers=np.array(barriers.to_wkt(), dtype=str),
    )


def load_chain(path):
    """Inverse of :func:`save_chain`; returns ``(chain, dag, data, barriers)``."""
    from .dag import Ordering, build_reference_dag
    from .wkt import parse_wkt_lines

    with np.load(path, allow_pickle=False) as z:
        c = z["config"]
        cfg = McmcConfig(int(c[0]), int(c[1]), int(c[2]), int(c[3]), float(c[4]), bool(c[5]), float(c[6]))
        pri = PriorSpec(*[float(v) for v in z["priors"]])
        chain = McmcChain(z["beta"], z["tau2"], z["sigma2"], z["phi"], z["w"], float(z["nu"]),
                          float(z["acceptance_rate"]), int(z["seed"]), float(z["phi_proposal_sd"]),
                          config=cfg, priors=pri)
        refs = z["refs"]
        barriers = parse_wkt_lines([str(s) for s in z["barriers"]])
        ordering = Ordering("file", np.arange(len(refs)))
        dag = build_reference_dag(refs, int(z["m"]), barriers, ordering)
        data = Dataset(refs, z["response"], z["covariates"])
    return chain, dag, data, barriers
