"""Compiled inner loops for the sampler and the per-node factor solves."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# smoothness codes for the closed-form Matérn orders
CLOSED_FORM_CODES = {0.5: 0, 1.5: 1, 2.5: 2}


@njit(cache=True)
def _corr(d, phi, code):
    x = phi * d
    if code == 0:
        return math.exp(-x)
    if code == 1:
        return (1.0 + x) * math.exp(-x)
    return (1.0 + x + x * x / 3.0) * math.exp(-x)


@njit(cache=True)
def _cholesky(L, q, jitter):
    # in-place lower Cholesky of the leading q x q block; False if not SPD
    for j in range(q):
        s = L[j, j] + jitter
        for p in range(j):
            s -= L[j, p] * L[j, p]
        if s <= 0.0:
            return False
        s = math.sqrt(s)
        L[j, j] = s
        for i in range(j + 1, q):
            t = L[i, j]
            for p in range(j):
                t -= L[i, p] * L[j, p]
            L[i, j] = t / s
    return True


@njit(cache=True)
def solve_from_corr(G, c, counts, A, D, jitter):
    # G holds unit-sill neighbour correlations, c target-neighbour correlations
    n, m = c.shape
    L = np.empty((m, m))
    z = np.empty(m)
    for i in range(n):
        q = counts[i]
        if q == 0:
            D[i] = 1.0
            continue
        for a in range(q):
            for b in range(a + 1):
                L[a, b] = G[i, a, b]
        if not _cholesky(L, q, 0.0):
            for a in range(q):
                for b in range(a + 1):
                    L[a, b] = G[i, a, b]
            if not _cholesky(L, q, jitter):
                return i
        for a in range(q):
            t = c[i, a]
            for p in range(a):
                t -= L[a, p] * z[p]
            z[a] = t / L[a, a]
        ss = 0.0
        for a in range(q):
            ss += z[a] * z[a]
        D[i] = max(1.0 - ss, 0.0)
        for a in range(q - 1, -1, -1):
            t = z[a]
            for p in range(a + 1, q):
                t -= L[p, a] * A[i, p]
            A[i, a] = t / L[a, a]
    return -1


@njit(cache=True)
def closed_form_factors(d_nn, d_tn, counts, phi, code, jitter, A, D):
    """Unit-sill weights and conditional variances; returns failing row or -1."""
    n, m = d_tn.shape
    L = np.empty((m, m))
    z = np.empty(m)
    c = np.empty(m)
    for i in range(n):
        q = counts[i]
        if q == 0:
            D[i] = 1.0
            continue
        for attempt in range(2):
            jit = 0.0 if attempt == 0 else jitter
            for a in range(q):
                for b in range(a):
                    L[a, b] = _corr(d_nn[i, a, b], phi, code)
                L[a, a] = 1.0
            ok = _cholesky(L, q, jit)
            if ok:
                break
        if not ok:
            return i
        for a in range(q):
            c[a] = _corr(d_tn[i, a], phi, code)
        for a in range(q):
            t = c[a]
            for p in range(a):
                t -= L[a, p] * z[p]
            z[a] = t / L[a, a]
        ss = 0.0
        for a in range(q):
            ss += z[a] * z[a]
        D[i] = max(1.0 - ss, 0.0)
        for a in range(q - 1, -1, -1):
            t = z[a]
            for p in range(a + 1, q):
                t -= L[p, a] * A[i, p]
            A[i, a] = t / L[a, a]
    return -1


@njit(cache=True)
def conditional_residuals(w, nbr, A):
    """e_i = w_i - sum_j A_ij w_nbr(i,j)."""
    n, m = nbr.shape
    e = np.empty(n)
    for i in range(n):
        t = w[i]
        for a in range(m):
            j = nbr[i, a]
            if j < 0:
                break
            t -= A[i, a] * w[j]
        e[i] = t
    return e


@njit(cache=True)
def gibbs_w_sweep(w, resid, inv_tau2, sigma2, nbr, A, D, child_ptr, child_node, child_pos, z):
    """One sequential-scan update of every latent value, in node order.

    ``resid`` is y - X beta; ``child_*`` is a CSR list of (child, slot)
    pairs for each node that appears in other nodes' neighbour sets.
    """
    n, m = nbr.shape
    for i in range(n):
        prec = inv_tau2 + 1.0 / (sigma2 * D[i])
        mu = 0.0
        for a in range(m):
            j = nbr[i, a]
            if j < 0:
                break
            mu += A[i, a] * w[j]
        num = resid[i] * inv_tau2 + mu / (sigma2 * D[i])
        for t in range(child_ptr[i], child_ptr[i + 1]):
            c = child_node[t]
            slot = child_pos[t]
            a_ci = A[c, slot]
            # child's residual with w_i excluded
            r = w[c]
            for a in range(m):
                j = nbr[c, a]
                if j < 0:
                    break
                if a != slot:
                    r -= A[c, a] * w[j]
            vc = sigma2 * D[c]
            prec += a_ci * a_ci / vc
            num += a_ci * r / vc
        w[i] = num / prec + z[i] / math.sqrt(prec)
