"""Independent reference implementations used only by the tests."""

from __future__ import annotations

from fractions import Fraction

import numpy as np


def _F(p):
    return (Fraction(p[0]), Fraction(p[1]))


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(p, a, b):
    if _cross(a, b, p) != 0:
        return False
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def _ring_contains(pt, ring):
    """Exact even-odd test; returns 'boundary', 'inside' or 'outside'."""
    inside = False
    n = len(ring) - 1
    for i in range(n):
        a, b = ring[i], ring[i + 1]
        if _on_segment(pt, a, b):
            return "boundary"
        if (a[1] > pt[1]) != (b[1] > pt[1]):
            x = a[0] + (pt[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if x > pt[0]:
                inside = not inside
    return "inside" if inside else "outside"


def polygon_region(pt, exterior, holes=()):
    """'inside', 'boundary' or 'outside' of a polygon with holes, exactly."""
    state = _ring_contains(pt, exterior)
    if state != "inside":
        return state
    for h in holes:
        s = _ring_contains(pt, h)
        if s == "boundary":
            return "boundary"
        if s == "inside":
            return "outside"
    return "inside"


def _params_on_segment(p, q, a, b):
    """Parameters t in [0, 1] where segment p + t(q - p) meets segment ab."""
    d = (q[0] - p[0], q[1] - p[1])
    e = (b[0] - a[0], b[1] - a[1])
    den = d[0] * e[1] - d[1] * e[0]
    out = []
    if den != 0:
        t = ((a[0] - p[0]) * e[1] - (a[1] - p[1]) * e[0]) / den
        u = ((a[0] - p[0]) * d[1] - (a[1] - p[1]) * d[0]) / den
        if 0 <= t <= 1 and 0 <= u <= 1:
            out.append(t)
        return out
    # parallel: collinear overlap contributes the projected endpoints
    if _cross(p, q, a) != 0:
        return out
    dd = d[0] * d[0] + d[1] * d[1]
    for c in (a, b):
        t = ((c[0] - p[0]) * d[0] + (c[1] - p[1]) * d[1]) / dd
        if 0 <= t <= 1:
            out.append(t)
    return out


def segment_blocked_exact(p, q, polygons) -> bool:
    """Blocked iff some open sub-interval of pq lies in a closed polygon.

    The segment is split at every parameter where it meets a polygon edge;
    each piece is classified by its midpoint.  A piece whose midpoint is
    inside or on the boundary means interior passage or positive-length
    boundary overlap.
    """
    p, q = _F(p), _F(q)
    if p == q:
        return False
    for exterior, holes in polygons:
        rings = [[_F(v) for v in exterior]] + [[_F(v) for v in h] for h in holes]
        cuts = {Fraction(0), Fraction(1)}
        for ring in rings:
            for i in range(len(ring) - 1):
                cuts.update(_params_on_segment(p, q, ring[i], ring[i + 1]))
        ts = sorted(cuts)
        for t0, t1 in zip(ts, ts[1:]):
            tm = (t0 + t1) / 2
            mid = (p[0] + tm * (q[0] - p[0]), p[1] + tm * (q[1] - p[1]))
            if polygon_region(mid, rings[0], rings[1:]) != "outside":
                return True
    return False


def dense_cov_matrix(points, cov):
    P = np.asarray(points, dtype=float)
    d = np.hypot(P[:, None, 0] - P[None, :, 0], P[:, None, 1] - P[None, :, 1])
    return cov(d)


def dag_implied_covariance(points, neighbor_lists, cov):
    """Reference covariance of a DAG process built entry by entry.

    Uses the recursion Cov(w_i, w_j) = sum_l b_il Cov(w_l, w_j) for j < i,
    with b the kriging weights on each node's neighbours; independent of any
    sparse-matrix assembly.
    """
    P = np.asarray(points, dtype=float)
    k = len(P)
    full = dense_cov_matrix(P, cov)
    out = np.zeros((k, k))
    for i in range(k):
        nb = np.asarray(neighbor_lists[i], dtype=int)
        if len(nb) == 0:
            out[i, i] = full[i, i]
            continue
        G = full[np.ix_(nb, nb)]
        c = full[i, nb]
        b = np.linalg.solve(G, c)
        v = full[i, i] - c @ b
        row = b @ out[nb, :i]
        out[i, :i] = row
        out[:i, i] = row
        out[i, i] = v + b @ out[np.ix_(nb, nb)] @ b
    return out


def dyadic(rng, size, lo=0, hi=32, denom=8):
    """Random multiples of ``1/denom`` in ``[lo/denom, hi/denom]``."""
    return rng.integers(lo, hi + 1, size=size) / denom
