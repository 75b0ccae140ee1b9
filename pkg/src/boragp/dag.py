"""Barrier-conforming neighbour DAG over reference locations.

Reference nodes take their first-order neighbours from the nearest earlier
nodes with an unblocked straight segment.  Nodes left short of ``m`` are
filled with second-order neighbours (neighbours of neighbours) ranked by the
detour ``d(s, r') + d(r', r'') - d(s, r'')``; nodes with no visible earlier
node are routed through an escape lattice first.  With an empty barrier set
the construction is the plain m-nearest-earlier-neighbour DAG.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    InvalidPermutation,
    IsolatedUnreachable,
    LocationInBarrier,
    NoReachableNeighbor,
    OrderingError,
)
from .geometry import EMPTY, BarrierSet, as_points, build_escape_grid

log = logging.getLogger(__name__)

FIRST_ORDER, SECOND_ORDER, GRID_ESCAPE = 0, 1, 2
PROVENANCE = ("first_order", "second_order", "grid_escape")

STRATEGIES = {
    "by_x": "x", "x": "x",
    "by_y": "y", "y": "y",
    "by_sum": "sum", "sum": "sum",
    "by_product_desc": "product-desc", "product-desc": "product-desc",
    "product_desc": "product-desc",
}

# brute-force nearest scans below this many candidates, k-d tree above
BRUTE_FORCE_LIMIT = 2048
MAX_FILL_ROUNDS = 5
# spacing used when crossings have no positive overlap (zero-width barriers)
ESCAPE_FALLBACK_DIVISIONS = 20
ESCAPE_MAX_DIVISIONS = 100


@dataclass(frozen=True)
class Ordering:
    strategy: str
    permutation: np.ndarray

    def apply(self, points):
        return np.asarray(points)[self.permutation]


def order_reference(locations, strategy="x") -> Ordering:
    """Stable visit order of ``locations`` under ``strategy``.

    ``strategy`` is one of ``x``, ``y``, ``sum``, ``product-desc`` (or the
    ``by_*`` spellings), or an explicit permutation of ``range(n)``.
    Ties keep the original relative order.
    """
    pts = as_points(locations, "locations")
    n = len(pts)
    if n == 0:
        raise ValueError("locations must be nonempty")
    if not isinstance(strategy, str):
        perm = np.asarray(strategy)
        if perm.shape != (n,) or not np.issubdtype(perm.dtype, np.integer) \
                or not np.array_equal(np.sort(perm), np.arange(n)):
            raise InvalidPermutation(f"explicit ordering is not a permutation of 0..{n - 1}")
        return Ordering("explicit", perm.astype(np.int64))
    try:
        name = STRATEGIES[strategy]
    except KeyError:
        raise ValueError(f"unknown ordering strategy {strategy!r}") from None
    x, y = pts[:, 0], pts[:, 1]
    key = {"x": x, "y": y, "sum": x + y, "product-desc": -(x * y)}[name]
    return Ordering(name, np.argsort(key, kind="stable").astype(np.int64))


@dataclass
class NeighborDag:
    """Ordered reference locations and their neighbour lists.

    ``neighbors[i]`` holds positions (into ``refs``) of earlier nodes.
    ``via[i]`` records, for second-order entries, the node the detour
    passes through (-1 otherwise).
    """

    refs: np.ndarray
    m: int
    neighbors: list
    provenance: list
    via: list
    ordering: Ordering | None = None
    escape_points: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self._tree = None
        self._later_visible = {}
        self._lookup = None

    @property
    def k(self) -> int:
        return len(self.refs)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.refs)
        return self._tree

    def index_of(self, point) -> int | None:
        """Position of a reference location with identical coordinates."""
        if self._lookup is None:
            self._lookup = {r.tobytes(): i for i, r in enumerate(np.ascontiguousarray(self.refs))}
        key = np.ascontiguousarray(np.asarray(point, dtype=float).reshape(2)).tobytes()
        return self._lookup.get(key)

    def padded(self):
        """Neighbour indices as a (k, m) array padded with -1."""
        out = np.full((self.k, max(self.m, 1)), -1, dtype=np.int64)
        for i, nb in enumerate(self.neighbors):
            out[i, :len(nb)] = nb
        return out

    def later_visible(self, j: int, barriers: BarrierSet) -> np.ndarray:
        """References ordered after node ``j`` with an unblocked segment to it."""
        hit = self._later_visible.get(j)
        if hit is None:
            later = np.arange(j + 1, self.k)
            if len(later):
                ok = ~barriers.blocked(self.refs[j], self.refs[later])
                hit = later[ok]
            else:
                hit = later
            self._later_visible[j] = hit
        return hit


@dataclass
class NonRefNeighbors:
    location: np.ndarray
    neighbor_indices: np.ndarray
    provenance: np.ndarray
    via: np.ndarray


def _sq_dist(points, target):
    d = points - target
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1]


def _nearest_stream(points, target, limit, tree=None, batch=32):
    """Yield index batches of ``points[:limit]`` sorted by (distance, index)."""
    if limit <= 0:
        return
    if tree is None or limit <= BRUTE_FORCE_LIMIT:
        d2 = _sq_dist(points[:limit], target)
        order = np.lexsort((np.arange(limit), d2))
        for s in range(0, limit, batch):
            yield order[s:s + batch]
        return
    n = tree.n
    done = 0
    kq = min(n, max(4 * batch, 64))
    while True:
        dist, idx = tree.query(target, k=kq)
        idx = np.atleast_1d(idx)
        dist = np.atleast_1d(dist)
        if kq >= n:
            keep = idx[idx < limit]
            complete = True
        else:
            r = dist[-1]
            d2 = _sq_dist(points[idx], target)
            keep = idx[(idx < limit) & (d2 < r * r * (1 - 1e-9))]
            complete = False
        d2 = _sq_dist(points[keep], target)
        keep = keep[np.lexsort((keep, d2))]
        fresh = keep[done:]
        for s in range(0, len(fresh), batch):
            yield fresh[s:s + batch]
        done = len(keep)
        if complete or done >= limit:
            return
        kq = min(n, 2 * kq)


def _scan_visible(points, target, limit, m, barriers, tree=None):
    """Nearest-first scan returning (visible, scanned_prefix) index arrays."""
    visible = []
    scanned = []
    for batch in _nearest_stream(points, target, limit, tree):
        scanned.append(batch)
        if barriers.is_empty:
            ok = batch
        else:
            ok = batch[~barriers.blocked(target, points[batch])]
        visible.extend(ok[: m - len(visible)].tolist())
        if len(visible) >= m:
            break
    scanned = np.concatenate(scanned) if scanned else np.zeros(0, dtype=np.int64)
    return np.array(visible, dtype=np.int64), scanned


def detour_candidates(target, current, pools, points):
    """Rank fill candidates by their best detour through ``current``.

    Parameters
    ----------
    target : (2,) array
        Location being filled.
    current : sequence of int
        Its present neighbour indices (the via nodes).
    pools : sequence of arrays
        ``pools[t]`` lists candidates reachable through ``current[t]``.
    points : (k, 2) array
        Reference coordinates.

    Returns
    -------
    cand, score, via : arrays sorted by (score, index); members of
    ``current`` are excluded and each candidate appears once with its
    smallest detour.
    """
    current = np.asarray(current, dtype=np.int64)
    best: dict[int, tuple[float, int]] = {}
    taken = set(current.tolist())
    for v, pool in zip(current, pools):
        pool = np.asarray(pool, dtype=np.int64)
        if len(pool) == 0:
            continue
        pool = pool[~np.isin(pool, current)]
        if len(pool) == 0:
            continue
        d_tv = float(np.hypot(*(points[v] - target)))
        d_vc = np.hypot(*(points[pool] - points[v]).T)
        d_tc = np.hypot(*(points[pool] - target).T)
        score = d_tv + d_vc - d_tc
        for c, s in zip(pool.tolist(), score.tolist()):
            if c in taken:
                continue
            old = best.get(c)
            if old is None or s < old[0] or (s == old[0] and v < old[1]):
                best[c] = (s, int(v))
    if not best:
        empty = np.zeros(0, dtype=np.int64)
        return empty, np.zeros(0), empty
    cand = np.fromiter(best.keys(), dtype=np.int64, count=len(best))
    score = np.array([best[c][0] for c in cand.tolist()])
    via = np.array([best[c][1] for c in cand.tolist()], dtype=np.int64)
    order = np.lexsort((cand, score))
    return cand[order], score[order], via[order]


def second_order_candidates(i: int, dag: NeighborDag):
    """Fill candidates for node ``i`` from its neighbours' neighbour sets."""
    current = dag.neighbors[i]
    pools = [dag.neighbors[v] for v in current]
    return detour_candidates(dag.refs[i], current, pools, dag.refs)


def _escape(points, target, crossing, barriers, label):
    """Route an isolated location through the escape lattice.

    ``crossing`` are the nearest (blocked) candidates; the first lattice
    point visible from ``target`` that sees any of them decides the proxies.
    """
    overlaps = np.array([barriers.overlap_length(target, points[j]) for j in crossing])
    half = float(np.max(np.hypot(*(points[crossing] - target).T)))
    positive = overlaps > 0
    step = overlaps[positive].min() if positive.any() else half / ESCAPE_FALLBACK_DIVISIONS
    info = [(points[j], ov if ov > 0 else step) for j, ov in zip(crossing, overlaps)]
    grid = build_escape_grid(target, info, min_step=half / ESCAPE_MAX_DIVISIONS)
    pts = grid.points[1:]  # the first lattice point is the target itself
    targets = points[crossing]
    chunk = 512
    for s in range(0, len(pts), chunk):
        g = pts[s:s + chunk]
        ok = ~barriers.contains(g)
        ok[ok] = ~barriers.blocked(target, g[ok])
        for gp in g[ok]:
            seen = ~barriers.blocked(gp, targets)
            if seen.any():
                return crossing[seen], gp
    raise IsolatedUnreachable(f"{label}: escape lattice found no reachable neighbour")


def _escape_widening(points, target, scanned, m, barriers, label):
    """Try the lattice over the m nearest blocked nodes, then 4m, then all.

    A location pocketed between crossing lines can need a lattice wider
    than the span of its m nearest candidates.
    """
    sizes = sorted({min(m, len(scanned)), min(4 * m, len(scanned)), len(scanned)})
    for size in sizes:
        try:
            return _escape(points, target, scanned[:size], barriers, label)
        except IsolatedUnreachable:
            if size == sizes[-1]:
                raise


def _fill(target, current, prov, via, neighbor_lists, points, m, extra_pools=None, rounds=MAX_FILL_ROUNDS):
    """Top up ``current`` with detour-ranked candidates, in place."""
    for _ in range(rounds):
        short = m - len(current)
        if short <= 0:
            return True
        pools = [neighbor_lists[v] for v in current]
        if extra_pools is not None:
            pools = [np.union1d(p, extra_pools(v)) for p, v in zip(pools, current)]
        cand, _, cvia = detour_candidates(target, current, pools, points)
        if len(cand) == 0:
            return False
        take = min(short, len(cand))
        current.extend(cand[:take].tolist())
        prov.extend([SECOND_ORDER] * take)
        via.extend(cvia[:take].tolist())
        if extra_pools is not None:
            return len(current) >= m
    return len(current) >= m


def _check_locations(points, barriers, what):
    if barriers.is_empty:
        return
    inside = barriers.contains(points)
    if inside.any():
        bad = int(np.flatnonzero(inside)[0])
        raise LocationInBarrier(f"{what} {bad} at {tuple(points[bad])} lies inside a barrier")


def build_reference_dag(refs, m: int, barriers: BarrierSet = EMPTY, ordering: Ordering | None = None,
                        check_first: bool = True) -> NeighborDag:
    """Barrier-conforming DAG over already-ordered reference locations.

    Parameters
    ----------
    refs : (k, 2) array
        Reference locations in visit order.
    m : int
        Neighbour budget.
    barriers : BarrierSet
        Barrier geometry; empty reduces to plain nearest neighbours.
    ordering : Ordering, optional
        Kept on the result for provenance.
    check_first : bool
        Verify that the first ``m + 1`` nodes are mutually visible.
    """
    pts = as_points(refs, "refs") if len(refs) else np.zeros((0, 2))
    if m < 1:
        raise ValueError("m must be at least 1")
    k = len(pts)
    _check_locations(pts, barriers, "reference location")
    if k > 1 and len(np.unique(pts, axis=0)) != k:
        raise ValueError("duplicate reference locations; deduplicate at ingest")
    head = min(k, m + 1)
    if check_first and head > 1 and not barriers.is_empty:
        ii, jj = np.triu_indices(head, 1)
        blocked = barriers.blocked(pts[ii], pts[jj])
        if blocked.any():
            a, b = int(ii[blocked][0]), int(jj[blocked][0])
            raise OrderingError(
                f"reference nodes {a} and {b} are among the first m+1={head} but blocked from "
                "each other; choose an ordering that starts in an unobstructed region"
            )
    tree = cKDTree(pts) if k > BRUTE_FORCE_LIMIT else None
    neighbors, provenance, vias = [], [], []
    escape_points = {}
    warnings = []
    for i in range(k):
        if i <= m:
            d2 = _sq_dist(pts[:i], pts[i])
            nb = np.lexsort((np.arange(i), d2)).tolist()
            prov = [FIRST_ORDER] * i
            via = [-1] * i
        else:
            visible, scanned = _scan_visible(pts, pts[i], i, m, barriers, tree)
            nb = visible.tolist()
            prov = [FIRST_ORDER] * len(nb)
            via = [-1] * len(nb)
            if not nb:
                proxies, gp = _escape_widening(pts, pts[i], scanned, m, barriers,
                                                f"reference node {i}")
                nb = proxies.tolist()
                prov = [GRID_ESCAPE] * len(nb)
                via = [-1] * len(nb)
                escape_points[i] = gp
            if len(nb) < m:
                if not _fill(pts[i], nb, prov, via, neighbors, pts, m):
                    msg = f"reference node {i} keeps {len(nb)} < m={m} neighbours after fill"
                    warnings.append(msg)
                    log.warning(msg)
        neighbors.append(np.array(nb, dtype=np.int64))
        provenance.append(np.array(prov, dtype=np.int8))
        vias.append(np.array(via, dtype=np.int64))
    dag = NeighborDag(pts, m, neighbors, provenance, vias, ordering, escape_points, warnings)
    if tree is not None:
        dag._tree = tree
    return dag


def nonref_neighbors(u, dag: NeighborDag, barriers: BarrierSet = EMPTY) -> NonRefNeighbors:
    """Neighbour set of a non-reference location drawn from the whole reference set.

    Short first-order sets are filled from the neighbours of each
    first-order neighbour together with every later-ordered reference
    visible from it, so the fill pool does not favour either end of the
    ordering.  A location that sees no reference is routed through the
    escape lattice.
    """
    loc = as_points(u, "u")[0]
    if not barriers.is_empty and barriers.contains(loc[None, :])[0]:
        raise LocationInBarrier(f"location {tuple(loc)} lies inside a barrier")
    m = dag.m
    tree = dag.tree if dag.k > BRUTE_FORCE_LIMIT else None
    visible, scanned = _scan_visible(dag.refs, loc, dag.k, m, barriers, tree)
    nb = visible.tolist()
    prov = [FIRST_ORDER] * len(nb)
    via = [-1] * len(nb)
    if not nb:
        if dag.k == 0:
            raise NoReachableNeighbor("empty reference set")
        try:
            proxies, _ = _escape_widening(dag.refs, loc, scanned, m, barriers, f"location {tuple(loc)}")
        except IsolatedUnreachable as exc:
            raise NoReachableNeighbor(str(exc)) from None
        nb = proxies.tolist()
        prov = [GRID_ESCAPE] * len(nb)
        via = [-1] * len(nb)
    if len(nb) < min(m, dag.k):
        _fill(loc, nb, prov, via, dag.neighbors, dag.refs, m,
              extra_pools=lambda j: dag.later_visible(j, barriers))
    return NonRefNeighbors(loc, np.array(nb, dtype=np.int64), np.array(prov, dtype=np.int8),
                           np.array(via, dtype=np.int64))


def nonref_fill_pool(nbrs: NonRefNeighbors, dag: NeighborDag, barriers: BarrierSet) -> set:
    """The full candidate pool ([[u]] together with [[u]]_>) for diagnostics."""
    first = nbrs.neighbor_indices[nbrs.provenance != SECOND_ORDER]
    pool = set()
    for j in first.tolist():
        pool.update(dag.neighbors[j].tolist())
        pool.update(dag.later_visible(j, barriers).tolist())
    return pool - set(nbrs.neighbor_indices.tolist())


def batch_nonref_neighbors(points, dag: NeighborDag, barriers: BarrierSet = EMPTY,
                           threads: int = 1) -> list[NonRefNeighbors]:
    pts = as_points(points, "points")
    if threads > 1 and len(pts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        dag.tree  # build shared state before fanning out
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda p: nonref_neighbors(p, dag, barriers), pts))
    return [nonref_neighbors(p, dag, barriers) for p in pts]


def export_edges(dag: NeighborDag) -> list[tuple[int, int, str, float]]:
    """Edge rows ``(target, neighbor, provenance, distance)`` in list order."""
    rows = []
    for i, (nb, prov) in enumerate(zip(dag.neighbors, dag.provenance)):
        for j, p in zip(nb.tolist(), prov.tolist()):
            d = float(np.hypot(*(dag.refs[i] - dag.refs[j])))
            rows.append((i, j, PROVENANCE[p], d))
    return rows


def neighbors_from_edges(rows: Sequence, k: int):
    """Rebuild (neighbors, provenance) lists from exported edge rows."""
    nbs = [[] for _ in range(k)]
    provs = [[] for _ in range(k)]
    code = {name: c for c, name in enumerate(PROVENANCE)}
    for target, neighbor, prov, _ in rows:
        nbs[int(target)].append(int(neighbor))
        provs[int(target)].append(code[prov])
    return ([np.array(n, dtype=np.int64) for n in nbs],
            [np.array(p, dtype=np.int8) for p in provs])


def plain_nearest_neighbors(refs, m: int) -> list[np.ndarray]:
    """Brute-force m-nearest-earlier construction (ties by index)."""
    pts = np.asarray(refs, dtype=float)
    out = []
    for i in range(len(pts)):
        d2 = _sq_dist(pts[:i], pts[i])
        order = np.lexsort((np.arange(i), d2))
        out.append(order[:m].astype(np.int64))
    return out
