"""Planar barrier geometry.

Barriers are simple polygons (closed regions, optionally with holes) and
zero-width polylines.  All predicates are built on a single orientation
primitive whose zero test is guarded by a tolerance relative to the lengths
of the vectors involved, so inputs on a dyadic lattice are decided exactly.

Blocking semantics for a segment (p, q):

* a proper crossing with any barrier edge blocks;
* an overlap of positive length with any barrier edge blocks;
* any point of the open segment strictly inside a polygon blocks;
* a polyline crossed through one of its interior vertices blocks;
* single-point grazing contact (vertex tangency, T-contact with a polyline
  end point) does not block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import shapely

from .errors import EmptyNeighborInfo, InvalidRing, NonFinite

REL_TOL = 1e-12


@dataclass(frozen=True)
class PolygonRings:
    """A polygon given as an exterior ring plus optional hole rings."""

    exterior: Sequence
    holes: Sequence = ()


def as_points(points, name="points") -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} contains NaN or infinite coordinates")
    return arr


def _sign(value, tol):
    return np.where(value > tol, 1, np.where(value < -tol, -1, 0))


def orient(ax, ay, bx, by, cx, cy):
    """Signed orientation of (a, b, c) with a tolerance-guarded zero.

    Returns an int array: +1 for a left turn, -1 for a right turn, 0 when
    collinear up to ``REL_TOL`` times the product of the two edge lengths.
    """
    ux, uy = bx - ax, by - ay
    vx, vy = cx - ax, cy - ay
    cross = ux * vy - uy * vx
    tol = REL_TOL * np.hypot(ux, uy) * np.hypot(vx, vy)
    return _sign(cross, tol)


def _clean_ring(ring, what):
    arr = np.asarray(ring, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidRing(f"{what}: expected a sequence of (x, y) pairs")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{what}: NaN or infinite coordinate")
    if len(arr) < 2 or not np.array_equal(arr[0], arr[-1]):
        raise InvalidRing(f"{what}: ring is not closed (first vertex must equal last)")
    keep = np.ones(len(arr), dtype=bool)
    keep[1:] = np.any(arr[1:] != arr[:-1], axis=1)
    arr = arr[keep]
    if len(arr) < 4 or len(np.unique(arr[:-1], axis=0)) < 3:
        raise InvalidRing(f"{what}: ring needs at least 3 distinct vertices")
    if not shapely.LinearRing(arr).is_simple:
        raise InvalidRing(f"{what}: ring self-intersects")
    return arr


def _ring_area2(ring):
    x, y = ring[:, 0], ring[:, 1]
    return float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


def _clean_polyline(line, what):
    arr = np.asarray(line, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidRing(f"{what}: expected a sequence of (x, y) pairs")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{what}: NaN or infinite coordinate")
    keep = np.ones(len(arr), dtype=bool)
    keep[1:] = np.any(arr[1:] != arr[:-1], axis=1)
    arr = arr[keep]
    if len(arr) < 2:
        raise InvalidRing(f"{what}: polyline needs at least 2 distinct vertices")
    return arr


class EdgeIndex:
    """Uniform-grid bucket index over edge bounding boxes.

    ``query`` returns every edge whose bounding box meets the query box
    (padded by a relative epsilon), so it never misses a candidate.
    """

    def __init__(self, boxes: np.ndarray):
        self.boxes = boxes
        n = len(boxes)
        if n == 0:
            self.origin = np.zeros(2)
            self.cell = 1.0
            self.shape = (0, 0)
            self._starts = np.zeros(1, dtype=np.int64)
            self._items = np.zeros(0, dtype=np.int64)
            return
        lo = boxes[:, :2].min(axis=0)
        hi = boxes[:, 2:].max(axis=0)
        extent = max(float(np.max(hi - lo)), 1e-12)
        ncell = max(1, int(np.ceil(np.sqrt(n))))
        self.origin = lo
        self.cell = extent / ncell
        nx = int(np.floor((hi[0] - lo[0]) / self.cell)) + 1
        ny = int(np.floor((hi[1] - lo[1]) / self.cell)) + 1
        self.shape = (nx, ny)
        i0, j0, i1, j1 = self._cells(boxes)
        buckets: list[list[int]] = [[] for _ in range(nx * ny)]
        for e in range(n):
            for i in range(i0[e], i1[e] + 1):
                for j in range(j0[e], j1[e] + 1):
                    buckets[i * ny + j].append(e)
        sizes = np.array([len(b) for b in buckets], dtype=np.int64)
        self._starts = np.concatenate([[0], np.cumsum(sizes)])
        self._items = np.array([e for b in buckets for e in b], dtype=np.int64)

    def _cells(self, boxes):
        nx, ny = self.shape
        i0 = np.clip(np.floor((boxes[:, 0] - self.origin[0]) / self.cell), 0, nx - 1).astype(int)
        j0 = np.clip(np.floor((boxes[:, 1] - self.origin[1]) / self.cell), 0, ny - 1).astype(int)
        i1 = np.clip(np.floor((boxes[:, 2] - self.origin[0]) / self.cell), 0, nx - 1).astype(int)
        j1 = np.clip(np.floor((boxes[:, 3] - self.origin[1]) / self.cell), 0, ny - 1).astype(int)
        return i0, j0, i1, j1

    def query(self, xmin, ymin, xmax, ymax) -> np.ndarray:
        n = len(self.boxes)
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        pad = REL_TOL * max(1.0, abs(xmin), abs(xmax), abs(ymin), abs(ymax))
        box = np.array([[xmin - pad, ymin - pad, xmax + pad, ymax + pad]])
        i0, j0, i1, j1 = (v[0] for v in self._cells(box))
        ny = self.shape[1]
        ncells = (i1 - i0 + 1) * (j1 - j0 + 1)
        if ncells >= n:
            cand = np.arange(n)
        else:
            parts = [
                self._items[self._starts[i * ny + j0]: self._starts[i * ny + j1 + 1]]
                for i in range(i0, i1 + 1)
            ]
            cand = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
        b = self.boxes[cand]
        hit = (b[:, 0] <= box[0, 2]) & (b[:, 2] >= box[0, 0]) & (b[:, 1] <= box[0, 3]) & (b[:, 3] >= box[0, 1])
        return cand[hit]


@dataclass(eq=False)
class BarrierSet:
    """Validated, indexed barrier geometry.  Immutable after construction."""

    polygons: list = field(default_factory=list)
    polylines: list = field(default_factory=list)

    def __post_init__(self):
        ax, ay, bx, by = [], [], [], []
        prev_x, prev_y, kind, owner = [], [], [], []
        has_prev = []
        for pi, (ext, holes) in enumerate(self.polygons):
            for ring in (ext, *holes):
                a, b = ring[:-1], ring[1:]
                prev = np.roll(a, 1, axis=0)
                ax.append(a[:, 0]); ay.append(a[:, 1]); bx.append(b[:, 0]); by.append(b[:, 1])
                prev_x.append(prev[:, 0]); prev_y.append(prev[:, 1])
                kind.append(np.zeros(len(a), dtype=np.int8))
                owner.append(np.full(len(a), pi))
                has_prev.append(np.ones(len(a), dtype=bool))
        for li, line in enumerate(self.polylines):
            a, b = line[:-1], line[1:]
            closed = len(line) > 2 and np.array_equal(line[0], line[-1])
            prev = np.roll(a, 1, axis=0)
            hp = np.ones(len(a), dtype=bool)
            if not closed:
                hp[0] = False
            ax.append(a[:, 0]); ay.append(a[:, 1]); bx.append(b[:, 0]); by.append(b[:, 1])
            prev_x.append(prev[:, 0]); prev_y.append(prev[:, 1])
            kind.append(np.ones(len(a), dtype=np.int8))
            owner.append(np.full(len(a), li))
            has_prev.append(hp)

        def cat(parts, dtype=float):
            return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

        self._ax, self._ay, self._bx, self._by = cat(ax), cat(ay), cat(bx), cat(by)
        self._px, self._py = cat(prev_x), cat(prev_y)
        self._kind = cat(kind, np.int8)
        self._owner = cat(owner, np.int64)
        self._has_prev = cat(has_prev, bool)
        # convexity of the polygon vertex sitting at each edge start
        self._convex = orient(self._px, self._py, self._ax, self._ay, self._bx, self._by) >= 0
        boxes = np.column_stack([
            np.minimum(self._ax, self._bx), np.minimum(self._ay, self._by),
            np.maximum(self._ax, self._bx), np.maximum(self._ay, self._by),
        ]) if len(self._ax) else np.zeros((0, 4))
        self.index = EdgeIndex(boxes)
        self._poly_edges = [np.flatnonzero((self._kind == 0) & (self._owner == i)) for i in range(len(self.polygons))]
        self._poly_boxes = np.array([
            [ext[:, 0].min(), ext[:, 1].min(), ext[:, 0].max(), ext[:, 1].max()]
            for ext, _ in self.polygons
        ]).reshape(-1, 4)

    @property
    def edge_count(self) -> int:
        return len(self._ax)

    @property
    def is_empty(self) -> bool:
        return self.edge_count == 0

    def edges(self) -> np.ndarray:
        """All barrier edges as an (E, 4) array of ``ax, ay, bx, by``."""
        return np.column_stack([self._ax, self._ay, self._bx, self._by])

    def bounds(self):
        if self.is_empty:
            return None
        b = self.index.boxes
        return b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()

    def to_wkt(self) -> list[str]:
        """Serialize back to one WKT geometry per line."""
        def fmt(ring):
            return ", ".join(f"{float(x)!r} {float(y)!r}" for x, y in ring)

        lines = []
        for ext, holes in self.polygons:
            rings = ", ".join(f"({fmt(r)})" for r in (ext, *holes))
            lines.append(f"POLYGON ({rings})")
        for line in self.polylines:
            lines.append(f"LINESTRING ({fmt(line)})")
        return lines

    # ------------------------------------------------------------------
    # point containment

    def _inside_polygons(self, pts: np.ndarray):
        """Return (strictly_inside, on_boundary) boolean arrays for points."""
        n = len(pts)
        strict = np.zeros(n, dtype=bool)
        boundary = np.zeros(n, dtype=bool)
        for pi, eidx in enumerate(self._poly_edges):
            box = self._poly_boxes[pi]
            sel = np.flatnonzero(
                (pts[:, 0] >= box[0]) & (pts[:, 0] <= box[2]) & (pts[:, 1] >= box[1]) & (pts[:, 1] <= box[3])
            )
            if len(sel) == 0:
                continue
            x = pts[sel, 0][:, None]
            y = pts[sel, 1][:, None]
            ax, ay = self._ax[eidx][None, :], self._ay[eidx][None, :]
            bx, by = self._bx[eidx][None, :], self._by[eidx][None, :]
            o = orient(ax, ay, bx, by, x, y)
            on_edge = (o == 0) & (x >= np.minimum(ax, bx)) & (x <= np.maximum(ax, bx)) \
                & (y >= np.minimum(ay, by)) & (y <= np.maximum(ay, by))
            up = (ay <= y) & (by > y) & (o > 0)
            down = (by <= y) & (ay > y) & (o < 0)
            odd = (np.count_nonzero(up | down, axis=1) % 2) == 1
            onb = on_edge.any(axis=1)
            strict[sel] |= odd & ~onb
            boundary[sel] |= onb
        return strict, boundary

    def _on_polyline(self, pts: np.ndarray) -> np.ndarray:
        lines = np.flatnonzero(self._kind == 1)
        if len(lines) == 0 or len(pts) == 0:
            return np.zeros(len(pts), dtype=bool)
        x = pts[:, 0][:, None]
        y = pts[:, 1][:, None]
        ax, ay = self._ax[lines][None, :], self._ay[lines][None, :]
        bx, by = self._bx[lines][None, :], self._by[lines][None, :]
        o = orient(ax, ay, bx, by, x, y)
        on = (o == 0) & (x >= np.minimum(ax, bx)) & (x <= np.maximum(ax, bx)) \
            & (y >= np.minimum(ay, by)) & (y <= np.maximum(ay, by))
        return on.any(axis=1)

    def contains(self, points) -> np.ndarray:
        """Vectorized closed-region containment for an (n, 2) array."""
        pts = as_points(points)
        if self.is_empty:
            return np.zeros(len(pts), dtype=bool)
        strict, boundary = self._inside_polygons(pts)
        return strict | boundary | self._on_polyline(pts)

    # ------------------------------------------------------------------
    # segment visibility

    def blocked(self, p, q) -> np.ndarray:
        """Vectorized ``segment_blocked`` over paired endpoint arrays.

        ``p`` may be a single point (broadcast against every ``q``).
        Degenerate pairs (p == q) are reported as not blocked.
        """
        Q = as_points(q, "q")
        P = as_points(p, "p")
        if len(P) == 1 and len(Q) > 1:
            P = np.broadcast_to(P, Q.shape)
        if P.shape != Q.shape:
            raise ValueError("p and q must have matching shapes")
        out = np.zeros(len(P), dtype=bool)
        if self.is_empty or len(P) == 0:
            return out
        lo = np.minimum(P, Q)
        hi = np.maximum(P, Q)
        cand = self.index.query(lo[:, 0].min(), lo[:, 1].min(), hi[:, 0].max(), hi[:, 1].max())
        if len(cand):
            ebox = self.index.boxes[cand]
            pad = REL_TOL * (1.0 + np.abs(ebox).max())
            touch = (lo[:, None, 0] <= ebox[None, :, 2] + pad) & (hi[:, None, 0] >= ebox[None, :, 0] - pad) \
                & (lo[:, None, 1] <= ebox[None, :, 3] + pad) & (hi[:, None, 1] >= ebox[None, :, 1] - pad)
            rows = np.flatnonzero(touch.any(axis=1))
            if len(rows):
                out[rows] = self._blocked_core(P[rows], Q[rows], cand, touch[rows])
        # an endpoint strictly inside a polygon blocks every segment from it
        if self.polygons:
            for E in (P, Q):
                uniq, inv = np.unique(E, axis=0, return_inverse=True)
                strict, _ = self._inside_polygons(uniq)
                out |= strict[inv.ravel()]
        out &= np.any(P != Q, axis=1)
        return out

    def _blocked_core(self, P, Q, cand, touch):
        px, py = P[:, 0][:, None], P[:, 1][:, None]
        qx, qy = Q[:, 0][:, None], Q[:, 1][:, None]
        ax, ay = self._ax[cand][None, :], self._ay[cand][None, :]
        bx, by = self._bx[cand][None, :], self._by[cand][None, :]
        vx, vy = self._px[cand][None, :], self._py[cand][None, :]
        is_poly = (self._kind[cand] == 0)[None, :]
        has_prev = self._has_prev[cand][None, :]
        convex = self._convex[cand][None, :]

        s_a = orient(px, py, qx, qy, ax, ay)
        s_b = orient(px, py, qx, qy, bx, by)
        s_p = orient(ax, ay, bx, by, px, py)
        s_q = orient(ax, ay, bx, by, qx, qy)

        proper = (s_a * s_b < 0) & (s_p * s_q < 0)

        dx, dy = qx - px, qy - py
        L2 = dx * dx + dy * dy
        eps = REL_TOL * L2
        da = (ax - px) * dx + (ay - py) * dy
        db = (bx - px) * dx + (by - py) * dy
        collinear = (s_a == 0) & (s_b == 0)
        lo = np.maximum(0.0, np.minimum(da, db))
        hi = np.minimum(L2, np.maximum(da, db))
        overlap = collinear & (hi - lo > eps)

        hit = proper | overlap

        # endpoint lying in the relative interior of a polygon edge
        ex, ey = bx - ax, by - ay
        e2 = ex * ex + ey * ey
        etol = REL_TOL * e2
        tp = (px - ax) * ex + (py - ay) * ey
        tq = (qx - ax) * ex + (qy - ay) * ey
        p_on = (s_p == 0) & (tp > etol) & (tp < e2 - etol)
        q_on = (s_q == 0) & (tq > etol) & (tq < e2 - etol)
        hit |= is_poly & ((p_on & (s_q > 0)) | (q_on & (s_p > 0)))

        # vertex at the start of each candidate edge, relative to the segment
        v_line = s_a == 0
        v_open = v_line & (da > eps) & (da < L2 - eps)
        v_at_p = v_line & (np.abs(da) <= eps)
        v_at_q = v_line & (np.abs(da - L2) <= eps)

        # interior wedge test for polygon vertices (interior on the left)
        def enters(x, y):
            l1 = orient(vx, vy, ax, ay, x, y) > 0
            l2 = orient(ax, ay, bx, by, x, y) > 0
            return np.where(convex, l1 & l2, l1 | l2)

        to_q = enters(qx, qy)
        to_p = enters(px, py)
        hit |= is_poly & ((v_open & (to_q | to_p)) | (v_at_p & to_q) | (v_at_q & to_p))

        # polyline crossed through an interior vertex
        s_prev = orient(px, py, qx, qy, vx, vy)
        hit |= ~is_poly & has_prev & v_open & (s_prev * s_b < 0)

        return np.any(hit & touch, axis=1)

    def overlap_length(self, p, q) -> float:
        """Length of the segment (p, q) lying inside barrier polygons."""
        P = as_points(p)[0]
        Q = as_points(q)[0]
        if not self.polygons or np.array_equal(P, Q):
            return 0.0
        d = Q - P
        ts = [0.0, 1.0]
        lo, hi = np.minimum(P, Q), np.maximum(P, Q)
        cand = self.index.query(lo[0], lo[1], hi[0], hi[1])
        cand = cand[self._kind[cand] == 0]
        for e in cand:
            a = np.array([self._ax[e], self._ay[e]])
            b = np.array([self._bx[e], self._by[e]])
            r = b - a
            den = d[0] * r[1] - d[1] * r[0]
            w = a - P
            if den != 0:
                t = (w[0] * r[1] - w[1] * r[0]) / den
                u = (w[0] * d[1] - w[1] * d[0]) / den
                if 0 <= t <= 1 and 0 <= u <= 1:
                    ts.append(float(t))
            else:
                L2 = float(d @ d)
                ts.extend(float(np.clip((v - P) @ d / L2, 0, 1)) for v in (a, b))
        ts = np.unique(np.clip(ts, 0, 1))
        mids = P + np.outer((ts[:-1] + ts[1:]) / 2, d)
        if len(mids) == 0:
            return 0.0
        strict, boundary = self._inside_polygons(mids)
        inside = strict | boundary
        return float(np.sum(np.diff(ts)[inside]) * np.hypot(*d))


def load_barriers(rings: Iterable = (), polylines: Iterable = ()) -> BarrierSet:
    """Validate and index barrier geometry.

    Parameters
    ----------
    rings : iterable
        Closed polygon rings, each a sequence of (x, y) with first == last,
        or :class:`PolygonRings` for polygons with holes.
    polylines : iterable
        Open (or closed) polylines treated as zero-width barriers.
    """
    polygons = []
    for i, item in enumerate(rings):
        if isinstance(item, PolygonRings):
            ext, holes = item.exterior, item.holes
        else:
            ext, holes = item, ()
        ext = _clean_ring(ext, f"ring {i}")
        if _ring_area2(ext) < 0:
            ext = ext[::-1].copy()
        clean_holes = []
        for j, h in enumerate(holes):
            h = _clean_ring(h, f"ring {i} hole {j}")
            if _ring_area2(h) > 0:
                h = h[::-1].copy()
            clean_holes.append(h)
        polygons.append((ext, tuple(clean_holes)))
    lines = [_clean_polyline(line, f"polyline {i}") for i, line in enumerate(polylines)]
    return BarrierSet(polygons, lines)


EMPTY = load_barriers()


def _point(p, name):
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.shape != (2,):
        raise ValueError(f"{name} must be an (x, y) pair")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} has a NaN or infinite coordinate")
    return arr


def segment_blocked(p, q, barriers: BarrierSet) -> bool:
    """Whether the straight segment from ``p`` to ``q`` is blocked."""
    p = _point(p, "p")
    q = _point(q, "q")
    return bool(barriers.blocked(p, q[None, :])[0])


def point_in_barrier(p, barriers: BarrierSet) -> bool:
    """Closed-region containment of a single point."""
    return bool(barriers.contains(_point(p, "p")[None, :])[0])


@dataclass(frozen=True)
class EscapeGrid:
    center: np.ndarray
    half_length: float
    step: float
    points: np.ndarray


def build_escape_grid(center, crossing_neighbors, min_step: float | None = None) -> EscapeGrid:
    """Lattice used to route an isolated location around barriers.

    The square is centred at ``center`` with half-width equal to the largest
    distance to a crossing neighbour, and spacing equal to the smallest
    overlap length.  ``min_step`` optionally floors the spacing to bound the
    lattice size.  Points are sorted by distance to the centre, ties broken
    in row-major lattice order.
    """
    c = _point(center, "center")
    if len(crossing_neighbors) == 0:
        raise EmptyNeighborInfo("escape grid needs at least one crossing neighbour")
    locs = np.array([_point(loc, "neighbour") for loc, _ in crossing_neighbors])
    overlaps = np.array([float(ov) for _, ov in crossing_neighbors])
    if not np.all(np.isfinite(overlaps)):
        raise NonFinite("overlap length is not finite")
    if np.any(overlaps <= 0):
        raise ValueError("overlap lengths must be positive")
    half = float(np.max(np.hypot(*(locs - c).T)))
    step = float(np.min(overlaps))
    if min_step is not None:
        step = max(step, float(min_step))
    if half < step:
        half = step
    n = int(np.floor(half / step * (1 + 1e-12)))
    ticks = np.arange(-n, n + 1)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    r2 = gx * gx + gy * gy
    order = np.lexsort((gy, gx, r2))
    pts = c + step * np.column_stack([gx[order], gy[order]]).astype(float)
    return EscapeGrid(center=c, half_length=half, step=step, points=pts)
