"""Barrier files: one WKT geometry per line (POLYGON, MULTIPOLYGON, LINESTRING)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import shapely
from shapely.errors import ShapelyError

from .errors import BoraError, WktError
from .geometry import BarrierSet, PolygonRings, load_barriers

SUPPORTED = ("Polygon", "MultiPolygon", "LineString", "MultiLineString")


def parse_wkt_lines(lines) -> BarrierSet:
    rings, polylines = [], []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        try:
            geom = shapely.from_wkt(text)
        except (ShapelyError, ValueError) as exc:
            raise WktError(lineno, f"unparseable WKT ({exc})") from None
        if geom is None or geom.geom_type not in SUPPORTED:
            kind = None if geom is None else geom.geom_type
            raise WktError(lineno, f"unsupported geometry type {kind}")
        if geom.is_empty:
            raise WktError(lineno, "empty geometry")
        parts = list(getattr(geom, "geoms", [geom]))
        try:
            for part in parts:
                if part.geom_type == "Polygon":
                    ext = np.asarray(part.exterior.coords)[:, :2]
                    holes = [np.asarray(h.coords)[:, :2] for h in part.interiors]
                    # validate each polygon now so the error carries the line number
                    load_barriers([PolygonRings(ext, holes)])
                    rings.append(PolygonRings(ext, holes))
                else:
                    coords = np.asarray(part.coords)[:, :2]
                    load_barriers(polylines=[coords])
                    polylines.append(coords)
        except BoraError as exc:
            raise WktError(lineno, str(exc)) from None
    return load_barriers(rings, polylines)


def read_barriers(path) -> BarrierSet:
    """Load a barrier WKT file; ``None`` yields the empty (free) domain."""
    if path is None:
        return load_barriers()
    with open(Path(path), encoding="utf-8") as fh:
        return parse_wkt_lines(fh)


def write_barriers(barriers: BarrierSet, path) -> None:
    Path(path).write_text("\n".join(barriers.to_wkt()) + "\n", encoding="utf-8")
