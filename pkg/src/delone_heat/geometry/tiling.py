"""Two-dimensional tiling systems: Voronoi cells and user-supplied convex tiles.

Voronoi cells are built by clipping a bounding square successively with the
bisector half-planes of all points within 2R. Contacts between cells
(shared edge length, or a touching corner) are computed once and feed both
the facet relation and the corner-inclusive canonical relation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from ..config import get_settings
from ..exceptions import BoundaryCellError, InvalidInputError, UnsupportedDimensionError, WindowTooSmallError
from ..exports import export_to_csv, export_to_json, read_json
from ..logging import get_logger
from ..utils import monitor_long_running, track_performance
from .pointset import DeloneParams, PointSet, Window

logger = get_logger(__name__)

MERGE_TOL = 1e-12


def _cross(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.asarray(a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])


def shoelace_area(vertices: NDArray[np.float64]) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_halfplane(vertices: NDArray[np.float64], normal: NDArray[np.float64], offset: float, scale: float = 1.0) -> NDArray[np.float64]:
    """Keep the part of a convex polygon where ``p · normal <= offset``."""
    if len(vertices) == 0:
        return vertices
    side = vertices @ normal - offset
    tol = MERGE_TOL * scale * float(np.linalg.norm(normal))
    if np.all(side <= tol):
        return vertices
    if np.all(side >= -tol):
        return np.empty((0, 2))
    out: list[NDArray[np.float64]] = []
    m = len(vertices)
    for i in range(m):
        p, q = vertices[i], vertices[(i + 1) % m]
        sp, sq = side[i], side[(i + 1) % m]
        if sp <= tol:
            out.append(p)
        if (sp < -tol and sq > tol) or (sp > tol and sq < -tol):
            out.append(p + (q - p) * (sp / (sp - sq)))
    return _merge_vertices(np.array(out), scale)


def _merge_vertices(vertices: NDArray[np.float64], scale: float) -> NDArray[np.float64]:
    if len(vertices) < 2:
        return vertices
    keep = [vertices[0]]
    for v in vertices[1:]:
        if np.linalg.norm(v - keep[-1]) > MERGE_TOL * scale:
            keep.append(v)
    if len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= MERGE_TOL * scale:
        keep.pop()
    return np.array(keep)


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Convex polygon with counterclockwise vertices."""

    vertices: NDArray[np.float64]

    def __post_init__(self) -> None:
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 2)
        if len(v) < 3:
            raise InvalidInputError(f"polygon needs at least 3 vertices, got {len(v)}")
        if shoelace_area(v) < 0:
            v = v[::-1].copy()
        area = shoelace_area(v)
        if not area > 0:
            raise InvalidInputError("polygon has no positive area")
        edges = np.roll(v, -1, axis=0) - v
        turns = _cross(edges, np.roll(edges, -1, axis=0))
        if np.any(turns < -1e-9 * area):
            raise InvalidInputError("polygon is not convex")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return shoelace_area(self.vertices)

    @property
    def edges(self) -> NDArray[np.float64]:
        """Array of shape (m, 2, 2) with the start and end of every edge."""
        return np.stack([self.vertices, np.roll(self.vertices, -1, axis=0)], axis=1)

    def inradius_about(self, point: NDArray[np.float64]) -> float:
        """Distance from ``point`` to the nearest edge line (negative if outside)."""
        e = self.edges
        d = e[:, 1] - e[:, 0]
        signed = _cross(d, point - e[:, 0]) / np.linalg.norm(d, axis=1)
        return float(signed.min())

    def circumradius_about(self, point: NDArray[np.float64]) -> float:
        return float(np.linalg.norm(self.vertices - point, axis=1).max())

    def clip_to_window(self, window: Window) -> NDArray[np.float64]:
        v = self.vertices
        c, h = np.asarray(window.center), window.half_width
        for axis in range(2):
            n = np.zeros(2)
            n[axis] = 1.0
            v = clip_halfplane(v, n, c[axis] + h)
            v = clip_halfplane(v, -n, -(c[axis] - h))
        return v

    def to_dict(self) -> dict[str, Any]:
        return {"vertices": self.vertices.tolist(), "area": self.area}


def _point_segment_distances(points: NDArray[np.float64], edges: NDArray[np.float64]) -> NDArray[np.float64]:
    a = edges[None, :, 0, :]
    d = edges[None, :, 1, :] - a
    rel = points[:, None, :] - a
    t = np.clip(np.sum(rel * d, axis=2) / np.sum(d * d, axis=2), 0.0, 1.0)
    return np.asarray(np.linalg.norm(rel - t[..., None] * d, axis=2))


def shared_boundary(p: ConvexPolygon, q: ConvexPolygon, tol: float) -> float | None:
    """Length of ``p ∩ q`` when the polygons touch along edges or corners, else None.

    Corner-only contact returns 0.0. Interiors are assumed disjoint.
    """
    ep, eq = p.edges, q.edges
    if min(_point_segment_distances(p.vertices, eq).min(), _point_segment_distances(q.vertices, ep).min()) > tol:
        return None
    length = 0.0
    for a0, a1 in ep:
        d = a1 - a0
        la = float(np.linalg.norm(d))
        u = d / la
        off = np.abs(_cross(u, eq - a0))
        on_line = np.all(off <= tol, axis=1)
        for b0, b1 in eq[on_line]:
            s0, s1 = sorted((float(np.dot(b0 - a0, u)), float(np.dot(b1 - a0, u))))
            length += max(0.0, min(la, s1) - max(0.0, s0))
    return length


@dataclass(frozen=True, eq=False)
class TilingReport:
    """Invariant checks of a tiling system."""

    containment_violations: list[int]
    overlapping_pairs: list[tuple[int, int]]
    coverage_defect: float
    area_tolerance: float

    @property
    def passed(self) -> bool:
        return not self.containment_violations and not self.overlapping_pairs and self.coverage_defect <= self.area_tolerance

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "containment_violations": self.containment_violations,
            "overlapping_pairs": [list(p) for p in self.overlapping_pairs],
            "coverage_defect": self.coverage_defect,
            "area_tolerance": self.area_tolerance,
        }


@dataclass(frozen=True, eq=False)
class TilingSystem:
    """Tiles with distinguished points for the points inside ``cell_window``."""

    pointset: PointSet
    cells: dict[int, ConvexPolygon]
    params: DeloneParams
    cell_window: Window
    source: str = "voronoi"
    meta: dict[str, Any] = field(default_factory=dict)

    def cell(self, point_id: int) -> ConvexPolygon:
        try:
            return self.cells[int(point_id)]
        except KeyError:
            raise BoundaryCellError(f"point {point_id} has no computed cell (outside the cell window)")

    @cached_property
    def contacts(self) -> dict[tuple[int, int], float]:
        """Shared boundary length of every touching cell pair ``(a, b)``, ``a < b``."""
        ps = self.pointset
        tol = get_settings().length_tolerance * ps.scale
        ids = sorted(self.cells)
        rows = np.array([ps.index[i] for i in ids])
        found: dict[tuple[int, int], float] = {}
        neighborhoods = ps.tree.query_ball_point(ps.coords[rows], 2.0 * self.params.R * (1 + 1e-9) + tol)
        for a, near in zip(ids, neighborhoods, strict=True):
            for k in near:
                b = int(ps.ids[k])
                if b <= a or b not in self.cells:
                    continue
                length = shared_boundary(self.cells[a], self.cells[b], tol)
                if length is not None:
                    found[(a, b)] = length
        logger.debug("computed cell contacts", cells=len(ids), contacts=len(found))
        return found

    def coverage_defect(self) -> float:
        """|area(W') - Σ area(V_x ∩ W')| for W' the cell window shrunk by R."""
        inner = self.cell_window.shrink(self.params.R)
        total = 0.0
        for poly in self.cells.values():
            clipped = poly.clip_to_window(inner)
            if len(clipped) >= 3:
                total += shoelace_area(clipped)
        return abs(inner.volume - total)

    def validate(self) -> TilingReport:
        """Check ball containment, disjoint interiors on touching pairs, and coverage."""
        ps = self.pointset
        tol = get_settings().length_tolerance * ps.scale
        violations = [
            i
            for i, poly in sorted(self.cells.items())
            if poly.inradius_about(ps.point(i)) < self.params.r - tol
            or poly.circumradius_about(ps.point(i)) > self.params.R + tol
        ]
        overlapping: list[tuple[int, int]] = []
        for a, b in self.contacts:
            clipped = self.cells[a].vertices
            for e0, e1 in self.cells[b].edges:
                d = e1 - e0
                normal = np.array([d[1], -d[0]])
                clipped = clip_halfplane(clipped, normal, float(normal @ e0), ps.scale)
                if len(clipped) < 3:
                    break
            if len(clipped) >= 3 and shoelace_area(clipped) > 1e-9 * ps.scale**2:
                overlapping.append((a, b))
        inner_area = self.cell_window.shrink(self.params.R).volume
        return TilingReport(
            containment_violations=violations,
            overlapping_pairs=overlapping,
            coverage_defect=self.coverage_defect(),
            area_tolerance=1e-9 * max(inner_area, 1.0),
        )


def _voronoi_cell(x: NDArray[np.float64], others: NDArray[np.float64], R: float, scale: float) -> NDArray[np.float64]:
    box = x + 2.0 * R * np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    for y in others:
        normal = y - x
        box = clip_halfplane(box, normal, float(normal @ (x + y)) / 2.0, scale)
    return box


@track_performance
@monitor_long_running(threshold_seconds=30.0)
def voronoi_cells_2d(ps: PointSet, params: DeloneParams, margin: float, order_seed: int | None = None) -> TilingSystem:
    """Voronoi cells of the points in the window shrunk by ``margin``.

    Each cell intersects the bisector half-planes of exactly the points within
    distance 2R. ``order_seed`` shuffles the clipping order (the result must not
    depend on it).

    Raises:
        UnsupportedDimensionError: dimension other than 2
        WindowTooSmallError: margin below 2R

    """
    if ps.dim != 2:
        raise UnsupportedDimensionError(f"exact Voronoi cells are implemented for N=2 only, got N={ps.dim}")
    if margin < 2.0 * params.R:
        raise WindowTooSmallError(f"margin {margin} is below 2R = {2.0 * params.R}; cells are not locally determined")
    cell_window = ps.window.shrink(margin)
    rng = np.random.default_rng(order_seed) if order_seed is not None else None
    cells: dict[int, ConvexPolygon] = {}
    rows = np.flatnonzero(cell_window.contains(ps.coords))
    neighborhoods = ps.tree.query_ball_point(ps.coords[rows], 2.0 * params.R * (1 + 1e-12))
    for row, near in zip(rows, neighborhoods, strict=True):
        idx = np.array(sorted(k for k in near if k != row), dtype=np.int64)
        if rng is not None:
            rng.shuffle(idx)
        vertices = _voronoi_cell(ps.coords[row], ps.coords[idx], params.R, ps.scale)
        cells[int(ps.ids[row])] = ConvexPolygon(vertices)
    logger.info("computed Voronoi cells", cells=len(cells), margin=margin)
    return TilingSystem(pointset=ps, cells=cells, params=params, cell_window=cell_window, source="voronoi", meta={"margin": margin})


def tiling_from_polygons(
    ps: PointSet,
    polygons: dict[int, NDArray[np.float64] | list[list[float]]],
    params: DeloneParams,
    cell_window: Window | None = None,
    source: str = "polygons",
) -> TilingSystem:
    """Tiling system from user-supplied convex tiles keyed by point id."""
    if ps.dim != 2:
        raise UnsupportedDimensionError(f"polygon tilings are two-dimensional, got N={ps.dim}")
    cells: dict[int, ConvexPolygon] = {}
    for point_id, vertices in polygons.items():
        ps.point(point_id)
        cells[int(point_id)] = ConvexPolygon(np.asarray(vertices, dtype=np.float64))
    return TilingSystem(
        pointset=ps,
        cells=cells,
        params=params,
        cell_window=cell_window if cell_window is not None else ps.window,
        source=source,
    )


def default_eps_len(ts: TilingSystem) -> float:
    return get_settings().length_tolerance * ts.pointset.scale


def facet_adjacency(ts: TilingSystem, eps_len: float | None = None) -> dict[tuple[int, int], float]:
    """Cell pairs sharing a boundary segment longer than ``eps_len``, with that length."""
    eps = default_eps_len(ts) if eps_len is None else eps_len
    return {pair: length for pair, length in ts.contacts.items() if length > eps}


def cell_volume(ts: TilingSystem, point_id: int) -> float:
    """Area of the tile of ``point_id`` (shoelace formula)."""
    return ts.cell(point_id).area


def write_cells(ts: TilingSystem, path: Path) -> None:
    data = {
        "params": ts.params.to_dict(),
        "cell_window": ts.cell_window.to_dict(),
        "source": ts.source,
        "cells": [{"id": i, **poly.to_dict()} for i, poly in sorted(ts.cells.items())],
    }
    export_to_json(data, path)


def write_adjacency(adjacency: dict[tuple[int, int], float], path: Path) -> None:
    rows = [{"id_a": a, "id_b": b, "shared_length": length} for (a, b), length in sorted(adjacency.items())]
    export_to_csv(rows, path, fieldnames=["id_a", "id_b", "shared_length"])


def read_cells(ps: PointSet, path: Path) -> TilingSystem:
    data = read_json(path)
    return tiling_from_polygons(
        ps,
        {int(c["id"]): c["vertices"] for c in data["cells"]},
        DeloneParams.from_dict(data["params"]),
        Window.from_dict(data["cell_window"]),
        source=data.get("source", "voronoi"),
    )


def hexagon_area(spacing: float) -> float:
    """Area of the Voronoi cell of a triangular lattice."""
    return math.sqrt(3.0) / 2.0 * spacing**2
