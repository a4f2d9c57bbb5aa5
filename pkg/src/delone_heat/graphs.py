"""Combinatorial and metric graphs over a neighbor relation.

The combinatorial graph carries the hop metric ``d_c`` and counting measure;
the metric graph glues intervals of length ``|x - y|`` at the vertices and
carries the path-length metric ``d_m`` and the length measure. Points inside
an edge are addressed as ``EdgePoint(edge, offset)`` with the offset measured
from the smaller endpoint id. Plain ``int`` locations are vertices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any

import networkx as nx
import numpy as np
from numpy.typing import NDArray
from scipy.special import gamma

from .config import get_settings
from .exceptions import InvalidInputError
from .exports import export_to_csv
from .geometry.neighbors import NeighborRelation, Pair, sample_pairs
from .geometry.pointset import Window
from .logging import get_logger
from .utils import track_performance

logger = get_logger(__name__)


class BallMode(Enum):
    """Metric used to count vertices in a ball."""

    COMBINATORIAL = "dc"
    METRIC = "dm"


@dataclass(frozen=True, slots=True)
class EdgePoint:
    edge: int
    offset: float


Location = EdgePoint | int


@dataclass(frozen=True, slots=True)
class EdgeSegment:
    """Sub-interval ``[start, end]`` of an edge, offsets from the smaller endpoint."""

    edge: int
    start: float
    end: float

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True, slots=True)
class BallValue:
    """Ball size and whether the ball may reach past the relation domain."""

    value: float
    truncated: bool


@dataclass(frozen=True, eq=False)
class CombinatorialGraph:
    """Vertices of the point set, edges of the relation, counting measure."""

    relation: NeighborRelation

    @property
    def graph(self) -> nx.Graph:
        return self.relation.graph

    @property
    def domain(self) -> Window:
        return self.relation.domain

    @property
    def S(self) -> float:
        return self.relation.S

    def boundary_distance(self, x: int) -> float:
        return float(self.domain.boundary_distance(self.relation.pointset.point(x))[0])


@dataclass(frozen=True, eq=False)
class MetricGraph:
    """Metric edges ``e_(x, y)`` of length ``|x - y|`` with optional per-edge density."""

    relation: NeighborRelation
    density: dict[Pair, float] | None = None

    @property
    def graph(self) -> nx.Graph:
        return self.relation.graph

    @property
    def domain(self) -> Window:
        return self.relation.domain

    @cached_property
    def edges(self) -> list[Pair]:
        return sorted(self.relation.pairs)

    @cached_property
    def edge_index(self) -> dict[Pair, int]:
        return {pair: k for k, pair in enumerate(self.edges)}

    @cached_property
    def lengths(self) -> NDArray[np.float64]:
        return np.array([self.relation.distance(a, b) for a, b in self.edges], dtype=np.float64)

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    def edge_id(self, a: int, b: int) -> int:
        try:
            return self.edge_index[(min(a, b), max(a, b))]
        except KeyError:
            raise InvalidInputError(f"({a}, {b}) is not an edge of the metric graph")

    def edge_density(self, edge: int) -> float:
        if self.density is None:
            return 1.0
        return float(self.density.get(self.edges[edge], 1.0))

    def at_vertex(self, x: int) -> EdgePoint:
        """Address of vertex ``x`` as an end of its first incident edge."""
        nbrs = self.relation.neighbors(x)
        if not nbrs:
            raise InvalidInputError(f"vertex {x} has no incident edge")
        e = self.edge_id(x, nbrs[0])
        return EdgePoint(e, 0.0 if self.edges[e][0] == x else float(self.lengths[e]))

    def _check(self, loc: EdgePoint) -> float:
        if not 0 <= loc.edge < len(self.edges):
            raise InvalidInputError(f"unknown edge id {loc.edge}")
        length = float(self.lengths[loc.edge])
        tol = get_settings().length_tolerance * self.relation.pointset.scale
        if not -tol <= loc.offset <= length + tol:
            raise InvalidInputError(f"offset {loc.offset} outside edge {loc.edge} of length {length}")
        return length

    def anchors(self, loc: Location) -> list[tuple[int, float]]:
        """Vertices bounding ``loc`` with the distance along the host edge."""
        if isinstance(loc, EdgePoint):
            length = self._check(loc)
            u, v = self.edges[loc.edge]
            t = min(max(loc.offset, 0.0), length)
            return [(u, t), (v, length - t)]
        self.relation.pointset.point(loc)
        return [(int(loc), 0.0)]

    def position(self, loc: Location) -> NDArray[np.float64]:
        ps = self.relation.pointset
        if isinstance(loc, EdgePoint):
            length = self._check(loc)
            u, v = self.edges[loc.edge]
            return np.asarray(ps.point(u) + (ps.point(v) - ps.point(u)) * (loc.offset / length))
        return np.asarray(ps.point(loc))

    def boundary_distance(self, loc: Location) -> float:
        return float(self.domain.boundary_distance(self.position(loc))[0])

    def vertex_distances(self, loc: Location, cutoff: float | None = None) -> dict[int, float]:
        """``d_m`` from ``loc`` to every vertex within ``cutoff``."""
        best: dict[int, float] = {}
        for u, d0 in self.anchors(loc):
            if cutoff is not None and d0 > cutoff:
                continue
            reach = nx.single_source_dijkstra_path_length(
                self.graph,
                u,
                cutoff=None if cutoff is None else cutoff - d0,
                weight="length",
            )
            for w, d in reach.items():
                if d0 + d < best.get(w, math.inf):
                    best[w] = d0 + d
        return best


def dc(graph: CombinatorialGraph, x: int, y: int) -> float:
    """Hop distance; ``math.inf`` when ``y`` is unreachable."""
    try:
        return float(nx.shortest_path_length(graph.graph, int(x), int(y)))
    except nx.NetworkXNoPath:
        logger.warning("vertices are not connected", x=x, y=y)
        return math.inf
    except nx.NodeNotFound:
        raise InvalidInputError(f"unknown vertex in ({x}, {y})")


def dm(mgraph: MetricGraph, a: Location, b: Location) -> float:
    """Path-length distance between two points of the metric graph."""
    da = mgraph.vertex_distances(a)
    best = min((da.get(u, math.inf) + d for u, d in mgraph.anchors(b)), default=math.inf)
    if isinstance(a, EdgePoint) and isinstance(b, EdgePoint) and a.edge == b.edge:
        best = min(best, abs(a.offset - b.offset))
    if math.isinf(best):
        logger.warning("points are not connected", a=str(a), b=str(b))
    return best


def ball_count_c(graph: CombinatorialGraph, x: int, s: float, mode: BallMode = BallMode.COMBINATORIAL) -> BallValue:
    """Number of vertices within distance ``s`` of ``x`` under ``d_c`` or ``d_m``."""
    if s < 0:
        raise InvalidInputError(f"ball radius must be nonnegative, got {s}")
    bd = graph.boundary_distance(x)
    if mode is BallMode.COMBINATORIAL:
        reach = nx.single_source_shortest_path_length(graph.graph, int(x), cutoff=math.floor(s))
        return BallValue(float(len(reach)), graph.S * s > bd)
    reach_m = nx.single_source_dijkstra_path_length(graph.graph, int(x), cutoff=s, weight="length")
    return BallValue(float(len(reach_m)), s > bd)


def _union(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[tuple[float, float]] = []
    for lo, hi in sorted(intervals):
        if hi <= lo:
            continue
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def ball_subgraph(mgraph: MetricGraph, a: Location, s: float) -> list[EdgeSegment]:
    """The closed ball ``B_s(a)`` as edge segments; cut points are segment ends."""
    if s < 0:
        raise InvalidInputError(f"ball radius must be nonnegative, got {s}")
    dist = mgraph.vertex_distances(a, cutoff=s)
    host = a if isinstance(a, EdgePoint) else None
    touched = {mgraph.edge_id(u, w) for u in dist for w in mgraph.graph.neighbors(u)}
    if host is not None:
        touched.add(host.edge)
    segments: list[EdgeSegment] = []
    for e in sorted(touched):
        u, v = mgraph.edges[e]
        length = float(mgraph.lengths[e])
        intervals: list[tuple[float, float]] = []
        if u in dist:
            intervals.append((0.0, min(length, s - dist[u])))
        if v in dist:
            intervals.append((max(0.0, length - (s - dist[v])), length))
        if host is not None and host.edge == e:
            intervals.append((max(0.0, host.offset - s), min(length, host.offset + s)))
        segments.extend(EdgeSegment(e, lo, hi) for lo, hi in _union(intervals))
    return segments


def ball_measure_m(mgraph: MetricGraph, a: Location, s: float) -> BallValue:
    """Length measure of ``B_s(a)``, partial edges counted exactly."""
    total = sum(seg.length for seg in ball_subgraph(mgraph, a, s))
    return BallValue(total, s > mgraph.boundary_distance(a))


def ball_growth_exponent(radii: list[float] | NDArray[np.float64], measures: list[float] | NDArray[np.float64]) -> float:
    """Least-squares slope of ``log mu`` against ``log s``."""
    s = np.asarray(radii, dtype=np.float64)
    mu = np.asarray(measures, dtype=np.float64)
    if len(s) < 2:
        raise InvalidInputError("need at least two radii to fit a growth exponent")
    slope, _ = np.polyfit(np.log(s), np.log(mu), 1)
    return float(slope)


def write_ball_growth(radii: list[float], measures: list[float], path: Path) -> None:
    export_to_csv([{"s": s, "mu": mu} for s, mu in zip(radii, measures, strict=True)], path, fieldnames=["s", "mu"])


def write_metric_edges(mgraph: MetricGraph, path: Path) -> None:
    rows = [
        {"edge_id": k, "id_a": a, "id_b": b, "length": float(mgraph.lengths[k])} for k, (a, b) in enumerate(mgraph.edges)
    ]
    export_to_csv(rows, path, fieldnames=["edge_id", "id_a", "id_b", "length"])


def ball_volume(dim: int, radius: float) -> float:
    """Lebesgue measure of the Euclidean ball of ``radius`` in ``R^dim``."""
    if dim == 0:
        return 1.0
    return float(math.pi ** (dim / 2) / gamma(dim / 2 + 1) * radius**dim)


def equivalence_constant(S: float, r: float, dim: int) -> float:
    """``C = (σ + |B_{S+r}| / (2r)) / |B_r|`` with ``σ`` the (N-1)-ball volume of radius ``S + r``."""
    sigma = ball_volume(dim - 1, S + r)
    return (sigma + ball_volume(dim, S + r) / (2.0 * r)) / ball_volume(dim, r)


@dataclass(slots=True)
class EquivalenceReport:
    """Sampled distance ratios against the bounds ``d <= d_m <= S d_c`` and ``d_c <= C d``."""

    samples: int
    seed: int
    S: float
    r: float
    C: float
    max_dm_over_d: float
    min_dm_over_d: float
    max_dc_S_over_dm: float
    max_dc_over_d: float
    violations: list[dict[str, Any]]
    unreachable: int
    measure_radius: float | None = None
    counting_measure_range: list[float] | None = None
    length_measure_range: list[float] | None = None
    convention: str = "d_c hop count, d_m path length, d Euclidean"

    @property
    def passed(self) -> bool:
        return not self.violations and self.unreachable == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "samples": self.samples,
            "seed": self.seed,
            "S": self.S,
            "r": self.r,
            "C": self.C,
            "max_dm_over_d": self.max_dm_over_d,
            "min_dm_over_d": self.min_dm_over_d,
            "max_dc_S_over_dm": self.max_dc_S_over_dm,
            "max_dc_over_d": self.max_dc_over_d,
            "violations": self.violations,
            "unreachable": self.unreachable,
            "measure_radius": self.measure_radius,
            "counting_measure_range": self.counting_measure_range,
            "length_measure_range": self.length_measure_range,
            "convention": self.convention,
        }


def _measure_ranges(
    rel: NeighborRelation,
    centers: list[int],
    s: float,
) -> tuple[list[float] | None, list[float] | None]:
    cg, mg = CombinatorialGraph(rel), MetricGraph(rel)
    volume = ball_volume(rel.pointset.dim, s)
    counting, length = [], []
    for x in centers:
        count = ball_count_c(cg, x, s, BallMode.METRIC)
        if not count.truncated:
            counting.append(count.value / volume)
            length.append(ball_measure_m(mg, x, s).value / volume)
    if not counting:
        return None, None
    return [min(counting), max(counting)], [min(length), max(length)]


@track_performance
def equivalence_constants(
    rel: NeighborRelation,
    samples: int,
    seed: int,
    margin: float = 0.0,
    pairs: list[Pair] | None = None,
    measure_radius: float | None = None,
) -> EquivalenceReport:
    """Compare ``d``, ``d_m`` and ``d_c`` on sampled interior pairs.

    ``pairs`` replaces the random sample when given. Distances from each
    distinct source are computed once.

    Raises:
        InvalidInputError: no Delone parameters known for the relation

    """
    params = rel.params or rel.pointset.params
    if params is None:
        raise InvalidInputError("the equivalence constant needs Delone parameters; estimate them first")
    chosen = pairs if pairs is not None else sample_pairs(rel.interior_ids(margin), samples, seed)
    chosen = [(int(x), int(y)) for x, y in chosen if x != y]
    C = equivalence_constant(rel.S, params.r, rel.pointset.dim)
    tol = get_settings().length_tolerance * rel.pointset.scale
    hops: dict[int, dict[int, int]] = {}
    paths: dict[int, dict[int, float]] = {}
    ratios: dict[str, list[float]] = {"dm_d": [], "dcS_dm": [], "dc_d": []}
    violations: list[dict[str, Any]] = []
    unreachable = 0
    for x, y in chosen:
        if x not in hops:
            hops[x] = nx.single_source_shortest_path_length(rel.graph, x)
            paths[x] = nx.single_source_dijkstra_path_length(rel.graph, x, weight="length")
        d = rel.distance(x, y)
        if y not in hops[x]:
            unreachable += 1
            continue
        d_c, d_m = float(hops[x][y]), float(paths[x][y])
        ratios["dm_d"].append(d_m / d)
        ratios["dcS_dm"].append(d_c * rel.S / d_m)
        ratios["dc_d"].append(d_c / d)
        if not (d <= d_m + tol and d_m <= rel.S * d_c + tol and d_c <= C * d + tol):
            violations.append({"x": x, "y": y, "d": d, "d_m": d_m, "d_c": d_c})
    if unreachable:
        logger.warning("sampled pairs not connected", count=unreachable)
    s_measure = measure_radius if measure_radius is not None else 3.0 * rel.S
    centers = sorted({x for x, _ in chosen})
    counting_range, length_range = _measure_ranges(rel, centers, s_measure)
    report = EquivalenceReport(
        samples=len(chosen),
        seed=seed,
        S=rel.S,
        r=params.r,
        C=C,
        max_dm_over_d=max(ratios["dm_d"], default=math.nan),
        min_dm_over_d=min(ratios["dm_d"], default=math.nan),
        max_dc_S_over_dm=max(ratios["dcS_dm"], default=math.nan),
        max_dc_over_d=max(ratios["dc_d"], default=math.nan),
        violations=violations,
        unreachable=unreachable,
        measure_radius=s_measure,
        counting_measure_range=counting_range,
        length_measure_range=length_range,
    )
    logger.info("compared graph metrics", samples=len(chosen), C=C, max_dc_over_d=report.max_dc_over_d, passed=report.passed)
    return report
