"""Neighbor relations over Delone sets and checks of their axioms.

A relation is stored as a set of id pairs ``(a, b)`` with ``a < b``; the
diagonal is implicit and never stored. ``S`` bounds every pair length.
Each relation carries the window on which it agrees with the relation of
the underlying infinite set (its domain); balls and interior statistics are
measured against that window.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any

import networkx as nx
import numpy as np

from ..config import get_settings
from ..exceptions import InvalidInputError, RelationAxiomError, WindowTooSmallError
from ..exports import export_to_csv, export_to_json, read_csv_rows, read_json
from ..logging import get_logger
from ..utils import track_performance
from .pointset import MARGIN_CONVENTION, DeloneParams, PointSet, Window
from .tiling import TilingSystem, default_eps_len, facet_adjacency, shared_boundary

logger = get_logger(__name__)


class RelationKind(Enum):
    """How a relation was obtained."""

    VORONOI = "voronoi"
    MAX = "max"
    CANONICAL = "canonical"
    INGEST = "ingest"


Pair = tuple[int, int]


def _canonical_pairs(pairs: Iterable[tuple[int, int]]) -> frozenset[Pair]:
    return frozenset((min(int(a), int(b)), max(int(a), int(b))) for a, b in pairs if int(a) != int(b))


def _one_way_pairs(pairs: Iterable[tuple[int, int]]) -> tuple[Pair, ...]:
    """Canonical pairs listed in only one direction of a directed edge list."""
    directed = {(int(a), int(b)) for a, b in pairs if int(a) != int(b)}
    return tuple(sorted({(min(a, b), max(a, b)) for a, b in directed if (b, a) not in directed}))


def _one_way_contacts(ts: TilingSystem, pairs: Iterable[Pair], eps_len: float | None) -> tuple[Pair, ...]:
    """Pairs whose contact is not found again when measured from the other cell."""
    tol = get_settings().length_tolerance * ts.pointset.scale
    out = []
    for a, b in sorted(pairs):
        length = shared_boundary(ts.cells[b], ts.cells[a], tol)
        if length is None or (eps_len is not None and length <= eps_len):
            out.append((a, b))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class NeighborRelation:
    """Symmetric neighbor relation with parameter ``S``.

    ``asymmetric`` lists the pairs the source of the relation (a directed
    edge list or the cell contacts) held in one direction only.
    """

    pointset: PointSet
    pairs: frozenset[Pair]
    S: float
    kind: RelationKind
    domain: Window
    params: DeloneParams | None = None
    flags: list[str] = field(default_factory=list)
    asymmetric: tuple[Pair, ...] = ()

    def __post_init__(self) -> None:
        if not self.S > 0:
            raise InvalidInputError(f"relation parameter S must be positive, got {self.S}")

    def __len__(self) -> int:
        return len(self.pairs)

    @cached_property
    def graph(self) -> nx.Graph:
        """Undirected graph on all point ids; edges carry ``length``."""
        g = nx.Graph()
        g.add_nodes_from(int(i) for i in self.pointset.ids)
        for a, b in sorted(self.pairs):
            g.add_edge(a, b, length=self.distance(a, b))
        return g

    def distance(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.pointset.point(a) - self.pointset.point(b)))

    def contains(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.pairs

    def neighbors(self, point_id: int) -> list[int]:
        return sorted(self.graph.neighbors(int(point_id)))

    def degree(self, point_id: int) -> int:
        return int(self.graph.degree(int(point_id)))

    def interior_ids(self, margin: float) -> list[int]:
        """Point ids inside the domain shrunk by ``margin``."""
        inner = self.domain.shrink(margin)
        mask = inner.contains(self.pointset.coords)
        return [int(i) for i in self.pointset.ids[mask]]

    def with_pairs(self, pairs: Iterable[tuple[int, int]]) -> NeighborRelation:
        """Same point set and parameters with a different pair set (used for ablations)."""
        return NeighborRelation(
            pointset=self.pointset,
            pairs=_canonical_pairs(pairs),
            S=self.S,
            kind=self.kind,
            domain=self.domain,
            params=self.params,
        )


def _realized_S(ps: PointSet, pairs: frozenset[Pair], fallback: float) -> float:
    if not pairs:
        return fallback
    idx = ps.index
    a = np.array([idx[p[0]] for p in pairs])
    b = np.array([idx[p[1]] for p in pairs])
    return float(np.linalg.norm(ps.coords[a] - ps.coords[b], axis=1).max())


def build_voronoi_relation(ts: TilingSystem, eps_len: float | None = None) -> NeighborRelation:
    """Pairs whose Voronoi cells share an edge longer than ``eps_len``."""
    pairs = _canonical_pairs(facet_adjacency(ts, eps_len))
    rel = NeighborRelation(
        pointset=ts.pointset,
        pairs=pairs,
        S=_realized_S(ts.pointset, pairs, 2.0 * ts.params.R),
        kind=RelationKind.VORONOI,
        domain=ts.cell_window,
        params=ts.params,
        flags=[] if pairs else ["empty relation"],
        asymmetric=_one_way_contacts(ts, pairs, default_eps_len(ts) if eps_len is None else eps_len),
    )
    logger.info("built Voronoi relation", pairs=len(pairs), S=rel.S)
    return rel


def build_canonical_relation(ts: TilingSystem) -> NeighborRelation:
    """Pairs whose cells intersect, corner contacts included."""
    pairs = _canonical_pairs(ts.contacts)
    rel = NeighborRelation(
        pointset=ts.pointset,
        pairs=pairs,
        S=_realized_S(ts.pointset, pairs, 2.0 * ts.params.R),
        kind=RelationKind.CANONICAL,
        domain=ts.cell_window,
        params=ts.params,
        flags=[] if pairs else ["empty relation"],
        asymmetric=_one_way_contacts(ts, pairs, None),
    )
    logger.info("built canonical relation", pairs=len(pairs), S=rel.S)
    return rel


def build_max_relation(ps: PointSet, R: float) -> NeighborRelation:
    """All pairs at distance at most ``2R``; ``S = 2R``."""
    if not R > 0:
        raise InvalidInputError(f"covering radius must be positive, got {R}")
    tol = get_settings().length_tolerance * ps.scale
    rows = ps.tree.query_pairs(2.0 * R + tol, output_type="ndarray")
    pairs = _canonical_pairs((int(ps.ids[a]), int(ps.ids[b])) for a, b in rows)
    rel = NeighborRelation(
        pointset=ps,
        pairs=pairs,
        S=2.0 * R,
        kind=RelationKind.MAX,
        domain=ps.window,
        params=ps.params,
        flags=[] if pairs else ["empty relation"],
    )
    logger.info("built maximal relation", pairs=len(pairs), S=rel.S)
    return rel


def ingest_relation(ps: PointSet, pairs: Iterable[tuple[int, int]], S: float, directed: bool = False) -> NeighborRelation:
    """Relation from an external edge list with declared ``S``.

    An undirected list names each pair once in either order. With ``directed``
    every pair must also appear reversed; pairs that do not are kept and
    reported as symmetry failures by :func:`validate_axioms`.

    Raises:
        InvalidInputError: unknown point id or nonpositive S
        RelationAxiomError: a pair longer than S

    """
    if not S > 0:
        raise InvalidInputError(f"relation parameter S must be positive, got {S}")
    listed = list(pairs)
    canonical = _canonical_pairs(listed)
    one_way = _one_way_pairs(listed) if directed else ()
    if one_way:
        logger.warning("directed edge list is not symmetric", one_way=len(one_way), first=list(one_way[0]))
    tol = get_settings().length_tolerance * ps.scale
    for a, b in sorted(canonical):
        d = float(np.linalg.norm(ps.point(a) - ps.point(b)))
        if d > S + tol:
            raise RelationAxiomError(f"pair ({a}, {b}) has length {d:.12g} > S = {S}", pair=(a, b), distance=d)
    flags = [] if canonical else ["empty relation"]
    if not canonical:
        logger.warning("ingested an empty relation; tube connectivity cannot hold")
    return NeighborRelation(
        pointset=ps,
        pairs=canonical,
        S=S,
        kind=RelationKind.INGEST,
        domain=ps.window,
        params=ps.params,
        flags=flags,
        asymmetric=one_way,
    )


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    dd = float(d @ d)
    t = np.zeros(len(points)) if dd == 0 else np.clip((points - a) @ d / dd, 0.0, 1.0)
    return np.asarray(np.linalg.norm(points - (a + t[:, None] * d), axis=1))


def tube_connected(rel: NeighborRelation, x: int, y: int, radius: float | None = None) -> bool:
    """True iff a neighbor path joins ``x`` and ``y`` inside ``[x, y] + B_radius``."""
    ps = rel.pointset
    s = rel.S if radius is None else radius
    px, py = ps.point(x), ps.point(y)
    reach = s + get_settings().length_tolerance * ps.scale
    rows = np.array(ps.tree.query_ball_point((px + py) / 2.0, float(np.linalg.norm(py - px)) / 2.0 + reach), dtype=np.int64)
    inside = rows[_segment_distance(ps.coords[rows], px, py) <= reach]
    tube = {int(i) for i in ps.ids[inside]}
    view = nx.subgraph_view(rel.graph, filter_node=lambda n: n in tube)
    return bool(nx.has_path(view, int(x), int(y)))


@dataclass(slots=True)
class AxiomReport:
    """Outcome of the symmetry, length and tube-connectivity checks."""

    pair_count: int
    S: float
    margin: float
    n2_samples: int
    seed: int
    tube_radius: float
    n0_failures: list[Pair]
    n1_failures: list[tuple[int, int, float]]
    n2_failures: list[Pair]
    flags: list[str]
    convention: str = MARGIN_CONVENTION

    @property
    def passed(self) -> bool:
        return not (self.n0_failures or self.n1_failures or self.n2_failures)

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "pair_count": self.pair_count,
            "S": self.S,
            "margin": self.margin,
            "flags": self.flags,
            "convention": self.convention,
            "N0": {"passed": not self.n0_failures, "failures": [list(p) for p in self.n0_failures]},
            "N1": {"passed": not self.n1_failures, "failures": [list(p) for p in self.n1_failures]},
            "N2": {
                "passed": not self.n2_failures,
                "samples": self.n2_samples,
                "seed": self.seed,
                "tube_radius": self.tube_radius,
                "failures": [list(p) for p in self.n2_failures],
            },
        }


def sample_pairs(ids: list[int], count: int, seed: int) -> list[Pair]:
    """``count`` ordered pairs of distinct ids drawn with ``default_rng(seed)``."""
    if len(ids) < 2:
        raise WindowTooSmallError(f"need at least 2 interior points to sample pairs, got {len(ids)}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        i, j = rng.choice(len(ids), size=2, replace=False)
        out.append((ids[int(i)], ids[int(j)]))
    return out


@track_performance
def validate_axioms(
    rel: NeighborRelation,
    margin: float,
    n2_samples: int,
    seed: int,
    tube_radius: float | None = None,
) -> AxiomReport:
    """Check symmetry and the length bound on every pair, tube connectivity on samples.

    Symmetry is judged on the source of the relation, which records the pairs
    it held in one direction only (see :attr:`NeighborRelation.asymmetric`).
    Tube connectivity is tested on ``n2_samples`` random interior pairs by a
    breadth-first search restricted to points within ``tube_radius`` (default
    ``S``) of the segment joining them.
    """
    n0 = sorted({*rel.asymmetric, *((a, b) for a, b in rel.pairs if a == b)})
    tol = get_settings().length_tolerance * rel.pointset.scale
    n1 = [(a, b, d) for a, b in sorted(rel.pairs) if (d := rel.distance(a, b)) > rel.S + tol]
    radius = rel.S if tube_radius is None else tube_radius
    samples = sample_pairs(rel.interior_ids(margin), n2_samples, seed)
    n2 = [(x, y) for x, y in samples if not tube_connected(rel, x, y, radius)]
    report = AxiomReport(
        pair_count=len(rel),
        S=rel.S,
        margin=margin,
        n2_samples=n2_samples,
        seed=seed,
        tube_radius=radius,
        n0_failures=n0,
        n1_failures=n1,
        n2_failures=n2,
        flags=list(rel.flags),
    )
    logger.info(
        "validated relation axioms",
        kind=rel.kind.value,
        passed=report.passed,
        n0_failures=len(n0),
        n1_failures=len(n1),
        n2_failures=len(n2),
        samples=n2_samples,
    )
    return report


@dataclass(slots=True)
class DegreeStats:
    """Interior degree statistics against the uniform bound ``((S + r) / r)^N``."""

    min: int
    max: int
    histogram: dict[int, int]
    bound: float
    interior_points: int
    min_pair_distance: float
    max_pair_distance: float
    lower_distance_bound: float
    S: float

    @property
    def passed(self) -> bool:
        tol = 1e-9 * max(self.S, 1.0)
        return (
            self.max <= self.bound
            and self.min_pair_distance >= self.lower_distance_bound - tol
            and self.max_pair_distance <= self.S + tol
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "min": self.min,
            "max": self.max,
            "histogram": {str(k): v for k, v in sorted(self.histogram.items())},
            "bound": self.bound,
            "interior_points": self.interior_points,
            "pair_distance_range": [self.min_pair_distance, self.max_pair_distance],
            "lower_distance_bound": self.lower_distance_bound,
            "S": self.S,
            "passed": self.passed,
        }


def degree_stats(rel: NeighborRelation, margin: float, params: DeloneParams | None = None) -> DegreeStats:
    """Degrees of the points in the domain shrunk by ``margin``.

    Raises:
        InvalidInputError: no Delone parameters known for the relation
        WindowTooSmallError: no interior points

    """
    p = params or rel.params or rel.pointset.params
    if p is None:
        raise InvalidInputError("degree bound needs Delone parameters; estimate them first")
    interior = rel.interior_ids(margin)
    if not interior:
        raise WindowTooSmallError(f"no points inside the relation domain shrunk by margin {margin}")
    degrees = [rel.degree(i) for i in interior]
    lengths = [rel.distance(a, b) for a, b in rel.pairs] or [float("nan")]
    stats = DegreeStats(
        min=min(degrees),
        max=max(degrees),
        histogram=dict(Counter(degrees)),
        bound=((rel.S + p.r) / p.r) ** rel.pointset.dim,
        interior_points=len(interior),
        min_pair_distance=float(np.nanmin(lengths)) if rel.pairs else float("inf"),
        max_pair_distance=float(np.nanmax(lengths)) if rel.pairs else 0.0,
        lower_distance_bound=2.0 * p.r,
        S=rel.S,
    )
    if stats.max > stats.bound:
        logger.warning("degree bound violated", max_degree=stats.max, bound=stats.bound)
    return stats


def voronoi_weights(
    ts: TilingSystem,
    rel: NeighborRelation,
    exponent: float = 0.0,
) -> tuple[dict[int, float], dict[Pair, float]]:
    """Vertex measure ``h(x) = |V_x|`` and edge weights ``b(x, y) = |x - y|^exponent``."""
    h = {i: poly.area for i, poly in ts.cells.items()}
    b = {pair: rel.distance(*pair) ** exponent for pair in sorted(rel.pairs)}
    return h, b


def write_relation(rel: NeighborRelation, path: Path) -> None:
    """Edge list CSV ``id_a,id_b,distance`` plus a JSON sidecar with ``S``, kind and domain."""
    rows = [{"id_a": a, "id_b": b, "distance": rel.distance(a, b)} for a, b in sorted(rel.pairs)]
    export_to_csv(rows, path, fieldnames=["id_a", "id_b", "distance"])
    export_to_json(
        {
            "S": rel.S,
            "kind": rel.kind.value,
            "domain": rel.domain.to_dict(),
            "params": rel.params.to_dict() if rel.params else None,
            "flags": rel.flags,
            "asymmetric": [list(p) for p in rel.asymmetric],
        },
        path.with_suffix(".json"),
    )


def read_edge_list(path: Path) -> list[Pair]:
    return [(int(row["id_a"]), int(row["id_b"])) for row in read_csv_rows(path)]


def read_relation(ps: PointSet, path: Path) -> NeighborRelation:
    """Inverse of :func:`write_relation`; the pairs are re-checked against ``S``."""
    meta = read_json(path.with_suffix(".json"))
    base = ingest_relation(ps, read_edge_list(path), float(meta["S"]))
    return NeighborRelation(
        pointset=ps,
        pairs=base.pairs,
        S=base.S,
        kind=RelationKind(meta["kind"]),
        domain=Window.from_dict(meta["domain"]),
        params=DeloneParams.from_dict(meta["params"]) if meta.get("params") else ps.params,
        flags=list(meta.get("flags", [])),
        asymmetric=tuple((int(a), int(b)) for a, b in meta.get("asymmetric", [])),
    )
