"""Volume doubling, Poincaré and Gaussian envelope checks.

Balls use the intrinsic metric of each space: hop distance on combinatorial
graphs, path length on metric graphs. Balls that may reach past the relation
domain are excluded from every statistic and counted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import networkx as nx
import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .exceptions import InsufficientSamplesError, InvalidInputError, WindowTooSmallError
from .exports import export_to_csv
from .graphs import (
    BallMode,
    BallValue,
    CombinatorialGraph,
    EdgePoint,
    Location,
    MetricGraph,
    ball_count_c,
    ball_measure_m,
    ball_subgraph,
)
from .heat.discrete import KernelSamples
from .heat.metric import GraphMesh, MetricKernelSamples, assemble_fem, eigenpairs, mesh
from .logging import get_logger
from .utils import track_performance

logger = get_logger(__name__)

BALL_CONVENTION = "balls in the intrinsic metric: d_c on combinatorial graphs, d_m on metric graphs"


def _vertex(center: Location) -> int:
    if isinstance(center, EdgePoint):
        raise InvalidInputError("balls of a combinatorial graph are centered at vertices")
    return int(center)


class SpaceTag(Enum):
    DISCRETE = "discrete"
    METRIC = "metric"


@dataclass(frozen=True, eq=False)
class DiscreteBallSpace:
    """Combinatorial graph with counting measure and ``d_c`` balls."""

    graph: CombinatorialGraph
    tag: SpaceTag = SpaceTag.DISCRETE

    def measure(self, center: Location, s: float) -> BallValue:
        return ball_count_c(self.graph, _vertex(center), s, BallMode.COMBINATORIAL)


@dataclass(frozen=True, eq=False)
class MetricBallSpace:
    """Metric graph with length measure and ``d_m`` balls; ``delta_max`` meshes balls for the Poincaré scan."""

    mgraph: MetricGraph
    delta_max: float
    tag: SpaceTag = SpaceTag.METRIC

    def measure(self, center: Location, s: float) -> BallValue:
        return ball_measure_m(self.mgraph, center, s)


BallSpace = DiscreteBallSpace | MetricBallSpace


def sample_centers(ids: list[int], count: int, seed: int) -> list[int]:
    """``count`` distinct ids (all of them when fewer), drawn with ``default_rng(seed)``."""
    if not ids:
        raise WindowTooSmallError("no interior points to draw ball centers from")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ids), size=min(count, len(ids)), replace=False)
    return sorted(ids[int(k)] for k in picked)


def _location_key(center: Location) -> Any:
    return [center.edge, center.offset] if isinstance(center, EdgePoint) else int(center)


@dataclass(slots=True)
class DoublingReport:
    """Ratios ``μ(B_2s) / μ(B_s)`` over untruncated balls."""

    space: SpaceTag
    centers: int
    s_grid: list[float]
    L: float
    max_ratio: float
    nu_hat: float
    excluded: int
    ratios: list[dict[str, Any]] = field(default_factory=list)
    convention: str = BALL_CONVENTION

    @property
    def passed(self) -> bool:
        return bool(self.ratios) and math.isfinite(self.max_ratio) and all(r["ratio"] >= 1.0 for r in self.ratios)

    def to_dict(self) -> dict[str, Any]:
        return {
            "space": self.space.value,
            "centers": self.centers,
            "s_grid": self.s_grid,
            "L": self.L,
            "max_ratio": self.max_ratio,
            "nu_hat": self.nu_hat,
            "excluded": self.excluded,
            "samples": len(self.ratios),
            "passed": self.passed,
            "convention": self.convention,
        }


@track_performance
def volume_doubling_scan(space: BallSpace, centers: list[Location], s_grid: list[float], L: float) -> DoublingReport:
    """Doubling ratios for every center and radius with an untruncated ``B_2s``.

    Raises:
        InvalidInputError: a radius outside ``(0, L/2]``
        WindowTooSmallError: every ball was truncated

    """
    if any(not 0 < s <= L / 2.0 for s in s_grid):
        raise InvalidInputError(f"radii must lie in (0, L/2] = (0, {L / 2.0}], got {s_grid}")
    rows: list[dict[str, Any]] = []
    excluded = 0
    for c in centers:
        for s in s_grid:
            big = space.measure(c, 2.0 * s)
            if big.truncated:
                excluded += 1
                continue
            small = space.measure(c, s)
            rows.append({"center": _location_key(c), "s": s, "mu_s": small.value, "mu_2s": big.value, "ratio": big.value / small.value})
    if not rows:
        raise WindowTooSmallError(f"all {excluded} doubling balls reach past the domain; enlarge the window")
    max_ratio = max(r["ratio"] for r in rows)
    report = DoublingReport(
        space=space.tag,
        centers=len(centers),
        s_grid=list(s_grid),
        L=L,
        max_ratio=max_ratio,
        nu_hat=math.log2(max_ratio),
        excluded=excluded,
        ratios=rows,
    )
    logger.info("volume doubling scan", space=space.tag.value, samples=len(rows), excluded=excluded, nu_hat=report.nu_hat)
    return report


@dataclass(slots=True)
class PoincareReport:
    """Optimal Poincaré constants ``1 / (s^2 λ_1)`` of sampled balls."""

    space: SpaceTag
    sup_c_p: float
    max_residual: float
    excluded_disconnected: int
    excluded_truncated: int
    balls: list[dict[str, Any]] = field(default_factory=list)
    convention: str = BALL_CONVENTION

    @property
    def passed(self) -> bool:
        return bool(self.balls) and math.isfinite(self.sup_c_p) and self.max_residual < 1e-8

    def to_dict(self) -> dict[str, Any]:
        return {
            "space": self.space.value,
            "sup_c_P": self.sup_c_p,
            "max_residual": self.max_residual,
            "excluded_disconnected": self.excluded_disconnected,
            "excluded_truncated": self.excluded_truncated,
            "samples": len(self.balls),
            "passed": self.passed,
            "convention": self.convention,
        }


def _variational_residual(
    u: NDArray[np.float64],
    lam: float,
    stiffness: NDArray[np.float64],
    mass: NDArray[np.float64],
) -> float:
    """``|∫|u - ū|^2 - (1/λ) ∫|u'|^2|`` relative to the left side."""
    ones = np.ones(len(u))
    mean = float(ones @ mass @ u) / float(ones @ mass @ ones)
    dev = u - mean
    lhs = float(dev @ mass @ dev)
    rhs = float(u @ stiffness @ u) / lam
    return abs(lhs - rhs) / max(lhs, 1e-300)


def _discrete_gap(graph: CombinatorialGraph, center: int, s: float) -> tuple[float, float, int] | None:
    members = nx.single_source_shortest_path_length(graph.graph, center, cutoff=math.floor(s))
    ball = graph.graph.subgraph(members)
    if ball.number_of_nodes() < 2 or not nx.is_connected(ball):
        return None
    nodes = sorted(ball.nodes)
    lap = nx.laplacian_matrix(ball, nodelist=nodes, weight=None).toarray().astype(np.float64)
    evals, evecs = scipy.linalg.eigh(lap, subset_by_index=[0, 1])
    lam = float(evals[1])
    residual = _variational_residual(evecs[:, 1], lam, lap, np.eye(len(nodes)))
    return lam, residual, len(nodes)


def _metric_gap(space: MetricBallSpace, center: Location, s: float) -> tuple[float, float, int] | None:
    segments = ball_subgraph(space.mgraph, center, s)
    fem = assemble_fem(mesh(space.mgraph, space.delta_max, segments))
    if fem.mesh.n_nodes < 3:
        return None
    spec = eigenpairs(fem, 2)
    lam = float(spec.values[1])
    if lam <= 0:
        return None
    residual = _variational_residual(spec.vectors[:, 1], lam, fem.K.toarray(), fem.M.toarray())
    return lam, residual, fem.mesh.n_nodes


@track_performance
def poincare_scan(space: BallSpace, centers: list[Location], s_grid: list[float]) -> PoincareReport:
    """Smallest nonzero Neumann eigenvalue of each ball and the constant ``1 / (s^2 λ_1)``.

    Discrete balls keep only edges internal to the ball; a disconnected ball
    is excluded and counted.
    """
    balls: list[dict[str, Any]] = []
    disconnected = truncated = 0
    for c in centers:
        for s in s_grid:
            if space.measure(c, s).truncated:
                truncated += 1
                continue
            if isinstance(space, DiscreteBallSpace):
                gap = _discrete_gap(space.graph, _vertex(c), s)
            else:
                gap = _metric_gap(space, c, s)
            if gap is None:
                disconnected += 1
                continue
            lam, residual, size = gap
            balls.append({"center": _location_key(c), "s": s, "lambda1": lam, "c_P": 1.0 / (s * s * lam), "residual": residual, "size": size})
    if disconnected:
        logger.warning("excluded disconnected balls", count=disconnected)
    report = PoincareReport(
        space=space.tag,
        sup_c_p=max((b["c_P"] for b in balls), default=math.nan),
        max_residual=max((b["residual"] for b in balls), default=math.nan),
        excluded_disconnected=disconnected,
        excluded_truncated=truncated,
        balls=balls,
    )
    logger.info("Poincare scan", space=space.tag.value, samples=len(balls), sup_c_P=report.sup_c_p)
    return report


@dataclass(frozen=True, slots=True)
class EnvelopeSample:
    """One kernel value with the distance and ball measure the envelope needs."""

    x: int
    y: int
    t: float
    p: float
    d: float
    mu: float
    truncated: bool = False
    certificate: float | None = None
    regime: bool = True

    @property
    def X(self) -> float:
        return self.d * self.d / self.t

    @property
    def Y(self) -> float:
        return math.log(self.p * self.mu)


@dataclass(slots=True)
class EnvelopeFit:
    """Fitted Gaussian envelope ``c1 e^{-c2 X} / μ <= p <= c3 e^{-c4 X} / μ`` with ``X = d^2 / t``."""

    space: SpaceTag
    admitted: int
    excluded: int
    a: float
    b: float
    c1: float
    c2: float
    c3: float
    c4: float
    distinct_slopes: bool
    envelope_holds: bool
    scatter: list[dict[str, Any]] = field(default_factory=list)
    max_spread: float | None = None
    convention: str = BALL_CONVENTION

    @property
    def spread(self) -> float:
        return math.log(self.c3 / self.c1)

    @property
    def passed(self) -> bool:
        ok = self.envelope_holds and min(self.c2, self.c4) > 0
        return ok and (self.max_spread is None or self.spread <= self.max_spread)

    def to_dict(self) -> dict[str, Any]:
        return {
            "space": self.space.value,
            "admitted": self.admitted,
            "excluded": self.excluded,
            "a": self.a,
            "b": self.b,
            "c1": self.c1,
            "c2": self.c2,
            "c3": self.c3,
            "c4": self.c4,
            "spread": self.spread,
            "max_spread": self.max_spread,
            "distinct_slopes": self.distinct_slopes,
            "envelope_holds": self.envelope_holds,
            "passed": self.passed,
            "convention": self.convention,
        }


def admit(sample: EnvelopeSample, space: SpaceTag, delta_max: float | None, certificate_tol: float) -> bool:
    """Whether a sample lies in the regime where the envelope is claimed."""
    if sample.truncated or sample.p <= 0 or sample.mu <= 0:
        return False
    if sample.certificate is not None and not sample.certificate < certificate_tol:
        return False
    if space is SpaceTag.DISCRETE:
        return sample.t > max(1.0, sample.d)
    return delta_max is None or sample.t >= delta_max * delta_max


def _line(X: NDArray[np.float64], Y: NDArray[np.float64]) -> tuple[float, float]:
    """Intercept ``a`` and slope ``b`` of ``Y = a - b X``; flat when ``X`` is constant."""
    if len(X) < 2 or np.ptp(X) == 0:
        return float(Y.mean()), 0.0
    slope, intercept = np.polyfit(X, Y, 1)
    return float(intercept), float(-slope)


@track_performance
def gaussian_envelope_fit(
    samples: list[EnvelopeSample],
    space: SpaceTag,
    min_samples: int = 10,
    delta_max: float | None = None,
    certificate_tol: float = 1e-6,
    distinct_slopes: bool = False,
    max_spread: float | None = None,
) -> EnvelopeFit:
    """Least-squares line through ``(X, log(p μ))`` and the envelope it induces.

    With a shared slope ``b`` the constants are ``c2 = c4 = b`` and
    ``c1, c3 = exp(a + min/max residual)``. With ``distinct_slopes`` the upper
    and lower slopes are refitted on the samples above and below the line.

    Raises:
        InsufficientSamplesError: fewer than ``min_samples`` admitted samples

    """
    admitted = [s for s in samples if admit(s, space, delta_max, certificate_tol)]
    excluded = len(samples) - len(admitted)
    if excluded:
        logger.info("excluded envelope samples outside the regime", count=excluded, space=space.value)
    if len(admitted) < max(min_samples, 1):
        raise InsufficientSamplesError(f"{len(admitted)} admitted samples, need at least {min_samples}")
    X = np.array([s.X for s in admitted])
    Y = np.array([s.Y for s in admitted])
    a, b = _line(X, Y)
    residual = Y - (a - b * X)
    if distinct_slopes and len(admitted) >= 4:
        _, b_up = _line(X[residual >= 0], Y[residual >= 0])
        _, b_low = _line(X[residual <= 0], Y[residual <= 0])
        c4, c2 = b_up, b_low
        c3 = math.exp(float(np.max(Y + c4 * X)))
        c1 = math.exp(float(np.min(Y + c2 * X)))
    else:
        c2 = c4 = b
        c3 = math.exp(a + float(residual.max()))
        c1 = math.exp(a + float(residual.min()))
    p = np.array([s.p for s in admitted])
    mu = np.array([s.mu for s in admitted])
    lower = c1 * np.exp(-c2 * X) / mu
    upper = c3 * np.exp(-c4 * X) / mu
    holds = bool(np.all(lower <= p * (1 + 1e-9)) and np.all(p <= upper * (1 + 1e-9)))
    fit = EnvelopeFit(
        space=space,
        admitted=len(admitted),
        excluded=excluded,
        a=a,
        b=b,
        c1=c1,
        c2=c2,
        c3=c3,
        c4=c4,
        distinct_slopes=distinct_slopes,
        envelope_holds=holds,
        scatter=[{"x_id": s.x, "y_id": s.y, "t": s.t, "X": s.X, "Y": s.Y} for s in admitted],
        max_spread=max_spread,
    )
    logger.info("fitted Gaussian envelope", space=space.value, admitted=len(admitted), b=b, spread=fit.spread)
    return fit


def envelope_samples_discrete(
    graph: CombinatorialGraph,
    kernels: list[KernelSamples],
    certificates: dict[int, float] | None = None,
) -> list[EnvelopeSample]:
    """Attach ``d_c`` and ``μ_c(B_√t(x))`` to discrete kernel values."""
    out: list[EnvelopeSample] = []
    for k in kernels:
        hops = nx.single_source_shortest_path_length(graph.graph, k.source)
        cert = (certificates or {}).get(k.source, k.certificate)
        balls = {t: ball_count_c(graph, k.source, math.sqrt(t)) for t in k.times}
        for i, t in enumerate(k.times):
            for j, y in enumerate(k.targets):
                d = float(hops.get(y, math.inf))
                out.append(
                    EnvelopeSample(
                        x=k.source,
                        y=y,
                        t=t,
                        p=float(k.values[i, j]),
                        d=d,
                        mu=balls[t].value,
                        truncated=balls[t].truncated,
                        certificate=cert,
                        regime=t > max(1.0, d),
                    ),
                )
    return out


def node_location(gmesh: GraphMesh, node: int) -> Location:
    """Vertex id for vertex nodes, edge point otherwise."""
    vertex = int(gmesh.node_vertex[node])
    if vertex >= 0:
        return vertex
    return EdgePoint(int(gmesh.node_edge[node]), float(gmesh.node_offset[node]))


def envelope_samples_metric(gmesh: GraphMesh, kernels: list[MetricKernelSamples]) -> list[EnvelopeSample]:
    """Attach ``d_m`` and ``μ_m(B_√t(x))`` to metric kernel values at mesh nodes."""
    mg = gmesh.mgraph
    out: list[EnvelopeSample] = []
    for k in kernels:
        src = node_location(gmesh, k.source)
        dist = mg.vertex_distances(src)
        balls = {t: ball_measure_m(mg, src, math.sqrt(t)) for t in k.times}
        target_d = []
        for y in k.targets:
            loc = node_location(gmesh, y)
            d = min((dist.get(u, math.inf) + off for u, off in mg.anchors(loc)), default=math.inf)
            if isinstance(src, EdgePoint) and isinstance(loc, EdgePoint) and src.edge == loc.edge:
                d = min(d, abs(src.offset - loc.offset))
            target_d.append(d)
        # same (time, target) order as the kernel rows
        for i, t in enumerate(k.times):
            for j, (y, d) in enumerate(zip(k.targets, target_d, strict=True)):
                out.append(
                    EnvelopeSample(
                        x=k.source,
                        y=y,
                        t=t,
                        p=float(k.values[i, j]),
                        d=d,
                        mu=balls[t].value,
                        truncated=balls[t].truncated,
                        certificate=k.certificate,
                        regime=t >= gmesh.delta_max**2,
                    ),
                )
    return out


def write_scatter(fit: EnvelopeFit, path: Path) -> None:
    export_to_csv(fit.scatter, path, fieldnames=["x_id", "y_id", "t", "X", "Y"])

