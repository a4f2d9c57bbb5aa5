"""Experiment configuration and the staged verification pipeline.

Each stage reads the files written by the stages before it from the output
directory and writes its own, so a full ``run`` and the stages invoked one by
one produce the same artifacts. Reports contain no timestamps; those go to
``provenance.json``.
"""

from __future__ import annotations

import asyncio
import importlib.metadata
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from datetime import UTC, datetime
from pathlib import Path
from typing import Any, Literal, Self

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .analysis import (
    DiscreteBallSpace,
    EnvelopeSample,
    MetricBallSpace,
    SpaceTag,
    envelope_samples_discrete,
    envelope_samples_metric,
    gaussian_envelope_fit,
    poincare_scan,
    sample_centers,
    volume_doubling_scan,
    write_scatter,
)
from .config import get_settings
from .exceptions import ConfigError, InvalidInputError, StageInputError, VerificationFailure
from .exports import export_to_json, read_csv_rows, read_json
from .geometry.neighbors import (
    NeighborRelation,
    RelationKind,
    build_canonical_relation,
    build_max_relation,
    build_voronoi_relation,
    degree_stats,
    ingest_relation,
    read_edge_list,
    read_relation,
    validate_axioms,
    voronoi_weights,
    write_relation,
)
from .geometry.penrose import generate_penrose, penrose_edge_pairs
from .geometry.pointset import (
    LatticeKind,
    PointSet,
    Window,
    estimate_delone_params,
    generate_jittered_lattice,
    generate_lattice,
    read_pointset,
    verify_delone,
    write_pointset,
)
from .geometry.tiling import TilingSystem, facet_adjacency, read_cells, voronoi_cells_2d, write_adjacency, write_cells
from .graphs import CombinatorialGraph, MetricGraph, equivalence_constants, write_metric_edges
from .heat.discrete import (
    BoundaryMode,
    KernelMethod,
    assemble,
    heat_kernels_concurrently,
    truncation_discrepancy,
    write_kernels,
)
from .heat.metric import (
    MetricMethod,
    assemble_fem,
    mesh,
    metric_heat_kernel,
    resolve_metric_method,
    spectral_expansion,
    write_mesh,
)
from .logging import bind_run, get_logger
from .utils import track_performance

logger = get_logger(__name__)

STAGES = ("generate", "relation", "validate", "heat", "analyze", "report")

FILES = {
    "config": "config.json",
    "points": "points.csv",
    "cells": "cells.json",
    "adjacency": "adjacency.csv",
    "relation": "relation.csv",
    "validation": "validation.json",
    "heat": "heat.csv",
    "heat_metric": "heat_metric.csv",
    "mesh": "mesh.csv",
    "metric_edges": "metric_edges.csv",
    "analysis": "analysis.json",
    "report": "report.json",
    "provenance": "provenance.json",
}

# Stage that writes each handoff file, for diagnostics.
PRODUCER = {
    "points": "generate",
    "cells": "relation",
    "relation": "relation",
    "validation": "validate",
    "heat": "heat",
    "heat_metric": "heat",
    "analysis": "analyze",
}


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeneratorSpec(_Spec):
    """Where the point set comes from."""

    kind: Literal["lattice", "jittered", "penrose", "file"]
    lattice: LatticeKind = LatticeKind.SQUARE
    spacing: float = Field(default=1.0, gt=0)
    half_width: float = Field(default=20.0, gt=0)
    dim: int = Field(default=2, ge=1, le=4)
    delta: float = Field(default=0.0, ge=0)
    offsets: list[float] | None = None
    seed: int | None = None
    path: Path | None = None
    estimate_margin: float = Field(default=2.0, ge=0)

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.kind in ("jittered", "penrose") and self.seed is None:
            raise ValueError(f"generator '{self.kind}' is stochastic and needs a seed")
        if self.kind == "file" and (self.path is None or not self.path.is_file()):
            raise ValueError(f"point set file {self.path} does not exist")
        if self.offsets is not None and len(self.offsets) != 5:
            raise ValueError(f"pentagrid needs 5 offsets, got {len(self.offsets)}")
        return self


class RelationSpec(_Spec):
    """Neighbor relation; ``margin`` is the tiling margin (default 2R).

    ``directed`` marks an ingested edge list that must list both directions.
    """

    kind: RelationKind = RelationKind.VORONOI
    margin: float | None = Field(default=None, ge=0)
    eps_len: float | None = Field(default=None, ge=0)
    R: float | None = Field(default=None, gt=0)
    edges: Path | None = None
    directed: bool = False
    penrose_edges: bool = False
    S: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.kind is RelationKind.INGEST:
            if self.edges is None and not self.penrose_edges:
                raise ValueError("an ingested relation needs 'edges' or 'penrose_edges'")
            if self.edges is not None and not self.edges.is_file():
                raise ValueError(f"edge list {self.edges} does not exist")
            if self.edges is not None and self.S is None:
                raise ValueError("an ingested edge list needs its parameter 'S'")
        return self


class WindowSpec(_Spec):
    """Margins inside the relation domain.

    ``analysis_margin`` keeps sampled pairs and ball centers away from the
    domain boundary; ``heat_margin`` shrinks the domain to the kernel window.
    """

    analysis_margin: float = Field(default=6.0, gt=0)
    heat_margin: float = Field(default=1.0, ge=0)


class OperatorSpec(_Spec):
    boundary: BoundaryMode = BoundaryMode.NEUMANN
    weights: Literal["unit", "voronoi"] = "unit"
    exponent: float = 0.0
    method: KernelMethod = KernelMethod.AUTO
    tol: float = Field(default=1e-12, gt=0)


class HeatSpec(_Spec):
    """Kernel sampling: sources, targets within ``target_radius`` hops, time grid."""

    times: list[float] = Field(default_factory=lambda: [2.0, 3.0, 4.0, 6.0, 8.0], min_length=1)
    sources: int = Field(default=1, ge=1)
    source_seed: int | None = None
    source_margin: float | None = Field(default=None, ge=0)
    target_radius: int = Field(default=8, ge=1)
    certificate: bool = True
    certificate_tol: float = Field(default=1e-6, gt=0)
    metric: bool = False
    delta_max: float | None = Field(default=None, gt=0)
    metric_times: list[float] | None = None
    metric_tol: float = Field(default=1e-6, gt=0)
    metric_method: MetricMethod = MetricMethod.AUTO

    @field_validator("times", "metric_times")
    @classmethod
    def _positive(cls, value: list[float] | None) -> list[float] | None:
        if value is not None and not all(math.isfinite(t) and t > 0 for t in value):
            raise ValueError(f"times must be positive reals, got {value}")
        return value

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.sources > 1 and self.source_seed is None:
            raise ValueError("sampling several kernel sources needs 'source_seed'")
        return self


class AnalysisSpec(_Spec):
    """Which checks run and the parameters they use."""

    delone: bool = True
    tiling: bool = True
    axioms: bool = True
    degree: bool = True
    equivalence: bool = True
    vd: bool = True
    pi: bool = True
    ge: bool = True
    spaces: list[SpaceTag] = Field(default_factory=lambda: [SpaceTag.DISCRETE], min_length=1)
    n2_samples: int = Field(default=500, ge=1)
    axiom_seed: int | None = None
    equivalence_samples: int = Field(default=200, ge=1)
    equivalence_seed: int | None = None
    centers: int = Field(default=20, ge=1)
    center_seed: int | None = None
    s_grid: list[float] | None = None
    max_nu: float | None = Field(default=None, gt=0)
    min_samples: int = Field(default=10, ge=1)
    max_spread: float | None = Field(default=4.0, gt=0)
    distinct_slopes: bool = False
    slope_ratio_bounds: tuple[float, float] | None = None

    @model_validator(mode="after")
    def _check(self) -> Self:
        needed = {
            "axiom_seed": self.axioms,
            "equivalence_seed": self.equivalence,
            "center_seed": self.vd or self.pi,
        }
        missing = [name for name, used in needed.items() if used and getattr(self, name) is None]
        if missing:
            raise ValueError(f"enabled sampling checks need seeds: {', '.join(missing)}")
        if self.slope_ratio_bounds is not None and not 0 < self.slope_ratio_bounds[0] <= self.slope_ratio_bounds[1]:
            raise ValueError(f"slope_ratio_bounds must satisfy 0 < low <= high, got {self.slope_ratio_bounds}")
        return self


class ExperimentConfig(_Spec):
    """One experiment: point set, relation, operator, kernels and checks."""

    name: str = "experiment"
    generator: GeneratorSpec
    relation: RelationSpec = Field(default_factory=RelationSpec)
    window: WindowSpec = Field(default_factory=WindowSpec)
    operator: OperatorSpec = Field(default_factory=OperatorSpec)
    heat: HeatSpec = Field(default_factory=HeatSpec)
    analysis: AnalysisSpec = Field(default_factory=AnalysisSpec)
    output: Path = Path("out")

    @model_validator(mode="after")
    def _check(self) -> Self:
        tiled = self.relation.kind in (RelationKind.VORONOI, RelationKind.CANONICAL)
        if self.operator.weights == "voronoi" and not tiled:
            raise ValueError("Voronoi weights need a voronoi or canonical relation")
        if self.relation.penrose_edges and self.generator.kind != "penrose":
            raise ValueError("'penrose_edges' needs the penrose generator")
        if SpaceTag.METRIC in self.analysis.spaces and self.analysis.ge and not self.heat.metric:
            raise ValueError("a metric envelope fit needs 'heat.metric' enabled")
        return self

    def with_seed(self, seed: int) -> ExperimentConfig:
        """Copy with every seed replaced by ``seed``."""
        return self.model_copy(
            update={
                "generator": self.generator.model_copy(update={"seed": seed}),
                "heat": self.heat.model_copy(update={"source_seed": seed}),
                "analysis": self.analysis.model_copy(
                    update={"axiom_seed": seed, "equivalence_seed": seed, "center_seed": seed},
                ),
            },
        )


def load_config(path: Path) -> ExperimentConfig:
    """Read and validate an experiment configuration.

    Raises:
        ConfigError: missing file, malformed JSON or schema violation

    """
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}:\n{e}")


def config_schema() -> dict[str, Any]:
    return ExperimentConfig.model_json_schema()


@dataclass(slots=True)
class Check:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


@dataclass(slots=True)
class RunReport:
    """Pass/fail of every enabled check."""

    name: str
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def summary(self) -> str:
        width = max((len(c.name) for c in self.checks), default=0)
        lines = [f"experiment: {self.name}"]
        lines += [f"  {c.name:<{width}}  {'PASS' if c.passed else 'FAIL'}  {c.detail}" for c in self.checks]
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'} ({len(self.checks) - len(self.failed)}/{len(self.checks)} checks)")
        return "\n".join(lines)

    def raise_for_failures(self) -> None:
        if self.failed:
            raise VerificationFailure(f"failed checks: {', '.join(c.name for c in self.failed)}")


def _sample_extra(samples: list[EnvelopeSample], certificates: list[float] | None = None) -> list[dict[str, Any]]:
    rows = []
    for k, s in enumerate(samples):
        row: dict[str, Any] = {"d": s.d, "mu": s.mu, "truncated": s.truncated, "regime": s.regime}
        if certificates is not None:
            row["certificate"] = certificates[k]
        rows.append(row)
    return rows


def _parse_bool(text: str) -> bool:
    return text.strip().lower() == "true"


def read_envelope_samples(path: Path) -> list[EnvelopeSample]:
    """Envelope samples from a kernel CSV with the ``d, mu, truncated, regime`` columns."""
    return [
        EnvelopeSample(
            x=int(row["x_id"]),
            y=int(row["y_id"]),
            t=float(row["t"]),
            p=float(row["p"]),
            d=float(row["d"]),
            mu=float(row["mu"]),
            truncated=_parse_bool(row["truncated"]),
            certificate=float(row["certificate"]) if row["certificate"] else None,
            regime=_parse_bool(row["regime"]),
        )
        for row in read_csv_rows(path)
    ]


def default_s_grid(margin: float) -> list[float]:
    """Radii ``1, 2, 4, ...`` up to ``margin / 2``."""
    grid = []
    s = 1.0
    while s <= margin / 2.0:
        grid.append(s)
        s *= 2.0
    if not grid:
        raise InvalidInputError(f"analysis margin {margin} leaves no radius s >= 1 with s <= margin/2")
    return grid


class Pipeline:
    """Runs the stages of one experiment against an output directory."""

    def __init__(self, config: ExperimentConfig, out: Path | None = None) -> None:
        self.config = config
        self.out = out if out is not None else config.output

    def path(self, key: str) -> Path:
        return self.out / FILES[key]

    def _require(self, key: str, stage: str) -> Path:
        p = self.path(key)
        if not p.is_file():
            raise StageInputError(stage, f"missing {p.name}; run stage '{PRODUCER.get(key, key)}' first")
        return p

    def _points(self, stage: str) -> PointSet:
        return read_pointset(self._require("points", stage))

    def _relation(self, stage: str) -> NeighborRelation:
        ps = self._points(stage)
        return read_relation(ps, self._require("relation", stage))

    def _tiling(self, ps: PointSet, stage: str) -> TilingSystem:
        return read_cells(ps, self._require("cells", stage))

    def _delta_max(self, rel: NeighborRelation) -> float:
        if self.config.heat.delta_max is not None:
            return self.config.heat.delta_max
        params = rel.params or rel.pointset.params
        if params is None:
            raise InvalidInputError("metric mesh width defaults to r/4 and needs Delone parameters")
        return params.r / 4.0

    def write_provenance(self, stage: str) -> None:
        """Append a stage record with timestamp, host and package versions."""
        path = self.path("provenance")
        records = read_json(path) if path.is_file() else []
        versions = {}
        for pkg in ("delone-heat", "numpy", "scipy", "networkx", "pydantic", "structlog"):
            try:
                versions[pkg] = importlib.metadata.version(pkg)
            except importlib.metadata.PackageNotFoundError:
                versions[pkg] = "unknown"
        records.append(
            {
                "stage": stage,
                "timestamp": datetime.now(UTC).isoformat(),
                "host": platform.node(),
                "platform": platform.platform(),
                "python": sys.version.split()[0],
                "versions": versions,
                "max_workers": get_settings().max_workers,
            },
        )
        export_to_json(records, path)

    @track_performance
    def generate(self) -> PointSet:
        g = self.config.generator
        window = Window.centered(g.half_width, g.dim)
        if g.kind == "lattice":
            ps = generate_lattice(g.lattice, g.spacing, window)
        elif g.kind == "jittered":
            ps = generate_jittered_lattice(g.lattice, g.spacing, window, g.delta, int(g.seed or 0))
        elif g.kind == "penrose":
            ps = generate_penrose(g.half_width, g.offsets, int(g.seed or 0))
        else:
            ps = read_pointset(Path(str(g.path)))
        if ps.params is None:
            ps = ps.with_params(estimate_delone_params(ps, g.estimate_margin))
        export_to_json(self.config.model_dump(mode="json"), self.path("config"))
        write_pointset(ps, self.path("points"))
        logger.info("stage generate", points=len(ps), r=ps.params.r if ps.params else None, R=ps.params.R if ps.params else None)
        return ps

    @track_performance
    def relation(self) -> NeighborRelation:
        spec = self.config.relation
        ps = self._points("relation")
        params = ps.params
        if params is None:
            raise InvalidInputError("point set carries no Delone parameters")
        if spec.kind in (RelationKind.VORONOI, RelationKind.CANONICAL):
            ts = voronoi_cells_2d(ps, params, spec.margin if spec.margin is not None else 2.0 * params.R)
            write_cells(ts, self.path("cells"))
            write_adjacency(facet_adjacency(ts, spec.eps_len), self.path("adjacency"))
            rel = build_voronoi_relation(ts, spec.eps_len) if spec.kind is RelationKind.VORONOI else build_canonical_relation(ts)
        elif spec.kind is RelationKind.MAX:
            rel = build_max_relation(ps, spec.R if spec.R is not None else params.R)
        elif spec.penrose_edges:
            pairs = penrose_edge_pairs(ps)
            lengths = [float(np.linalg.norm(ps.point(a) - ps.point(b))) for a, b in pairs]
            rel = ingest_relation(ps, pairs, spec.S if spec.S is not None else max(lengths, default=1.0))
        else:
            rel = ingest_relation(ps, read_edge_list(Path(str(spec.edges))), float(spec.S or 0.0), directed=spec.directed)
        write_relation(rel, self.path("relation"))
        logger.info("stage relation", kind=rel.kind.value, pairs=len(rel), S=rel.S)
        return rel

    @track_performance
    def validate(self) -> dict[str, Any]:
        a = self.config.analysis
        margin = self.config.window.analysis_margin
        rel = self._relation("validate")
        ps = rel.pointset
        report: dict[str, Any] = {"relation": {"kind": rel.kind.value, "pairs": len(rel), "S": rel.S}}
        if a.delone and ps.params is not None:
            report["delone"] = verify_delone(ps, ps.params, self.config.generator.estimate_margin).to_dict()
        if a.tiling and self.path("cells").is_file() and rel.kind in (RelationKind.VORONOI, RelationKind.CANONICAL):
            report["tiling"] = self._tiling(ps, "validate").validate().to_dict()
        if a.axioms:
            report["axioms"] = validate_axioms(rel, margin, a.n2_samples, int(a.axiom_seed or 0)).to_dict()
        if a.degree:
            report["degree"] = degree_stats(rel, margin).to_dict()
        if a.equivalence:
            report["equivalence"] = equivalence_constants(rel, a.equivalence_samples, int(a.equivalence_seed or 0), margin).to_dict()
        export_to_json(report, self.path("validation"))
        return report

    def _weights(self, rel: NeighborRelation) -> tuple[dict[int, float] | None, dict[tuple[int, int], float] | None]:
        op = self.config.operator
        if op.weights == "unit":
            return None, None
        return voronoi_weights(self._tiling(rel.pointset, "heat"), rel, op.exponent)

    def _sources(self, rel: NeighborRelation, kernel_window: Window) -> list[int]:
        spec = self.config.heat
        margin = spec.source_margin if spec.source_margin is not None else spec.target_radius * rel.S
        inner = kernel_window.shrink(margin)
        candidates = [int(i) for i in rel.pointset.ids[inner.contains(rel.pointset.coords)]]
        if not candidates:
            raise InvalidInputError(f"no kernel source lies {margin} inside the kernel window; enlarge the window")
        if spec.source_seed is None:
            coords = np.array([rel.pointset.point(i) for i in candidates])
            return [candidates[int(np.argmin(np.linalg.norm(coords - np.asarray(inner.center), axis=1)))]]
        return sample_centers(candidates, spec.sources, spec.source_seed)

    @track_performance
    def heat(self) -> dict[str, Any]:
        spec, opspec = self.config.heat, self.config.operator
        rel = self._relation("heat")
        kernel_window = rel.domain.shrink(self.config.window.heat_margin)
        h, b = self._weights(rel)
        op = assemble(rel, kernel_window, opspec.boundary, h, b)
        sources = self._sources(rel, kernel_window)
        targets = {
            x: sorted(y for y in nx.single_source_shortest_path_length(rel.graph, x, cutoff=spec.target_radius) if y in op.index)
            for x in sources
        }
        kernels = asyncio.run(heat_kernels_concurrently(op, sources, targets, spec.times, opspec.method, opspec.tol))
        certificates: list[float] | None = None
        if spec.certificate:
            certificates = []
            for k in kernels:
                gap = truncation_discrepancy(rel, k.source, k.targets, k.times, kernel_window, h, b, opspec.method)
                k.certificate = float(gap.max())
                certificates += [float(v) for v in gap.ravel()]
        samples = envelope_samples_discrete(CombinatorialGraph(rel), kernels)
        write_kernels(kernels, self.path("heat"), _sample_extra(samples, certificates))
        summary: dict[str, Any] = {
            "sources": sources,
            "samples": len(samples),
            "outside_regime": sum(not s.regime for s in samples),
            "certificate_max": max((k.certificate for k in kernels if k.certificate is not None), default=None),
        }
        if spec.metric:
            summary["metric"] = self._metric_heat(rel, sources)
        logger.info("stage heat", **{k: v for k, v in summary.items() if k != "metric"})
        return summary

    def _metric_heat(self, rel: NeighborRelation, sources: list[int]) -> dict[str, Any]:
        spec = self.config.heat
        mg = MetricGraph(rel)
        gmesh = mesh(mg, self._delta_max(rel))
        fem = assemble_fem(gmesh)
        times = spec.metric_times or spec.times
        method = resolve_metric_method(fem, spec.metric_method)
        spectrum = spectral_expansion(fem, min(times), spec.metric_tol) if method is MetricMethod.SPECTRAL else None
        radius = spec.target_radius * rel.S
        kernels = []
        for x in sources:
            near = mg.vertex_distances(x, cutoff=radius)
            targets = [gmesh.node_of_vertex(y) for y in sorted(near)]
            kernels.append(metric_heat_kernel(fem, gmesh.node_of_vertex(x), targets, times, spec.metric_tol, spectrum, method))
        samples = envelope_samples_metric(gmesh, kernels)
        write_kernels(kernels, self.path("heat_metric"), _sample_extra(samples))
        write_mesh(gmesh, self.path("mesh"))
        write_metric_edges(mg, self.path("metric_edges"))
        return {
            "nodes": gmesh.n_nodes,
            "delta_max": gmesh.delta_max,
            "method": method.value,
            "eigenpairs": 0 if spectrum is None else len(spectrum.values),
            "negative_values": sum(k.negative for k in kernels),
            "samples": len(samples),
        }

    @track_performance
    def analyze(self, only: set[str] | None = None) -> dict[str, Any]:
        """VD, PI and GE for each configured space; ``only`` restricts to a subset of ``{"vd", "pi", "ge"}``."""
        a = self.config.analysis
        enabled = {name for name in ("vd", "pi", "ge") if getattr(a, name)}
        if only:
            enabled &= only
        rel = self._relation("analyze")
        margin = self.config.window.analysis_margin
        s_grid = a.s_grid or default_s_grid(margin)
        centers = sample_centers(rel.interior_ids(margin), a.centers, int(a.center_seed or 0)) if enabled & {"vd", "pi"} else []
        result: dict[str, Any] = {"s_grid": s_grid, "L": margin, "centers": centers}
        for tag in a.spaces:
            space = DiscreteBallSpace(CombinatorialGraph(rel)) if tag is SpaceTag.DISCRETE else MetricBallSpace(MetricGraph(rel), self._delta_max(rel))
            part: dict[str, Any] = {}
            if "vd" in enabled:
                part["vd"] = volume_doubling_scan(space, list(centers), s_grid, margin).to_dict()
            if "pi" in enabled:
                part["pi"] = poincare_scan(space, list(centers), s_grid).to_dict()
            if "ge" in enabled:
                key = "heat" if tag is SpaceTag.DISCRETE else "heat_metric"
                samples = read_envelope_samples(self._require(key, "analyze"))
                fit = gaussian_envelope_fit(
                    samples,
                    tag,
                    min_samples=a.min_samples,
                    delta_max=self._delta_max(rel) if tag is SpaceTag.METRIC else None,
                    certificate_tol=self.config.heat.certificate_tol,
                    distinct_slopes=a.distinct_slopes,
                    max_spread=a.max_spread,
                )
                write_scatter(fit, self.out / f"ge_scatter_{tag.value}.csv")
                part["ge"] = fit.to_dict()
            result[tag.value] = part
        fits = [result.get(t.value, {}).get("ge") for t in (SpaceTag.DISCRETE, SpaceTag.METRIC)]
        if all(fits) and fits[1]["b"] > 0:
            result["slope_ratio"] = fits[0]["b"] / fits[1]["b"]
        export_to_json(result, self.path("analysis"))
        return result

    def report(self) -> RunReport:
        """Collect pass/fail per enabled check from the validation and analysis files."""
        a = self.config.analysis
        validation = read_json(self._require("validation", "report"))
        run = RunReport(self.config.name)
        if "delone" in validation:
            p = validation["delone"]["params"]
            run.checks.append(Check("delone", validation["delone"]["passed"], f"r={p['r']:.6g}, R={p['R']:.6g}"))
        if "tiling" in validation:
            run.checks.append(Check("tiling", validation["tiling"]["passed"], f"coverage defect {validation['tiling']['coverage_defect']:.2e}"))
        if "axioms" in validation:
            ax = validation["axioms"]
            run.checks.append(Check("axioms", ax["passed"], f"N0/N1/N2 on {ax['pair_count']} pairs, S={ax['S']:.6g}"))
        if "degree" in validation:
            dg = validation["degree"]
            run.checks.append(Check("degree", dg["passed"], f"degree {dg['min']}..{dg['max']} (bound {dg['bound']:.4g})"))
        if "equivalence" in validation:
            eq = validation["equivalence"]
            run.checks.append(Check("C-bound", eq["passed"], f"C={eq['C']:.4g}, max d_c/d={eq['max_dc_over_d']:.4g}"))
        if a.vd or a.pi or a.ge:
            analysis = read_json(self._require("analysis", "report"))
            for tag in a.spaces:
                part = analysis.get(tag.value, {})
                if "vd" in part:
                    nu = part["vd"]["nu_hat"]
                    ok = part["vd"]["passed"] and (a.max_nu is None or nu <= a.max_nu)
                    run.checks.append(Check(f"vd[{tag.value}]", ok, f"nu_hat={nu:.4g}"))
                if "pi" in part:
                    pi = part["pi"]
                    run.checks.append(Check(f"pi[{tag.value}]", pi["passed"], f"sup c_P={pi['sup_c_P']:.4g}, residual={pi['max_residual']:.2e}"))
                if "ge" in part:
                    ge = part["ge"]
                    run.checks.append(
                        Check(f"ge[{tag.value}]", ge["passed"], f"b={ge['b']:.4g}, spread={ge['spread']:.4g}, admitted={ge['admitted']}"),
                    )
            if a.slope_ratio_bounds is not None:
                low, high = a.slope_ratio_bounds
                ratio = analysis.get("slope_ratio")
                ok = ratio is not None and low <= ratio <= high
                detail = "no metric fit" if ratio is None else f"b_discrete/b_metric={ratio:.4g} in [{low:g}, {high:g}]"
                run.checks.append(Check("slope-ratio", ok, detail))
        export_to_json(run.to_dict(), self.path("report"))
        return run

    def run_stage(self, stage: str, only: set[str] | None = None) -> RunReport | None:
        """Run one stage; returns the report for the ``report`` stage."""
        if stage not in STAGES:
            raise InvalidInputError(f"unknown stage '{stage}', expected one of {', '.join(STAGES)}")
        with bind_run(self.config.name, stage):
            logger.info("running stage", out=str(self.out))
            self.out.mkdir(parents=True, exist_ok=True)
            self.write_provenance(stage)
            if stage == "generate":
                self.generate()
            elif stage == "relation":
                self.relation()
            elif stage == "validate":
                self.validate()
            elif stage == "heat":
                self.heat()
            elif stage == "analyze":
                self.analyze(only)
            else:
                return self.report()
        return None

    def run(self) -> RunReport:
        report: RunReport | None = None
        for stage in STAGES:
            report = self.run_stage(stage)
        assert report is not None
        return report
