"""Delone point sets: generation, parameter estimation and verification.

Finite windows stand in for infinite Delone sets. Every estimator takes a
margin and only looks at the window shrunk by it, so truncation artifacts
near the window boundary stay out of the reported numbers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from ..config import get_settings
from ..exceptions import InvalidInputError, InvalidPointSetError
from ..exports import export_to_csv, export_to_json, read_csv_rows, read_json
from ..logging import get_logger

logger = get_logger(__name__)

MARGIN_CONVENTION = (
    "statistics use only points and grid points inside the window shrunk by the margin; "
    "the finite patch stands in for the infinite set"
)


class LatticeKind(Enum):
    """Lattices available as test instances."""

    SQUARE = "square"
    TRIANGULAR = "triangular"


@dataclass(frozen=True, slots=True)
class Window:
    """Axis-aligned cube ``center + [-half_width, half_width]^N``."""

    center: tuple[float, ...]
    half_width: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.half_width) and self.half_width > 0):
            raise InvalidInputError(f"window half_width must be positive, got {self.half_width}")
        if not self.center or not all(math.isfinite(c) for c in self.center):
            raise InvalidInputError(f"window center must be a finite point, got {self.center}")

    @classmethod
    def centered(cls, half_width: float, dim: int = 2) -> Window:
        return cls(center=(0.0,) * dim, half_width=half_width)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        return float((2.0 * self.half_width) ** self.dim)

    def shrink(self, margin: float) -> Window:
        """Return the window with every face moved inwards by ``margin``."""
        if margin < 0:
            raise InvalidInputError(f"margin must be nonnegative, got {margin}")
        if margin >= self.half_width:
            raise InvalidInputError(f"margin {margin} leaves nothing of a window with half_width {self.half_width}")
        return Window(center=self.center, half_width=self.half_width - margin)

    def boundary_distance(self, points: NDArray[np.float64]) -> NDArray[np.float64]:
        """Euclidean distance from each point to the window boundary (negative outside)."""
        pts = np.atleast_2d(points)
        offset = np.abs(pts - np.asarray(self.center))
        return np.asarray(self.half_width - offset.max(axis=1), dtype=np.float64)

    def contains(self, points: NDArray[np.float64], tol: float = 0.0) -> NDArray[np.bool_]:
        return self.boundary_distance(points) >= -tol

    def to_dict(self) -> dict[str, Any]:
        return {"center": list(self.center), "half_width": self.half_width}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Window:
        return cls(center=tuple(float(c) for c in data["center"]), half_width=float(data["half_width"]))


@dataclass(frozen=True, slots=True)
class DeloneParams:
    """Packing radius ``r`` and covering radius ``R``.

    ``resolution`` is the grid pitch when ``R`` was estimated on a sample grid, 0 otherwise.
    """

    r: float
    R: float
    resolution: float = 0.0

    def __post_init__(self) -> None:
        if not (0 < self.r <= self.R):
            raise InvalidInputError(f"Delone parameters need 0 < r <= R, got r={self.r}, R={self.R}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> DeloneParams:
        return cls(r=float(data["r"]), R=float(data["R"]), resolution=float(data.get("resolution", 0.0)))


@dataclass(frozen=True, eq=False)
class PointSet:
    """A finite window of a Delone set.

    Points are stored row-wise in ``coords``; ``ids`` are stable integer labels.
    ``scale`` is the characteristic spacing used for identity tolerances.
    """

    coords: NDArray[np.float64]
    window: Window
    ids: NDArray[np.int64] = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    provenance: dict[str, Any] = field(default_factory=dict)
    params: DeloneParams | None = None
    scale: float = 1.0

    def __post_init__(self) -> None:
        coords = np.array(self.coords, dtype=np.float64, copy=True)
        if coords.ndim != 2 or coords.shape[1] < 1:
            raise InvalidPointSetError(f"coords must be an (n, N) array, got shape {coords.shape}")
        if coords.shape[1] != self.window.dim:
            raise InvalidPointSetError(f"points have dimension {coords.shape[1]}, window has {self.window.dim}")
        if not np.all(np.isfinite(coords)):
            raise InvalidPointSetError("coordinates must be finite")
        ids = np.arange(len(coords), dtype=np.int64) if len(self.ids) == 0 else np.array(self.ids, dtype=np.int64)
        if len(ids) != len(coords):
            raise InvalidPointSetError(f"{len(ids)} ids for {len(coords)} points")
        if len(np.unique(ids)) != len(ids):
            raise InvalidPointSetError("point ids must be unique")
        tol = get_settings().point_tolerance * self.scale
        outside = ~self.window.contains(coords, tol=1e-9 * self.scale)
        if np.any(outside):
            raise InvalidPointSetError(f"{int(outside.sum())} points lie outside the window")
        if len(coords) > 1:
            close = cKDTree(coords).query_pairs(tol, output_type="ndarray")
            if len(close):
                a, b = close[0]
                raise InvalidPointSetError(
                    f"not uniformly discrete: points {int(ids[a])} and {int(ids[b])} coincide",
                )
        coords.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def dim(self) -> int:
        return int(self.coords.shape[1])

    @cached_property
    def index(self) -> dict[int, int]:
        """Map from point id to row index."""
        return {int(i): k for k, i in enumerate(self.ids)}

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.coords)

    def point(self, point_id: int) -> NDArray[np.float64]:
        try:
            return self.coords[self.index[int(point_id)]]
        except KeyError:
            raise InvalidInputError(f"unknown point id {point_id}")

    def interior_mask(self, margin: float) -> NDArray[np.bool_]:
        return self.window.shrink(margin).contains(self.coords)

    def interior_ids(self, margin: float) -> list[int]:
        return [int(i) for i in self.ids[self.interior_mask(margin)]]

    def with_params(self, params: DeloneParams) -> PointSet:
        return PointSet(
            coords=self.coords,
            window=self.window,
            ids=self.ids,
            provenance=dict(self.provenance),
            params=params,
            scale=self.scale,
        )


def lattice_params(kind: LatticeKind | str, spacing: float, dim: int = 2) -> DeloneParams:
    """Exact packing and covering radii of a lattice."""
    kind = LatticeKind(kind)
    if kind is LatticeKind.SQUARE:
        return DeloneParams(r=spacing / 2.0, R=spacing * math.sqrt(dim) / 2.0)
    return DeloneParams(r=spacing / 2.0, R=spacing / math.sqrt(3.0))


def _lattice_coords(kind: LatticeKind, spacing: float, window: Window) -> NDArray[np.float64]:
    c = np.asarray(window.center)
    h = window.half_width
    slack = 1e-9
    if kind is LatticeKind.SQUARE:
        axes = [
            np.arange(math.ceil((c[k] - h) / spacing - slack), math.floor((c[k] + h) / spacing + slack) + 1) * spacing
            for k in range(window.dim)
        ]
        grid = np.meshgrid(*axes, indexing="ij")
        coords = np.stack([g.ravel() for g in grid], axis=1)
    else:
        if window.dim != 2:
            raise InvalidInputError("the triangular lattice is two-dimensional")
        row = spacing * math.sqrt(3.0) / 2.0
        rows = np.arange(math.ceil((c[1] - h) / row - slack), math.floor((c[1] + h) / row + slack) + 1)
        pts: list[tuple[float, float]] = []
        for j in rows:
            shift = 0.5 * spacing * j
            cols = np.arange(
                math.ceil((c[0] - h - shift) / spacing - slack),
                math.floor((c[0] + h - shift) / spacing + slack) + 1,
            )
            pts.extend((i * spacing + shift, j * row) for i in cols)
        coords = np.array(pts, dtype=np.float64).reshape(-1, 2)
    return coords[window.contains(coords, tol=slack * spacing)]


def generate_lattice(kind: LatticeKind | str, spacing: float, window: Window) -> PointSet:
    """All points of a square (hypercubic) or triangular lattice inside ``window``.

    The lattice contains the origin. Ordering is lexicographic in the lattice
    indices, so results are deterministic.

    Raises:
        InvalidInputError: spacing not positive
        InvalidPointSetError: fewer than two lattice points in the window

    """
    kind = LatticeKind(kind)
    if not spacing > 0:
        raise InvalidInputError(f"spacing must be positive, got {spacing}")
    coords = _lattice_coords(kind, spacing, window)
    if len(coords) < 2:
        raise InvalidPointSetError(f"window holds {len(coords)} lattice points, need at least 2")
    logger.debug("generated lattice", kind=kind.value, spacing=spacing, points=len(coords))
    return PointSet(
        coords=coords,
        window=window,
        provenance={"generator": "lattice", "kind": kind.value, "spacing": spacing, "seed": None},
        params=lattice_params(kind, spacing, window.dim),
        scale=spacing,
    )


def _uniform_ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> NDArray[np.float64]:
    direction = rng.standard_normal((n, dim))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = radius * rng.random((n, 1)) ** (1.0 / dim)
    return np.asarray(direction / norms * radii, dtype=np.float64)


def generate_jittered_lattice(
    kind: LatticeKind | str,
    spacing: float,
    window: Window,
    delta: float,
    seed: int,
) -> PointSet:
    """Lattice with every point displaced uniformly inside a ball of radius ``delta``.

    With ``delta < spacing / 2`` the result is an ``(r - delta, R + delta)``-Delone
    set. Points pushed out of the window are dropped.

    Raises:
        InvalidInputError: ``delta`` outside ``[0, spacing / 2)``

    """
    if not 0 <= delta < spacing / 2.0:
        raise InvalidInputError(
            f"jitter delta={delta} must lie in [0, spacing/2) = [0, {spacing / 2.0}); the Delone property is not guaranteed",
        )
    base = generate_lattice(kind, spacing, window)
    rng = np.random.default_rng(seed)
    coords = base.coords + _uniform_ball(rng, len(base), base.dim, delta)
    coords = coords[window.contains(coords)]
    base_params = lattice_params(kind, spacing, window.dim)
    logger.debug("generated jittered lattice", kind=LatticeKind(kind).value, delta=delta, seed=seed, points=len(coords))
    return PointSet(
        coords=coords,
        window=window,
        provenance={
            "generator": "jittered_lattice",
            "kind": LatticeKind(kind).value,
            "spacing": spacing,
            "delta": delta,
            "seed": seed,
        },
        params=DeloneParams(r=base_params.r - delta, R=base_params.R + delta),
        scale=spacing,
    )


def sample_grid(window: Window, pitch: float) -> tuple[NDArray[np.float64], float]:
    """Regular grid covering ``window`` with spacing at most ``pitch``; returns (grid points, actual pitch)."""
    if not pitch > 0:
        raise InvalidInputError(f"grid pitch must be positive, got {pitch}")
    h = window.half_width
    n = math.ceil(2.0 * h / pitch - 1e-9) + 1
    axes = [np.linspace(c - h, c + h, n) for c in window.center]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1), 2.0 * h / (n - 1)


def _interior_coords(ps: PointSet, margin: float) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    mask = ps.interior_mask(margin)
    if int(mask.sum()) < 2:
        raise InvalidPointSetError(f"only {int(mask.sum())} points inside the window shrunk by margin {margin}")
    return ps.coords[mask], ps.ids[mask]


def estimate_delone_params(ps: PointSet, margin: float, pitch: float | None = None) -> DeloneParams:
    """Estimate ``(r, R)`` on the window shrunk by ``margin``.

    ``r`` is half the minimal pairwise distance of interior points (exact, via a
    KD-tree). ``R`` is an upper bound: the largest distance from a grid point of a
    regular grid with pitch at most ``r / 4`` to the nearest point of the set,
    plus half the diagonal of a grid cell (the distance to the set is
    1-Lipschitz). The pitch is reported as ``resolution``.

    Raises:
        InvalidPointSetError: fewer than two interior points, or coincident points

    """
    workers = get_settings().max_workers
    interior, _ = _interior_coords(ps, margin)
    dist, _ = cKDTree(interior).query(interior, k=2, workers=workers)
    nearest = float(dist[:, 1].min())
    if nearest < get_settings().point_tolerance * ps.scale:
        raise InvalidPointSetError("not uniformly discrete: coincident interior points")
    r_hat = nearest / 2.0
    grid, actual_pitch = sample_grid(ps.window.shrink(margin), pitch if pitch is not None else r_hat / 4.0)
    gaps, _ = ps.tree.query(grid, k=1, workers=workers)
    observed = float(gaps.max())
    R_hat = max(observed, r_hat) + actual_pitch * math.sqrt(ps.dim) / 2.0
    logger.debug("estimated Delone parameters", r=r_hat, R=R_hat, observed_R=observed, pitch=actual_pitch, grid=len(grid))
    return DeloneParams(r=r_hat, R=R_hat, resolution=actual_pitch)


@dataclass(slots=True)
class DeloneReport:
    """Violations of declared Delone parameters inside the shrunk window."""

    params: DeloneParams
    margin: float
    pitch: float
    violating_pairs: list[tuple[int, int, float]]
    uncovered_points: list[tuple[list[float], float]]
    convention: str = MARGIN_CONVENTION

    @property
    def passed(self) -> bool:
        return not self.violating_pairs and not self.uncovered_points

    def to_dict(self) -> dict[str, Any]:
        return {
            "params": self.params.to_dict(),
            "margin": self.margin,
            "pitch": self.pitch,
            "passed": self.passed,
            "violating_pairs": [list(p) for p in self.violating_pairs],
            "uncovered_points": [{"point": p, "distance": d} for p, d in self.uncovered_points],
            "convention": self.convention,
        }


def verify_delone(ps: PointSet, params: DeloneParams, margin: float, pitch: float | None = None) -> DeloneReport:
    """List pairs closer than ``2r`` and grid points farther than ``R`` from the set.

    Only interior points and grid points of the window shrunk by ``margin`` are
    examined. An empty report means the parameters hold on the patch.
    """
    tol = get_settings().length_tolerance * ps.scale
    interior, interior_ids = _interior_coords(ps, margin)
    tree = cKDTree(interior)
    violating: list[tuple[int, int, float]] = []
    for a, b in sorted(tree.query_pairs(2.0 * params.r)):
        d = float(np.linalg.norm(interior[a] - interior[b]))
        if d < 2.0 * params.r - tol:
            violating.append((int(interior_ids[a]), int(interior_ids[b]), d))
    grid, actual_pitch = sample_grid(ps.window.shrink(margin), pitch if pitch is not None else params.r / 4.0)
    gaps, _ = ps.tree.query(grid, k=1, workers=get_settings().max_workers)
    far = np.flatnonzero(gaps > params.R + tol)
    uncovered = [([float(v) for v in grid[k]], float(gaps[k])) for k in far]
    report = DeloneReport(
        params=params,
        margin=margin,
        pitch=actual_pitch,
        violating_pairs=violating,
        uncovered_points=uncovered,
    )
    logger.info("verified Delone parameters", passed=report.passed, pairs=len(violating), uncovered=len(uncovered))
    return report


def write_pointset(ps: PointSet, csv_path: Path) -> None:
    """Write ``id,x0,...`` rows plus a JSON sidecar next to the CSV."""
    header = ["id", *[f"x{k}" for k in range(ps.dim)]]
    rows = [
        {"id": int(i), **{f"x{k}": float(v) for k, v in enumerate(p)}} for i, p in zip(ps.ids, ps.coords, strict=True)
    ]
    export_to_csv(rows, csv_path, fieldnames=header)
    sidecar = {
        "dim": ps.dim,
        "window": ps.window.to_dict(),
        "generator": ps.provenance.get("generator"),
        "seed": ps.provenance.get("seed"),
        "provenance": ps.provenance,
        "params": ps.params.to_dict() if ps.params is not None else None,
        "scale": ps.scale,
    }
    export_to_json(sidecar, csv_path.with_suffix(".json"))


def read_pointset(csv_path: Path) -> PointSet:
    """Inverse of :func:`write_pointset`."""
    meta = read_json(csv_path.with_suffix(".json"))
    rows = read_csv_rows(csv_path)
    dim = int(meta["dim"])
    coords = np.array([[float(row[f"x{k}"]) for k in range(dim)] for row in rows], dtype=np.float64).reshape(-1, dim)
    ids = np.array([int(row["id"]) for row in rows], dtype=np.int64)
    params = DeloneParams.from_dict(meta["params"]) if meta.get("params") else None
    return PointSet(
        coords=coords,
        window=Window.from_dict(meta["window"]),
        ids=ids,
        provenance=dict(meta.get("provenance") or {}),
        params=params,
        scale=float(meta.get("scale", 1.0)),
    )
