"""Penrose rhombus tilings from the pentagrid dual construction.

Five families of parallel lines at angles 2πk/5 with offsets γ_k (normalized
to sum zero) cut the plane into meshes. Every intersection of a line of
family j with a line of family k becomes a unit rhombus with edges e_j, e_k;
the mesh indices K ∈ Z^5 around it give the rhombus vertices Σ K_i e_i.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..exceptions import InvalidInputError, PenroseGenerationError
from ..logging import get_logger
from .pointset import PointSet, Window

logger = get_logger(__name__)

GRID_VECTORS = np.array([[math.cos(2 * math.pi * k / 5), math.sin(2 * math.pi * k / 5)] for k in range(5)])
GENERICITY_TOL = 1e-9
MAX_REDRAWS = 8

type VertexKey = tuple[int, int, int, int, int]


@dataclass(frozen=True, slots=True)
class Rhombus:
    """One tile: grid families ``(j, k)`` and its four vertex keys in cyclic order."""

    families: tuple[int, int]
    vertices: tuple[VertexKey, VertexKey, VertexKey, VertexKey]


def normalize_offsets(offsets: NDArray[np.float64] | list[float]) -> NDArray[np.float64]:
    gamma = np.asarray(offsets, dtype=np.float64)
    if gamma.shape != (5,) or not np.all(np.isfinite(gamma)):
        raise InvalidInputError(f"pentagrid offsets must be 5 finite reals, got {offsets!r}")
    return np.asarray(gamma - gamma.mean(), dtype=np.float64)


def _intersections(gamma: NDArray[np.float64], grid_radius: float, j: int, k: int) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    """Integer line labels ``(n_j, n_k)`` and points of all j/k crossings within ``grid_radius``."""
    lo_j, hi_j = math.floor(gamma[j] - grid_radius), math.ceil(gamma[j] + grid_radius)
    lo_k, hi_k = math.floor(gamma[k] - grid_radius), math.ceil(gamma[k] + grid_radius)
    nj, nk = np.meshgrid(np.arange(lo_j, hi_j + 1), np.arange(lo_k, hi_k + 1), indexing="ij")
    labels = np.stack([nj.ravel(), nk.ravel()], axis=1)
    basis = np.stack([GRID_VECTORS[j], GRID_VECTORS[k]])
    rhs = labels - np.array([gamma[j], gamma[k]])
    points = np.linalg.solve(basis, rhs.T).T
    keep = np.linalg.norm(points, axis=1) <= grid_radius
    return labels[keep].astype(np.int64), points[keep]


def is_generic(gamma: NDArray[np.float64], grid_radius: float) -> bool:
    """True if no three pentagrid lines meet within ``grid_radius`` of the origin."""
    for j, k in itertools.combinations(range(5), 2):
        _, points = _intersections(gamma, grid_radius, j, k)
        others = [m for m in range(5) if m not in (j, k)]
        values = points @ GRID_VECTORS[others].T + gamma[others]
        if np.any(np.abs(values - np.round(values)) < GENERICITY_TOL):
            return False
    return True


def pentagrid_rhombi(offsets: NDArray[np.float64] | list[float], grid_radius: float) -> list[Rhombus]:
    """Rhombi dual to all pentagrid crossings within ``grid_radius`` of the origin."""
    gamma = normalize_offsets(offsets)
    rhombi: list[Rhombus] = []
    for j, k in itertools.combinations(range(5), 2):
        labels, points = _intersections(gamma, grid_radius, j, k)
        mesh = np.ceil(points @ GRID_VECTORS.T + gamma).astype(np.int64)
        mesh[:, j] = labels[:, 0]
        mesh[:, k] = labels[:, 1]
        for base in mesh:
            corners = []
            for dj, dk in ((0, 0), (1, 0), (1, 1), (0, 1)):
                key = base.copy()
                key[j] += dj
                key[k] += dk
                corners.append(tuple(int(v) for v in key))
            rhombi.append(Rhombus(families=(j, k), vertices=tuple(corners)))  # type: ignore[arg-type]
    return rhombi


def vertex_position(key: VertexKey) -> NDArray[np.float64]:
    return np.asarray(np.asarray(key, dtype=np.float64) @ GRID_VECTORS, dtype=np.float64)


def _grid_radius(patch_radius: float, gamma: NDArray[np.float64]) -> float:
    # tile vertices sit within 5 + Σ|γ| of 5/2 times their crossing point
    slack = 5.0 + float(np.abs(gamma).sum())
    return 2.0 * (patch_radius * math.sqrt(2.0) + 2.0 * slack + 2.0) / 5.0


def _patch(gamma: NDArray[np.float64], patch_radius: float) -> tuple[list[VertexKey], NDArray[np.float64], list[Rhombus]]:
    rhombi = pentagrid_rhombi(gamma, _grid_radius(patch_radius, gamma))
    keys = sorted({v for rh in rhombi for v in rh.vertices})
    coords = np.array([vertex_position(key) for key in keys])
    inside = Window.centered(patch_radius).contains(coords)
    kept = [key for key, ok in zip(keys, inside, strict=True) if ok]
    return kept, coords[inside], rhombi


def generate_penrose(patch_radius: float, offsets: list[float] | None, seed: int) -> PointSet:
    """Vertices of a Penrose rhombus tiling with unit edges covering ``[-ρ, ρ]^2``.

    Offsets are shifted to sum zero. When they are missing or not generic
    (three lines concurrent) fresh offsets are drawn from ``seed``, at most
    ``MAX_REDRAWS`` times.

    Raises:
        InvalidInputError: non-positive patch radius or malformed offsets
        PenroseGenerationError: no generic offsets found

    """
    if not patch_radius > 0:
        raise InvalidInputError(f"patch_radius must be positive, got {patch_radius}")
    rng = np.random.default_rng(seed)
    gamma = normalize_offsets(offsets) if offsets is not None else normalize_offsets(rng.random(5))
    attempts = 1
    while not is_generic(gamma, _grid_radius(patch_radius, gamma)):
        if attempts > MAX_REDRAWS:
            raise PenroseGenerationError(
                f"pentagrid offsets still non-generic after {MAX_REDRAWS} re-draws (seed {seed}); three grid lines concur",
            )
        logger.warning("non-generic pentagrid offsets, re-drawing", attempt=attempts, offsets=gamma.tolist())
        gamma = normalize_offsets(rng.random(5))
        attempts += 1
    keys, coords, _ = _patch(gamma, patch_radius)
    logger.info("generated Penrose patch", vertices=len(keys), patch_radius=patch_radius, attempts=attempts)
    return PointSet(
        coords=coords,
        window=Window.centered(patch_radius),
        provenance={
            "generator": "penrose",
            "patch_radius": patch_radius,
            "offsets": [float(g) for g in gamma],
            "seed": seed,
            "redraws": attempts - 1,
        },
        scale=1.0,
    )


def penrose_edge_pairs(ps: PointSet) -> list[tuple[int, int]]:
    """Rhombus edges of a patch made by :func:`generate_penrose`, as id pairs.

    These are the 1-cells of the tiling viewed as a CW-complex; feed them to
    :func:`delone_heat.geometry.neighbors.ingest_relation`.
    """
    if ps.provenance.get("generator") != "penrose":
        raise InvalidInputError("point set was not produced by generate_penrose")
    gamma = np.asarray(ps.provenance["offsets"], dtype=np.float64)
    keys, _, rhombi = _patch(gamma, float(ps.provenance["patch_radius"]))
    key_to_id = {key: int(i) for key, i in zip(keys, ps.ids, strict=True)}
    pairs: set[tuple[int, int]] = set()
    for rh in rhombi:
        for a, b in itertools.pairwise((*rh.vertices, rh.vertices[0])):
            if a in key_to_id and b in key_to_id:
                i, j = key_to_id[a], key_to_id[b]
                pairs.add((min(i, j), max(i, j)))
    return sorted(pairs)
