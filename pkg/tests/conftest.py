"""Pytest configuration and fixtures.

This file helps pytest discover and import modules from the src directory.
"""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

# Add src directory to Python path for pytest
src_path = Path(__file__).parent.parent / "src"
if str(src_path) not in sys.path:
    sys.path.insert(0, str(src_path))

from delone_heat.geometry.neighbors import NeighborRelation, build_max_relation, build_voronoi_relation
from delone_heat.geometry.pointset import PointSet, Window, generate_jittered_lattice, generate_lattice
from delone_heat.geometry.tiling import TilingSystem, voronoi_cells_2d


@pytest.fixture
def square_lattice() -> PointSet:
    """Square lattice with unit spacing on [-6, 6]^2 (169 points)."""
    return generate_lattice("square", 1.0, Window.centered(6.0))


@pytest.fixture
def axis_relation(square_lattice: PointSet) -> NeighborRelation:
    """Nearest-neighbor (axis) edges of the square lattice; ``S = 1``."""
    return build_max_relation(square_lattice, 0.5)


@pytest.fixture
def square_tiling(square_lattice: PointSet) -> TilingSystem:
    assert square_lattice.params is not None
    return voronoi_cells_2d(square_lattice, square_lattice.params, 2.0 * square_lattice.params.R)


@pytest.fixture
def square_voronoi(square_tiling: TilingSystem) -> NeighborRelation:
    return build_voronoi_relation(square_tiling)


@pytest.fixture
def jittered_lattice() -> PointSet:
    """Square lattice jittered by 0.2 on [-8, 8]^2 with a fixed seed."""
    return generate_jittered_lattice("square", 1.0, Window.centered(8.0), 0.2, seed=3)


@pytest.fixture
def jittered_voronoi(jittered_lattice: PointSet) -> NeighborRelation:
    assert jittered_lattice.params is not None
    ts = voronoi_cells_2d(jittered_lattice, jittered_lattice.params, 2.0 * jittered_lattice.params.R)
    return build_voronoi_relation(ts)
